from ._htlmine import (
    Model,
    bounding_box,
    box_divergence,
    conv2d,
    dice,
    generate_dataset,
    gradcampp_combine,
    iou,
    run_pipeline,
    __version__,
)

__all__ = [
    "Model",
    "bounding_box",
    "box_divergence",
    "conv2d",
    "dice",
    "generate_dataset",
    "gradcampp_combine",
    "iou",
    "run_pipeline",
    "__version__",
]
