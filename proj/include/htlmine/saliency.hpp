#pragma once

#include "htlmine/dataset.hpp"
#include "htlmine/metrics.hpp"
#include "htlmine/model.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace htl {

struct heatmap {
    int height = 0;                 // input resolution after bilinear resize
    int width = 0;
    std::vector<double> values;     // raw channel-weighted map, >= 0
    std::vector<uint8_t> scaled;    // round(255*(v-min)/(max-min)); all-zero when max == min
};

// Inclusive pixel coordinates. Empty detections are optional<>::nullopt,
// never a degenerate box.
struct bounding_box {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    bool operator==(const bounding_box &) const = default;
    int64_t area() const { return int64_t(x_max - x_min + 1) * (y_max - y_min + 1); }
};

// The per-channel weighting at the heart of the saliency map, exposed
// separately so tests can pit it against hand-computed values:
//   alpha_ij^k = g^2 / (2 g^2 + S_k g^3)   (0 where the denominator is 0)
//   w_k  = sum_ij alpha_ij^k * relu(g_ij)
//   map  = relu(sum_k w_k * A_k)
// with g the class-score gradient at the feature map and S_k the
// spatial sum of channel k.
std::vector<double> gradcampp_combine(const std::vector<double> & activations,
                                      const std::vector<double> & gradients,
                                      int channels, int height, int width);

// Half-pixel-center bilinear resize of a single-channel map.
std::vector<double> bilinear_resize(const std::vector<double> & src, int src_h, int src_w,
                                    int dst_h, int dst_w);

std::vector<uint8_t> scale_to_255(const std::vector<double> & values);

// Class-evidence heatmap from the classifier's bottleneck features for
// one image [1,C,H,W]. Gradient buffers of the model are clobbered.
heatmap gradcam_pp(model & m, const tensor_ptr & image, int class_index);

std::vector<uint8_t> binarize(const heatmap & h, int threshold = 180);

// 4-connected components; box of the largest-area component, ties
// broken by the earliest pixel in row-major order. nullopt when empty.
std::optional<bounding_box> compute_bounding_box(const std::vector<uint8_t> & mask,
                                                 int height, int width);

// 1 - IoU(a, b); 0 when both absent, 1 when exactly one is absent.
double box_divergence(const std::optional<bounding_box> & a,
                      const std::optional<bounding_box> & b);

// Localization quality of a classifier: heatmap -> threshold -> mask,
// scored against ground-truth masks. The CAM class is the ground-truth
// label unless use_predicted_class is set.
seg_metrics evaluate_cam_localization(model & m, const std::vector<sample> & samples,
                                      int threshold = 180, bool use_predicted_class = false);

} // namespace htl
