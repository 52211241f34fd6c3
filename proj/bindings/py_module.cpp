#include "htlmine/checkpoint.hpp"
#include "htlmine/errors.hpp"
#include "htlmine/config.hpp"
#include "htlmine/dataset.hpp"
#include "htlmine/metrics.hpp"
#include "htlmine/mining.hpp"
#include "htlmine/model.hpp"
#include "htlmine/pipeline.hpp"
#include "htlmine/pruning.hpp"
#include "htlmine/saliency.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

namespace py = pybind11;

namespace {

htl::tensor_ptr tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast> & a) {
    std::vector<int64_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) {
        shape[size_t(i)] = a.shape(i);
    }
    std::vector<double> data(a.data(), a.data() + a.size());
    return htl::make_tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const htl::tensor_ptr & t) {
    std::vector<py::ssize_t> shape(t->shape.begin(), t->shape.end());
    py::array_t<double> a(shape);
    std::copy(t->data.begin(), t->data.end(), a.mutable_data());
    return a;
}

std::vector<uint8_t> mask_from_array(const py::array_t<uint8_t, py::array::c_style | py::array::forcecast> & a) {
    return std::vector<uint8_t>(a.data(), a.data() + a.size());
}

// images [N,C,H,W], masks [N,H,W] (segmentation) or labels [N] (classification)
std::vector<htl::sample> samples_from_arrays(
    const py::array_t<double, py::array::c_style | py::array::forcecast> & images,
    const std::optional<py::array_t<uint8_t, py::array::c_style | py::array::forcecast>> & masks,
    const std::optional<std::vector<int>> & labels) {
    if (images.ndim() != 4) {
        throw htl::dimension_error("images must be [N,C,H,W]");
    }
    const auto n = images.shape(0);
    const int c = int(images.shape(1)), h = int(images.shape(2)), w = int(images.shape(3));
    std::vector<htl::sample> out;
    for (py::ssize_t i = 0; i < n; ++i) {
        htl::sample s;
        std::ostringstream id;
        id << "p" << i;
        s.id = id.str();
        s.channels = c;
        s.height = h;
        s.width = w;
        const double * base = images.data() + i * c * h * w;
        s.image.assign(base, base + c * h * w);
        if (masks) {
            const uint8_t * mb = masks->data() + i * h * w;
            s.mask = std::vector<uint8_t>(mb, mb + h * w);
        }
        if (labels) {
            s.class_label = labels->at(size_t(i));
        }
        out.push_back(std::move(s));
    }
    return out;
}

py::dict metrics_dict(const htl::seg_metrics & m) {
    py::dict d;
    d["iou_background"] = m.iou_background;
    d["iou_foreground"] = m.iou_foreground;
    d["mean_iou"] = m.mean_iou;
    d["dice"] = m.dice;
    return d;
}

struct py_model {
    htl::model m;
    std::optional<htl::prune_mask> mask;

    explicit py_model(htl::model mm) : m(std::move(mm)) {}
};

} // namespace

PYBIND11_MODULE(_htlmine, mod) {
    mod.doc() = "pruning-assisted hard-to-learn sample mining, C++ core";

    mod.def("conv2d",
            [](const py::array_t<double, py::array::c_style | py::array::forcecast> & x,
               const py::array_t<double, py::array::c_style | py::array::forcecast> & w,
               const py::array_t<double, py::array::c_style | py::array::forcecast> & b,
               int stride, int padding) {
                return array_from_tensor(htl::conv2d(tensor_from_array(x), tensor_from_array(w),
                                                     tensor_from_array(b), stride, padding,
                                                     nullptr));
            },
            py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1,
            py::arg("padding") = 0);

    mod.def("iou",
            [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast> & pred,
               const py::array_t<uint8_t, py::array::c_style | py::array::forcecast> & target,
               const std::string & cls) {
                return htl::iou(mask_from_array(pred), mask_from_array(target),
                                cls == "bg" ? htl::seg_class::background
                                            : htl::seg_class::foreground);
            },
            py::arg("prediction"), py::arg("target"), py::arg("cls") = "fg");

    mod.def("dice",
            [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast> & pred,
               const py::array_t<uint8_t, py::array::c_style | py::array::forcecast> & target) {
                return htl::dice(mask_from_array(pred), mask_from_array(target));
            },
            py::arg("prediction"), py::arg("target"));

    mod.def("gradcampp_combine",
            [](const py::array_t<double, py::array::c_style | py::array::forcecast> & acts,
               const py::array_t<double, py::array::c_style | py::array::forcecast> & grads) {
                if (acts.ndim() != 3) {
                    throw htl::dimension_error("activations must be [C,H,W]");
                }
                const int c = int(acts.shape(0)), h = int(acts.shape(1)), w = int(acts.shape(2));
                std::vector<double> a(acts.data(), acts.data() + acts.size());
                std::vector<double> g(grads.data(), grads.data() + grads.size());
                auto map = htl::gradcampp_combine(a, g, c, h, w);
                py::array_t<double> out({h, w});
                std::copy(map.begin(), map.end(), out.mutable_data());
                return out;
            },
            py::arg("activations"), py::arg("gradients"));

    mod.def("bounding_box",
            [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast> & mask)
                -> std::optional<std::tuple<int, int, int, int>> {
                if (mask.ndim() != 2) {
                    throw htl::dimension_error("mask must be [H,W]");
                }
                auto bb = htl::compute_bounding_box(mask_from_array(mask), int(mask.shape(0)),
                                                    int(mask.shape(1)));
                if (!bb) {
                    return std::nullopt;
                }
                return std::make_tuple(bb->x_min, bb->y_min, bb->x_max, bb->y_max);
            },
            py::arg("mask"));

    mod.def("box_divergence",
            [](const std::optional<std::tuple<int, int, int, int>> & a,
               const std::optional<std::tuple<int, int, int, int>> & b) {
                auto conv = [](const std::optional<std::tuple<int, int, int, int>> & t)
                    -> std::optional<htl::bounding_box> {
                    if (!t) {
                        return std::nullopt;
                    }
                    return htl::bounding_box{std::get<0>(*t), std::get<1>(*t), std::get<2>(*t),
                                             std::get<3>(*t)};
                };
                return htl::box_divergence(conv(a), conv(b));
            },
            py::arg("a"), py::arg("b"));

    mod.def("generate_dataset",
            [](const std::string & spec_json) {
                auto spec_cfg = htl::parse_run_config_json(
                    "{\"version\":1,\"dataset\":{\"generate\":" + spec_json + "}}");
                auto samples = htl::generate(*spec_cfg.generate_spec);
                py::list out;
                for (const auto & s : samples) {
                    py::dict d;
                    d["id"] = s.id;
                    py::array_t<double> img({s.channels, s.height, s.width});
                    std::copy(s.image.begin(), s.image.end(), img.mutable_data());
                    d["image"] = img;
                    if (s.mask) {
                        py::array_t<uint8_t> m({s.height, s.width});
                        std::copy(s.mask->begin(), s.mask->end(), m.mutable_data());
                        d["mask"] = m;
                    } else {
                        d["mask"] = py::none();
                    }
                    d["class_label"] = s.class_label ? py::cast(*s.class_label) : py::none();
                    d["sex"] = s.demo.sex;
                    d["age_group"] = s.demo.age_group;
                    d["subgroup"] = s.subgroup ? py::cast(*s.subgroup) : py::none();
                    out.append(d);
                }
                return out;
            },
            py::arg("spec_json"));

    mod.def("run_pipeline",
            [](const std::string & config_path) {
                htl::run_pipeline(htl::parse_run_config(config_path));
            },
            py::arg("config_path"));

    py::class_<py_model>(mod, "Model")
        .def_static("build_unet",
                    [](int depth, int base_channels, int input_channels, uint64_t seed) {
                        htl::arch_config cfg;
                        cfg.depth = depth;
                        cfg.base_channels = base_channels;
                        cfg.input_channels = input_channels;
                        return py_model(htl::build_unet(cfg, seed));
                    },
                    py::arg("depth") = 2, py::arg("base_channels") = 8,
                    py::arg("input_channels") = 1, py::arg("seed") = 0)
        .def_static("build_classifier",
                    [](int depth, int base_channels, int input_channels, int num_classes,
                       uint64_t seed) {
                        htl::arch_config cfg;
                        cfg.depth = depth;
                        cfg.base_channels = base_channels;
                        cfg.input_channels = input_channels;
                        cfg.num_cls_classes = num_classes;
                        return py_model(htl::build_classifier(cfg, seed));
                    },
                    py::arg("depth") = 2, py::arg("base_channels") = 8,
                    py::arg("input_channels") = 1, py::arg("num_classes") = 2,
                    py::arg("seed") = 0)
        .def_static("load",
                    [](const std::string & path) {
                        auto ck = htl::load_checkpoint(path);
                        py_model pm(std::move(ck.m));
                        pm.mask = std::move(ck.mask);
                        return pm;
                    },
                    py::arg("path"))
        .def("save",
             [](const py_model & pm, const std::string & path) {
                 htl::save_checkpoint(path, pm.m, pm.mask ? &*pm.mask : nullptr);
             },
             py::arg("path"))
        .def_property_readonly("kind",
                               [](const py_model & pm) {
                                   return std::string(htl::arch_kind_name(pm.m.kind()));
                               })
        .def_property_readonly("param_count",
                               [](const py_model & pm) { return pm.m.param_count(); })
        .def("forward",
             [](const py_model & pm,
                const py::array_t<double, py::array::c_style | py::array::forcecast> & x) {
                 return array_from_tensor(pm.m.forward(tensor_from_array(x)).logits);
             },
             py::arg("batch"))
        .def("predict_mask",
             [](const py_model & pm,
                const py::array_t<double, py::array::c_style | py::array::forcecast> & image) {
                 if (image.ndim() != 3) {
                     throw htl::dimension_error("predict_mask expects one image [C,H,W]");
                 }
                 htl::sample s;
                 s.id = "p0";
                 s.channels = int(image.shape(0));
                 s.height = int(image.shape(1));
                 s.width = int(image.shape(2));
                 s.image.assign(image.data(), image.data() + image.size());
                 auto mask = htl::predict_mask(pm.m, s);
                 py::array_t<uint8_t> out({s.height, s.width});
                 std::copy(mask.begin(), mask.end(), out.mutable_data());
                 return out;
             },
             py::arg("image"))
        .def("train",
             [](py_model & pm,
                const py::array_t<double, py::array::c_style | py::array::forcecast> & images,
                const std::optional<py::array_t<uint8_t, py::array::c_style |
                                                             py::array::forcecast>> & masks,
                const std::optional<std::vector<int>> & labels, int epochs, double lr,
                int batch_size, uint64_t seed, bool augment) {
                 auto samples = samples_from_arrays(images, masks, labels);
                 htl::train_config cfg;
                 cfg.epochs = epochs;
                 cfg.learning_rate = lr;
                 cfg.batch_size = batch_size;
                 cfg.augment = augment;
                 cfg.decay_epochs = {epochs * 2 / 3};
                 return htl::train_base(pm.m, samples, cfg, seed);
             },
             py::arg("images"), py::arg("masks") = py::none(), py::arg("labels") = py::none(),
             py::arg("epochs") = 10, py::arg("lr") = 0.1, py::arg("batch_size") = 8,
             py::arg("seed") = 0, py::arg("augment") = true)
        .def("evaluate",
             [](const py_model & pm,
                const py::array_t<double, py::array::c_style | py::array::forcecast> & images,
                const py::array_t<uint8_t, py::array::c_style | py::array::forcecast> & masks) {
                 auto samples = samples_from_arrays(images, masks, std::nullopt);
                 return metrics_dict(htl::evaluate(pm.m, samples));
             },
             py::arg("images"), py::arg("masks"))
        .def("prune",
             [](py_model & pm, const std::string & method, double ratio, uint64_t seed) {
                 auto mask = htl::build_prune_mask(pm.m, htl::prune_method_from_name(method),
                                                   ratio, seed);
                 pm.m.apply_mask(mask);
                 pm.mask = std::move(mask);
                 return htl::sparsity(*pm.mask);
             },
             py::arg("method") = "unstructured-magnitude", py::arg("ratio") = 0.7,
             py::arg("seed") = 0)
        .def("restore",
             [](py_model & pm) {
                 pm.m.remove_mask();
                 pm.mask.reset();
             })
        .def("gradcam",
             [](py_model & pm,
                const py::array_t<double, py::array::c_style | py::array::forcecast> & image,
                int class_index) {
                 auto t = tensor_from_array(image);
                 if (t->shape.size() == 3) {
                     t->shape.insert(t->shape.begin(), 1);
                 }
                 auto h = htl::gradcam_pp(pm.m, t, class_index);
                 py::dict d;
                 py::array_t<double> values({h.height, h.width});
                 std::copy(h.values.begin(), h.values.end(), values.mutable_data());
                 py::array_t<uint8_t> scaled({h.height, h.width});
                 std::copy(h.scaled.begin(), h.scaled.end(), scaled.mutable_data());
                 d["values"] = values;
                 d["scaled"] = scaled;
                 return d;
             },
             py::arg("image"), py::arg("class_index"));

    mod.attr("__version__") = "0.1.0";
}
