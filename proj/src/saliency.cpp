#include "htlmine/saliency.hpp"

#include "htlmine/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace htl {

std::vector<double> gradcampp_combine(const std::vector<double> & activations,
                                      const std::vector<double> & gradients,
                                      int channels, int height, int width) {
    const size_t plane = size_t(height) * width;
    if (activations.size() != plane * channels || gradients.size() != plane * channels) {
        throw dimension_error("gradcampp_combine: array sizes do not match channels*height*width");
    }
    std::vector<double> map(plane, 0.0);
    for (int k = 0; k < channels; ++k) {
        const double * a = activations.data() + size_t(k) * plane;
        const double * g = gradients.data() + size_t(k) * plane;
        double s_k = 0.0;
        for (size_t p = 0; p < plane; ++p) {
            s_k += a[p];
        }
        double w_k = 0.0;
        for (size_t p = 0; p < plane; ++p) {
            const double g2 = g[p] * g[p];
            const double denom = 2.0 * g2 + s_k * g2 * g[p];
            const double alpha = denom != 0.0 ? g2 / denom : 0.0;
            if (g[p] > 0.0) {
                w_k += alpha * g[p];
            }
        }
        for (size_t p = 0; p < plane; ++p) {
            map[p] += w_k * a[p];
        }
    }
    for (double & v : map) {
        v = v > 0.0 ? v : 0.0;
    }
    return map;
}

std::vector<double> bilinear_resize(const std::vector<double> & src, int src_h, int src_w,
                                    int dst_h, int dst_w) {
    if (int(src.size()) != src_h * src_w) {
        throw dimension_error("bilinear_resize: source size mismatch");
    }
    std::vector<double> dst(size_t(dst_h) * dst_w);
    const double sy = double(src_h) / double(dst_h);
    const double sx = double(src_w) / double(dst_w);
    for (int y = 0; y < dst_h; ++y) {
        double fy = (double(y) + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), double(src_h - 1));
        const int y0 = int(fy);
        const int y1 = std::min(y0 + 1, src_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < dst_w; ++x) {
            double fx = (double(x) + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), double(src_w - 1));
            const int x0 = int(fx);
            const int x1 = std::min(x0 + 1, src_w - 1);
            const double wx = fx - x0;
            const double top = src[size_t(y0) * src_w + x0] * (1.0 - wx) +
                               src[size_t(y0) * src_w + x1] * wx;
            const double bot = src[size_t(y1) * src_w + x0] * (1.0 - wx) +
                               src[size_t(y1) * src_w + x1] * wx;
            dst[size_t(y) * dst_w + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    return dst;
}

std::vector<uint8_t> scale_to_255(const std::vector<double> & values) {
    std::vector<uint8_t> out(values.size(), 0);
    if (values.empty()) {
        return out;
    }
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx == mn) {
        return out;   // degenerate map stays all-zero
    }
    for (size_t i = 0; i < values.size(); ++i) {
        out[i] = uint8_t(std::lround(255.0 * (values[i] - mn) / (mx - mn)));
    }
    return out;
}

heatmap gradcam_pp(model & m, const tensor_ptr & image, int class_index) {
    if (m.kind() != arch_kind::classification) {
        throw state_error("gradcam_pp requires the classification variant");
    }
    if (image->shape.size() != 4 || image->dim(0) != 1) {
        throw dimension_error("gradcam_pp expects a single image [1,C,H,W], got " +
                              shape_str(image->shape));
    }
    if (class_index < 0 || class_index >= m.config().num_cls_classes) {
        throw validation_error("class_index " + std::to_string(class_index) +
                               " out of range [0," + std::to_string(m.config().num_cls_classes) +
                               ")");
    }

    // Encoder runs tape-less; gradients are seeded at the bottleneck
    // features, so only the head lands on the tape.
    auto features = m.backbone_features(image, nullptr);
    features->requires_grad = true;
    grad_tape tape;
    auto logits = m.classify_from_features(features, &tape);
    std::vector<double> seed(size_t(logits->numel()), 0.0);
    seed[size_t(class_index)] = 1.0;
    tape.backward(logits, seed);
    m.zero_grad();   // drop the head's parameter gradients

    const int C = int(features->dim(1));
    const int fh = int(features->dim(2));
    const int fw = int(features->dim(3));
    features->ensure_grad();
    auto raw = gradcampp_combine(features->data, features->grad, C, fh, fw);

    heatmap h;
    h.height = int(image->dim(2));
    h.width = int(image->dim(3));
    h.values = bilinear_resize(raw, fh, fw, h.height, h.width);
    h.scaled = scale_to_255(h.values);
    return h;
}

std::vector<uint8_t> binarize(const heatmap & h, int threshold) {
    if (threshold < 0 || threshold > 255) {
        throw validation_error("binarize threshold must be in [0,255]");
    }
    std::vector<uint8_t> mask(h.scaled.size());
    for (size_t i = 0; i < mask.size(); ++i) {
        mask[i] = h.scaled[i] >= threshold ? 1 : 0;
    }
    return mask;
}

std::optional<bounding_box> compute_bounding_box(const std::vector<uint8_t> & mask,
                                                 int height, int width) {
    if (int64_t(mask.size()) != int64_t(height) * width) {
        throw dimension_error("compute_bounding_box: mask size mismatch");
    }
    std::vector<int32_t> label(mask.size(), -1);
    int64_t best_area = 0;
    int64_t best_first = 0;
    bounding_box best{};
    bool found = false;

    int32_t next = 0;
    for (int64_t start = 0; start < int64_t(mask.size()); ++start) {
        if (mask[size_t(start)] == 0 || label[size_t(start)] >= 0) {
            continue;
        }
        // BFS over the 4-neighborhood
        const int32_t id = next++;
        std::deque<int64_t> queue{start};
        label[size_t(start)] = id;
        int64_t area = 0;
        bounding_box box{int(start % width), int(start / width), int(start % width),
                         int(start / width)};
        while (!queue.empty()) {
            const int64_t p = queue.front();
            queue.pop_front();
            ++area;
            const int y = int(p / width), x = int(p % width);
            box.x_min = std::min(box.x_min, x);
            box.x_max = std::max(box.x_max, x);
            box.y_min = std::min(box.y_min, y);
            box.y_max = std::max(box.y_max, y);
            const int dx[4] = {1, -1, 0, 0};
            const int dy[4] = {0, 0, 1, -1};
            for (int d = 0; d < 4; ++d) {
                const int nx = x + dx[d], ny = y + dy[d];
                if (nx < 0 || nx >= width || ny < 0 || ny >= height) {
                    continue;
                }
                const int64_t np = int64_t(ny) * width + nx;
                if (mask[size_t(np)] != 0 && label[size_t(np)] < 0) {
                    label[size_t(np)] = id;
                    queue.push_back(np);
                }
            }
        }
        if (!found || area > best_area || (area == best_area && start < best_first)) {
            found = true;
            best_area = area;
            best_first = start;
            best = box;
        }
    }
    if (!found) {
        return std::nullopt;
    }
    return best;
}

double box_divergence(const std::optional<bounding_box> & a,
                      const std::optional<bounding_box> & b) {
    if (!a && !b) {
        return 0.0;
    }
    if (!a || !b) {
        return 1.0;
    }
    const int ix0 = std::max(a->x_min, b->x_min);
    const int iy0 = std::max(a->y_min, b->y_min);
    const int ix1 = std::min(a->x_max, b->x_max);
    const int iy1 = std::min(a->y_max, b->y_max);
    int64_t inter = 0;
    if (ix0 <= ix1 && iy0 <= iy1) {
        inter = int64_t(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
    }
    const int64_t uni = a->area() + b->area() - inter;
    return 1.0 - double(inter) / double(uni);
}

seg_metrics evaluate_cam_localization(model & m, const std::vector<sample> & samples,
                                      int threshold, bool use_predicted_class) {
    if (samples.empty()) {
        throw validation_error("evaluate_cam_localization requires a nonempty slice");
    }
    seg_metrics acc;
    for (const auto & s : samples) {
        if (!s.mask) {
            throw validation_error("sample " + s.id + " has no ground-truth mask");
        }
        auto img = batch_images({s}, {0});
        int cls;
        if (use_predicted_class) {
            auto logits = m.forward(img).logits;
            cls = 0;
            for (int c = 1; c < int(logits->dim(1)); ++c) {
                if (logits->data[size_t(c)] > logits->data[size_t(cls)]) {
                    cls = c;
                }
            }
        } else {
            if (!s.class_label) {
                throw validation_error("sample " + s.id + " has no class label");
            }
            cls = *s.class_label;
        }
        auto h = gradcam_pp(m, img, cls);
        const auto pred = binarize(h, threshold);
        const auto sm = sample_metrics(pred, *s.mask);
        acc.iou_foreground += sm.iou_foreground;
        acc.iou_background += sm.iou_background;
        acc.mean_iou += sm.mean_iou;
        acc.dice += sm.dice;
    }
    const double n = double(samples.size());
    acc.iou_foreground /= n;
    acc.iou_background /= n;
    acc.mean_iou /= n;
    acc.dice /= n;
    return acc;
}

} // namespace htl
