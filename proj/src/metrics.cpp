#include "htlmine/metrics.hpp"

#include "htlmine/errors.hpp"

#include <algorithm>
#include <cmath>

namespace htl {

namespace {

void check_same_size(const std::vector<uint8_t> & a, const std::vector<uint8_t> & b) {
    if (a.size() != b.size()) {
        throw dimension_error("mask size mismatch: " + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()));
    }
}

} // namespace

double iou(const std::vector<uint8_t> & prediction, const std::vector<uint8_t> & target,
           seg_class cls) {
    check_same_size(prediction, target);
    const uint8_t on = cls == seg_class::foreground ? 1 : 0;
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < prediction.size(); ++i) {
        const bool p = (prediction[i] != 0) == (on != 0);
        const bool t = (target[i] != 0) == (on != 0);
        inter += (p && t) ? 1 : 0;
        uni += (p || t) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double dice(const std::vector<uint8_t> & prediction, const std::vector<uint8_t> & target) {
    check_same_size(prediction, target);
    int64_t inter = 0, pa = 0, ta = 0;
    for (size_t i = 0; i < prediction.size(); ++i) {
        const bool p = prediction[i] != 0;
        const bool t = target[i] != 0;
        inter += (p && t) ? 1 : 0;
        pa += p ? 1 : 0;
        ta += t ? 1 : 0;
    }
    return (pa + ta) == 0 ? 1.0 : 2.0 * double(inter) / double(pa + ta);
}

seg_metrics sample_metrics(const std::vector<uint8_t> & prediction,
                           const std::vector<uint8_t> & target) {
    seg_metrics m;
    m.iou_foreground = iou(prediction, target, seg_class::foreground);
    m.iou_background = iou(prediction, target, seg_class::background);
    m.mean_iou = 0.5 * (m.iou_foreground + m.iou_background);
    m.dice = dice(prediction, target);
    return m;
}

std::vector<uint8_t> predict_mask(const model & m, const sample & s) {
    auto masks = predict_masks(m, {s}, 1);
    return masks[0];
}

std::vector<std::vector<uint8_t>> predict_masks(const model & m,
                                                const std::vector<sample> & samples,
                                                int batch_size) {
    if (m.kind() != arch_kind::segmentation) {
        throw state_error("predict_masks requires a segmentation model");
    }
    std::vector<std::vector<uint8_t>> out;
    out.reserve(samples.size());
    for (size_t start = 0; start < samples.size(); start += size_t(batch_size)) {
        std::vector<size_t> idx;
        for (size_t i = start; i < std::min(samples.size(), start + size_t(batch_size)); ++i) {
            idx.push_back(i);
        }
        auto batch = batch_images(samples, idx);
        auto logits = m.forward(batch).logits;
        const int64_t C = logits->dim(1), plane = logits->dim(2) * logits->dim(3);
        for (size_t b = 0; b < idx.size(); ++b) {
            std::vector<uint8_t> pred(static_cast<size_t>(plane));
            for (int64_t p = 0; p < plane; ++p) {
                int best = 0;
                double best_v = logits->data[size_t((int64_t(b) * C + 0) * plane + p)];
                for (int c = 1; c < C; ++c) {
                    const double v = logits->data[size_t((int64_t(b) * C + c) * plane + p)];
                    if (v > best_v) {
                        best_v = v;
                        best = c;
                    }
                }
                pred[size_t(p)] = uint8_t(best);
            }
            out.push_back(std::move(pred));
        }
    }
    return out;
}

seg_metrics evaluate(const model & m, const std::vector<sample> & samples, int batch_size) {
    if (m.kind() != arch_kind::segmentation) {
        throw state_error("evaluate requires a segmentation model; use the CAM-based "
                          "localization evaluation for classifiers");
    }
    if (samples.empty()) {
        throw validation_error("evaluate requires a nonempty dataset slice");
    }
    auto preds = predict_masks(m, samples, batch_size);
    seg_metrics acc;
    for (size_t i = 0; i < samples.size(); ++i) {
        if (!samples[i].mask) {
            throw validation_error("sample " + samples[i].id + " has no ground-truth mask");
        }
        const auto sm = sample_metrics(preds[i], *samples[i].mask);
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

double relative_drop(double full, double pruned) {
    return (full - pruned) / std::max(full, 1e-8);
}

std::vector<drop_record> degradation_table(model & m, const prune_mask & mask,
                                           const std::vector<sample> & samples,
                                           int batch_size) {
    auto full_preds = predict_masks(m, samples, batch_size);
    m.apply_mask(mask);
    std::vector<std::vector<uint8_t>> pruned_preds;
    try {
        pruned_preds = predict_masks(m, samples, batch_size);
    } catch (...) {
        m.remove_mask();
        throw;
    }
    m.remove_mask();

    std::vector<drop_record> out;
    out.reserve(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        if (!samples[i].mask) {
            throw validation_error("sample " + samples[i].id + " has no ground-truth mask");
        }
        drop_record r;
        r.sample_id = samples[i].id;
        r.iou_fg_full = iou(full_preds[i], *samples[i].mask, seg_class::foreground);
        r.iou_fg_pruned = iou(pruned_preds[i], *samples[i].mask, seg_class::foreground);
        r.iou_bg_full = iou(full_preds[i], *samples[i].mask, seg_class::background);
        r.iou_bg_pruned = iou(pruned_preds[i], *samples[i].mask, seg_class::background);
        r.drop_fg = relative_drop(r.iou_fg_full, r.iou_fg_pruned);
        r.drop_bg = relative_drop(r.iou_bg_full, r.iou_bg_pruned);
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace htl
