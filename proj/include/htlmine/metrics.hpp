#pragma once

#include "htlmine/dataset.hpp"
#include "htlmine/model.hpp"

#include <string>
#include <vector>

namespace htl {

enum class seg_class { foreground, background };

struct seg_metrics {
    double iou_foreground = 0.0;
    double iou_background = 0.0;
    double mean_iou = 0.0;
    double dice = 0.0;
};

// |intersection| / |union| for the given class; 1.0 when both class
// regions are empty.
double iou(const std::vector<uint8_t> & prediction, const std::vector<uint8_t> & target,
           seg_class cls);

// 2|A∩B| / (|A|+|B|) on the foreground class; 1.0 when both empty.
double dice(const std::vector<uint8_t> & prediction, const std::vector<uint8_t> & target);

seg_metrics sample_metrics(const std::vector<uint8_t> & prediction,
                           const std::vector<uint8_t> & target);

// Argmax over the 2 segmentation logits for one sample (class 0 wins ties).
std::vector<uint8_t> predict_mask(const model & m, const sample & s);
std::vector<std::vector<uint8_t>> predict_masks(const model & m,
                                                const std::vector<sample> & samples,
                                                int batch_size = 16);

// Dataset-mean metrics of a segmentation model on labeled samples.
seg_metrics evaluate(const model & m, const std::vector<sample> & samples, int batch_size = 16);

struct drop_record {
    std::string sample_id;
    double iou_fg_full = 0.0;
    double iou_fg_pruned = 0.0;
    double iou_bg_full = 0.0;
    double iou_bg_pruned = 0.0;
    double drop_fg = 0.0;   // (full - pruned) / max(full, 1e-8)
    double drop_bg = 0.0;
};

// Per-sample full-vs-pruned comparison; the mask is applied and removed
// around the pruned pass, leaving the model untouched.
std::vector<drop_record> degradation_table(model & m, const prune_mask & mask,
                                           const std::vector<sample> & samples,
                                           int batch_size = 16);

double relative_drop(double full, double pruned);

} // namespace htl
