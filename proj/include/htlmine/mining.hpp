#pragma once

#include "htlmine/dataset.hpp"
#include "htlmine/metrics.hpp"
#include "htlmine/model.hpp"
#include "htlmine/saliency.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace htl {

enum class mining_setting { supervised, semi, weak };

const char * mining_setting_name(mining_setting s);
mining_setting mining_setting_from_name(const std::string & name);

struct htl_record {
    std::string sample_id;
    mining_setting setting = mining_setting::supervised;
    double sensitivity = 0.0;   // fg-IoU relative drop, or box divergence
    bool is_htl = false;
    double threshold_used = 0.0;
    std::optional<bounding_box> box_full;     // semi/weak only
    std::optional<bounding_box> box_pruned;
};

struct mining_config {
    prune_method method = prune_method::unstructured_magnitude;
    double prune_ratio = 0.7;
    double tau = 0.4;
    int fine_tune_epochs = 20;
    double fine_tune_lr = 0.01;
    int fine_tune_decay_epoch = 15;
    std::vector<double> class_weights{1.0, 2.0};   // background, foreground
    double mix_ratio = 0.0;
    bool use_predicted_class = false;
    uint64_t seed = 0;

    void validate() const;
};

struct train_config {
    int epochs = 100;
    double learning_rate = 0.1;
    std::vector<int> decay_epochs{20, 50, 80};
    double decay_factor = 0.1;
    int batch_size = 16;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    bool augment = true;   // random flip / mirror / 90-degree rotations

    void validate() const;
};

// SGD training of either variant (pixelwise CE with unit weights for
// segmentation, classification CE for the classifier). Returns the
// per-epoch mean loss. Throws numeric_error naming the epoch when the
// loss stops being finite.
std::vector<double> train_base(model & m, const std::vector<sample> & dataset,
                               const train_config & cfg, uint64_t seed);

// Prunes by cfg, measures per-sample fg-IoU relative drop, restores the
// model, and flags sensitivity > tau. Optionally exposes the raw drop
// records.
std::vector<htl_record> mine_supervised(model & m, const std::vector<sample> & dataset,
                                        const mining_config & cfg,
                                        std::vector<drop_record> * out_drops = nullptr);

struct semi_mining_result {
    std::vector<sample> pseudo_labeled;   // pool samples with full-model predicted masks
    std::vector<htl_record> records;      // only samples with a full-model box
    int excluded_no_box = 0;
};

semi_mining_result mine_semi(model & m, const std::vector<sample> & unlabeled_pool,
                             const mining_config & cfg);

struct weak_mining_result {
    std::vector<htl_record> records;
    int excluded_empty_cam = 0;
};

weak_mining_result mine_weak(model & m, const std::vector<sample> & dataset,
                             const mining_config & cfg, int cam_threshold = 180);

struct finetune_result {
    bool skipped_empty = false;
    std::vector<double> epoch_losses;
};

// Fine-tunes on the given HTL samples only (plus optional seeded mixing
// from `mix_pool` when cfg.mix_ratio > 0). Supervised/semi use the
// pixelwise weighted CE on the samples' masks; weak uses classification
// CE. An empty HTL set returns the model unchanged with a warning flag.
finetune_result finetune_on_htl(model & m, const std::vector<sample> & htl_samples,
                                mining_setting setting, const mining_config & cfg,
                                int batch_size = 16, bool augment = true,
                                const std::vector<sample> * mix_pool = nullptr);

enum class sampler_kind { random, class_distribution, demographic_distribution };

const char * sampler_kind_name(sampler_kind k);
sampler_kind sampler_kind_from_name(const std::string & name);

// Comparison samplers. `random` and `demographic_distribution` draw
// without replacement; `class_distribution` draws with replacement,
// weighted by inverse class frequency.
std::vector<std::string> baseline_sampler(sampler_kind kind, const std::vector<sample> & dataset,
                                          int count, uint64_t seed);

} // namespace htl
