#include "htlmine/mining.hpp"

#include "htlmine/errors.hpp"
#include "htlmine/pruning.hpp"
#include "htlmine/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>

namespace htl {

const char * mining_setting_name(mining_setting s) {
    switch (s) {
        case mining_setting::supervised: return "supervised";
        case mining_setting::semi:       return "semi";
        case mining_setting::weak:       return "weak";
    }
    return "?";
}

mining_setting mining_setting_from_name(const std::string & name) {
    if (name == "supervised") {
        return mining_setting::supervised;
    }
    if (name == "semi") {
        return mining_setting::semi;
    }
    if (name == "weak") {
        return mining_setting::weak;
    }
    throw config_error("unknown mining setting: " + name);
}

void mining_config::validate() const {
    std::vector<std::string> bad;
    if (!(prune_ratio >= 0.0 && prune_ratio < 1.0)) {
        bad.push_back("prune_ratio must be in [0, 1)");
    }
    if (!(tau > 0.0 && tau <= 1.0)) {
        bad.push_back("tau must be in (0, 1]");
    }
    if (fine_tune_epochs < 1) {
        bad.push_back("fine_tune_epochs must be >= 1");
    }
    if (fine_tune_lr <= 0.0) {
        bad.push_back("fine_tune_lr must be > 0");
    }
    if (mix_ratio < 0.0) {
        bad.push_back("mix_ratio must be >= 0");
    }
    if (!bad.empty()) {
        std::string msg = "invalid mining config:";
        for (const auto & m : bad) {
            msg += " " + m + ";";
        }
        throw config_error(msg);
    }
}

void train_config::validate() const {
    std::vector<std::string> bad;
    if (epochs < 0) {
        bad.push_back("epochs must be >= 0");
    }
    if (learning_rate <= 0.0) {
        bad.push_back("learning_rate must be > 0");
    }
    if (batch_size < 1) {
        bad.push_back("batch_size must be >= 1");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        bad.push_back("momentum must be in [0, 1)");
    }
    if (weight_decay < 0.0) {
        bad.push_back("weight_decay must be >= 0");
    }
    if (decay_factor <= 0.0) {
        bad.push_back("decay_factor must be > 0");
    }
    if (!bad.empty()) {
        std::string msg = "invalid training config:";
        for (const auto & m : bad) {
            msg += " " + m + ";";
        }
        throw config_error(msg);
    }
}

namespace {

// flip / mirror / rot90 with the mask kept aligned; rotations only on
// square images
struct augmentation {
    bool hflip = false;
    bool vflip = false;
    int rot90 = 0;
};

augmentation draw_augmentation(rng & r, bool square) {
    augmentation a;
    a.hflip = r.bernoulli(0.5);
    a.vflip = r.bernoulli(0.5);
    a.rot90 = square ? int(r.uniform_int(4)) : 0;
    return a;
}

template <typename T>
void apply_augmentation_plane(const T * src, T * dst, int h, int w, const augmentation & a) {
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int sy = y, sx = x;
            // inverse rotation maps destination to source
            for (int k = 0; k < a.rot90; ++k) {
                const int ty = sx;
                const int tx = h - 1 - sy;
                sy = ty;
                sx = tx;
            }
            if (a.hflip) {
                sx = w - 1 - sx;
            }
            if (a.vflip) {
                sy = h - 1 - sy;
            }
            dst[y * w + x] = src[sy * w + sx];
        }
    }
}

struct batch_buffers {
    tensor_ptr images;
    tensor_ptr targets;          // segmentation targets [B,H,W]
    std::vector<int> labels;     // classification targets
};

batch_buffers assemble_batch(const std::vector<sample> & data, const std::vector<size_t> & idx,
                             bool segmentation, bool augment, rng & r) {
    const auto & first = data.at(idx[0]);
    const int h = first.height, w = first.width, c = first.channels;
    batch_buffers b;
    b.images = make_tensor({int64_t(idx.size()), c, h, w});
    if (segmentation) {
        b.targets = make_tensor({int64_t(idx.size()), h, w});
    }
    const bool square = h == w;
    std::vector<double> tmp(size_t(h) * w);
    for (size_t k = 0; k < idx.size(); ++k) {
        const auto & s = data.at(idx[k]);
        if (s.height != h || s.width != w || s.channels != c) {
            throw dimension_error("mixed sample sizes in batch (sample " + s.id + ")");
        }
        augmentation a;
        if (augment) {
            a = draw_augmentation(r, square);
        }
        for (int ch = 0; ch < c; ++ch) {
            const double * src = s.image.data() + size_t(ch) * h * w;
            double * dst = b.images->data.data() + (int64_t(k) * c + ch) * h * w;
            if (augment) {
                apply_augmentation_plane(src, dst, h, w, a);
            } else {
                std::copy_n(src, size_t(h) * w, dst);
            }
        }
        if (segmentation) {
            if (!s.mask) {
                throw validation_error("sample " + s.id + " has no mask for segmentation training");
            }
            std::vector<uint8_t> maug(size_t(h) * w);
            if (augment) {
                apply_augmentation_plane(s.mask->data(), maug.data(), h, w, a);
            } else {
                maug = *s.mask;
            }
            double * dst = b.targets->data.data() + int64_t(k) * h * w;
            for (size_t i = 0; i < maug.size(); ++i) {
                dst[i] = double(maug[i]);
            }
        } else {
            if (!s.class_label) {
                throw validation_error("sample " + s.id + " has no class label for classification "
                                       "training");
            }
            b.labels.push_back(*s.class_label);
        }
    }
    return b;
}

std::vector<double> run_sgd_epochs(model & m, const std::vector<sample> & data,
                                   int epochs, double lr0, const std::vector<int> & decay_epochs,
                                   double decay_factor, int batch_size, double momentum,
                                   double weight_decay, bool augment,
                                   const std::vector<double> & seg_weights, uint64_t seed,
                                   const std::vector<sample> * mix_pool, double mix_ratio) {
    const bool segmentation = m.kind() == arch_kind::segmentation;
    optimizer_state opt;
    opt.momentum = momentum;
    opt.weight_decay = weight_decay;
    opt.learning_rate = lr0;

    std::vector<double> cls_weights;
    if (!segmentation) {
        cls_weights.assign(size_t(m.config().num_cls_classes), 1.0);
    }

    std::vector<double> epoch_losses;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        double lr = lr0;
        for (int d : decay_epochs) {
            if (epoch >= d) {
                lr *= decay_factor;
            }
        }
        opt.learning_rate = lr;

        // epoch working set: the dataset plus optional seeded mixing
        std::vector<sample> extra;
        const std::vector<sample> * base = &data;
        std::vector<sample> merged;
        if (mix_pool != nullptr && mix_ratio > 0.0 && !mix_pool->empty()) {
            rng mix_rng(derive_seed(seed, uint64_t(epoch), 0x317));
            const int extra_n = int(std::lround(mix_ratio * double(data.size())));
            merged = data;
            for (int i = 0; i < extra_n; ++i) {
                merged.push_back((*mix_pool)[size_t(mix_rng.uniform_int(mix_pool->size()))]);
            }
            base = &merged;
        }

        std::vector<size_t> order(base->size());
        for (size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        rng shuffle_rng(derive_seed(seed, uint64_t(epoch), 0x5e));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (size_t start = 0; start < order.size(); start += size_t(batch_size)) {
            std::vector<size_t> idx(order.begin() + int64_t(start),
                                    order.begin() +
                                        int64_t(std::min(order.size(), start + size_t(batch_size))));
            rng aug_rng(derive_seed(seed, uint64_t(epoch), 0xa6 + start));
            auto batch = assemble_batch(*base, idx, segmentation, augment, aug_rng);

            m.zero_grad();
            grad_tape tape;
            tensor_ptr loss;
            try {
                if (segmentation) {
                    auto logits = m.forward(batch.images, &tape).logits;
                    loss = weighted_cross_entropy(logits, batch.targets, seg_weights, &tape);
                } else {
                    auto logits = m.forward(batch.images, &tape).logits;
                    loss = cross_entropy_classification(logits, batch.labels, cls_weights, &tape);
                }
            } catch (const numeric_error &) {
                throw numeric_error("training diverged at epoch " + std::to_string(epoch));
            }
            if (!std::isfinite(loss->data[0])) {
                throw numeric_error("training diverged at epoch " + std::to_string(epoch));
            }
            loss_sum += loss->data[0];
            ++batches;
            tape.backward(loss);
            sgd_step(m, opt);
        }
        epoch_losses.push_back(batches > 0 ? loss_sum / double(batches) : 0.0);
    }
    return epoch_losses;
}

} // namespace

std::vector<double> train_base(model & m, const std::vector<sample> & dataset,
                               const train_config & cfg, uint64_t seed) {
    cfg.validate();
    if (dataset.empty()) {
        throw validation_error("train_base requires a nonempty dataset");
    }
    const std::vector<double> unit_weights{1.0, 1.0};
    return run_sgd_epochs(m, dataset, cfg.epochs, cfg.learning_rate, cfg.decay_epochs,
                          cfg.decay_factor, cfg.batch_size, cfg.momentum, cfg.weight_decay,
                          cfg.augment, unit_weights, seed, nullptr, 0.0);
}

std::vector<htl_record> mine_supervised(model & m, const std::vector<sample> & dataset,
                                        const mining_config & cfg,
                                        std::vector<drop_record> * out_drops) {
    cfg.validate();
    if (m.kind() != arch_kind::segmentation) {
        throw state_error("mine_supervised requires a segmentation model");
    }
    const auto mask = build_prune_mask(m, cfg.method, cfg.prune_ratio, cfg.seed);
    auto drops = degradation_table(m, mask, dataset);

    std::vector<htl_record> records;
    records.reserve(drops.size());
    for (const auto & d : drops) {
        htl_record r;
        r.sample_id = d.sample_id;
        r.setting = mining_setting::supervised;
        r.sensitivity = d.drop_fg;
        r.threshold_used = cfg.tau;
        r.is_htl = r.sensitivity > cfg.tau;
        records.push_back(std::move(r));
    }
    if (out_drops != nullptr) {
        *out_drops = std::move(drops);
    }
    return records;
}

semi_mining_result mine_semi(model & m, const std::vector<sample> & unlabeled_pool,
                             const mining_config & cfg) {
    cfg.validate();
    if (m.kind() != arch_kind::segmentation) {
        throw state_error("mine_semi requires a segmentation model");
    }
    if (unlabeled_pool.empty()) {
        throw validation_error("mine_semi requires a nonempty unlabeled pool");
    }

    semi_mining_result res;
    // pseudo-labels come from the FULL model; pruning is only a probe
    auto full_preds = predict_masks(m, unlabeled_pool);

    const auto mask = build_prune_mask(m, cfg.method, cfg.prune_ratio, cfg.seed);
    m.apply_mask(mask);
    std::vector<std::vector<uint8_t>> pruned_preds;
    try {
        pruned_preds = predict_masks(m, unlabeled_pool);
    } catch (...) {
        m.remove_mask();
        throw;
    }
    m.remove_mask();

    res.pseudo_labeled = unlabeled_pool;
    for (size_t i = 0; i < unlabeled_pool.size(); ++i) {
        res.pseudo_labeled[i].mask = full_preds[i];

        const int h = unlabeled_pool[i].height, w = unlabeled_pool[i].width;
        const auto box_full = compute_bounding_box(full_preds[i], h, w);
        if (!box_full) {
            ++res.excluded_no_box;   // cannot measure drift from nothing
            continue;
        }
        const auto box_pruned = compute_bounding_box(pruned_preds[i], h, w);
        htl_record r;
        r.sample_id = unlabeled_pool[i].id;
        r.setting = mining_setting::semi;
        r.sensitivity = box_divergence(box_full, box_pruned);
        r.threshold_used = cfg.tau;
        r.is_htl = r.sensitivity > cfg.tau;
        r.box_full = box_full;
        r.box_pruned = box_pruned;
        res.records.push_back(std::move(r));
    }
    return res;
}

weak_mining_result mine_weak(model & m, const std::vector<sample> & dataset,
                             const mining_config & cfg, int cam_threshold) {
    cfg.validate();
    if (m.kind() != arch_kind::classification) {
        throw state_error("mine_weak requires a classification model");
    }

    auto cam_box = [&](const sample & s) -> std::optional<bounding_box> {
        auto img = batch_images({s}, {0});
        int cls;
        if (cfg.use_predicted_class) {
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
        return compute_bounding_box(binarize(h, cam_threshold), h.height, h.width);
    };

    std::vector<std::optional<bounding_box>> full_boxes;
    full_boxes.reserve(dataset.size());
    for (const auto & s : dataset) {
        full_boxes.push_back(cam_box(s));
    }

    const auto mask = build_prune_mask(m, cfg.method, cfg.prune_ratio, cfg.seed);
    m.apply_mask(mask);
    std::vector<std::optional<bounding_box>> pruned_boxes;
    pruned_boxes.reserve(dataset.size());
    try {
        for (const auto & s : dataset) {
            pruned_boxes.push_back(cam_box(s));
        }
    } catch (...) {
        m.remove_mask();
        throw;
    }
    m.remove_mask();

    weak_mining_result res;
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (!full_boxes[i]) {
            ++res.excluded_empty_cam;
            continue;
        }
        htl_record r;
        r.sample_id = dataset[i].id;
        r.setting = mining_setting::weak;
        r.sensitivity = box_divergence(full_boxes[i], pruned_boxes[i]);
        r.threshold_used = cfg.tau;
        r.is_htl = r.sensitivity > cfg.tau;
        r.box_full = full_boxes[i];
        r.box_pruned = pruned_boxes[i];
        res.records.push_back(std::move(r));
    }
    return res;
}

finetune_result finetune_on_htl(model & m, const std::vector<sample> & htl_samples,
                                mining_setting setting, const mining_config & cfg,
                                int batch_size, bool augment,
                                const std::vector<sample> * mix_pool) {
    cfg.validate();
    finetune_result res;
    if (htl_samples.empty()) {
        std::cerr << "warning: empty HTL set, model returned unchanged\n";
        res.skipped_empty = true;
        return res;
    }
    const bool segmentation_setting = setting != mining_setting::weak;
    if (segmentation_setting && m.kind() != arch_kind::segmentation) {
        throw validation_error("supervised/semi fine-tuning requires a segmentation model");
    }
    if (!segmentation_setting && m.kind() != arch_kind::classification) {
        throw validation_error("weak fine-tuning requires a classification model");
    }
    for (const auto & s : htl_samples) {
        if (segmentation_setting && !s.mask) {
            throw validation_error("sample " + s.id + " lacks the mask/pseudo-mask required by " +
                                   std::string(mining_setting_name(setting)) + " fine-tuning");
        }
        if (!segmentation_setting && !s.class_label) {
            throw validation_error("sample " + s.id + " lacks the class label required by weak "
                                   "fine-tuning");
        }
    }

    res.epoch_losses = run_sgd_epochs(
        m, htl_samples, cfg.fine_tune_epochs, cfg.fine_tune_lr, {cfg.fine_tune_decay_epoch}, 0.1,
        batch_size, 0.9, 2e-4, augment, cfg.class_weights, derive_seed(cfg.seed, 0xf7),
        cfg.mix_ratio > 0.0 ? mix_pool : nullptr, cfg.mix_ratio);
    return res;
}

const char * sampler_kind_name(sampler_kind k) {
    switch (k) {
        case sampler_kind::random:                   return "random";
        case sampler_kind::class_distribution:       return "class-distribution";
        case sampler_kind::demographic_distribution: return "demographic-distribution";
    }
    return "?";
}

sampler_kind sampler_kind_from_name(const std::string & name) {
    if (name == "random") {
        return sampler_kind::random;
    }
    if (name == "class-distribution") {
        return sampler_kind::class_distribution;
    }
    if (name == "demographic-distribution") {
        return sampler_kind::demographic_distribution;
    }
    throw config_error("unknown baseline sampler: " + name);
}

std::vector<std::string> baseline_sampler(sampler_kind kind, const std::vector<sample> & dataset,
                                          int count, uint64_t seed) {
    if (count < 0 || size_t(count) > dataset.size()) {
        throw config_error("sample count " + std::to_string(count) +
                           " exceeds dataset size " + std::to_string(dataset.size()));
    }
    rng r(seed);
    std::vector<std::string> out;
    out.reserve(size_t(count));

    switch (kind) {
        case sampler_kind::random: {
            std::vector<size_t> idx(dataset.size());
            for (size_t i = 0; i < idx.size(); ++i) {
                idx[i] = i;
            }
            r.shuffle(idx);
            for (int i = 0; i < count; ++i) {
                out.push_back(dataset[idx[size_t(i)]].id);
            }
            break;
        }
        case sampler_kind::class_distribution: {
            // inverse-frequency weights; draws are i.i.d. (with
            // replacement) so minority classes genuinely dominate
            std::map<int, int64_t> freq;
            for (const auto & s : dataset) {
                if (!s.class_label) {
                    throw validation_error("class-distribution sampling requires class labels "
                                           "(sample " + s.id + ")");
                }
                freq[*s.class_label] += 1;
            }
            std::vector<double> weights(dataset.size());
            double total = 0.0;
            for (size_t i = 0; i < dataset.size(); ++i) {
                weights[i] = 1.0 / double(freq[*dataset[i].class_label]);
                total += weights[i];
            }
            for (int i = 0; i < count; ++i) {
                double u = r.uniform() * total;
                size_t pick = dataset.size() - 1;
                for (size_t j = 0; j < weights.size(); ++j) {
                    u -= weights[j];
                    if (u < 0.0) {
                        pick = j;
                        break;
                    }
                }
                out.push_back(dataset[pick].id);
            }
            break;
        }
        case sampler_kind::demographic_distribution: {
            // proportional allocation across sex groups, then uniform
            // without replacement inside each group
            std::map<std::string, std::vector<size_t>> groups;
            for (size_t i = 0; i < dataset.size(); ++i) {
                groups[dataset[i].demo.sex].push_back(i);
            }
            std::vector<std::string> names;
            std::vector<double> sizes;
            for (const auto & [name, idx] : groups) {
                names.push_back(name);
                sizes.push_back(double(idx.size()));
            }
            // largest-remainder quota
            std::vector<int> alloc(names.size(), 0);
            {
                double total = 0.0;
                for (double s : sizes) {
                    total += s;
                }
                std::vector<std::pair<double, size_t>> rema;
                int assigned = 0;
                for (size_t i = 0; i < sizes.size(); ++i) {
                    const double q = sizes[i] / total * count;
                    alloc[i] = int(std::floor(q));
                    assigned += alloc[i];
                    rema.push_back({q - std::floor(q), i});
                }
                std::sort(rema.begin(), rema.end(), [](const auto & a, const auto & b) {
                    if (a.first != b.first) {
                        return a.first > b.first;
                    }
                    return a.second < b.second;
                });
                for (int i = 0; i < count - assigned; ++i) {
                    alloc[rema[size_t(i) % rema.size()].second] += 1;
                }
                // rounding can overshoot a small group; push the excess
                // to groups with spare capacity, largest first
                int spill = 0;
                for (size_t i = 0; i < alloc.size(); ++i) {
                    const int cap = int(sizes[i]);
                    if (alloc[i] > cap) {
                        spill += alloc[i] - cap;
                        alloc[i] = cap;
                    }
                }
                while (spill > 0) {
                    size_t best = 0;
                    double best_room = -1.0;
                    for (size_t i = 0; i < alloc.size(); ++i) {
                        const double room = sizes[i] - double(alloc[i]);
                        if (room > best_room) {
                            best_room = room;
                            best = i;
                        }
                    }
                    alloc[best] += 1;
                    --spill;
                }
            }
            for (size_t g = 0; g < names.size(); ++g) {
                auto idx = groups[names[g]];
                r.shuffle(idx);
                for (int i = 0; i < alloc[g]; ++i) {
                    out.push_back(dataset[idx[size_t(i)]].id);
                }
            }
            break;
        }
    }
    return out;
}

} // namespace htl
