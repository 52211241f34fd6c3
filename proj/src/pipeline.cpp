#include "htlmine/pipeline.hpp"

#include "htlmine/errors.hpp"
#include "htlmine/pruning.hpp"
#include "htlmine/rng.hpp"
#include "htlmine/saliency.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace htl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path & p) {
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    std::ofstream f(p);
    if (!f) {
        throw io_error("cannot open " + p.string() + " for writing");
    }
    return f;
}

json load_json(const fs::path & p) {
    std::ifstream f(p);
    if (!f) {
        throw io_error("cannot open " + p.string());
    }
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) {
        throw validation_error(p.string() + ": invalid JSON");
    }
    return j;
}

std::string ratio_tag(double ratio) {
    // 0.25 -> "25", 0.7 -> "70"
    return std::to_string(int(std::lround(ratio * 100.0)));
}

json mining_config_json(const mining_config & mc) {
    return json{{"prune_method", prune_method_name(mc.method)},
                {"prune_ratio", mc.prune_ratio},
                {"tau", mc.tau},
                {"fine_tune_epochs", mc.fine_tune_epochs},
                {"fine_tune_lr", mc.fine_tune_lr},
                {"fine_tune_decay_epoch", mc.fine_tune_decay_epoch},
                {"class_weights", mc.class_weights},
                {"mix_ratio", mc.mix_ratio},
                {"use_predicted_class", mc.use_predicted_class},
                {"seed", mc.seed}};
}

model build_model_for(const run_config & cfg, uint64_t seed) {
    return cfg.setting == mining_setting::weak ? build_classifier(cfg.arch, seed)
                                               : build_unet(cfg.arch, seed);
}

mining_config seeded_mining_config(const run_config & cfg, uint64_t seed) {
    mining_config mc = cfg.mining;
    mc.seed = seed;
    return mc;
}

std::vector<sample> select_by_ids(const std::vector<sample> & pool,
                                  const std::vector<std::string> & ids) {
    std::map<std::string, const sample *> by_id;
    for (const auto & s : pool) {
        by_id[s.id] = &s;
    }
    std::vector<sample> out;
    out.reserve(ids.size());
    for (const auto & id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw validation_error("sample id " + id + " not found in pool");
        }
        out.push_back(*it->second);
    }
    return out;
}

} // namespace

fs::path corpus_dir(const run_config & cfg) {
    return cfg.generate_spec ? cfg.output_dir / "corpus" : *cfg.corpus_directory;
}

fs::path seed_dir(const run_config & cfg, uint64_t seed) {
    return cfg.output_dir / ("seed_" + std::to_string(seed));
}

void stage_generate(const run_config & cfg) {
    if (cfg.generate_spec) {
        const auto dir = cfg.output_dir / "corpus";
        auto samples = generate(*cfg.generate_spec);
        save_directory(samples, dir);

        std::map<std::string, int> per_subgroup;
        for (const auto & s : samples) {
            per_subgroup[s.subgroup.value_or("")] += 1;
        }
        json j;
        j["schema_version"] = kReportSchemaVersion;
        j["n_samples"] = samples.size();
        j["subgroup_counts"] = per_subgroup;
        open_out(dir / "corpus_summary.json") << j.dump(2) << "\n";
    }
    if (cfg.unlabeled_generate_spec) {
        auto pool = generate(*cfg.unlabeled_generate_spec);
        // pool images carry no masks by definition
        for (auto & s : pool) {
            s.mask.reset();
        }
        save_directory(pool, cfg.output_dir / "corpus_unlabeled");
    }
}

std::vector<sample> load_corpus_samples(const run_config & cfg) {
    return load_directory(corpus_dir(cfg));
}

split_result load_splits(const run_config & cfg) {
    return split(load_corpus_samples(cfg), cfg.split_fractions, cfg.split_seed);
}

std::vector<sample> load_unlabeled_pool(const run_config & cfg, const split_result & splits) {
    if (cfg.unlabeled_generate_spec) {
        return load_directory(cfg.output_dir / "corpus_unlabeled");
    }
    if (cfg.unlabeled_directory) {
        return load_directory(*cfg.unlabeled_directory);
    }
    // degenerate pool: the labeled training images themselves, masks hidden
    auto pool = splits.train;
    for (auto & s : pool) {
        s.mask.reset();
    }
    return pool;
}

void stage_train(const run_config & cfg, uint64_t seed) {
    const auto splits = load_splits(cfg);
    if (splits.train.empty()) {
        throw validation_error("training split is empty");
    }
    model m = build_model_for(cfg, seed);
    const auto losses = train_base(m, splits.train, cfg.training, seed);
    const auto dir = seed_dir(cfg, seed);
    save_checkpoint(dir / "base.ckpt", m);

    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["seed"] = seed;
    j["epochs"] = cfg.training.epochs;
    j["epoch_losses"] = losses;
    if (m.kind() == arch_kind::segmentation) {
        const auto tm = evaluate(m, splits.train);
        j["train_metrics"] = {{"iou_background", tm.iou_background},
                              {"iou_foreground", tm.iou_foreground},
                              {"mean_iou", tm.mean_iou},
                              {"dice", tm.dice}};
    }
    open_out(dir / "train_log.json") << j.dump(2) << "\n";
}

double stage_prune(const run_config & cfg, uint64_t seed, const fs::path & checkpoint) {
    const auto dir = seed_dir(cfg, seed);
    const fs::path ckpt = checkpoint.empty() ? dir / "base.ckpt" : checkpoint;
    auto loaded = load_checkpoint(ckpt);
    const auto mask =
        build_prune_mask(loaded.m, cfg.mining.method, cfg.mining.prune_ratio, seed);
    save_checkpoint(dir / "pruned.ckpt", loaded.m, &mask);

    const double s = sparsity(mask);
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["method"] = prune_method_name(cfg.mining.method);
    j["ratio"] = cfg.mining.prune_ratio;
    j["seed"] = seed;
    j["sparsity"] = s;
    open_out(dir / "sparsity.json") << j.dump(2) << "\n";
    return s;
}

void stage_mine(const run_config & cfg, uint64_t seed, const fs::path & checkpoint) {
    const auto dir = seed_dir(cfg, seed);
    const fs::path ckpt = checkpoint.empty() ? dir / "base.ckpt" : checkpoint;
    auto loaded = load_checkpoint(ckpt);
    const auto splits = load_splits(cfg);
    const auto mc = seeded_mining_config(cfg, seed);

    std::vector<htl_record> records;
    int excluded = 0;
    json manifest;
    manifest["schema_version"] = kReportSchemaVersion;
    manifest["setting"] = mining_setting_name(cfg.setting);
    manifest["seed"] = seed;
    manifest["mining_config"] = mining_config_json(mc);

    switch (cfg.setting) {
        case mining_setting::supervised: {
            std::vector<drop_record> drops;
            records = mine_supervised(loaded.m, splits.train, mc, &drops);
            write_drops_csv(dir / "drops.csv", drops, mc.tau);
            break;
        }
        case mining_setting::semi: {
            const auto pool = load_unlabeled_pool(cfg, splits);
            auto res = mine_semi(loaded.m, pool, mc);
            records = std::move(res.records);
            excluded = res.excluded_no_box;
            fs::create_directories(dir / "pseudo");
            for (const auto & s : res.pseudo_labeled) {
                std::vector<uint8_t> m255(s.mask->size());
                for (size_t i = 0; i < m255.size(); ++i) {
                    m255[i] = (*s.mask)[i] ? 255 : 0;
                }
                write_pgm8(dir / "pseudo" / (s.id + ".pgm"), m255, s.height, s.width);
            }
            manifest["pseudo_dir"] = "pseudo";
            break;
        }
        case mining_setting::weak: {
            auto res = mine_weak(loaded.m, splits.train, mc, cfg.cam_threshold);
            records = std::move(res.records);
            excluded = res.excluded_empty_cam;
            break;
        }
    }

    // per-sample degradation sweep for the drop-summary report
    if (cfg.setting != mining_setting::weak) {
        for (double ratio : cfg.report_drop_ratios) {
            const auto mask = build_prune_mask(loaded.m, cfg.mining.method, ratio, seed);
            const auto drops = degradation_table(loaded.m, mask, splits.train);
            write_drops_csv(dir / ("drops_ratio_" + ratio_tag(ratio) + ".csv"), drops, mc.tau);
        }
    }

    write_htl_csv(dir / "htl.csv", records);
    manifest["excluded"] = excluded;
    int n_htl = 0;
    manifest["records"] = json::array();
    for (const auto & r : records) {
        json rj;
        rj["sample_id"] = r.sample_id;
        rj["sensitivity"] = r.sensitivity;
        rj["is_htl"] = r.is_htl;
        rj["threshold_used"] = r.threshold_used;
        rj["box_full"] = r.box_full ? json::array({r.box_full->x_min, r.box_full->y_min,
                                                   r.box_full->x_max, r.box_full->y_max})
                                    : json();
        rj["box_pruned"] = r.box_pruned ? json::array({r.box_pruned->x_min, r.box_pruned->y_min,
                                                       r.box_pruned->x_max, r.box_pruned->y_max})
                                        : json();
        manifest["records"].push_back(rj);
        n_htl += r.is_htl ? 1 : 0;
    }
    manifest["n_htl"] = n_htl;
    open_out(dir / "htl.json") << manifest.dump(2) << "\n";
}

namespace {

std::vector<std::string> htl_ids_from_manifest(const json & manifest) {
    std::vector<std::string> ids;
    for (const auto & r : manifest.at("records")) {
        if (r.at("is_htl").get<bool>()) {
            ids.push_back(r.at("sample_id").get<std::string>());
        }
    }
    return ids;
}

std::vector<std::string> all_ids_from_manifest(const json & manifest) {
    std::vector<std::string> ids;
    for (const auto & r : manifest.at("records")) {
        ids.push_back(r.at("sample_id").get<std::string>());
    }
    return ids;
}

// finetune universe for one seed: the samples mining could have flagged,
// with the labels the setting fine-tunes on
std::vector<sample> finetune_pool(const run_config & cfg, uint64_t seed, const json & manifest,
                                  const split_result & splits) {
    if (cfg.setting == mining_setting::semi) {
        auto pool = load_unlabeled_pool(cfg, splits);
        const fs::path pdir =
            seed_dir(cfg, seed) / manifest.value("pseudo_dir", std::string("pseudo"));
        std::vector<sample> out;
        for (auto & s : pool) {
            const fs::path mp = pdir / (s.id + ".pgm");
            if (!fs::exists(mp)) {
                throw io_error("missing pseudo mask " + mp.string());
            }
            s.mask = load_mask_pgm(mp, s.height, s.width);
            out.push_back(std::move(s));
        }
        return out;
    }
    return splits.train;
}

} // namespace

void stage_finetune(const run_config & cfg, uint64_t seed, const fs::path & checkpoint,
                    const fs::path & htl_manifest) {
    const auto dir = seed_dir(cfg, seed);
    const fs::path ckpt = checkpoint.empty() ? dir / "base.ckpt" : checkpoint;
    const fs::path manifest_path = htl_manifest.empty() ? dir / "htl.json" : htl_manifest;
    const auto manifest = load_json(manifest_path);
    const auto splits = load_splits(cfg);
    const auto mc = seeded_mining_config(cfg, seed);

    const auto pool = finetune_pool(cfg, seed, manifest, splits);
    const auto htl_ids = htl_ids_from_manifest(manifest);
    const auto universe = all_ids_from_manifest(manifest);

    {
        auto loaded = load_checkpoint(ckpt);
        const auto htl_samples = select_by_ids(pool, htl_ids);
        finetune_on_htl(loaded.m, htl_samples, cfg.setting, mc, cfg.training.batch_size,
                        cfg.training.augment, &splits.train);
        save_checkpoint(dir / "final.ckpt", loaded.m);
    }

    if (htl_ids.empty()) {
        std::cerr << "warning: empty HTL set; baseline fine-tuning skipped\n";
        return;
    }

    const auto candidates = select_by_ids(pool, universe);
    for (size_t b = 0; b < cfg.baselines.size(); ++b) {
        const auto kind = cfg.baselines[b];
        const auto ids = baseline_sampler(kind, candidates, int(htl_ids.size()),
                                          derive_seed(seed, b, 0xba5e));
        auto loaded = load_checkpoint(ckpt);
        auto picked = select_by_ids(pool, ids);
        finetune_on_htl(loaded.m, picked, cfg.setting, mc, cfg.training.batch_size,
                        cfg.training.augment, &splits.train);
        save_checkpoint(dir / (std::string("baseline_") + sampler_kind_name(kind) + ".ckpt"),
                        loaded.m);
    }
}

seg_metrics stage_evaluate(const run_config & cfg, uint64_t seed, const fs::path & checkpoint,
                           const std::string & split_name, const std::string & method) {
    const auto splits = load_splits(cfg);
    const std::vector<sample> * slice = nullptr;
    if (split_name == "train") {
        slice = &splits.train;
    } else if (split_name == "val") {
        slice = &splits.val;
    } else if (split_name == "test") {
        slice = &splits.test;
    } else {
        throw config_error("unknown split: " + split_name);
    }
    if (slice->empty()) {
        throw validation_error("split '" + split_name + "' is empty");
    }

    auto loaded = load_checkpoint(checkpoint);
    seg_metrics m;
    if (loaded.m.kind() == arch_kind::segmentation) {
        m = evaluate(loaded.m, *slice);
    } else {
        m = evaluate_cam_localization(loaded.m, *slice, cfg.cam_threshold,
                                      cfg.mining.use_predicted_class);
    }

    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["method"] = method;
    j["split"] = split_name;
    j["seed"] = seed;
    j["metrics"] = {{"iou_background", m.iou_background},
                    {"iou_foreground", m.iou_foreground},
                    {"mean_iou", m.mean_iou},
                    {"dice", m.dice}};
    open_out(seed_dir(cfg, seed) / ("metrics_" + method + "_" + split_name + ".json"))
        << j.dump(2) << "\n";
    return m;
}

namespace {

std::vector<drop_record> read_drops_csv(const fs::path & p) {
    std::ifstream f(p);
    if (!f) {
        throw io_error("cannot open " + p.string());
    }
    std::vector<drop_record> out;
    std::string line;
    std::getline(f, line);   // header
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string tok;
        drop_record d;
        std::getline(ls, d.sample_id, ',');
        auto next_double = [&]() {
            std::getline(ls, tok, ',');
            return std::stod(tok);
        };
        d.iou_fg_full = next_double();
        d.iou_fg_pruned = next_double();
        d.drop_fg = next_double();
        d.iou_bg_full = next_double();
        d.iou_bg_pruned = next_double();
        d.drop_bg = next_double();
        out.push_back(std::move(d));
    }
    return out;
}

seg_metrics metrics_from_json(const json & j) {
    seg_metrics m;
    const auto & mm = j.at("metrics");
    m.iou_background = mm.at("iou_background").get<double>();
    m.iou_foreground = mm.at("iou_foreground").get<double>();
    m.mean_iou = mm.at("mean_iou").get<double>();
    m.dice = mm.at("dice").get<double>();
    return m;
}

} // namespace

void stage_report(const run_config & cfg) {
    const auto report_dir = cfg.output_dir / "report";
    const auto splits = load_splits(cfg);

    // Table-1-shaped drop summary across seeds (segmentation settings)
    if (cfg.setting != mining_setting::weak) {
        std::map<double, std::vector<drop_record>> by_ratio;
        for (double ratio : cfg.report_drop_ratios) {
            for (uint64_t seed : cfg.seeds) {
                const fs::path p =
                    seed_dir(cfg, seed) / ("drops_ratio_" + ratio_tag(ratio) + ".csv");
                auto drops = read_drops_csv(p);
                auto & dst = by_ratio[ratio];
                dst.insert(dst.end(), drops.begin(), drops.end());
            }
        }
        write_drop_summary(report_dir / "drop_summary.csv", report_dir / "drop_summary.json",
                           drop_summary(by_ratio));
    }

    // demographic disparity pooled across seeds
    {
        std::vector<htl_record> records;
        std::vector<drop_record> drops;
        for (uint64_t seed : cfg.seeds) {
            const auto manifest = load_json(seed_dir(cfg, seed) / "htl.json");
            for (const auto & r : manifest.at("records")) {
                htl_record rec;
                rec.sample_id = r.at("sample_id").get<std::string>();
                rec.setting = cfg.setting;
                rec.sensitivity = r.at("sensitivity").get<double>();
                rec.is_htl = r.at("is_htl").get<bool>();
                rec.threshold_used = r.at("threshold_used").get<double>();
                records.push_back(std::move(rec));
            }
            const fs::path dp = seed_dir(cfg, seed) / "drops.csv";
            if (fs::exists(dp)) {
                auto d = read_drops_csv(dp);
                drops.insert(drops.end(), d.begin(), d.end());
            }
        }
        const auto corpus = load_corpus_samples(cfg);
        for (const std::string key : {"sex", "age_group", "subgroup"}) {
            const auto rep = demographic_report(records, drops, corpus, key);
            write_disparity_report(report_dir / ("demographic_" + key + ".csv"),
                                   report_dir / ("demographic_" + key + ".json"), rep);
        }
    }

    // Table-2-shaped comparison over methods x seeds
    {
        std::vector<std::string> methods{"base", "htl"};
        for (auto kind : cfg.baselines) {
            methods.push_back(std::string("baseline_") + sampler_kind_name(kind));
        }
        std::vector<std::pair<std::string, std::vector<seg_metrics>>> runs;
        for (const auto & method : methods) {
            std::vector<seg_metrics> per_seed;
            for (uint64_t seed : cfg.seeds) {
                const fs::path p =
                    seed_dir(cfg, seed) / ("metrics_" + method + "_test.json");
                if (!fs::exists(p)) {
                    continue;   // baseline skipped (e.g. empty HTL set)
                }
                per_seed.push_back(metrics_from_json(load_json(p)));
            }
            if (!per_seed.empty()) {
                runs.push_back({method, std::move(per_seed)});
            }
        }
        write_comparison_table(report_dir / "comparison.csv", report_dir / "comparison.json",
                               comparison_table(runs));
    }
}

void run_pipeline(const run_config & cfg) {
    cfg.validate();
    stage_generate(cfg);
    for (uint64_t seed : cfg.seeds) {
        stage_train(cfg, seed);
        stage_prune(cfg, seed);
        stage_mine(cfg, seed);
        stage_finetune(cfg, seed);

        const auto dir = seed_dir(cfg, seed);
        stage_evaluate(cfg, seed, dir / "base.ckpt", "test", "base");
        stage_evaluate(cfg, seed, dir / "final.ckpt", "test", "htl");
        for (auto kind : cfg.baselines) {
            const fs::path b = dir / (std::string("baseline_") + sampler_kind_name(kind) + ".ckpt");
            if (fs::exists(b)) {
                stage_evaluate(cfg, seed, b, "test",
                               std::string("baseline_") + sampler_kind_name(kind));
            }
        }
    }
    stage_report(cfg);
}

} // namespace htl
