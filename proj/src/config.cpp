#include "htlmine/config.hpp"

#include "htlmine/errors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace htl {

using nlohmann::json;

namespace {

gen_spec parse_gen_spec(const json & j) {
    gen_spec spec;
    spec.n_samples = j.value("n_samples", 0);
    spec.image_size = j.value("image_size", 32);
    spec.channels = j.value("channels", 1);
    spec.seed = j.value("seed", uint64_t(0));
    if (j.contains("subgroups")) {
        for (const auto & g : j.at("subgroups")) {
            subgroup_spec s;
            s.name = g.value("name", "group" + std::to_string(spec.subgroups.size()));
            s.share = g.value("share", 0.0);
            auto range = [&](const char * key, std::array<double, 2> dflt) {
                if (!g.contains(key)) {
                    return dflt;
                }
                const auto & r = g.at(key);
                return std::array<double, 2>{r.at(0).get<double>(), r.at(1).get<double>()};
            };
            s.contrast_range = range("contrast_range", s.contrast_range);
            s.size_range = range("size_range", s.size_range);
            s.irregularity_range = range("irregularity_range", s.irregularity_range);
            if (g.contains("sex_distribution")) {
                for (const auto & [k, v] : g.at("sex_distribution").items()) {
                    s.sex_distribution[k] = v.get<double>();
                }
            }
            if (g.contains("age_distribution")) {
                for (const auto & [k, v] : g.at("age_distribution").items()) {
                    s.age_distribution[k] = v.get<double>();
                }
            }
            if (g.contains("class_label")) {
                s.class_label = g.at("class_label").get<int>();
            }
            spec.subgroups.push_back(std::move(s));
        }
    }
    return spec;
}

} // namespace

void run_config::validate() const {
    std::vector<std::string> bad;
    if (seeds.empty()) {
        bad.push_back("seeds: must be nonempty");
    }
    const int sources = (generate_spec ? 1 : 0) + (corpus_directory ? 1 : 0);
    if (sources != 1) {
        bad.push_back("dataset: exactly one of generate/directory required, got " +
                      std::to_string(sources));
    }
    if (corpus_directory && !std::filesystem::exists(*corpus_directory)) {
        bad.push_back("dataset.directory: path does not exist: " + corpus_directory->string());
    }
    if (unlabeled_directory && !std::filesystem::exists(*unlabeled_directory)) {
        bad.push_back("dataset.unlabeled_directory: path does not exist: " +
                      unlabeled_directory->string());
    }
    if (unlabeled_generate_spec && unlabeled_directory) {
        bad.push_back("dataset: unlabeled pool must come from one source");
    }
    double fsum = 0.0;
    for (double f : split_fractions) {
        if (f < 0.0) {
            bad.push_back("dataset.split_fractions: entries must be >= 0");
            break;
        }
        fsum += f;
    }
    if (fsum > 1.0 + 1e-9) {
        bad.push_back("dataset.split_fractions: sum must be <= 1");
    }
    if (cam_threshold < 0 || cam_threshold > 255) {
        bad.push_back("cam_threshold: must be in [0, 255]");
    }
    try {
        arch.validate();
    } catch (const config_error & e) {
        bad.push_back(std::string("arch: ") + e.what());
    }
    try {
        training.validate();
    } catch (const config_error & e) {
        bad.push_back(std::string("training: ") + e.what());
    }
    try {
        mining.validate();
    } catch (const config_error & e) {
        bad.push_back(std::string("mining: ") + e.what());
    }
    if (generate_spec) {
        try {
            generate_spec->validate();
        } catch (const config_error & e) {
            bad.push_back(std::string("dataset.generate: ") + e.what());
        }
    }
    if (!bad.empty()) {
        std::string msg = "config validation failed (" + std::to_string(bad.size()) + " issues):";
        for (const auto & m : bad) {
            msg += "\n  - " + m;
        }
        throw config_error(msg);
    }
}

run_config parse_run_config_json(const std::string & text, const std::filesystem::path & base_dir) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw config_error("config is not a JSON object");
    }
    const int version = j.value("version", -1);
    if (version != kRunConfigVersion) {
        throw config_error("config version must be " + std::to_string(kRunConfigVersion) +
                           ", got " + std::to_string(version));
    }

    run_config cfg;
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        for (const auto & s : j.at("seeds")) {
            cfg.seeds.push_back(s.get<uint64_t>());
        }
    }
    if (j.contains("setting")) {
        cfg.setting = mining_setting_from_name(j.at("setting").get<std::string>());
    }
    if (j.contains("output_dir")) {
        cfg.output_dir = base_dir / j.at("output_dir").get<std::string>();
    } else {
        cfg.output_dir = base_dir / "out";
    }

    if (j.contains("dataset")) {
        const auto & d = j.at("dataset");
        if (d.contains("generate")) {
            cfg.generate_spec = parse_gen_spec(d.at("generate"));
        }
        if (d.contains("directory")) {
            cfg.corpus_directory = base_dir / d.at("directory").get<std::string>();
        }
        if (d.contains("unlabeled")) {
            const auto & u = d.at("unlabeled");
            if (u.contains("generate")) {
                cfg.unlabeled_generate_spec = parse_gen_spec(u.at("generate"));
            }
            if (u.contains("directory")) {
                cfg.unlabeled_directory = base_dir / u.at("directory").get<std::string>();
            }
        }
        if (d.contains("split_fractions")) {
            const auto & f = d.at("split_fractions");
            cfg.split_fractions = {f.at(0).get<double>(), f.at(1).get<double>(),
                                   f.at(2).get<double>()};
        }
        cfg.split_seed = d.value("split_seed", uint64_t(1));
    }

    if (j.contains("arch")) {
        const auto & a = j.at("arch");
        cfg.arch.depth = a.value("depth", cfg.arch.depth);
        cfg.arch.base_channels = a.value("base_channels", cfg.arch.base_channels);
        cfg.arch.input_channels = a.value("input_channels", cfg.arch.input_channels);
        cfg.arch.num_seg_classes = a.value("num_seg_classes", cfg.arch.num_seg_classes);
        cfg.arch.num_cls_classes = a.value("num_cls_classes", cfg.arch.num_cls_classes);
    }

    if (j.contains("training")) {
        const auto & t = j.at("training");
        cfg.training.epochs = t.value("epochs", cfg.training.epochs);
        cfg.training.learning_rate = t.value("learning_rate", cfg.training.learning_rate);
        cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
        cfg.training.decay_factor = t.value("decay_factor", cfg.training.decay_factor);
        cfg.training.momentum = t.value("momentum", cfg.training.momentum);
        cfg.training.weight_decay = t.value("weight_decay", cfg.training.weight_decay);
        cfg.training.augment = t.value("augment", cfg.training.augment);
        if (t.contains("decay_epochs")) {
            cfg.training.decay_epochs.clear();
            for (const auto & e : t.at("decay_epochs")) {
                cfg.training.decay_epochs.push_back(e.get<int>());
            }
        }
    }

    if (j.contains("mining")) {
        const auto & m = j.at("mining");
        if (m.contains("prune_method")) {
            cfg.mining.method = prune_method_from_name(m.at("prune_method").get<std::string>());
        }
        cfg.mining.prune_ratio = m.value("prune_ratio", cfg.mining.prune_ratio);
        cfg.mining.tau = m.value("tau", cfg.mining.tau);
        cfg.mining.fine_tune_epochs = m.value("fine_tune_epochs", cfg.mining.fine_tune_epochs);
        cfg.mining.fine_tune_lr = m.value("fine_tune_lr", cfg.mining.fine_tune_lr);
        cfg.mining.fine_tune_decay_epoch =
            m.value("fine_tune_decay_epoch", cfg.mining.fine_tune_decay_epoch);
        cfg.mining.mix_ratio = m.value("mix_ratio", cfg.mining.mix_ratio);
        cfg.mining.use_predicted_class =
            m.value("use_predicted_class", cfg.mining.use_predicted_class);
        if (m.contains("class_weights")) {
            cfg.mining.class_weights.clear();
            for (const auto & w : m.at("class_weights")) {
                cfg.mining.class_weights.push_back(w.get<double>());
            }
        }
    }

    if (j.contains("baselines")) {
        for (const auto & b : j.at("baselines")) {
            cfg.baselines.push_back(sampler_kind_from_name(b.get<std::string>()));
        }
    }
    if (j.contains("report")) {
        const auto & r = j.at("report");
        if (r.contains("drop_ratios")) {
            cfg.report_drop_ratios.clear();
            for (const auto & v : r.at("drop_ratios")) {
                cfg.report_drop_ratios.push_back(v.get<double>());
            }
        }
        cfg.cam_threshold = r.value("cam_threshold", cfg.cam_threshold);
    }
    return cfg;
}

run_config parse_run_config(const std::filesystem::path & path) {
    std::ifstream f(path);
    if (!f) {
        throw io_error("cannot open config " + path.string());
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_run_config_json(ss.str(), path.parent_path());
}

} // namespace htl
