#include "htlmine/checkpoint.hpp"
#include "htlmine/config.hpp"
#include "htlmine/errors.hpp"
#include "htlmine/pipeline.hpp"
#include "htlmine/pruning.hpp"
#include "htlmine/reporting.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

namespace {

// flag > config > default
htl::run_config load_config(const std::string & path, const std::string & out_override,
                            const std::string & method_override, double ratio_override) {
    auto cfg = htl::parse_run_config(path);
    if (!out_override.empty()) {
        cfg.output_dir = out_override;
    }
    if (!method_override.empty()) {
        cfg.mining.method = htl::prune_method_from_name(method_override);
    }
    if (ratio_override >= 0.0) {
        cfg.mining.prune_ratio = ratio_override;
    }
    cfg.validate();
    return cfg;
}

std::vector<uint64_t> pick_seeds(const htl::run_config & cfg, int64_t seed_flag) {
    if (seed_flag < 0) {
        return cfg.seeds;
    }
    return {uint64_t(seed_flag)};
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"pruning-assisted hard-to-learn sample mining for lesion localization"};
    app.require_subcommand(1);

    std::string config_path, out_override, checkpoint_path, htl_path, split_name = "test";
    std::string method_override, run_dir, eval_method = "base";
    double ratio_override = -1.0;
    int64_t seed_flag = -1;

    auto add_common = [&](CLI::App * sub, bool needs_config = true) {
        auto * opt = sub->add_option("--config", config_path, "run configuration (JSON)");
        if (needs_config) {
            opt->required();
        }
        sub->add_option("--out", out_override, "override the configured output directory");
        sub->add_option("--seed", seed_flag, "run a single seed instead of all configured seeds");
    };

    auto * cmd_generate = app.add_subcommand("generate", "write the synthetic corpus");
    add_common(cmd_generate);

    auto * cmd_train = app.add_subcommand("train", "train the base model, write checkpoint");
    add_common(cmd_train);

    auto * cmd_prune = app.add_subcommand("prune", "build a prune mask, write mask + sparsity");
    add_common(cmd_prune);
    cmd_prune->add_option("--checkpoint", checkpoint_path, "checkpoint to prune");
    cmd_prune->add_option("--method", method_override,
                          "unstructured-magnitude | structured-magnitude | random");
    cmd_prune->add_option("--ratio", ratio_override, "prune ratio in [0,1)");

    auto * cmd_mine = app.add_subcommand("mine", "mine HTL records, write CSV/JSON");
    add_common(cmd_mine);
    cmd_mine->add_option("--checkpoint", checkpoint_path, "trained checkpoint");

    auto * cmd_finetune = app.add_subcommand("finetune", "fine-tune on mined HTLs");
    add_common(cmd_finetune);
    cmd_finetune->add_option("--checkpoint", checkpoint_path, "base checkpoint");
    cmd_finetune->add_option("--htl", htl_path, "htl.json manifest from `mine`");

    auto * cmd_evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    add_common(cmd_evaluate);
    cmd_evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
    cmd_evaluate->add_option("--split", split_name, "train | val | test");
    cmd_evaluate->add_option("--method", eval_method, "method name recorded in the metrics file");

    auto * cmd_report = app.add_subcommand("report", "aggregate per-seed artifacts");
    cmd_report->add_option("--config", config_path, "run configuration (JSON)")->required();
    cmd_report->add_option("--run-dir", run_dir, "run directory (default: configured output_dir)");

    auto * cmd_pipeline = app.add_subcommand("pipeline", "run every stage for every seed");
    add_common(cmd_pipeline);

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = load_config(config_path, out_override, method_override, ratio_override);
        if (!run_dir.empty()) {
            cfg.output_dir = run_dir;
        }

        if (cmd_generate->parsed()) {
            htl::stage_generate(cfg);
            std::cout << "corpus written to " << htl::corpus_dir(cfg).string() << "\n";
        } else if (cmd_train->parsed()) {
            for (uint64_t seed : pick_seeds(cfg, seed_flag)) {
                htl::stage_train(cfg, seed);
                std::cout << "seed " << seed << ": checkpoint written to "
                          << (htl::seed_dir(cfg, seed) / "base.ckpt").string() << "\n";
            }
        } else if (cmd_prune->parsed()) {
            for (uint64_t seed : pick_seeds(cfg, seed_flag)) {
                const double s = htl::stage_prune(cfg, seed, checkpoint_path);
                std::cout << "seed " << seed << ": sparsity " << htl::format_double(s) << "\n";
            }
        } else if (cmd_mine->parsed()) {
            for (uint64_t seed : pick_seeds(cfg, seed_flag)) {
                htl::stage_mine(cfg, seed, checkpoint_path);
                std::cout << "seed " << seed << ": HTL records written to "
                          << (htl::seed_dir(cfg, seed) / "htl.csv").string() << "\n";
            }
        } else if (cmd_finetune->parsed()) {
            for (uint64_t seed : pick_seeds(cfg, seed_flag)) {
                htl::stage_finetune(cfg, seed, checkpoint_path, htl_path);
                std::cout << "seed " << seed << ": fine-tuned checkpoint written to "
                          << (htl::seed_dir(cfg, seed) / "final.ckpt").string() << "\n";
            }
        } else if (cmd_evaluate->parsed()) {
            for (uint64_t seed : pick_seeds(cfg, seed_flag)) {
                const auto m = htl::stage_evaluate(cfg, seed, checkpoint_path, split_name,
                                                   eval_method);
                std::cout << "seed " << seed << " " << split_name
                          << ": B(IoU) " << htl::format_double(m.iou_background)
                          << " F(IoU) " << htl::format_double(m.iou_foreground)
                          << " Mean(IoU) " << htl::format_double(m.mean_iou)
                          << " DICE " << htl::format_double(m.dice) << "\n";
            }
        } else if (cmd_report->parsed()) {
            htl::stage_report(cfg);
            std::cout << "reports written to " << (cfg.output_dir / "report").string() << "\n";
        } else if (cmd_pipeline->parsed()) {
            htl::run_pipeline(cfg);
            std::cout << "pipeline complete; artifacts under " << cfg.output_dir.string() << "\n";
        }
    } catch (const htl::config_error & e) {
        std::cerr << "{\"error\":\"config\",\"message\":" << nlohmann::json(e.what()).dump()
                  << "}\n";
        return 2;
    } catch (const htl::io_error & e) {
        std::cerr << "{\"error\":\"io\",\"message\":" << nlohmann::json(e.what()).dump() << "}\n";
        return 4;
    } catch (const std::exception & e) {
        std::cerr << "{\"error\":\"runtime\",\"message\":" << nlohmann::json(e.what()).dump()
                  << "}\n";
        return 3;
    }
    return 0;
}
