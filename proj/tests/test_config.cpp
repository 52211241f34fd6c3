#include "htlmine/config.hpp"
#include "htlmine/errors.hpp"

#include <doctest.h>

#include <string>

using namespace htl;

namespace {

const char * kMinimal = R"({
  "version": 1,
  "seeds": [10],
  "setting": "supervised",
  "dataset": {
    "generate": {
      "n_samples": 16, "image_size": 16, "seed": 3,
      "subgroups": [{"name": "all", "share": 1.0, "class_label": 0}]
    }
  }
})";

} // namespace

TEST_CASE("run_config: minimal document parses with defaults") {
    auto cfg = parse_run_config_json(kMinimal);
    cfg.validate();
    CHECK(cfg.seeds == std::vector<uint64_t>{10});
    CHECK(cfg.setting == mining_setting::supervised);
    CHECK(cfg.mining.prune_ratio == 0.7);
    CHECK(cfg.mining.tau == 0.4);
    CHECK(cfg.mining.fine_tune_epochs == 20);
    CHECK(cfg.mining.fine_tune_lr == 0.01);
    CHECK(cfg.mining.fine_tune_decay_epoch == 15);
    CHECK(cfg.mining.class_weights == std::vector<double>{1.0, 2.0});
    CHECK(cfg.training.epochs == 100);
    CHECK(cfg.training.learning_rate == 0.1);
    CHECK(cfg.training.decay_epochs == std::vector<int>{20, 50, 80});
    CHECK(cfg.training.momentum == 0.9);
    CHECK(cfg.training.weight_decay == 2e-4);
    CHECK(cfg.arch.depth == 2);
    CHECK(cfg.arch.base_channels == 8);
}

TEST_CASE("run_config: version is mandatory") {
    CHECK_THROWS_AS(parse_run_config_json("{\"seeds\":[1]}"), config_error);
}

TEST_CASE("run_config: validation enumerates every violated field") {
    auto cfg = parse_run_config_json(kMinimal);
    cfg.seeds.clear();
    cfg.mining.prune_ratio = 1.5;
    cfg.mining.tau = 0.0;
    cfg.training.batch_size = 0;
    try {
        cfg.validate();
        FAIL("expected config_error");
    } catch (const config_error & e) {
        const std::string msg = e.what();
        CHECK(msg.find("seeds") != std::string::npos);
        CHECK(msg.find("prune_ratio") != std::string::npos);
        CHECK(msg.find("tau") != std::string::npos);
        CHECK(msg.find("batch_size") != std::string::npos);
    }
}

TEST_CASE("run_config: two dataset sources rejected") {
    auto cfg = parse_run_config_json(kMinimal);
    cfg.corpus_directory = ".";
    CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("run_config: overrides land in the right sections") {
    auto cfg = parse_run_config_json(R"({
      "version": 1,
      "seeds": [1, 2],
      "setting": "weak",
      "arch": {"depth": 1, "base_channels": 4, "num_cls_classes": 5},
      "training": {"epochs": 7, "batch_size": 4},
      "mining": {"prune_method": "random", "prune_ratio": 0.5, "tau": 0.3},
      "baselines": ["random", "class-distribution"],
      "report": {"drop_ratios": [0.1, 0.9]},
      "dataset": {"generate": {"n_samples": 8, "image_size": 16, "seed": 1,
                   "subgroups": [{"name": "a", "share": 1.0, "class_label": 1}]}}
    })");
    CHECK(cfg.setting == mining_setting::weak);
    CHECK(cfg.arch.num_cls_classes == 5);
    CHECK(cfg.training.epochs == 7);
    CHECK(cfg.mining.method == prune_method::random);
    CHECK(cfg.baselines.size() == 2);
    CHECK(cfg.report_drop_ratios == std::vector<double>{0.1, 0.9});
}
