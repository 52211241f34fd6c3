#pragma once

#include "htlmine/dataset.hpp"
#include "htlmine/mining.hpp"
#include "htlmine/model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace htl {

constexpr int kRunConfigVersion = 1;

// One declarative document drives the whole pipeline. JSON with one
// object per section; flags override config fields, config fields
// override defaults.
struct run_config {
    std::vector<uint64_t> seeds{10, 20, 30};
    mining_setting setting = mining_setting::supervised;
    std::filesystem::path output_dir = "out";

    // dataset: exactly one source
    std::optional<gen_spec> generate_spec;
    std::optional<std::filesystem::path> corpus_directory;
    std::optional<gen_spec> unlabeled_generate_spec;   // semi setting pool
    std::optional<std::filesystem::path> unlabeled_directory;
    std::array<double, 3> split_fractions{0.7, 0.1, 0.2};
    uint64_t split_seed = 1;

    arch_config arch;
    train_config training;
    mining_config mining;

    std::vector<sampler_kind> baselines;
    std::vector<double> report_drop_ratios{0.25, 0.5, 0.75};
    int cam_threshold = 180;

    void validate() const;   // throws config_error enumerating every violation
};

run_config parse_run_config(const std::filesystem::path & path);
run_config parse_run_config_json(const std::string & text,
                                 const std::filesystem::path & base_dir = ".");

} // namespace htl
