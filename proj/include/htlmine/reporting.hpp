#pragma once

#include "htlmine/dataset.hpp"
#include "htlmine/metrics.hpp"
#include "htlmine/mining.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace htl {

constexpr int kReportSchemaVersion = 1;

struct disparity_row {
    std::string group;
    double dataset_share = 0.0;
    std::optional<double> htl_share;       // absent when the HTL set is empty
    std::optional<double> enrichment;      // htl_share / dataset_share
    std::optional<double> mean_drop_fg;    // absent without drop records
    std::optional<double> mean_drop_bg;
};

struct disparity_report {
    std::string group_by;   // "sex" | "age_group" | "subgroup"
    std::vector<disparity_row> rows;
};

// Shares and enrichments per group, deterministic lexicographic group
// order; ids missing from metadata group under "unknown".
disparity_report demographic_report(const std::vector<htl_record> & records,
                                    const std::vector<drop_record> & drops,
                                    const std::vector<sample> & metadata,
                                    const std::string & group_by);

struct drop_summary_row {
    double ratio = 0.0;
    double mean_drop_fg = 0.0;
    double mean_drop_bg = 0.0;
};

std::vector<drop_summary_row> drop_summary(
    const std::map<double, std::vector<drop_record>> & drops_by_ratio);

struct comparison_row {
    std::string method;
    seg_metrics mean;
    std::optional<seg_metrics> stddev;   // sample std over seeds, needs >= 2
    int n_seeds = 0;
};

// One row per method; order of the input is preserved.
std::vector<comparison_row> comparison_table(
    const std::vector<std::pair<std::string, std::vector<seg_metrics>>> & runs);

// --- persistence (CSV plus JSON mirror with schema_version) ---

std::string format_double(double v);

void write_htl_csv(const std::filesystem::path & p, const std::vector<htl_record> & records);
void write_drops_csv(const std::filesystem::path & p, const std::vector<drop_record> & drops,
                     double tau);
void write_disparity_report(const std::filesystem::path & csv_path,
                            const std::filesystem::path & json_path,
                            const disparity_report & rep);
void write_drop_summary(const std::filesystem::path & csv_path,
                        const std::filesystem::path & json_path,
                        const std::vector<drop_summary_row> & rows);
void write_comparison_table(const std::filesystem::path & csv_path,
                            const std::filesystem::path & json_path,
                            const std::vector<comparison_row> & rows);

} // namespace htl
