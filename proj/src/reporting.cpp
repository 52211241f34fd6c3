#include "htlmine/reporting.hpp"

#include "htlmine/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace htl {

using nlohmann::json;

namespace {

std::ofstream open_out(const std::filesystem::path & p) {
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream f(p);
    if (!f) {
        throw io_error("cannot open " + p.string() + " for writing");
    }
    return f;
}

std::string group_key(const sample & s, const std::string & group_by) {
    if (group_by == "sex") {
        return s.demo.sex;
    }
    if (group_by == "age_group") {
        return s.demo.age_group;
    }
    if (group_by == "subgroup") {
        return s.subgroup.value_or("unknown");
    }
    throw config_error("unknown group_by key: " + group_by);
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

disparity_report demographic_report(const std::vector<htl_record> & records,
                                    const std::vector<drop_record> & drops,
                                    const std::vector<sample> & metadata,
                                    const std::string & group_by) {
    std::map<std::string, std::string> id_to_group;
    for (const auto & s : metadata) {
        id_to_group[s.id] = group_key(s, group_by);
    }
    auto lookup = [&](const std::string & id) -> std::string {
        auto it = id_to_group.find(id);
        return it == id_to_group.end() ? "unknown" : it->second;
    };

    // dataset shares over the mined records (the population that was measured)
    std::map<std::string, int64_t> dataset_count;
    std::map<std::string, int64_t> htl_count;
    int64_t htl_total = 0;
    for (const auto & r : records) {
        dataset_count[lookup(r.sample_id)] += 1;
        if (r.is_htl) {
            htl_count[lookup(r.sample_id)] += 1;
            ++htl_total;
        }
    }
    std::map<std::string, std::pair<double, int64_t>> drop_fg_acc, drop_bg_acc;
    for (const auto & d : drops) {
        const auto g = lookup(d.sample_id);
        drop_fg_acc[g].first += d.drop_fg;
        drop_fg_acc[g].second += 1;
        drop_bg_acc[g].first += d.drop_bg;
        drop_bg_acc[g].second += 1;
    }

    int64_t dataset_total = 0;
    for (const auto & [_, n] : dataset_count) {
        dataset_total += n;
    }

    disparity_report rep;
    rep.group_by = group_by;
    for (const auto & [group, n] : dataset_count) {
        disparity_row row;
        row.group = group;
        row.dataset_share = dataset_total > 0 ? double(n) / double(dataset_total) : 0.0;
        if (htl_total > 0) {
            row.htl_share = double(htl_count[group]) / double(htl_total);
            row.enrichment = row.dataset_share > 0.0 ? *row.htl_share / row.dataset_share : 0.0;
        }
        if (auto it = drop_fg_acc.find(group); it != drop_fg_acc.end() && it->second.second > 0) {
            row.mean_drop_fg = it->second.first / double(it->second.second);
            row.mean_drop_bg = drop_bg_acc[group].first / double(drop_bg_acc[group].second);
        }
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

std::vector<drop_summary_row> drop_summary(
    const std::map<double, std::vector<drop_record>> & drops_by_ratio) {
    std::vector<drop_summary_row> rows;
    for (const auto & [ratio, drops] : drops_by_ratio) {
        drop_summary_row row;
        row.ratio = ratio;
        for (const auto & d : drops) {
            row.mean_drop_fg += d.drop_fg;
            row.mean_drop_bg += d.drop_bg;
        }
        if (!drops.empty()) {
            row.mean_drop_fg /= double(drops.size());
            row.mean_drop_bg /= double(drops.size());
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<comparison_row> comparison_table(
    const std::vector<std::pair<std::string, std::vector<seg_metrics>>> & runs) {
    std::vector<comparison_row> rows;
    for (const auto & [method, metrics] : runs) {
        if (metrics.empty()) {
            throw validation_error("comparison_table: no runs for method " + method);
        }
        comparison_row row;
        row.method = method;
        row.n_seeds = int(metrics.size());
        for (const auto & m : metrics) {
            row.mean.iou_background += m.iou_background;
            row.mean.iou_foreground += m.iou_foreground;
            row.mean.mean_iou += m.mean_iou;
            row.mean.dice += m.dice;
        }
        const double n = double(metrics.size());
        row.mean.iou_background /= n;
        row.mean.iou_foreground /= n;
        row.mean.mean_iou /= n;
        row.mean.dice /= n;
        if (metrics.size() >= 2) {
            seg_metrics var;
            for (const auto & m : metrics) {
                var.iou_background += (m.iou_background - row.mean.iou_background) *
                                      (m.iou_background - row.mean.iou_background);
                var.iou_foreground += (m.iou_foreground - row.mean.iou_foreground) *
                                      (m.iou_foreground - row.mean.iou_foreground);
                var.mean_iou += (m.mean_iou - row.mean.mean_iou) * (m.mean_iou - row.mean.mean_iou);
                var.dice += (m.dice - row.mean.dice) * (m.dice - row.mean.dice);
            }
            seg_metrics sd;
            sd.iou_background = std::sqrt(var.iou_background / (n - 1.0));
            sd.iou_foreground = std::sqrt(var.iou_foreground / (n - 1.0));
            sd.mean_iou = std::sqrt(var.mean_iou / (n - 1.0));
            sd.dice = std::sqrt(var.dice / (n - 1.0));
            row.stddev = sd;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_htl_csv(const std::filesystem::path & p, const std::vector<htl_record> & records) {
    auto f = open_out(p);
    f << "sample_id,setting,sensitivity,is_htl,threshold_used,"
         "box_full_x_min,box_full_y_min,box_full_x_max,box_full_y_max,"
         "box_pruned_x_min,box_pruned_y_min,box_pruned_x_max,box_pruned_y_max\n";
    auto box_cols = [&](const std::optional<bounding_box> & b) {
        if (!b) {
            f << ",,,";
            return;
        }
        f << b->x_min << "," << b->y_min << "," << b->x_max << "," << b->y_max;
    };
    for (const auto & r : records) {
        f << r.sample_id << "," << mining_setting_name(r.setting) << ","
          << format_double(r.sensitivity) << "," << (r.is_htl ? 1 : 0) << ","
          << format_double(r.threshold_used) << ",";
        box_cols(r.box_full);
        f << ",";
        box_cols(r.box_pruned);
        f << "\n";
    }
}

void write_drops_csv(const std::filesystem::path & p, const std::vector<drop_record> & drops,
                     double tau) {
    auto f = open_out(p);
    f << "sample_id,iou_fg_full,iou_fg_pruned,drop_fg,iou_bg_full,iou_bg_pruned,drop_bg,is_htl\n";
    for (const auto & d : drops) {
        f << d.sample_id << "," << format_double(d.iou_fg_full) << ","
          << format_double(d.iou_fg_pruned) << "," << format_double(d.drop_fg) << ","
          << format_double(d.iou_bg_full) << "," << format_double(d.iou_bg_pruned) << ","
          << format_double(d.drop_bg) << "," << (d.drop_fg > tau ? 1 : 0) << "\n";
    }
}

void write_disparity_report(const std::filesystem::path & csv_path,
                            const std::filesystem::path & json_path,
                            const disparity_report & rep) {
    auto f = open_out(csv_path);
    f << "group,dataset_share,htl_share,enrichment,mean_drop_fg,mean_drop_bg\n";
    auto opt = [&](const std::optional<double> & v) {
        return v ? format_double(*v) : std::string();
    };
    for (const auto & r : rep.rows) {
        f << r.group << "," << format_double(r.dataset_share) << "," << opt(r.htl_share) << ","
          << opt(r.enrichment) << "," << opt(r.mean_drop_fg) << "," << opt(r.mean_drop_bg) << "\n";
    }

    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["group_by"] = rep.group_by;
    j["rows"] = json::array();
    for (const auto & r : rep.rows) {
        json row;
        row["group"] = r.group;
        row["dataset_share"] = r.dataset_share;
        row["htl_share"] = r.htl_share ? json(*r.htl_share) : json();
        row["enrichment"] = r.enrichment ? json(*r.enrichment) : json();
        row["mean_drop_fg"] = r.mean_drop_fg ? json(*r.mean_drop_fg) : json();
        row["mean_drop_bg"] = r.mean_drop_bg ? json(*r.mean_drop_bg) : json();
        j["rows"].push_back(row);
    }
    open_out(json_path) << j.dump(2) << "\n";
}

void write_drop_summary(const std::filesystem::path & csv_path,
                        const std::filesystem::path & json_path,
                        const std::vector<drop_summary_row> & rows) {
    auto f = open_out(csv_path);
    f << "ratio,mean_drop_fg,mean_drop_bg\n";
    for (const auto & r : rows) {
        f << format_double(r.ratio) << "," << format_double(r.mean_drop_fg) << ","
          << format_double(r.mean_drop_bg) << "\n";
    }
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["rows"] = json::array();
    for (const auto & r : rows) {
        j["rows"].push_back({{"ratio", r.ratio},
                             {"mean_drop_fg", r.mean_drop_fg},
                             {"mean_drop_bg", r.mean_drop_bg}});
    }
    open_out(json_path) << j.dump(2) << "\n";
}

void write_comparison_table(const std::filesystem::path & csv_path,
                            const std::filesystem::path & json_path,
                            const std::vector<comparison_row> & rows) {
    auto f = open_out(csv_path);
    f << "method,n_seeds,iou_background,iou_foreground,mean_iou,dice,"
         "std_iou_background,std_iou_foreground,std_mean_iou,std_dice\n";
    for (const auto & r : rows) {
        f << r.method << "," << r.n_seeds << "," << format_double(r.mean.iou_background) << ","
          << format_double(r.mean.iou_foreground) << "," << format_double(r.mean.mean_iou) << ","
          << format_double(r.mean.dice);
        if (r.stddev) {
            f << "," << format_double(r.stddev->iou_background) << ","
              << format_double(r.stddev->iou_foreground) << ","
              << format_double(r.stddev->mean_iou) << "," << format_double(r.stddev->dice);
        } else {
            f << ",,,,";
        }
        f << "\n";
    }
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["rows"] = json::array();
    for (const auto & r : rows) {
        json row;
        row["method"] = r.method;
        row["n_seeds"] = r.n_seeds;
        row["mean"] = {{"iou_background", r.mean.iou_background},
                       {"iou_foreground", r.mean.iou_foreground},
                       {"mean_iou", r.mean.mean_iou},
                       {"dice", r.mean.dice}};
        if (r.stddev) {
            row["std"] = {{"iou_background", r.stddev->iou_background},
                          {"iou_foreground", r.stddev->iou_foreground},
                          {"mean_iou", r.stddev->mean_iou},
                          {"dice", r.stddev->dice}};
        } else {
            row["std"] = json();
        }
        j["rows"].push_back(row);
    }
    open_out(json_path) << j.dump(2) << "\n";
}

} // namespace htl
