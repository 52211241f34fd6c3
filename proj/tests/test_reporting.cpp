#include "htlmine/reporting.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace htl;

namespace {

sample meta_sample(const std::string & id, const std::string & sex, const std::string & age,
                   const std::string & subgroup) {
    sample s;
    s.id = id;
    s.demo.sex = sex;
    s.demo.age_group = age;
    s.subgroup = subgroup;
    return s;
}

htl_record rec(const std::string & id, double sens, bool htl) {
    htl_record r;
    r.sample_id = id;
    r.sensitivity = sens;
    r.is_htl = htl;
    r.threshold_used = 0.4;
    return r;
}

} // namespace

TEST_CASE("demographic_report: whole-dataset HTL set gives enrichment 1 everywhere") {
    std::vector<sample> meta{meta_sample("a", "male", "<30", "easy"),
                             meta_sample("b", "female", "<30", "easy"),
                             meta_sample("c", "female", "30-60", "hard"),
                             meta_sample("d", "male", "30-60", "hard")};
    std::vector<htl_record> records;
    for (const auto & s : meta) {
        records.push_back(rec(s.id, 0.9, true));
    }
    const auto rep = demographic_report(records, {}, meta, "sex");
    REQUIRE(rep.rows.size() == 2);
    for (const auto & row : rep.rows) {
        REQUIRE(row.enrichment.has_value());
        CHECK(*row.enrichment == doctest::Approx(1.0).epsilon(1e-12));
    }

    double share_sum = 0.0, htl_sum = 0.0;
    for (const auto & row : rep.rows) {
        share_sum += row.dataset_share;
        htl_sum += *row.htl_share;
    }
    CHECK(share_sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(htl_sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("demographic_report: empty HTL set leaves the htl columns absent") {
    std::vector<sample> meta{meta_sample("a", "male", "<30", "easy"),
                             meta_sample("b", "female", "<30", "easy")};
    std::vector<htl_record> records{rec("a", 0.1, false), rec("b", 0.2, false)};
    const auto rep = demographic_report(records, {}, meta, "sex");
    for (const auto & row : rep.rows) {
        CHECK(!row.htl_share.has_value());
        CHECK(!row.enrichment.has_value());
    }
}

TEST_CASE("demographic_report: skewed HTL set enriches the right group") {
    std::vector<sample> meta;
    std::vector<htl_record> records;
    for (int i = 0; i < 80; ++i) {
        meta.push_back(meta_sample("e" + std::to_string(i), "male", "30-60", "easy"));
        records.push_back(rec(meta.back().id, 0.1, i < 4));   // 4 easy HTLs
    }
    for (int i = 0; i < 20; ++i) {
        meta.push_back(meta_sample("h" + std::to_string(i), "female", "<30", "hard"));
        records.push_back(rec(meta.back().id, 0.8, i < 16));   // 16 hard HTLs
    }
    const auto rep = demographic_report(records, {}, meta, "subgroup");
    for (const auto & row : rep.rows) {
        if (row.group == "hard") {
            CHECK(row.dataset_share == doctest::Approx(0.2));
            CHECK(*row.htl_share == doctest::Approx(0.8));
            CHECK(*row.enrichment == doctest::Approx(4.0));
        }
    }
}

TEST_CASE("demographic_report: drop means aggregate per group") {
    std::vector<sample> meta{meta_sample("a", "male", "<30", "g"),
                             meta_sample("b", "male", "<30", "g")};
    std::vector<drop_record> drops(2);
    drops[0].sample_id = "a";
    drops[0].drop_fg = 0.4;
    drops[0].drop_bg = 0.1;
    drops[1].sample_id = "b";
    drops[1].drop_fg = 0.6;
    drops[1].drop_bg = 0.3;
    const auto rep = demographic_report({rec("a", 0.4, true), rec("b", 0.6, true)}, drops, meta,
                                        "sex");
    REQUIRE(rep.rows.size() == 1);
    CHECK(*rep.rows[0].mean_drop_fg == doctest::Approx(0.5));
    CHECK(*rep.rows[0].mean_drop_bg == doctest::Approx(0.2));
}

TEST_CASE("drop_summary: zero ratio row is zero, single sample passes through") {
    std::map<double, std::vector<drop_record>> by_ratio;
    drop_record d;
    d.sample_id = "a";
    d.drop_fg = 0.42;
    d.drop_bg = 0.05;
    by_ratio[0.0] = {drop_record{"a", 1, 1, 1, 1, 0.0, 0.0}};
    by_ratio[0.5] = {d};
    const auto rows = drop_summary(by_ratio);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ratio == 0.0);
    CHECK(rows[0].mean_drop_fg == 0.0);
    CHECK(rows[1].mean_drop_fg == doctest::Approx(0.42));
    CHECK(rows[1].mean_drop_bg == doctest::Approx(0.05));
}

TEST_CASE("comparison_table: single run has no std, identical runs have std 0") {
    seg_metrics m;
    m.iou_background = 0.9;
    m.iou_foreground = 0.6;
    m.mean_iou = 0.75;
    m.dice = 0.7;

    auto rows1 = comparison_table({{"base", {m}}});
    REQUIRE(rows1.size() == 1);
    CHECK(!rows1[0].stddev.has_value());
    CHECK(rows1[0].mean.iou_foreground == doctest::Approx(0.6));

    auto rows3 = comparison_table({{"base", {m, m, m}}});
    REQUIRE(rows3[0].stddev.has_value());
    CHECK(rows3[0].stddev->iou_foreground == doctest::Approx(0.0));
}

TEST_CASE("comparison_table: std matches the hand-computed sample std") {
    seg_metrics a, b, c;
    a.iou_foreground = 0.60;
    b.iou_foreground = 0.62;
    c.iou_foreground = 0.64;
    const auto rows = comparison_table({{"x", {a, b, c}}});
    // mean 0.62, sample variance ((0.02)^2 + 0 + (0.02)^2)/2 = 4e-4
    CHECK(rows[0].mean.iou_foreground == doctest::Approx(0.62));
    CHECK(rows[0].stddev->iou_foreground == doctest::Approx(0.02).epsilon(1e-9));
}

TEST_CASE("csv writers: fixed column order and byte determinism") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "htlmine_report_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::vector<drop_record> drops(1);
    drops[0].sample_id = "s1";
    drops[0].iou_fg_full = 0.8;
    drops[0].iou_fg_pruned = 0.4;
    drops[0].drop_fg = 0.5;
    drops[0].iou_bg_full = 0.95;
    drops[0].iou_bg_pruned = 0.9;
    drops[0].drop_bg = 0.052631578947368425;

    write_drops_csv(dir / "drops.csv", drops, 0.4);
    std::ifstream f(dir / "drops.csv");
    std::string header, row;
    std::getline(f, header);
    std::getline(f, row);
    CHECK(header ==
          "sample_id,iou_fg_full,iou_fg_pruned,drop_fg,iou_bg_full,iou_bg_pruned,drop_bg,is_htl");
    CHECK(row.rfind("s1,0.8,0.4,0.5,0.95,0.9,", 0) == 0);
    CHECK(row.back() == '1');   // drop_fg 0.5 > tau 0.4

    // rerun writes identical bytes
    write_drops_csv(dir / "drops2.csv", drops, 0.4);
    std::ifstream f1(dir / "drops.csv", std::ios::binary), f2(dir / "drops2.csv", std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    fs::remove_all(dir);
}
