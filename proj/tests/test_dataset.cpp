#include "htlmine/dataset.hpp"
#include "htlmine/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

using namespace htl;

namespace {

gen_spec basic_spec(int n, int size, uint64_t seed) {
    gen_spec spec;
    spec.n_samples = n;
    spec.image_size = size;
    spec.seed = seed;
    subgroup_spec g;
    g.name = "all";
    g.share = 1.0;
    g.contrast_range = {0.5, 0.9};
    g.size_range = {0.05, 0.15};
    g.irregularity_range = {0.0, 0.4};
    g.sex_distribution = {{"male", 0.5}, {"female", 0.5}};
    g.age_distribution = {{"<30", 0.3}, {"30-60", 0.7}};
    g.class_label = 0;
    spec.subgroups.push_back(g);
    return spec;
}

std::filesystem::path temp_dir(const std::string & tag) {
    auto p = std::filesystem::temp_directory_path() / ("htlmine_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("generate: zero irregularity and fixed size give a near-exact circle area") {
    gen_spec spec = basic_spec(6, 64, 3);
    spec.subgroups[0].irregularity_range = {0.0, 0.0};
    spec.subgroups[0].size_range = {0.15, 0.15};
    spec.subgroups[0].contrast_range = {1.0, 1.0};
    const auto samples = generate(spec);
    for (const auto & s : samples) {
        REQUIRE(s.mask.has_value());
        int64_t area = 0;
        for (uint8_t v : *s.mask) {
            area += v;
        }
        const double target = 0.15 * 64 * 64;
        CHECK(std::abs(double(area) - target) <= 0.02 * target);
        CHECK(s.difficulty->size_fraction == doctest::Approx(double(area) / (64.0 * 64.0)));
    }
}

TEST_CASE("generate: n = 0 gives an empty corpus") {
    CHECK(generate(basic_spec(0, 32, 1)).empty());
}

TEST_CASE("generate: same seed twice is bit-identical") {
    const auto a = generate(basic_spec(12, 32, 99));
    const auto b = generate(basic_spec(12, 32, 99));
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].image == b[i].image);
        CHECK(*a[i].mask == *b[i].mask);
        CHECK(a[i].demo.sex == b[i].demo.sex);
    }
}

TEST_CASE("generate: infeasible geometry rejected") {
    gen_spec spec = basic_spec(1, 8, 1);
    spec.subgroups[0].size_range = {0.5, 0.5};
    CHECK_THROWS_AS(generate(spec), config_error);
}

TEST_CASE("generate: foreground exceeds adjacent background at high contrast") {
    gen_spec spec = basic_spec(4, 32, 17);
    spec.subgroups[0].contrast_range = {0.9, 0.9};
    for (const auto & s : generate(spec)) {
        double fg_min = 1e9, bg_max = -1e9;
        for (size_t i = 0; i < s.mask->size(); ++i) {
            if ((*s.mask)[i]) {
                fg_min = std::min(fg_min, s.image[i]);
            } else {
                bg_max = std::max(bg_max, s.image[i]);
            }
        }
        // contrast 0.9 over noise amplitude 0.08 leaves a wide margin
        CHECK(fg_min > bg_max - 0.2);
        CHECK(fg_min > 0.5);
    }
}

TEST_CASE("save/load: lossless round trip on a generated corpus") {
    const auto dir = temp_dir("roundtrip");
    const auto samples = generate(basic_spec(8, 32, 5));
    save_directory(samples, dir);
    const auto back = load_directory(dir);
    REQUIRE(back.size() == samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        CHECK(back[i].id == samples[i].id);
        CHECK(back[i].image == samples[i].image);   // generator lands on the 16-bit grid
        CHECK(*back[i].mask == *samples[i].mask);
        CHECK(back[i].class_label == samples[i].class_label);
        CHECK(back[i].demo.sex == samples[i].demo.sex);
        CHECK(back[i].demo.age_group == samples[i].demo.age_group);
        CHECK(back[i].subgroup == samples[i].subgroup);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_directory: empty directory gives an empty list") {
    const auto dir = temp_dir("empty");
    CHECK(load_directory(dir).empty());
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_directory: malformed metadata names the line") {
    const auto dir = temp_dir("badmeta");
    std::filesystem::create_directories(dir / "images");
    {
        std::ofstream meta(dir / "metadata.jsonl");
        meta << "{\"id\":\"a\"}\n";
        meta << "this is not json\n";
    }
    CHECK_THROWS_WITH_AS(load_directory(dir), doctest::Contains("line 2"), validation_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_directory: mask size mismatch names the file") {
    const auto dir = temp_dir("badmask");
    auto samples = generate(basic_spec(1, 32, 7));
    save_directory(samples, dir);
    {
        // overwrite the mask with the wrong size
        std::vector<uint8_t> small(16 * 16, 255);
        write_pgm8(dir / "masks" / (samples[0].id + ".pgm"), small, 16, 16);
    }
    CHECK_THROWS_WITH_AS(load_directory(dir), doctest::Contains(samples[0].id.c_str()),
                         validation_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("split: everything-in-train, determinism, stratified shares") {
    gen_spec spec = basic_spec(300, 32, 21);
    spec.subgroups[0].share = 0.8;
    subgroup_spec hard = spec.subgroups[0];
    hard.name = "hard";
    hard.share = 0.2;
    spec.subgroups.push_back(hard);
    const auto samples = generate(spec);

    const auto all_train = split(samples, {1.0, 0.0, 0.0}, 3);
    CHECK(all_train.train.size() == samples.size());
    CHECK(all_train.val.empty());
    CHECK(all_train.test.empty());

    const auto s1 = split(samples, {0.7, 0.1, 0.2}, 5);
    const auto s2 = split(samples, {0.7, 0.1, 0.2}, 5);
    REQUIRE(s1.train.size() == s2.train.size());
    for (size_t i = 0; i < s1.train.size(); ++i) {
        CHECK(s1.train[i].id == s2.train[i].id);
    }

    auto share_of = [](const std::vector<sample> & v, const std::string & name) {
        int64_t n = 0;
        for (const auto & s : v) {
            n += s.subgroup == name ? 1 : 0;
        }
        return v.empty() ? 0.0 : double(n) / double(v.size());
    };
    for (const auto * part : {&s1.train, &s1.test}) {
        CHECK(std::abs(share_of(*part, "hard") - 0.2) <= 0.03);
    }

    // disjoint ids
    CHECK(s1.train.size() + s1.val.size() + s1.test.size() == samples.size());
}

TEST_CASE("split: bad fractions rejected") {
    const auto samples = generate(basic_spec(4, 32, 2));
    CHECK_THROWS_AS(split(samples, {0.9, 0.2, 0.2}, 1), config_error);
}

TEST_CASE("gen_spec validation enumerates problems") {
    gen_spec spec = basic_spec(4, 32, 1);
    spec.subgroups[0].share = 0.7;   // shares no longer sum to 1
    spec.subgroups[0].contrast_range = {0.0, 1.2};
    CHECK_THROWS_AS(spec.validate(), config_error);
}
