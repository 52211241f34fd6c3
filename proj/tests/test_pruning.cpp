#include "htlmine/errors.hpp"
#include "htlmine/pruning.hpp"
#include "htlmine/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace htl;

namespace {

model tiny_model(uint64_t seed = 1) {
    arch_config cfg;
    cfg.depth = 1;
    cfg.base_channels = 2;
    return build_unet(cfg, seed);
}

// first prunable slot, handy for targeted value setups
tensor_ptr first_weights(model & m) {
    for (auto & s : m.params()) {
        if (s.prunable) {
            return s.value;
        }
    }
    return nullptr;
}

int64_t count_zeros(const prune_mask & mask) {
    int64_t z = 0;
    for (const auto & s : mask.slots) {
        z += std::count(s.begin(), s.end(), uint8_t(0));
    }
    return z;
}

std::vector<double> flat_params(const model & m) {
    std::vector<double> out;
    for (const auto & s : m.params()) {
        out.insert(out.end(), s.value->data.begin(), s.value->data.end());
    }
    return out;
}

} // namespace

TEST_CASE("unstructured: ranks by |w|") {
    auto m = tiny_model();
    // collapse to a known landscape: all weights large, first slot holds the 4 candidates
    for (auto & s : m.params()) {
        if (s.prunable) {
            for (auto & v : s.value->data) {
                v = 5.0;
            }
        }
    }
    auto w = first_weights(m);
    w->data[0] = 0.5;
    w->data[1] = -0.2;
    w->data[2] = 0.9;
    w->data[3] = 0.1;

    const double total = double(m.prunable_count());
    const double ratio = 2.0 / total;   // exactly the two smallest go
    auto mask = build_unstructured_magnitude_mask(m, ratio);
    CHECK(mask.slots[0][0] == 1);
    CHECK(mask.slots[0][1] == 0);
    CHECK(mask.slots[0][2] == 1);
    CHECK(mask.slots[0][3] == 0);
}

TEST_CASE("prune ratio 0 is the identity for every method") {
    auto m = tiny_model();
    const auto before = flat_params(m);
    for (auto method : {prune_method::unstructured_magnitude, prune_method::structured_magnitude,
                        prune_method::random}) {
        auto mask = build_prune_mask(m, method, 0.0, 7);
        CHECK(count_zeros(mask) == 0);
        CHECK(sparsity(mask) == 0.0);
        m.apply_mask(mask);
        CHECK(flat_params(m) == before);
        m.remove_mask();
    }
}

TEST_CASE("unstructured: exact count and magnitude-cut property on 1000+ weights") {
    arch_config cfg;
    cfg.depth = 1;
    cfg.base_channels = 4;
    auto m = build_unet(cfg, 11);
    const int64_t total = m.prunable_count();
    REQUIRE(total >= 1000);

    auto mask = build_unstructured_magnitude_mask(m, 0.7);
    CHECK(count_zeros(mask) == int64_t(std::llround(0.7 * double(total))));

    double max_pruned = 0.0, min_kept = 1e300;
    for (size_t s = 0; s < m.params().size(); ++s) {
        if (!m.params()[s].prunable) {
            continue;
        }
        for (size_t j = 0; j < mask.slots[s].size(); ++j) {
            const double mag = std::abs(m.params()[s].value->data[j]);
            if (mask.slots[s][j] == 0) {
                max_pruned = std::max(max_pruned, mag);
            } else {
                min_kept = std::min(min_kept, mag);
            }
        }
    }
    CHECK(max_pruned <= min_kept);
}

TEST_CASE("structured: lower normalized-L1 filter goes first") {
    auto m = tiny_model();
    // make every filter large except one weak filter in the first slot
    for (auto & s : m.params()) {
        if (s.prunable) {
            for (auto & v : s.value->data) {
                v = 1.0;
            }
        }
    }
    auto w = first_weights(m);   // shape [2, 1, 3, 3]
    for (int j = 0; j < 9; ++j) {
        w->data[size_t(j)] = 0.1;        // filter 0: mean 0.1
        w->data[size_t(9 + j)] = 0.9;    // filter 1: mean 0.9
    }
    const double ratio = 9.0 / double(m.prunable_count());
    auto mask = build_structured_magnitude_mask(m, ratio);
    for (int j = 0; j < 9; ++j) {
        CHECK(mask.slots[0][size_t(j)] == 0);
        CHECK(mask.slots[0][size_t(9 + j)] == 1);
    }
}

TEST_CASE("structured: matches the sort-by-normalized-L1 oracle") {
    arch_config cfg;
    cfg.depth = 1;
    cfg.base_channels = 4;
    auto m = build_unet(cfg, 13);
    const double ratio = 0.5;
    auto mask = build_structured_magnitude_mask(m, ratio);

    // oracle: collect (score, slot, channel), sort, zero until >= target
    struct f {
        double score;
        size_t slot;
        int64_t ch;
        int64_t elems;
    };
    std::vector<f> filters;
    int64_t total = 0;
    for (size_t s = 0; s < m.params().size(); ++s) {
        if (!m.params()[s].prunable) {
            continue;
        }
        const auto & t = *m.params()[s].value;
        total += t.numel();
        if (t.shape.size() != 4) {
            continue;
        }
        const int64_t per = t.numel() / t.dim(0);
        for (int64_t c = 0; c < t.dim(0); ++c) {
            double l1 = 0.0;
            for (int64_t j = 0; j < per; ++j) {
                l1 += std::abs(t.data[size_t(c * per + j)]);
            }
            filters.push_back({l1 / double(per), s, c, per});
        }
    }
    std::sort(filters.begin(), filters.end(), [](const f & a, const f & b) {
        if (a.score != b.score) return a.score < b.score;
        if (a.slot != b.slot) return a.slot < b.slot;
        return a.ch < b.ch;
    });
    const int64_t target = int64_t(std::llround(ratio * double(total)));
    int64_t zeroed = 0;
    std::vector<std::pair<size_t, int64_t>> expect_zero;
    for (const auto & fe : filters) {
        if (zeroed >= target) {
            break;
        }
        expect_zero.push_back({fe.slot, fe.ch});
        zeroed += fe.elems;
    }
    CHECK(count_zeros(mask) == zeroed);
    for (const auto & [slot, ch] : expect_zero) {
        const int64_t per = m.params()[slot].value->numel() / m.params()[slot].value->dim(0);
        for (int64_t j = 0; j < per; ++j) {
            CHECK(mask.slots[slot][size_t(ch * per + j)] == 0);
        }
    }
}

TEST_CASE("random: seeded determinism and exact count") {
    arch_config cfg;
    cfg.depth = 1;
    cfg.base_channels = 4;
    auto m = build_unet(cfg, 17);
    const int64_t total = m.prunable_count();

    auto a = build_random_mask(m, 0.7, 99);
    auto b = build_random_mask(m, 0.7, 99);
    CHECK(a.slots == b.slots);
    CHECK(count_zeros(a) == int64_t(std::llround(0.7 * double(total))));

    auto c = build_random_mask(m, 0.7, 100);
    CHECK(a.slots != c.slots);
}

TEST_CASE("sparsity: all-ones 0, all-zeros 1, mixed matches counting") {
    auto m = tiny_model();
    auto ones = build_random_mask(m, 0.0, 1);
    CHECK(sparsity(ones) == 0.0);

    prune_mask zeros = ones;
    int64_t total = 0;
    for (auto & s : zeros.slots) {
        std::fill(s.begin(), s.end(), uint8_t(0));
        total += int64_t(s.size());
    }
    CHECK(sparsity(zeros) == 1.0);

    auto mixed = build_random_mask(m, 0.3, 5);
    CHECK(sparsity(mixed) ==
          doctest::Approx(double(count_zeros(mixed)) / double(total)).epsilon(1e-15));
}

TEST_CASE("apply/remove: bit-identity round trip, idempotent re-apply") {
    auto m = tiny_model(21);
    const auto before = flat_params(m);
    auto mask = build_unstructured_magnitude_mask(m, 0.5);

    m.apply_mask(mask);
    const auto masked = flat_params(m);
    CHECK(masked != before);
    m.apply_mask(mask);   // idempotent
    CHECK(flat_params(m) == masked);
    m.remove_mask();
    CHECK(flat_params(m) == before);
}

TEST_CASE("masked forward differs from unmasked forward") {
    auto m = tiny_model(23);
    rng hr(97);
    for (auto & s : m.params()) {
        if (s.name == "out_conv_w") {   // heads start at zero; give it signal
            for (auto & v : s.value->data) {
                v = hr.uniform(-0.5, 0.5);
            }
        }
    }
    auto x = make_tensor({1, 1, 8, 8});
    rng r(29);
    for (auto & v : x->data) {
        v = r.uniform();
    }
    auto full = m.forward(x).logits->data;
    prune_unstructured_magnitude(m, 0.7);
    auto pruned = m.forward(x).logits->data;
    m.remove_mask();
    CHECK(full != pruned);
    CHECK(m.forward(x).logits->data == full);
}

TEST_CASE("pruning is training-free: gradients untouched") {
    auto m = tiny_model(31);
    for (auto & s : m.params()) {
        s.value->ensure_grad();
        for (auto & g : s.value->grad) {
            g = 3.25;
        }
    }
    auto mask = build_unstructured_magnitude_mask(m, 0.6);
    m.apply_mask(mask);
    m.remove_mask();
    for (const auto & s : m.params()) {
        for (double g : s.value->grad) {
            CHECK(g == 3.25);
        }
    }
}

TEST_CASE("exact count across methods and the ratio sweep") {
    arch_config cfg;
    cfg.depth = 1;
    cfg.base_channels = 4;
    auto m = build_unet(cfg, 37);
    const int64_t total = m.prunable_count();

    int64_t max_filter = 0;
    for (const auto & s : m.params()) {
        if (s.prunable && s.value->shape.size() == 4) {
            max_filter = std::max(max_filter, s.value->numel() / s.value->dim(0));
        }
    }
    for (int r10 = 1; r10 <= 9; ++r10) {
        const double ratio = r10 / 10.0;
        const int64_t target = int64_t(std::llround(ratio * double(total)));
        CHECK(count_zeros(build_unstructured_magnitude_mask(m, ratio)) == target);
        CHECK(count_zeros(build_random_mask(m, ratio, 5)) == target);
        const int64_t sz = count_zeros(build_structured_magnitude_mask(m, ratio));
        CHECK(sz >= target);            // first crossing
        CHECK(sz - target < max_filter);   // filter-granularity slack
    }
}

TEST_CASE("ratio outside [0,1) rejected") {
    auto m = tiny_model();
    CHECK_THROWS_AS(build_unstructured_magnitude_mask(m, 1.0), config_error);
    CHECK_THROWS_AS(build_random_mask(m, -0.1, 3), config_error);
}
