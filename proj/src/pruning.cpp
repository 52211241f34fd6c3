#include "htlmine/pruning.hpp"

#include "htlmine/errors.hpp"
#include "htlmine/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace htl {

namespace {

void check_ratio(double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw config_error("prune ratio must be in [0, 1), got " + std::to_string(ratio));
    }
}

prune_mask all_ones_mask(const model & m) {
    prune_mask mask;
    mask.slots.resize(m.params().size());
    for (size_t i = 0; i < m.params().size(); ++i) {
        if (m.params()[i].prunable) {
            mask.slots[i].assign(size_t(m.params()[i].value->numel()), 1);
        }
    }
    return mask;
}

} // namespace

prune_mask build_unstructured_magnitude_mask(const model & m, double ratio) {
    check_ratio(ratio);
    prune_mask mask = all_ones_mask(m);
    mask.method = prune_method::unstructured_magnitude;
    mask.ratio = ratio;

    struct entry {
        double mag;
        uint32_t slot;
        uint32_t idx;
    };
    std::vector<entry> entries;
    entries.reserve(size_t(m.prunable_count()));
    for (size_t s = 0; s < m.params().size(); ++s) {
        if (!m.params()[s].prunable) {
            continue;
        }
        const auto & data = m.params()[s].value->data;
        for (size_t j = 0; j < data.size(); ++j) {
            entries.push_back({std::abs(data[j]), uint32_t(s), uint32_t(j)});
        }
    }
    const int64_t k = int64_t(std::llround(ratio * double(entries.size())));
    std::sort(entries.begin(), entries.end(), [](const entry & a, const entry & b) {
        if (a.mag != b.mag) {
            return a.mag < b.mag;
        }
        if (a.slot != b.slot) {
            return a.slot < b.slot;
        }
        return a.idx < b.idx;
    });
    for (int64_t i = 0; i < k; ++i) {
        mask.slots[entries[size_t(i)].slot][entries[size_t(i)].idx] = 0;
    }
    return mask;
}

prune_mask build_structured_magnitude_mask(const model & m, double ratio) {
    check_ratio(ratio);
    prune_mask mask = all_ones_mask(m);
    mask.method = prune_method::structured_magnitude;
    mask.ratio = ratio;

    struct filter_entry {
        double score;   // L1 / element count
        uint32_t slot;
        uint32_t channel;
        int64_t elems;
    };
    std::vector<filter_entry> filters;
    int64_t total = 0;
    for (size_t s = 0; s < m.params().size(); ++s) {
        if (!m.params()[s].prunable) {
            continue;
        }
        const auto & t = *m.params()[s].value;
        total += t.numel();
        if (t.shape.size() != 4) {
            continue;   // linear weights are not filter-structured
        }
        const int64_t out_ch = t.dim(0);
        const int64_t per_filter = t.numel() / out_ch;
        for (int64_t c = 0; c < out_ch; ++c) {
            double l1 = 0.0;
            for (int64_t j = 0; j < per_filter; ++j) {
                l1 += std::abs(t.data[size_t(c * per_filter + j)]);
            }
            filters.push_back({l1 / double(per_filter), uint32_t(s), uint32_t(c), per_filter});
        }
    }
    std::sort(filters.begin(), filters.end(), [](const filter_entry & a, const filter_entry & b) {
        if (a.score != b.score) {
            return a.score < b.score;
        }
        if (a.slot != b.slot) {
            return a.slot < b.slot;
        }
        return a.channel < b.channel;
    });

    const int64_t target = int64_t(std::llround(ratio * double(total)));
    int64_t zeroed = 0;
    for (const auto & f : filters) {
        if (zeroed >= target) {
            break;
        }
        auto & slot_mask = mask.slots[f.slot];
        for (int64_t j = 0; j < f.elems; ++j) {
            slot_mask[size_t(int64_t(f.channel) * f.elems + j)] = 0;
        }
        zeroed += f.elems;
    }
    if (zeroed < target) {
        throw config_error("structured pruning cannot reach ratio " + std::to_string(ratio) +
                           ": conv filters cover only " + std::to_string(zeroed) + "/" +
                           std::to_string(total) + " weights");
    }
    return mask;
}

prune_mask build_random_mask(const model & m, double ratio, uint64_t seed) {
    check_ratio(ratio);
    prune_mask mask = all_ones_mask(m);
    mask.method = prune_method::random;
    mask.ratio = ratio;
    mask.seed = seed;

    struct pos {
        uint32_t slot;
        uint32_t idx;
    };
    std::vector<pos> positions;
    positions.reserve(size_t(m.prunable_count()));
    for (size_t s = 0; s < m.params().size(); ++s) {
        if (!m.params()[s].prunable) {
            continue;
        }
        const int64_t n = m.params()[s].value->numel();
        for (int64_t j = 0; j < n; ++j) {
            positions.push_back({uint32_t(s), uint32_t(j)});
        }
    }
    const int64_t k = int64_t(std::llround(ratio * double(positions.size())));
    rng r(seed);
    // partial Fisher-Yates: the first k entries become the pruned set
    for (int64_t i = 0; i < k; ++i) {
        const int64_t j = i + int64_t(r.uniform_int(uint64_t(positions.size() - size_t(i))));
        std::swap(positions[size_t(i)], positions[size_t(j)]);
        mask.slots[positions[size_t(i)].slot][positions[size_t(i)].idx] = 0;
    }
    return mask;
}

prune_mask build_prune_mask(const model & m, prune_method method, double ratio, uint64_t seed) {
    switch (method) {
        case prune_method::unstructured_magnitude:
            return build_unstructured_magnitude_mask(m, ratio);
        case prune_method::structured_magnitude:
            return build_structured_magnitude_mask(m, ratio);
        case prune_method::random:
            return build_random_mask(m, ratio, seed);
    }
    throw config_error("unknown prune method");
}

prune_mask prune_unstructured_magnitude(model & m, double ratio) {
    auto mask = build_unstructured_magnitude_mask(m, ratio);
    m.apply_mask(mask);
    return mask;
}

prune_mask prune_structured_magnitude(model & m, double ratio) {
    auto mask = build_structured_magnitude_mask(m, ratio);
    m.apply_mask(mask);
    return mask;
}

prune_mask prune_random(model & m, double ratio, uint64_t seed) {
    auto mask = build_random_mask(m, ratio, seed);
    m.apply_mask(mask);
    return mask;
}

double sparsity(const prune_mask & mask) {
    int64_t zeros = 0, total = 0;
    for (const auto & slot : mask.slots) {
        for (uint8_t v : slot) {
            zeros += v == 0 ? 1 : 0;
        }
        total += int64_t(slot.size());
    }
    return total == 0 ? 0.0 : double(zeros) / double(total);
}

} // namespace htl
