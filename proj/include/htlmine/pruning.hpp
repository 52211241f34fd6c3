#pragma once

#include "htlmine/model.hpp"

#include <cstdint>

namespace htl {

// Mask construction is a pure function of the parameters (plus seed for
// the random method). Prunable slots are conv and linear weights;
// biases are exempt.

// Global rank of all prunable weights by |w|; the smallest `ratio`
// fraction is zeroed. Ties broken by (slot index, flat index).
prune_mask build_unstructured_magnitude_mask(const model & m, double ratio);

// Ranks whole conv filters (output-channel slices) by L1 norm divided
// by filter element count, across layers; zeroes filters until the
// zeroed fraction of all prunable weights first reaches >= ratio.
// Linear weights participate in the denominator but are never removed.
prune_mask build_structured_magnitude_mask(const model & m, double ratio);

// Seeded uniform choice of round(ratio * total) prunable positions.
prune_mask build_random_mask(const model & m, double ratio, uint64_t seed);

prune_mask build_prune_mask(const model & m, prune_method method, double ratio, uint64_t seed);

// Build-and-apply variants: the model is masked in place (shadow kept,
// so remove_mask restores it).
prune_mask prune_unstructured_magnitude(model & m, double ratio);
prune_mask prune_structured_magnitude(model & m, double ratio);
prune_mask prune_random(model & m, double ratio, uint64_t seed);

// Fraction of zeros over prunable weights.
double sparsity(const prune_mask & mask);

} // namespace htl
