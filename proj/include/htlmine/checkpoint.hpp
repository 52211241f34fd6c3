#pragma once

#include "htlmine/model.hpp"

#include <filesystem>
#include <optional>

namespace htl {

// Single-file checkpoint: a text manifest (layer names, shapes, dtype,
// byte offsets, mandatory version) terminated by an "end" line, then a
// little-endian float64 blob, then an optional bit-packed mask section
// covering prunable slots in parameter order. Parameters are stored as
// currently held by the model; a stored mask is NOT applied on load.
struct checkpoint_data {
    model m;
    std::optional<prune_mask> mask;

    checkpoint_data(model mm, std::optional<prune_mask> mk)
        : m(std::move(mm)), mask(std::move(mk)) {}
};

void save_checkpoint(const std::filesystem::path & p, const model & m,
                     const prune_mask * mask = nullptr);

checkpoint_data load_checkpoint(const std::filesystem::path & p);

} // namespace htl
