#pragma once

#include "htlmine/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace htl {

struct demographics {
    std::string sex = "unknown";
    std::string age_group = "unknown";
};

struct difficulty_factors {
    double contrast = 0.0;
    double size_fraction = 0.0;
    double irregularity = 0.0;
};

struct sample {
    std::string id;
    int channels = 1;
    int height = 0;
    int width = 0;
    std::vector<double> image;                    // C*H*W in [0,1], 16-bit grid
    std::optional<std::vector<uint8_t>> mask;     // H*W, 0/1
    std::optional<int> class_label;
    demographics demo;
    std::optional<std::string> subgroup;
    std::optional<difficulty_factors> difficulty;
};

struct subgroup_spec {
    std::string name;
    double share = 0.0;
    std::array<double, 2> contrast_range{0.5, 0.9};
    std::array<double, 2> size_range{0.05, 0.2};
    std::array<double, 2> irregularity_range{0.0, 0.5};
    std::map<std::string, double> sex_distribution;   // e.g. {"male":0.5,"female":0.5}
    std::map<std::string, double> age_distribution;
    std::optional<int> class_label;
};

struct gen_spec {
    int n_samples = 0;
    int image_size = 32;
    int channels = 1;
    uint64_t seed = 0;
    std::vector<subgroup_spec> subgroups;

    void validate() const;   // throws config_error listing every violation
};

// Seeded synthetic corpus: background noise plus one star-convex blob
// per image, intensity offset = contrast, mask = blob support.
// Intensities land on the 16-bit grid so corpus serialization is
// bit-lossless.
std::vector<sample> generate(const gen_spec & spec);

// Corpus layout: images/<id>.pgm (1ch) or .ppm (3ch), 16-bit binary;
// masks/<id>.pgm 8-bit 0/255; metadata.jsonl one record per id.
void save_directory(const std::vector<sample> & samples, const std::filesystem::path & dir);
std::vector<sample> load_directory(const std::filesystem::path & dir);

struct split_result {
    std::vector<sample> train, val, test;
};

// Seeded disjoint partition, stratified by subgroup (samples without a
// subgroup form one stratum).
split_result split(const std::vector<sample> & samples, std::array<double, 3> fractions,
                   uint64_t seed);

// Batch assembly helpers shared by training, evaluation and bindings.
tensor_ptr batch_images(const std::vector<sample> & samples, const std::vector<size_t> & idx);
tensor_ptr batch_mask_targets(const std::vector<sample> & samples, const std::vector<size_t> & idx);

// netpbm I/O used by the corpus and heatmap exports
std::vector<uint8_t> load_mask_pgm(const std::filesystem::path & p, int expected_h,
                                   int expected_w);
void write_pgm16(const std::filesystem::path & p, const std::vector<double> & values,
                 int height, int width);
void write_ppm16(const std::filesystem::path & p, const std::vector<double> & values,
                 int height, int width);
void write_pgm8(const std::filesystem::path & p, const std::vector<uint8_t> & values,
                int height, int width);

} // namespace htl
