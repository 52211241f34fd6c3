#pragma once

#include "htlmine/checkpoint.hpp"
#include "htlmine/config.hpp"
#include "htlmine/metrics.hpp"
#include "htlmine/mining.hpp"
#include "htlmine/reporting.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace htl {

// Stage functions shared by the CLI subcommands and `pipeline`, so the
// composed run and the monolithic run produce byte-identical artifacts.

std::filesystem::path corpus_dir(const run_config & cfg);
std::filesystem::path seed_dir(const run_config & cfg, uint64_t seed);

// Materializes the synthetic corpus (and the unlabeled pool for the
// semi setting) under the output directory. No-op for directory-backed
// corpora.
void stage_generate(const run_config & cfg);

std::vector<sample> load_corpus_samples(const run_config & cfg);
split_result load_splits(const run_config & cfg);
// semi setting: configured pool, or the train split itself when none is given
std::vector<sample> load_unlabeled_pool(const run_config & cfg, const split_result & splits);

// Trains the base model for one seed; writes base.ckpt and train_log.json.
void stage_train(const run_config & cfg, uint64_t seed);

// Builds a mask on the base checkpoint; writes pruned.ckpt (full
// parameters plus the mask section) and sparsity.json. Returns sparsity.
double stage_prune(const run_config & cfg, uint64_t seed,
                   const std::filesystem::path & checkpoint = {});

// Mines HTL records for the configured setting; writes htl.csv,
// htl.json, drops.csv plus the ratio-sweep drops files (supervised/semi)
// and the pseudo-label masks (semi).
void stage_mine(const run_config & cfg, uint64_t seed,
                const std::filesystem::path & checkpoint = {});

// Fine-tunes on the mined HTL set (final.ckpt) and on every configured
// baseline sampler (baseline_<kind>.ckpt) with matched sample counts.
void stage_finetune(const run_config & cfg, uint64_t seed,
                    const std::filesystem::path & checkpoint = {},
                    const std::filesystem::path & htl_manifest = {});

// Evaluates a checkpoint on a split; writes metrics_<method>_<split>.json.
seg_metrics stage_evaluate(const run_config & cfg, uint64_t seed,
                           const std::filesystem::path & checkpoint,
                           const std::string & split, const std::string & method);

// Aggregates per-seed artifacts into the report/ directory.
void stage_report(const run_config & cfg);

// generate + per-seed (train, prune, mine, finetune, evaluate) + report.
void run_pipeline(const run_config & cfg);

} // namespace htl
