#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mmse/behavior_data.hpp"
#include "mmse/encoder.hpp"
#include "mmse/objectives.hpp"
#include "mmse/sampling.hpp"

namespace mmse {

struct TrainConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint32_t epochs = 5;
  std::uint32_t log_interval = 10;  // steps between loss-trace rows
  LossConfig loss;
  SamplingConfig sampling;

  void validate() const;
};

/// AdamW moment accumulators mirroring ModelParams shapes. Embedding moments
/// are dense storage but only rows touched in a step are ever read or
/// written (lazy sparse updates).
struct TowerOptState {
  Matrix embed_m, embed_v;
  Matrix w1_m, w1_v;
  Vec b1_m, b1_v;
  Matrix w2_m, w2_v;
  Vec b2_m, b2_v;
};

struct OptimizerState {
  TowerOptState query_tower;
  TowerOptState item_tower;
  std::uint64_t step = 0;  // t, incremented before each use
};

struct ModelGrads {
  TowerGrads query_tower;
  TowerGrads item_tower;
};

OptimizerState make_optimizer_state(const EncoderConfig& cfg);

/// Decoupled weight decay AdamW. Decay applies to dense layers and touched
/// embedding rows only; untouched rows are skipped entirely. Non-finite
/// gradients abort.
void adamw_step(ModelParams& params, const ModelGrads& grads, OptimizerState& state,
                const TrainConfig& cfg);

/// One optimization step over a batch: encode every referenced item once,
/// per-query losses, mean reduction, backward through the bilinear score,
/// AdamW update. Returns the batch-mean loss. item_buckets comes from
/// hash_corpus_tokens on the corpus the batch positions refer to.
LossValue train_step(ModelParams& params, const TrainingBatch& batch,
                     const std::vector<std::vector<std::uint32_t>>& item_buckets,
                     const TrainConfig& cfg, OptimizerState& state);

struct TraceRow {
  std::uint32_t epoch = 0;
  std::uint32_t step = 0;
  LossValue loss;
};

struct TrainResult {
  ModelParams params;
  std::vector<TraceRow> trace;
  std::uint32_t epochs_run = 0;
};

struct TrainRun {
  EncoderConfig encoder;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  std::uint64_t config_hash = 0;
  // All paths optional; empty disables the artifact.
  std::filesystem::path checkpoint_path;
  std::filesystem::path optimizer_path;
  std::filesystem::path trace_path;
  bool resume = false;
};

/// Full training loop. Checkpoint written per epoch, loss trace appended per
/// log interval, bit-reproducible for fixed seeds.
TrainResult train(const TrainRun& run, const Corpus& corpus,
                  const std::vector<InteractionRecord>& records);

/// Per-item hashed title tokens, computed once per corpus.
std::vector<std::vector<std::uint32_t>> hash_corpus_tokens(const Corpus& corpus,
                                                           std::uint32_t vocab_buckets);

// Checkpoint file: magic "MMSE", u32 version, encoder dims as u32s, u64
// config hash, then each tensor as a shape-prefixed row-major little-endian
// f64 block.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     std::uint64_t config_hash);

struct Checkpoint {
  ModelParams params;
  std::uint64_t config_hash = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Optimizer sidecar ("MMSO"): step counter, epochs completed, data-order rng
// words, then the moment tensors. Restoring it resumes the exact trajectory.
void save_optimizer_state(const std::filesystem::path& path, const OptimizerState& state,
                          std::uint32_t epochs_done, const Rng& data_rng);

struct OptimizerRestore {
  OptimizerState state;
  std::uint32_t epochs_done = 0;
  std::array<std::uint64_t, 4> rng_words{};
};

OptimizerRestore load_optimizer_state(const std::filesystem::path& path,
                                      const EncoderConfig& cfg);

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows,
                     bool append);

}  // namespace mmse
