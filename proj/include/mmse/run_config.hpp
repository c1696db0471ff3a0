#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mmse/ann_index.hpp"
#include "mmse/behavior_data.hpp"
#include "mmse/encoder.hpp"
#include "mmse/objectives.hpp"
#include "mmse/sampling.hpp"
#include "mmse/trainer.hpp"

namespace mmse {

/// Union of every component config plus paths; loaded from a flat key=value
/// file with '#' comments, then overridden by CLI flags. Unknown keys are
/// rejected.
struct RunConfig {
  std::uint64_t seed = 7;
  std::uint32_t threads = 1;
  std::filesystem::path out_dir = "run";
  std::string index_kind = "ivfpq";  // flat | ivfpq
  std::uint32_t top_k = 10;

  SynthConfig synth;
  EncoderConfig encoder;
  LossConfig loss;
  SamplingConfig sampling;  // seed filled from the master seed at resolve()
  TrainConfig train;        // loss/sampling members filled at resolve()
  IvfPqConfig ivfpq;

  static RunConfig from_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  /// Copies the master seed into the per-component seeds (derived streams)
  /// and the shared loss/sampling blocks into the train config.
  void resolve();

  /// Canonical serialization of the model-identity fields (everything that
  /// shapes data, encoder and optimization; index/eval knobs excluded).
  std::string canonical_model_config() const;
  std::uint64_t model_config_hash() const;

  // artifact locations under out_dir
  std::filesystem::path corpus_path() const { return out_dir / "corpus.jsonl"; }
  std::filesystem::path train_interactions_path() const {
    return out_dir / "interactions_train.jsonl";
  }
  std::filesystem::path eval_interactions_path() const {
    return out_dir / "interactions_eval.jsonl";
  }
  std::filesystem::path latents_path() const { return out_dir / "latents.jsonl"; }
  std::filesystem::path checkpoint_path() const { return out_dir / "model.ckpt"; }
  std::filesystem::path optimizer_path() const { return out_dir / "optimizer.state"; }
  std::filesystem::path trace_path() const { return out_dir / "loss_trace.csv"; }
  std::filesystem::path embeddings_path() const { return out_dir / "items.emb"; }
  std::filesystem::path index_path() const { return out_dir / "index.mmsi"; }
  std::filesystem::path report_json_path() const { return out_dir / "report.json"; }
  std::filesystem::path report_csv_path() const { return out_dir / "report.csv"; }
};

}  // namespace mmse
