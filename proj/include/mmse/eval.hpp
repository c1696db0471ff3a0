#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmse/ann_index.hpp"
#include "mmse/behavior_data.hpp"
#include "mmse/encoder.hpp"
#include "mmse/objectives.hpp"
#include "mmse/sampling.hpp"

namespace mmse {

struct MetricsReport {
  double batch_top1 = 0.0;
  std::map<std::uint32_t, double> recall;  // K -> recall@K
  std::uint32_t n_eval_queries = 0;
  // run metadata
  std::string loss_terms;
  std::string index_kind;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  // honors SOURCE_DATE_EPOCH, zero otherwise, so identical runs emit
  // byte-identical reports
  std::int64_t timestamp_unix = 0;
  // recall denominator is |truth|, not min(K, |truth|)
  std::string recall_denominator = "truth_size";
};

struct EvalConfig {
  std::vector<std::uint32_t> recall_ks = {1, 50, 100, 500, 1000};
  std::uint32_t batch_size = 350;  // for batch-top@1 batches
  std::uint64_t seed = 0;
};

/// In-batch argmax accuracy over designated positives; score ties are misses.
/// Works on precomputed embeddings so tests can hand-build score layouts.
double batch_top1_embeddings(const std::vector<Vec>& queries,
                             const std::vector<Vec>& positives);

/// batch-top@1 over eval batches: for each query, a hit iff its own designated
/// positive outranks every other query's positive in the batch.
double batch_top1(const ModelParams& params, const std::vector<TrainingBatch>& batches,
                  const std::vector<std::vector<std::uint32_t>>& item_buckets);

/// Mean over queries of |top-K hits ∩ clicked| / |clicked|.
double recall_at_k(const ModelParams& params, const SearchIndex& index,
                   const std::vector<InteractionRecord>& records, std::uint32_t k);

MetricsReport run_eval(const ModelParams& params, const SearchIndex& index,
                       const Corpus& corpus, const std::vector<InteractionRecord>& records,
                       const EvalConfig& cfg, const LossConfig& loss_cfg,
                       std::uint64_t config_hash, const std::string& index_kind);

void write_report_json(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_report_json(const std::filesystem::path& path);

/// CSV summary, one `metric,value` row per metric.
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace mmse
