#pragma once

#include <cstdint>
#include <vector>

#include "mmse/behavior_data.hpp"
#include "mmse/rng.hpp"

namespace mmse {

struct SamplingConfig {
  std::uint32_t batch_size = 350;
  std::uint32_t shared_negatives = 256;  // m, drawn once per batch
  std::uint64_t seed = 0;

  void validate() const;
};

/// One query's slice of a batch. All item references are corpus positions,
/// sorted ascending.
struct BatchQuery {
  std::vector<std::uint32_t> query_buckets;
  std::vector<std::uint32_t> ordered;
  std::vector<std::uint32_t> clicked;
  std::vector<std::uint32_t> unclicked;
  /// P_n: batch positives of other queries plus the shared pool, minus
  /// anything in this query's own tiers.
  std::vector<std::uint32_t> negatives;
};

struct TrainingBatch {
  std::vector<BatchQuery> queries;
  /// Shared random pool, identical for every query of the batch; drawn
  /// without replacement from the corpus.
  std::vector<std::uint32_t> shared_negatives;
  /// batch_positive_map: the designated clicked item p_i per query, used as
  /// the other queries' batch negatives.
  std::vector<std::uint32_t> batch_positives;
};

TrainingBatch build_batch(const std::vector<const InteractionRecord*>& records,
                          const Corpus& corpus, const SamplingConfig& cfg,
                          std::uint32_t vocab_buckets, Rng& rng);

/// One epoch of batches: records shuffled under the rng, trailing partial
/// batch dropped. The rng advances across calls, so consecutive epochs drop
/// different records.
std::vector<TrainingBatch> epoch_batches(const std::vector<InteractionRecord>& records,
                                         const Corpus& corpus, const SamplingConfig& cfg,
                                         std::uint32_t vocab_buckets, Rng& rng);

}  // namespace mmse
