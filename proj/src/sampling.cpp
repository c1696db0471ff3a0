#include "mmse/sampling.hpp"

#include <algorithm>

#include "mmse/encoder.hpp"
#include "mmse/errors.hpp"

namespace mmse {

namespace {

std::vector<std::uint32_t> resolve_sorted(const std::vector<std::string>& ids,
                                          const Corpus& corpus) {
  std::vector<std::uint32_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(corpus.pos_of(id));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void SamplingConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
}

TrainingBatch build_batch(const std::vector<const InteractionRecord*>& records,
                          const Corpus& corpus, const SamplingConfig& cfg,
                          std::uint32_t vocab_buckets, Rng& rng) {
  cfg.validate();
  if (records.size() != cfg.batch_size) {
    throw ValidationError("build_batch: expected exactly batch_size records");
  }
  if (cfg.shared_negatives > corpus.size()) {
    throw ValidationError("build_batch: corpus smaller than shared_negatives");
  }

  TrainingBatch batch;
  batch.queries.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const InteractionRecord& rec = *records[i];
    BatchQuery& bq = batch.queries[i];
    bq.query_buckets = hash_tokens(rec.query_tokens, vocab_buckets);
    bq.ordered = resolve_sorted(rec.ordered, corpus);
    bq.clicked = resolve_sorted(rec.clicked, corpus);
    bq.unclicked = resolve_sorted(rec.unclicked, corpus);
  }

  // designate one positive per query
  batch.batch_positives.reserve(records.size());
  for (const auto& bq : batch.queries) {
    batch.batch_positives.push_back(
        bq.clicked[rng.next_below(bq.clicked.size())]);
  }

  // shared pool: m positions without replacement (partial Fisher-Yates)
  const std::uint32_t m = cfg.shared_negatives;
  std::vector<std::uint32_t> pool(corpus.size());
  for (std::uint32_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::uint32_t i = 0; i < m; ++i) {
    const std::uint64_t j = i + rng.next_below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  batch.shared_negatives.assign(pool.begin(), pool.begin() + m);

  // P_n(i) = ({p_j : j != i} u shared) \ (ordered_i u clicked_i u unclicked_i)
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    BatchQuery& bq = batch.queries[i];
    std::vector<std::uint32_t> candidates;
    candidates.reserve(batch.batch_positives.size() - 1 + m);
    for (std::size_t j = 0; j < batch.batch_positives.size(); ++j) {
      if (j != i) candidates.push_back(batch.batch_positives[j]);
    }
    candidates.insert(candidates.end(), batch.shared_negatives.begin(),
                      batch.shared_negatives.end());
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    auto in_sorted = [](const std::vector<std::uint32_t>& v, std::uint32_t x) {
      return std::binary_search(v.begin(), v.end(), x);
    };
    bq.negatives.reserve(candidates.size());
    for (std::uint32_t p : candidates) {
      if (in_sorted(bq.clicked, p) || in_sorted(bq.unclicked, p) ||
          in_sorted(bq.ordered, p)) {
        continue;
      }
      bq.negatives.push_back(p);
    }
  }
  return batch;
}

std::vector<TrainingBatch> epoch_batches(const std::vector<InteractionRecord>& records,
                                         const Corpus& corpus, const SamplingConfig& cfg,
                                         std::uint32_t vocab_buckets, Rng& rng) {
  cfg.validate();
  if (records.size() < cfg.batch_size) {
    throw ValidationError("epoch_batches: fewer records than batch_size");
  }
  std::vector<std::uint32_t> perm(records.size());
  for (std::uint32_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);

  const std::size_t n_batches = records.size() / cfg.batch_size;
  std::vector<TrainingBatch> batches;
  batches.reserve(n_batches);
  std::vector<const InteractionRecord*> slice(cfg.batch_size);
  for (std::size_t b = 0; b < n_batches; ++b) {
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      slice[i] = &records[perm[b * cfg.batch_size + i]];
    }
    batches.push_back(build_batch(slice, corpus, cfg, vocab_buckets, rng));
  }
  return batches;
}

}  // namespace mmse
