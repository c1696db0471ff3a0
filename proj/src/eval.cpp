#include "mmse/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "mmse/errors.hpp"
#include "mmse/trainer.hpp"

namespace mmse {

using nlohmann::json;

namespace {

std::int64_t deterministic_timestamp() {
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    return std::strtoll(env, nullptr, 10);
  }
  return 0;
}

}  // namespace

namespace {

std::size_t count_top1_hits(const std::vector<Vec>& queries,
                            const std::vector<Vec>& positives) {
  if (queries.size() != positives.size()) {
    throw ValidationError("batch_top1: queries and positives must align");
  }
  if (queries.size() < 2) {
    throw ValidationError("batch_top1: a batch needs at least 2 queries");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const double own = score(queries[i], positives[i]);
    bool hit = true;
    for (std::size_t j = 0; j < positives.size(); ++j) {
      if (j == i) continue;
      if (score(queries[i], positives[j]) >= own) {  // ties are misses
        hit = false;
        break;
      }
    }
    if (hit) ++hits;
  }
  return hits;
}

}  // namespace

double batch_top1_embeddings(const std::vector<Vec>& queries,
                             const std::vector<Vec>& positives) {
  return static_cast<double>(count_top1_hits(queries, positives)) /
         static_cast<double>(queries.size());
}

double batch_top1(const ModelParams& params, const std::vector<TrainingBatch>& batches,
                  const std::vector<std::vector<std::uint32_t>>& item_buckets) {
  if (batches.empty()) throw ValidationError("batch_top1: no batches");
  std::size_t hits = 0;
  std::size_t total = 0;
  for (const auto& batch : batches) {
    std::vector<Vec> queries(batch.queries.size());
    std::vector<Vec> positives(batch.queries.size());
    for (std::size_t i = 0; i < batch.queries.size(); ++i) {
      queries[i] = encode(params.query_tower, params.config, batch.queries[i].query_buckets);
      positives[i] =
          encode(params.item_tower, params.config, item_buckets[batch.batch_positives[i]]);
    }
    hits += count_top1_hits(queries, positives);
    total += queries.size();
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

double recall_for_record(const ModelParams& params, const SearchIndex& index,
                         const InteractionRecord& rec, std::uint32_t k) {
  if (rec.clicked.empty()) throw ValidationError("recall: record without truth");
  const auto buckets = hash_tokens(rec.query_tokens, params.config.vocab_buckets);
  const Vec q = encode(params.query_tower, params.config, buckets);
  const auto hits = index.search(q, k);
  const std::unordered_set<std::string> truth(rec.clicked.begin(), rec.clicked.end());
  std::size_t found = 0;
  for (const auto& hit : hits) {
    if (truth.count(hit.item_id)) ++found;
  }
  return static_cast<double>(found) / static_cast<double>(truth.size());
}

}  // namespace

double recall_at_k(const ModelParams& params, const SearchIndex& index,
                   const std::vector<InteractionRecord>& records, std::uint32_t k) {
  if (records.empty()) throw ValidationError("recall_at_k: empty eval set");
  if (k == 0) throw ValidationError("recall_at_k: K must be >= 1");
  double sum = 0.0;
  for (const auto& rec : records) sum += recall_for_record(params, index, rec, k);
  return sum / static_cast<double>(records.size());
}

MetricsReport run_eval(const ModelParams& params, const SearchIndex& index,
                       const Corpus& corpus, const std::vector<InteractionRecord>& records,
                       const EvalConfig& cfg, const LossConfig& loss_cfg,
                       std::uint64_t config_hash, const std::string& index_kind) {
  if (records.empty()) throw ValidationError("run_eval: empty eval set");
  if (index.dim() != params.config.out_dim) {
    throw ValidationError("run_eval: index dimension does not match the model");
  }
  if (cfg.recall_ks.empty()) throw ValidationError("run_eval: no recall cutoffs");

  MetricsReport report;
  report.loss_terms = loss_cfg.terms_string();
  report.index_kind = index_kind;
  report.config_hash = config_hash;
  report.seed = cfg.seed;
  report.timestamp_unix = deterministic_timestamp();
  report.n_eval_queries = static_cast<std::uint32_t>(records.size());

  // batch-top@1 over deterministic eval batches; negatives are not used, so
  // the shared pool is skipped
  SamplingConfig sampling;
  sampling.batch_size = cfg.batch_size;
  sampling.shared_negatives = 0;
  sampling.seed = cfg.seed;
  const auto item_buckets = hash_corpus_tokens(corpus, params.config.vocab_buckets);
  if (records.size() >= sampling.batch_size) {
    Rng rng(sampling.seed);
    const auto batches =
        epoch_batches(records, corpus, sampling, params.config.vocab_buckets, rng);
    report.batch_top1 = batch_top1(params, batches, item_buckets);
  } else {
    // eval set smaller than one batch: use a single batch of all queries
    SamplingConfig small = sampling;
    small.batch_size = static_cast<std::uint32_t>(records.size());
    small.validate();
    Rng rng(small.seed);
    std::vector<const InteractionRecord*> all;
    all.reserve(records.size());
    for (const auto& rec : records) all.push_back(&rec);
    const auto batch = build_batch(all, corpus, small, params.config.vocab_buckets, rng);
    report.batch_top1 = batch_top1(params, {batch}, item_buckets);
  }

  // one search at the largest K per query serves every cutoff
  const std::uint32_t max_k = *std::max_element(cfg.recall_ks.begin(), cfg.recall_ks.end());
  std::vector<double> sums(cfg.recall_ks.size(), 0.0);
  for (const auto& rec : records) {
    const auto buckets = hash_tokens(rec.query_tokens, params.config.vocab_buckets);
    const Vec q = encode(params.query_tower, params.config, buckets);
    const auto hits = index.search(q, max_k);
    const std::unordered_set<std::string> truth(rec.clicked.begin(), rec.clicked.end());
    for (std::size_t ki = 0; ki < cfg.recall_ks.size(); ++ki) {
      const std::size_t k = std::min<std::size_t>(cfg.recall_ks[ki], hits.size());
      std::size_t found = 0;
      for (std::size_t r = 0; r < k; ++r) {
        if (truth.count(hits[r].item_id)) ++found;
      }
      sums[ki] += static_cast<double>(found) / static_cast<double>(truth.size());
    }
  }
  for (std::size_t ki = 0; ki < cfg.recall_ks.size(); ++ki) {
    report.recall[cfg.recall_ks[ki]] = sums[ki] / static_cast<double>(records.size());
  }
  return report;
}

void write_report_json(const std::filesystem::path& path, const MetricsReport& report) {
  json j;
  j["batch_top1"] = report.batch_top1;
  json recalls;
  for (const auto& [k, v] : report.recall) {
    recalls["recall@" + std::to_string(k)] = v;
  }
  j["recall"] = recalls;
  j["n_eval_queries"] = report.n_eval_queries;
  j["loss_terms"] = report.loss_terms;
  j["index_kind"] = report.index_kind;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["timestamp_unix"] = report.timestamp_unix;
  j["recall_denominator"] = report.recall_denominator;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open report file: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

MetricsReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("bad report json: " + std::string(e.what()));
  }
  MetricsReport report;
  report.batch_top1 = j.at("batch_top1").get<double>();
  for (const auto& [key, value] : j.at("recall").items()) {
    const auto k = static_cast<std::uint32_t>(std::stoul(key.substr(key.find('@') + 1)));
    report.recall[k] = value.get<double>();
  }
  report.n_eval_queries = j.at("n_eval_queries").get<std::uint32_t>();
  report.loss_terms = j.at("loss_terms").get<std::string>();
  report.index_kind = j.at("index_kind").get<std::string>();
  report.config_hash = j.at("config_hash").get<std::uint64_t>();
  report.seed = j.at("seed").get<std::uint64_t>();
  report.timestamp_unix = j.at("timestamp_unix").get<std::int64_t>();
  report.recall_denominator = j.at("recall_denominator").get<std::string>();
  return report;
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open report file: " + path.string());
  char buf[128];
  out << "metric,value\n";
  std::snprintf(buf, sizeof(buf), "batch_top1,%.17g\n", report.batch_top1);
  out << buf;
  for (const auto& [k, v] : report.recall) {
    std::snprintf(buf, sizeof(buf), "recall@%u,%.17g\n", k, v);
    out << buf;
  }
  out << "n_eval_queries," << report.n_eval_queries << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace mmse
