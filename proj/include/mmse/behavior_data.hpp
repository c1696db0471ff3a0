#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmse/tensor.hpp"

namespace mmse {

struct Item {
  std::string item_id;
  std::vector<std::string> title_tokens;  // non-empty, length <= 100
};

struct Query {
  std::string query_id;
  std::vector<std::string> query_tokens;  // non-empty, length <= 30
  std::string user_id;                    // optional, empty when absent
};

/// One query with its behavior tiers. The negative tier is constructed at
/// batch time by the sampling module, never stored here.
struct InteractionRecord {
  std::string query_id;
  std::vector<std::string> query_tokens;
  std::vector<std::string> ordered;    // subset of clicked, sorted
  std::vector<std::string> clicked;    // non-empty, sorted
  std::vector<std::string> unclicked;  // disjoint from clicked, sorted
};

struct Corpus {
  std::vector<Item> items;
  std::unordered_map<std::string, std::uint32_t> position;  // dense in [0, size)

  std::size_t size() const { return items.size(); }

  bool contains(const std::string& id) const { return position.count(id) != 0; }

  std::uint32_t pos_of(const std::string& id) const;
};

struct SynthConfig {
  std::uint32_t latent_dim = 8;
  std::uint32_t n_items = 5000;
  std::uint32_t n_queries = 2000;
  std::uint32_t buckets_per_dim = 4;
  std::uint32_t noise_tokens_per_doc = 2;
  std::uint32_t max_ordered = 1;         // a
  std::uint32_t clicked_per_query = 5;   // b
  std::uint32_t unclicked_per_query = 10;  // c
  std::uint64_t seed = 7;

  void validate() const;
};

struct LoadStats {
  std::size_t accepted = 0;
  std::size_t rejected_ordered_not_subset = 0;
  std::size_t rejected_no_positive = 0;
  std::size_t rejected_clicked_unclicked_overlap = 0;

  std::size_t rejected() const {
    return rejected_ordered_not_subset + rejected_no_positive +
           rejected_clicked_unclicked_overlap;
  }
};

struct SynthOutput {
  Corpus corpus;
  std::vector<InteractionRecord> train;
  std::vector<InteractionRecord> eval;
  // Latent vectors per id (items then queries); written to a sidecar used by tests.
  std::vector<std::pair<std::string, Vec>> latents;
};

/// One JSON object per line: {"item_id": str, "title_tokens": [str,...]}.
/// Duplicate ids and malformed lines are errors; positions follow file order.
Corpus load_corpus(const std::filesystem::path& path);

/// One JSON object per line with query_id/query_tokens/ordered/clicked/unclicked.
/// Records breaking an invariant are skipped and counted; unknown item ids and
/// an all-rejected file are errors.
std::vector<InteractionRecord> load_interactions(const std::filesystem::path& path,
                                                 const Corpus& corpus,
                                                 LoadStats* stats = nullptr);

/// Plants multi-level similarity: latent Gaussians, inner-product relevance,
/// top-b clicked / next-c unclicked / coin-kept top-a ordered, quantized
/// latent-bucket tokens plus noise. Deterministic for a fixed seed.
SynthOutput synth_generate(const SynthConfig& cfg);

void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
void write_interactions(const std::filesystem::path& path,
                        const std::vector<InteractionRecord>& records);
void write_latents(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, Vec>>& latents);

}  // namespace mmse
