#include "mmse/behavior_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "mmse/errors.hpp"
#include "mmse/rng.hpp"

namespace mmse {

using nlohmann::json;

namespace {

constexpr std::uint32_t kNoiseVocabSize = 1024;
constexpr std::size_t kMaxQueryTokens = 30;
constexpr std::size_t kMaxTitleTokens = 100;

std::vector<std::string> token_array(const json& j, const char* field, std::size_t line_no) {
  if (!j.contains(field) || !j[field].is_array()) {
    throw ParseError("line " + std::to_string(line_no) + ": missing array field '" +
                     field + "'");
  }
  std::vector<std::string> out;
  for (const auto& t : j[field]) {
    if (!t.is_string()) {
      throw ParseError("line " + std::to_string(line_no) + ": non-string entry in '" +
                       field + "'");
    }
    out.push_back(t.get<std::string>());
  }
  return out;
}

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

bool is_subset(const std::vector<std::string>& sub, const std::vector<std::string>& super) {
  // both sorted
  return std::includes(super.begin(), super.end(), sub.begin(), sub.end());
}

bool intersects(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia == *ib) return true;
    if (*ia < *ib) {
      ++ia;
    } else {
      ++ib;
    }
  }
  return false;
}

// Standard normal CDF; used to cut each latent coordinate into
// equal-probability buckets.
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

std::uint32_t Corpus::pos_of(const std::string& id) const {
  auto it = position.find(id);
  if (it == position.end()) throw ValidationError("unknown item_id: " + id);
  return it->second;
}

void SynthConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
  if (buckets_per_dim < 2) throw ConfigError("buckets_per_dim must be >= 2");
  if (max_ordered > clicked_per_query) {
    throw ConfigError("max_ordered must be <= clicked_per_query");
  }
  if (clicked_per_query == 0) throw ConfigError("clicked_per_query must be >= 1");
  if (clicked_per_query + unclicked_per_query > n_items) {
    throw ConfigError("clicked_per_query + unclicked_per_query exceeds n_items");
  }
  if (n_queries == 0) throw ConfigError("n_queries must be >= 1");
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path.string());

  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("item_id") || !j["item_id"].is_string()) {
      throw ParseError("line " + std::to_string(line_no) + ": missing item_id");
    }
    Item item;
    item.item_id = j["item_id"].get<std::string>();
    item.title_tokens = token_array(j, "title_tokens", line_no);
    if (item.title_tokens.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty title_tokens");
    }
    if (item.title_tokens.size() > kMaxTitleTokens) {
      throw ParseError("line " + std::to_string(line_no) + ": title_tokens longer than " +
                       std::to_string(kMaxTitleTokens));
    }
    if (corpus.contains(item.item_id)) {
      throw ValidationError("duplicate item_id: " + item.item_id);
    }
    corpus.position.emplace(item.item_id, static_cast<std::uint32_t>(corpus.items.size()));
    corpus.items.push_back(std::move(item));
  }
  if (corpus.items.empty()) throw ValidationError("empty corpus: " + path.string());
  return corpus;
}

std::vector<InteractionRecord> load_interactions(const std::filesystem::path& path,
                                                 const Corpus& corpus, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open interaction file: " + path.string());

  LoadStats local;
  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("query_id") || !j["query_id"].is_string()) {
      throw ParseError("line " + std::to_string(line_no) + ": missing query_id");
    }
    InteractionRecord rec;
    rec.query_id = j["query_id"].get<std::string>();
    rec.query_tokens = token_array(j, "query_tokens", line_no);
    if (rec.query_tokens.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty query_tokens");
    }
    if (rec.query_tokens.size() > kMaxQueryTokens) {
      throw ParseError("line " + std::to_string(line_no) + ": query_tokens longer than " +
                       std::to_string(kMaxQueryTokens));
    }
    rec.ordered = sorted_unique(token_array(j, "ordered", line_no));
    rec.clicked = sorted_unique(token_array(j, "clicked", line_no));
    rec.unclicked = sorted_unique(token_array(j, "unclicked", line_no));

    for (const auto* ids : {&rec.ordered, &rec.clicked, &rec.unclicked}) {
      for (const auto& id : *ids) {
        if (!corpus.contains(id)) {
          throw ValidationError("line " + std::to_string(line_no) +
                                ": unknown item_id: " + id);
        }
      }
    }

    if (rec.clicked.empty()) {
      ++local.rejected_no_positive;
      continue;
    }
    if (!is_subset(rec.ordered, rec.clicked)) {
      ++local.rejected_ordered_not_subset;
      continue;
    }
    if (intersects(rec.clicked, rec.unclicked)) {
      ++local.rejected_clicked_unclicked_overlap;
      continue;
    }
    ++local.accepted;
    records.push_back(std::move(rec));
  }

  if (stats) *stats = local;
  if (records.empty()) {
    throw ValidationError("no valid interaction records in " + path.string() + " (" +
                          std::to_string(local.rejected()) + " rejected)");
  }
  return records;
}

SynthOutput synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const std::uint32_t k = cfg.latent_dim;
  const std::uint32_t n_items = cfg.n_items;
  const std::uint32_t n_queries = cfg.n_queries;

  std::vector<Vec> item_z(n_items, Vec(k));
  for (auto& z : item_z) {
    for (auto& v : z) v = rng.next_normal();
  }
  std::vector<Vec> query_z(n_queries, Vec(k));
  for (auto& z : query_z) {
    for (auto& v : z) v = rng.next_normal();
  }

  auto bucket_tokens = [&](const Vec& z) {
    std::vector<std::string> tokens;
    tokens.reserve(k + cfg.noise_tokens_per_doc);
    for (std::uint32_t i = 0; i < k; ++i) {
      auto b = static_cast<std::uint32_t>(normal_cdf(z[i]) * cfg.buckets_per_dim);
      b = std::min(b, cfg.buckets_per_dim - 1);
      tokens.push_back("d" + std::to_string(i) + "_b" + std::to_string(b));
    }
    return tokens;
  };

  auto pad_id = [](char prefix, std::uint32_t idx, int width) {
    std::string digits = std::to_string(idx);
    std::string out(1, prefix);
    out.append(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))),
               '0');
    out += digits;
    return out;
  };

  SynthOutput out;
  out.corpus.items.reserve(n_items);
  for (std::uint32_t i = 0; i < n_items; ++i) {
    Item item;
    item.item_id = pad_id('i', i, 6);
    item.title_tokens = bucket_tokens(item_z[i]);
    for (std::uint32_t t = 0; t < cfg.noise_tokens_per_doc; ++t) {
      item.title_tokens.push_back("n" + std::to_string(rng.next_below(kNoiseVocabSize)));
    }
    out.corpus.position.emplace(item.item_id, i);
    out.corpus.items.push_back(std::move(item));
  }

  std::vector<std::vector<std::string>> query_tokens(n_queries);
  for (std::uint32_t q = 0; q < n_queries; ++q) {
    query_tokens[q] = bucket_tokens(query_z[q]);
    for (std::uint32_t t = 0; t < cfg.noise_tokens_per_doc; ++t) {
      query_tokens[q].push_back("n" + std::to_string(rng.next_below(kNoiseVocabSize)));
    }
  }

  const std::uint32_t a = cfg.max_ordered;
  const std::uint32_t b = cfg.clicked_per_query;
  const std::uint32_t c = cfg.unclicked_per_query;
  std::vector<InteractionRecord> records(n_queries);
  std::vector<std::uint32_t> order(n_items);
  for (std::uint32_t q = 0; q < n_queries; ++q) {
    // rank all items by latent relevance, ties broken by item index
    std::vector<double> rel(n_items);
    for (std::uint32_t i = 0; i < n_items; ++i) {
      rel[i] = dot(query_z[q], item_z[i]);
    }
    for (std::uint32_t i = 0; i < n_items; ++i) order[i] = i;
    const std::uint32_t keep = b + c;
    std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                      [&](std::uint32_t x, std::uint32_t y) {
                        if (rel[x] != rel[y]) return rel[x] > rel[y];
                        return x < y;
                      });

    InteractionRecord& rec = records[q];
    rec.query_id = pad_id('q', q, 5);
    rec.query_tokens = query_tokens[q];
    for (std::uint32_t r = 0; r < b; ++r) {
      rec.clicked.push_back(out.corpus.items[order[r]].item_id);
    }
    for (std::uint32_t r = b; r < b + c; ++r) {
      rec.unclicked.push_back(out.corpus.items[order[r]].item_id);
    }
    // ordered: each of the top-a ranks survives a fair coin, emulating order
    // sparsity; top-a is inside top-b so the subset invariant is structural
    for (std::uint32_t r = 0; r < a; ++r) {
      const bool kept = rng.next_double() < 0.5;
      if (kept) rec.ordered.push_back(out.corpus.items[order[r]].item_id);
    }
    std::sort(rec.ordered.begin(), rec.ordered.end());
    std::sort(rec.clicked.begin(), rec.clicked.end());
    std::sort(rec.unclicked.begin(), rec.unclicked.end());
    // re-intersect for safety
    std::vector<std::string> kept;
    std::set_intersection(rec.ordered.begin(), rec.ordered.end(), rec.clicked.begin(),
                          rec.clicked.end(), std::back_inserter(kept));
    rec.ordered = std::move(kept);
  }

  // 90/10 split by query under the generator rng
  std::vector<std::uint32_t> perm(n_queries);
  for (std::uint32_t q = 0; q < n_queries; ++q) perm[q] = q;
  rng.shuffle(perm);
  const auto n_train = static_cast<std::uint32_t>(n_queries * 9ULL / 10ULL);
  for (std::uint32_t i = 0; i < n_queries; ++i) {
    auto& dst = (i < n_train) ? out.train : out.eval;
    dst.push_back(records[perm[i]]);
  }

  out.latents.reserve(static_cast<std::size_t>(n_items) + n_queries);
  for (std::uint32_t i = 0; i < n_items; ++i) {
    out.latents.emplace_back(out.corpus.items[i].item_id, item_z[i]);
  }
  for (std::uint32_t q = 0; q < n_queries; ++q) {
    out.latents.emplace_back(records[q].query_id, query_z[q]);
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream outf(path, std::ios::trunc);
  if (!outf) throw IoError("cannot open for writing: " + path.string());
  for (const auto& item : corpus.items) {
    json j;
    j["item_id"] = item.item_id;
    j["title_tokens"] = item.title_tokens;
    outf << j.dump() << '\n';
  }
  if (!outf) throw IoError("write failed: " + path.string());
}

void write_interactions(const std::filesystem::path& path,
                        const std::vector<InteractionRecord>& records) {
  std::ofstream outf(path, std::ios::trunc);
  if (!outf) throw IoError("cannot open for writing: " + path.string());
  for (const auto& rec : records) {
    json j;
    j["query_id"] = rec.query_id;
    j["query_tokens"] = rec.query_tokens;
    j["ordered"] = rec.ordered;
    j["clicked"] = rec.clicked;
    j["unclicked"] = rec.unclicked;
    outf << j.dump() << '\n';
  }
  if (!outf) throw IoError("write failed: " + path.string());
}

void write_latents(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, Vec>>& latents) {
  std::ofstream outf(path, std::ios::trunc);
  if (!outf) throw IoError("cannot open for writing: " + path.string());
  for (const auto& [id, z] : latents) {
    json j;
    j["id"] = id;
    j["z"] = z;
    outf << j.dump() << '\n';
  }
  if (!outf) throw IoError("write failed: " + path.string());
}

}  // namespace mmse
