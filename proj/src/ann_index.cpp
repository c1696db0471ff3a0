#include "mmse/ann_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "mmse/errors.hpp"
#include "mmse/io.hpp"

namespace mmse {

namespace {

constexpr std::uint32_t kIndexVersion = 1;

// (score desc, item_id asc) — the normative tie-break, making every search
// result fully deterministic.
struct HitOrder {
  bool operator()(const SearchHit& a, const SearchHit& b) const {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
  }
};

std::vector<SearchHit> top_k(std::vector<SearchHit> candidates, std::size_t k) {
  std::sort(candidates.begin(), candidates.end(), HitOrder{});
  if (candidates.size() > k) candidates.resize(k);
  return candidates;
}

}  // namespace

FlatIndex::FlatIndex(std::uint32_t dim, std::vector<std::string> ids,
                     std::vector<float> vectors, std::uint64_t config_hash)
    : dim_(dim), ids_(std::move(ids)), vectors_(std::move(vectors)),
      config_hash_(config_hash) {
  if (vectors_.size() != ids_.size() * static_cast<std::size_t>(dim_)) {
    throw ValidationError("FlatIndex: vector buffer does not match ids x dim");
  }
  for (float v : vectors_) {
    if (!std::isfinite(v)) throw ValidationError("FlatIndex: non-finite vector entry");
  }
}

std::vector<SearchHit> FlatIndex::search(std::span<const double> query,
                                         std::size_t k) const {
  return search_flat(*this, query, k);
}

std::vector<SearchHit> search_flat(const FlatIndex& index, std::span<const double> query,
                                   std::size_t k) {
  if (k == 0) throw ValidationError("search_flat: k must be >= 1");
  if (query.size() != index.dim()) throw ValidationError("search_flat: dimension mismatch");
  std::vector<SearchHit> candidates;
  candidates.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto row = index.vector_of(i);
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += query[j] * static_cast<double>(row[j]);
    candidates.push_back(SearchHit{index.ids()[i], s});
  }
  return top_k(std::move(candidates), k);
}

KmeansResult kmeans(const std::vector<double>& points, std::size_t n, std::size_t dim,
                    std::size_t k, std::uint32_t iters, Rng& rng) {
  if (k == 0) throw ValidationError("kmeans: k must be >= 1");
  if (k > n) throw ValidationError("kmeans: k exceeds the number of points");
  if (points.size() != n * dim) throw ValidationError("kmeans: bad point buffer size");

  auto point = [&](std::size_t i) {
    return std::span<const double>(points.data() + i * dim, dim);
  };

  KmeansResult result;
  result.centroids = Matrix(k, dim);
  Matrix& centroids = result.centroids;

  // k-means++ seeding: first pick uniform, then D^2-weighted. When every
  // remaining distance is zero (duplicate points), fall back to the first
  // unchosen point.
  std::vector<double> dist2(n, std::numeric_limits<double>::max());
  std::vector<bool> chosen(n, false);
  std::size_t first = rng.next_below(n);
  std::copy_n(point(first).begin(), dim, centroids.row(0));
  chosen[first] = true;
  for (std::size_t i = 0; i < n; ++i) {
    dist2[i] = squared_distance(point(i), centroids.row_span(0));
  }
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += dist2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double threshold = rng.next_double() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= threshold) {
          pick = i;
          break;
        }
      }
      if (pick == n) pick = n - 1;  // guard against rounding at the top end
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
      if (pick == n) pick = 0;
    }
    chosen[pick] = true;
    std::copy_n(point(pick).begin(), dim, centroids.row(c));
    for (std::size_t i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], squared_distance(point(i), centroids.row_span(c)));
    }
  }

  result.assignment.assign(n, 0);
  std::vector<double> nearest(n, 0.0);
  std::vector<std::size_t> counts(k, 0);

  for (std::uint32_t iter = 0; iter < iters; ++iter) {
    // assignment step; ties go to the lower centroid index
    double distortion = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      std::uint32_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(point(i), centroids.row_span(c));
        if (d < best) {
          best = d;
          best_c = static_cast<std::uint32_t>(c);
        }
      }
      result.assignment[i] = best_c;
      nearest[i] = best;
      distortion += best;
    }
    result.distortion.push_back(distortion / static_cast<double>(n));

    // update step
    centroids.fill(0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      axpy(1.0, point(i), centroids.row_span(result.assignment[i]));
      ++counts[result.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < dim; ++j) centroids.at(c, j) *= inv;
    }
    // re-seed empties from the current farthest point; its distance is
    // zeroed so a second empty cluster picks a different point
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] > far_d) {
          far_d = nearest[i];
          far = i;
        }
      }
      std::copy_n(point(far).begin(), dim, centroids.row(c));
      nearest[far] = 0.0;
      result.assignment[far] = static_cast<std::uint32_t>(c);
      counts[c] = 1;
    }
  }

  // final assignment so centroids and assignment agree on exit
  double distortion = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::max();
    std::uint32_t best_c = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = squared_distance(point(i), centroids.row_span(c));
      if (d < best) {
        best = d;
        best_c = static_cast<std::uint32_t>(c);
      }
    }
    result.assignment[i] = best_c;
    distortion += best;
  }
  result.distortion.push_back(distortion / static_cast<double>(n));
  return result;
}

void IvfPqConfig::validate(std::uint32_t dim, std::size_t n_items) const {
  if (nlist == 0) throw ConfigError("nlist must be >= 1");
  if (nlist > n_items) throw ConfigError("nlist exceeds the number of items");
  if (nprobe == 0 || nprobe > nlist) throw ConfigError("nprobe must lie in [1, nlist]");
  if (subquantizers == 0 || dim % subquantizers != 0) {
    throw ConfigError("embedding dim must be divisible by the subquantizer count");
  }
  if (kmeans_iters == 0) throw ConfigError("kmeans_iters must be >= 1");
}

IvfPqIndex build_ivfpq(const FlatIndex& items, const IvfPqConfig& cfg) {
  const std::uint32_t d = items.dim();
  const std::size_t n = items.size();
  cfg.validate(d, n);

  IvfPqIndex index;
  index.cfg_ = cfg;
  index.dim_ = d;
  index.config_hash_ = items.config_hash();
  index.ids_ = items.ids();
  index.ks_ = static_cast<std::uint32_t>(std::min<std::size_t>(kPqCentroids, n));

  std::vector<double> points(n * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = items.vector_of(i);
    for (std::uint32_t j = 0; j < d; ++j) {
      points[i * d + j] = static_cast<double>(row[j]);
    }
  }

  Rng rng(cfg.seed);
  KmeansResult coarse = kmeans(points, n, d, cfg.nlist, cfg.kmeans_iters, rng);
  index.coarse_ = std::move(coarse.centroids);

  std::vector<double> residuals(points.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = points.data() + i * d;
    const double* c = index.coarse_.row(coarse.assignment[i]);
    for (std::uint32_t j = 0; j < d; ++j) residuals[i * d + j] = x[j] - c[j];
  }

  const std::uint32_t m_count = cfg.subquantizers;
  const std::uint32_t dsub = d / m_count;
  index.codebooks_.resize(m_count);
  index.codes_.assign(n * static_cast<std::size_t>(m_count), 0);
  std::vector<double> subpoints(n * static_cast<std::size_t>(dsub));
  for (std::uint32_t m = 0; m < m_count; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* r = residuals.data() + i * d + m * dsub;
      std::copy_n(r, dsub, subpoints.data() + i * dsub);
    }
    KmeansResult sub = kmeans(subpoints, n, dsub, index.ks_, cfg.kmeans_iters, rng);
    index.codebooks_[m] = std::move(sub.centroids);
    for (std::size_t i = 0; i < n; ++i) {
      index.codes_[i * m_count + m] = static_cast<std::uint8_t>(sub.assignment[i]);
    }
  }

  index.lists_.assign(cfg.nlist, {});
  for (std::size_t i = 0; i < n; ++i) {
    index.lists_[coarse.assignment[i]].push_back(static_cast<std::uint32_t>(i));
  }
  index.trained_ = true;
  return index;
}

std::vector<SearchHit> search_ivfpq(const IvfPqIndex& index, std::span<const double> query,
                                    std::size_t k, std::uint32_t nprobe) {
  if (!index.trained_) throw ValidationError("search_ivfpq: index is not trained");
  if (k == 0) throw ValidationError("search_ivfpq: k must be >= 1");
  if (query.size() != index.dim_) throw ValidationError("search_ivfpq: dimension mismatch");
  if (nprobe == 0 || nprobe > index.cfg_.nlist) {
    throw ValidationError("search_ivfpq: nprobe must lie in [1, nlist]");
  }

  // rank coarse cells by inner product with the query
  const std::uint32_t nlist = index.cfg_.nlist;
  std::vector<std::pair<double, std::uint32_t>> cell_scores(nlist);
  for (std::uint32_t c = 0; c < nlist; ++c) {
    cell_scores[c] = {dot(query, index.coarse_.row_span(c)), c};
  }
  std::sort(cell_scores.begin(), cell_scores.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  // per-query lookup tables: table[m][j] = <q_m, codebook_m[j]>
  const std::uint32_t m_count = index.cfg_.subquantizers;
  const std::uint32_t dsub = index.dim_ / m_count;
  std::vector<double> tables(static_cast<std::size_t>(m_count) * index.ks_);
  for (std::uint32_t m = 0; m < m_count; ++m) {
    const auto q_sub = query.subspan(m * dsub, dsub);
    for (std::uint32_t j = 0; j < index.ks_; ++j) {
      tables[m * index.ks_ + j] = dot(q_sub, index.codebooks_[m].row_span(j));
    }
  }

  std::vector<SearchHit> candidates;
  for (std::uint32_t p = 0; p < nprobe; ++p) {
    const auto [coarse_term, cell] = cell_scores[p];
    for (std::uint32_t ordinal : index.lists_[cell]) {
      const std::uint8_t* code = index.codes_.data() + ordinal * m_count;
      double s = coarse_term;
      for (std::uint32_t m = 0; m < m_count; ++m) {
        s += tables[m * index.ks_ + code[m]];
      }
      candidates.push_back(SearchHit{index.ids_[ordinal], s});
    }
  }
  return top_k(std::move(candidates), k);
}

std::vector<SearchHit> IvfPqIndex::search(std::span<const double> query,
                                          std::size_t k) const {
  return search_ivfpq(*this, query, k, cfg_.nprobe);
}

Vec IvfPqIndex::reconstruct(std::size_t ordinal) const {
  if (!trained_) throw ValidationError("reconstruct: index is not trained");
  // find the cell holding this ordinal
  std::uint32_t cell = 0;
  bool found = false;
  for (std::uint32_t c = 0; c < lists_.size() && !found; ++c) {
    for (std::uint32_t o : lists_[c]) {
      if (o == ordinal) {
        cell = c;
        found = true;
        break;
      }
    }
  }
  if (!found) throw ValidationError("reconstruct: ordinal not present in any list");
  Vec out(coarse_.row_span(cell).begin(), coarse_.row_span(cell).end());
  const std::uint32_t m_count = cfg_.subquantizers;
  const std::uint32_t dsub = dim_ / m_count;
  const std::uint8_t* code = codes_.data() + ordinal * m_count;
  for (std::uint32_t m = 0; m < m_count; ++m) {
    const double* cb = codebooks_[m].row(code[m]);
    for (std::uint32_t j = 0; j < dsub; ++j) out[m * dsub + j] += cb[j];
  }
  return out;
}

void IvfPqIndex::save(const std::filesystem::path& path) const {
  if (!trained_) throw ValidationError("save: index is not trained");
  BinaryWriter w(path);
  w.write_magic("MMSI");
  w.write_u32(kIndexVersion);
  w.write_u64(config_hash_);
  w.write_u32(dim_);
  w.write_u32(cfg_.nlist);
  w.write_u32(cfg_.nprobe);
  w.write_u32(cfg_.subquantizers);
  w.write_u32(ks_);
  w.write_u32(cfg_.kmeans_iters);
  w.write_u64(cfg_.seed);
  w.write_u32(static_cast<std::uint32_t>(ids_.size()));
  for (double v : coarse_.data) w.write_f64(v);
  for (const auto& book : codebooks_) {
    for (double v : book.data) w.write_f64(v);
  }
  for (const auto& id : ids_) w.write_string(id);
  w.write_bytes(codes_.data(), codes_.size());
  for (const auto& list : lists_) {
    w.write_u32(static_cast<std::uint32_t>(list.size()));
    for (std::uint32_t ordinal : list) w.write_u32(ordinal);
  }
  w.close();
}

IvfPqIndex IvfPqIndex::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("index not found: " + path.string());
  BinaryReader r(path);
  r.expect_magic("MMSI");
  const std::uint32_t version = r.read_u32();
  if (version != kIndexVersion) {
    throw ParseError("unsupported index version " + std::to_string(version));
  }
  IvfPqIndex index;
  index.config_hash_ = r.read_u64();
  index.dim_ = r.read_u32();
  index.cfg_.nlist = r.read_u32();
  index.cfg_.nprobe = r.read_u32();
  index.cfg_.subquantizers = r.read_u32();
  index.ks_ = r.read_u32();
  index.cfg_.kmeans_iters = r.read_u32();
  index.cfg_.seed = r.read_u64();
  const std::uint32_t n = r.read_u32();
  index.coarse_ = Matrix(index.cfg_.nlist, index.dim_);
  for (double& v : index.coarse_.data) v = r.read_f64();
  const std::uint32_t dsub = index.dim_ / index.cfg_.subquantizers;
  index.codebooks_.resize(index.cfg_.subquantizers);
  for (auto& book : index.codebooks_) {
    book = Matrix(index.ks_, dsub);
    for (double& v : book.data) v = r.read_f64();
  }
  index.ids_.resize(n);
  for (auto& id : index.ids_) id = r.read_string();
  index.codes_.resize(static_cast<std::size_t>(n) * index.cfg_.subquantizers);
  r.read_bytes(index.codes_.data(), index.codes_.size());
  index.lists_.resize(index.cfg_.nlist);
  for (auto& list : index.lists_) {
    list.resize(r.read_u32());
    for (auto& ordinal : list) ordinal = r.read_u32();
  }
  index.trained_ = true;
  return index;
}

void write_embeddings(const std::filesystem::path& path,
                      const std::vector<std::string>& ids,
                      const std::vector<float>& vectors, std::uint32_t dim,
                      std::uint64_t config_hash) {
  if (vectors.size() != ids.size() * static_cast<std::size_t>(dim)) {
    throw ValidationError("write_embeddings: vector buffer does not match ids x dim");
  }
  BinaryWriter w(path);
  w.write_magic("MMSE-EMB");
  w.write_u64(config_hash);
  w.write_u32(static_cast<std::uint32_t>(ids.size()));
  w.write_u32(dim);
  for (float v : vectors) w.write_f32(v);
  for (const auto& id : ids) w.write_string(id);
  w.close();
}

FlatIndex load_embeddings(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("embeddings file not found: " + path.string());
  }
  BinaryReader r(path);
  r.expect_magic("MMSE-EMB");
  const std::uint64_t config_hash = r.read_u64();
  const std::uint32_t n = r.read_u32();
  const std::uint32_t dim = r.read_u32();
  std::vector<float> vectors(static_cast<std::size_t>(n) * dim);
  for (auto& v : vectors) v = r.read_f32();
  std::vector<std::string> ids(n);
  for (auto& id : ids) id = r.read_string();
  return FlatIndex(dim, std::move(ids), std::move(vectors), config_hash);
}

FlatIndex embed_corpus(const ModelParams& params, const Corpus& corpus,
                       std::uint64_t config_hash, std::uint32_t threads) {
  const std::uint32_t d = params.config.out_dim;
  const std::size_t n = corpus.size();
  std::vector<float> vectors(n * static_cast<std::size_t>(d));
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = corpus.items[i].item_id;

  auto embed_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto buckets =
          hash_tokens(corpus.items[i].title_tokens, params.config.vocab_buckets);
      const Vec out = encode(params.item_tower, params.config, buckets);
      for (std::uint32_t j = 0; j < d; ++j) {
        vectors[i * d + j] = static_cast<float>(out[j]);
      }
    }
  };

  if (threads <= 1 || n < 2) {
    embed_range(0, n);
  } else {
    // rows are disjoint, so the parallel result is bit-identical to serial
    const std::uint32_t workers = std::min<std::uint32_t>(threads, 16);
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::uint32_t t = 0; t < workers; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(embed_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return FlatIndex(d, std::move(ids), std::move(vectors), config_hash);
}

}  // namespace mmse
