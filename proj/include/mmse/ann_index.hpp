#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmse/encoder.hpp"
#include "mmse/rng.hpp"
#include "mmse/tensor.hpp"

namespace mmse {

struct SearchHit {
  std::string item_id;
  double score = 0.0;
};

/// Common search surface for the exact and approximate indexes.
class SearchIndex {
 public:
  virtual ~SearchIndex() = default;
  virtual std::uint32_t dim() const = 0;
  virtual std::size_t size() const = 0;
  virtual std::vector<SearchHit> search(std::span<const double> query,
                                        std::size_t k) const = 0;
};

/// Exact inner-product search over all item vectors; the oracle the
/// approximate index is measured against. Vectors are stored f32 (the
/// on-disk embedding precision); scores accumulate in f64.
class FlatIndex : public SearchIndex {
 public:
  FlatIndex() = default;
  FlatIndex(std::uint32_t dim, std::vector<std::string> ids, std::vector<float> vectors,
            std::uint64_t config_hash);

  std::uint32_t dim() const override { return dim_; }
  std::size_t size() const override { return ids_.size(); }
  std::vector<SearchHit> search(std::span<const double> query, std::size_t k) const override;

  std::span<const float> vector_of(std::size_t row) const {
    return {vectors_.data() + row * dim_, dim_};
  }
  const std::vector<std::string>& ids() const { return ids_; }
  std::uint64_t config_hash() const { return config_hash_; }

 private:
  std::uint32_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> vectors_;  // N x dim, row-major
  std::uint64_t config_hash_ = 0;
};

/// Top-k by inner product, descending; ties broken by ascending item_id.
std::vector<SearchHit> search_flat(const FlatIndex& index, std::span<const double> query,
                                   std::size_t k);

struct KmeansResult {
  Matrix centroids;                    // k x dim
  std::vector<std::uint32_t> assignment;  // per point, nearest centroid
  std::vector<double> distortion;      // mean squared distance after each iteration
};

/// Lloyd iterations with k-means++ seeding, L2 metric. Empty clusters are
/// re-seeded from the point farthest from its assigned centroid.
/// Deterministic under the rng.
KmeansResult kmeans(const std::vector<double>& points, std::size_t n, std::size_t dim,
                    std::size_t k, std::uint32_t iters, Rng& rng);

struct IvfPqConfig {
  std::uint32_t nlist = 256;
  std::uint32_t nprobe = 8;
  std::uint32_t subquantizers = 16;  // M; d must be divisible by M
  std::uint32_t kmeans_iters = 25;
  std::uint64_t seed = 0;

  void validate(std::uint32_t dim, std::size_t n_items) const;
};

/// 8-bit product quantization codes (ks = 256 centroids per subspace,
/// clamped to the collection size when smaller).
inline constexpr std::uint32_t kPqCentroids = 256;

class IvfPqIndex : public SearchIndex {
 public:
  IvfPqIndex() = default;

  std::uint32_t dim() const override { return dim_; }
  std::size_t size() const override { return ids_.size(); }
  /// search with the config's default nprobe
  std::vector<SearchHit> search(std::span<const double> query, std::size_t k) const override;

  bool trained() const { return trained_; }
  const IvfPqConfig& config() const { return cfg_; }
  std::uint64_t config_hash() const { return config_hash_; }

  /// Reconstructed vector (coarse centroid + decoded residual) for one item
  /// ordinal; exposes what the asymmetric scores are computed against.
  Vec reconstruct(std::size_t ordinal) const;
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::vector<std::uint32_t>>& inverted_lists() const { return lists_; }

  void save(const std::filesystem::path& path) const;
  static IvfPqIndex load(const std::filesystem::path& path);

  friend IvfPqIndex build_ivfpq(const FlatIndex& items, const IvfPqConfig& cfg);
  friend std::vector<SearchHit> search_ivfpq(const IvfPqIndex& index,
                                             std::span<const double> query, std::size_t k,
                                             std::uint32_t nprobe);

 private:
  IvfPqConfig cfg_;
  std::uint32_t dim_ = 0;
  std::uint32_t ks_ = 0;  // effective centroids per subspace
  std::uint64_t config_hash_ = 0;
  bool trained_ = false;
  Matrix coarse_;                    // nlist x dim
  std::vector<Matrix> codebooks_;    // M matrices, ks x (dim/M)
  std::vector<std::string> ids_;     // build order
  std::vector<std::uint8_t> codes_;  // N x M
  std::vector<std::vector<std::uint32_t>> lists_;  // per cell: item ordinals
};

/// Coarse kmeans over the items, residual product quantization per subspace,
/// one inverted list entry per item. Deterministic under cfg.seed.
IvfPqIndex build_ivfpq(const FlatIndex& items, const IvfPqConfig& cfg);

/// Rank cells by <query, centroid>, scan the nprobe best, score candidates by
/// the asymmetric decomposition <q, c> + sum_m table_m[code_m]; ties broken by
/// ascending item_id.
std::vector<SearchHit> search_ivfpq(const IvfPqIndex& index, std::span<const double> query,
                                    std::size_t k, std::uint32_t nprobe);

// Embedding export file ("MMSE-EMB"): the trainer-to-index handoff. f32
// storage; training math stays f64.
void write_embeddings(const std::filesystem::path& path,
                      const std::vector<std::string>& ids,
                      const std::vector<float>& vectors, std::uint32_t dim,
                      std::uint64_t config_hash);

FlatIndex load_embeddings(const std::filesystem::path& path);

/// Embed every corpus item with the item tower, in corpus order, f64 -> f32.
/// threads > 1 splits rows across workers; output is identical either way.
FlatIndex embed_corpus(const ModelParams& params, const Corpus& corpus,
                       std::uint64_t config_hash, std::uint32_t threads = 1);

}  // namespace mmse
