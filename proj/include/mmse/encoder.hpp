#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmse/tensor.hpp"

namespace mmse {

struct EncoderConfig {
  std::uint32_t vocab_buckets = 20000;  // token hash space
  std::uint32_t embed_dim = 64;         // d0
  std::uint32_t hidden_dim = 128;       // h
  std::uint32_t out_dim = 128;          // d
  bool normalize_output = false;        // off by default: scoring is a raw inner product

  void validate() const;
};

/// All learnable parameters of one tower:
///   out = W2 * tanh(W1 * mean(E[buckets]) + b1) + b2
struct TowerParams {
  Matrix embed;  // V x d0
  Matrix w1;     // h x d0
  Vec b1;        // h
  Matrix w2;     // d x h
  Vec b2;        // d
};

struct ModelParams {
  EncoderConfig config;
  TowerParams query_tower;
  TowerParams item_tower;
};

/// Forward intermediates kept so the backward pass reuses them instead of
/// re-encoding.
struct EncodeTrace {
  Vec pooled;  // mean of embedding rows, d0
  Vec hidden;  // tanh activations, h
  Vec out;     // d
};

/// Sparse-over-embedding gradient of one tower. Dense layer grads are always
/// materialized; only touched embedding rows appear in embed_rows.
struct TowerGrads {
  std::map<std::uint32_t, Vec> embed_rows;
  Matrix w1;
  Vec b1;
  Matrix w2;
  Vec b2;
};

/// FNV-1a 64-bit of each token string, mod vocab_buckets.
std::vector<std::uint32_t> hash_tokens(std::span<const std::string> tokens,
                                       std::uint32_t vocab_buckets);

EncodeTrace encode_traced(const TowerParams& params, const EncoderConfig& cfg,
                          std::span<const std::uint32_t> buckets);

Vec encode(const TowerParams& params, const EncoderConfig& cfg,
           std::span<const std::uint32_t> buckets);

/// S(q, p) = <q, p>
double score(std::span<const double> q, std::span<const double> p);

TowerGrads make_zero_tower_grads(const EncoderConfig& cfg);

/// Accumulates d<upstream, encode(buckets)>/dtheta into grads. Only embedding
/// rows named in buckets receive entries.
void encode_backward_accum(const TowerParams& params, const EncoderConfig& cfg,
                           std::span<const std::uint32_t> buckets,
                           const EncodeTrace& trace, std::span<const double> upstream,
                           TowerGrads& grads);

TowerGrads encode_backward(const TowerParams& params, const EncoderConfig& cfg,
                           std::span<const std::uint32_t> buckets,
                           std::span<const double> upstream);

/// Dense layers uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), embeddings
/// uniform(-0.05, 0.05), biases zero. Towers share dims but not weights.
ModelParams init_model(const EncoderConfig& cfg, std::uint64_t seed);

}  // namespace mmse
