#include "mmse/encoder.hpp"

#include <cmath>

#include "mmse/errors.hpp"
#include "mmse/hash.hpp"
#include "mmse/rng.hpp"

namespace mmse {

void EncoderConfig::validate() const {
  if (vocab_buckets == 0 || embed_dim == 0 || hidden_dim == 0 || out_dim == 0) {
    throw ConfigError("encoder dims must all be >= 1");
  }
}

std::vector<std::uint32_t> hash_tokens(std::span<const std::string> tokens,
                                       std::uint32_t vocab_buckets) {
  if (tokens.empty()) throw ValidationError("hash_tokens: empty token sequence");
  if (vocab_buckets == 0) throw ValidationError("hash_tokens: vocab_buckets must be >= 1");
  std::vector<std::uint32_t> buckets;
  buckets.reserve(tokens.size());
  for (const auto& t : tokens) {
    buckets.push_back(static_cast<std::uint32_t>(fnv1a64(t) % vocab_buckets));
  }
  return buckets;
}

EncodeTrace encode_traced(const TowerParams& params, const EncoderConfig& cfg,
                          std::span<const std::uint32_t> buckets) {
  if (buckets.empty()) throw ValidationError("encode: empty bucket sequence");
  for (auto b : buckets) {
    if (b >= cfg.vocab_buckets) throw ValidationError("encode: bucket out of range");
  }

  EncodeTrace trace;
  trace.pooled.assign(cfg.embed_dim, 0.0);
  for (auto b : buckets) {
    axpy(1.0, params.embed.row_span(b), trace.pooled);
  }
  const double inv = 1.0 / static_cast<double>(buckets.size());
  for (auto& v : trace.pooled) v *= inv;

  trace.hidden.assign(cfg.hidden_dim, 0.0);
  matvec(params.w1, trace.pooled, trace.hidden);
  for (std::size_t i = 0; i < trace.hidden.size(); ++i) {
    trace.hidden[i] = std::tanh(trace.hidden[i] + params.b1[i]);
  }

  trace.out.assign(cfg.out_dim, 0.0);
  matvec(params.w2, trace.hidden, trace.out);
  for (std::size_t i = 0; i < trace.out.size(); ++i) trace.out[i] += params.b2[i];

  if (cfg.normalize_output) {
    const double norm = std::sqrt(dot(trace.out, trace.out));
    if (norm > 0.0) {
      for (auto& v : trace.out) v /= norm;
    }
  }
  return trace;
}

Vec encode(const TowerParams& params, const EncoderConfig& cfg,
           std::span<const std::uint32_t> buckets) {
  return encode_traced(params, cfg, buckets).out;
}

double score(std::span<const double> q, std::span<const double> p) {
  if (q.size() != p.size()) throw ValidationError("score: dimension mismatch");
  return dot(q, p);
}

TowerGrads make_zero_tower_grads(const EncoderConfig& cfg) {
  TowerGrads g;
  g.w1 = Matrix(cfg.hidden_dim, cfg.embed_dim);
  g.b1.assign(cfg.hidden_dim, 0.0);
  g.w2 = Matrix(cfg.out_dim, cfg.hidden_dim);
  g.b2.assign(cfg.out_dim, 0.0);
  return g;
}

void encode_backward_accum(const TowerParams& params, const EncoderConfig& cfg,
                           std::span<const std::uint32_t> buckets,
                           const EncodeTrace& trace, std::span<const double> upstream,
                           TowerGrads& grads) {
  if (cfg.normalize_output) {
    throw ValidationError("encode_backward: gradients not defined for normalized output");
  }
  // d<L>/dW2 = u h^T, d/db2 = u
  outer_add(grads.w2, 1.0, upstream, trace.hidden);
  axpy(1.0, upstream, grads.b2);

  // back through tanh: g1 = (W2^T u) * (1 - h^2)
  Vec g_hidden(cfg.hidden_dim, 0.0);
  matvec_transpose_add(params.w2, upstream, g_hidden);
  for (std::size_t i = 0; i < g_hidden.size(); ++i) {
    g_hidden[i] *= 1.0 - trace.hidden[i] * trace.hidden[i];
  }

  outer_add(grads.w1, 1.0, g_hidden, trace.pooled);
  axpy(1.0, g_hidden, grads.b1);

  // back through mean pooling into the touched rows
  Vec g_pooled(cfg.embed_dim, 0.0);
  matvec_transpose_add(params.w1, g_hidden, g_pooled);
  const double inv = 1.0 / static_cast<double>(buckets.size());
  for (auto b : buckets) {
    auto it = grads.embed_rows.try_emplace(b, Vec(cfg.embed_dim, 0.0)).first;
    axpy(inv, g_pooled, it->second);
  }
}

TowerGrads encode_backward(const TowerParams& params, const EncoderConfig& cfg,
                           std::span<const std::uint32_t> buckets,
                           std::span<const double> upstream) {
  TowerGrads grads = make_zero_tower_grads(cfg);
  const EncodeTrace trace = encode_traced(params, cfg, buckets);
  encode_backward_accum(params, cfg, buckets, trace, upstream, grads);
  return grads;
}

namespace {

TowerParams init_tower(const EncoderConfig& cfg, Rng& rng) {
  TowerParams p;
  p.embed = Matrix(cfg.vocab_buckets, cfg.embed_dim);
  for (auto& v : p.embed.data) v = rng.next_uniform(-0.05, 0.05);
  const double w1_bound = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  p.w1 = Matrix(cfg.hidden_dim, cfg.embed_dim);
  for (auto& v : p.w1.data) v = rng.next_uniform(-w1_bound, w1_bound);
  p.b1.assign(cfg.hidden_dim, 0.0);
  const double w2_bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
  p.w2 = Matrix(cfg.out_dim, cfg.hidden_dim);
  for (auto& v : p.w2.data) v = rng.next_uniform(-w2_bound, w2_bound);
  p.b2.assign(cfg.out_dim, 0.0);
  return p;
}

}  // namespace

ModelParams init_model(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams m;
  m.config = cfg;
  m.query_tower = init_tower(cfg, rng);
  m.item_tower = init_tower(cfg, rng);
  return m;
}

}  // namespace mmse
