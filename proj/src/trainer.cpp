#include "mmse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "mmse/errors.hpp"
#include "mmse/hash.hpp"
#include "mmse/io.hpp"

namespace mmse {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kOptimizerVersion = 1;

void check_finite(const double* data, std::size_t n, const char* tensor) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(data[i])) {
      throw ValidationError(std::string("non-finite gradient in ") + tensor);
    }
  }
}

// theta -= lr * (mhat / (sqrt(vhat) + eps) + wd * theta)
void adamw_update(double* theta, double* m, double* v, const double* g, std::size_t n,
                  const TrainConfig& cfg, double bias1, double bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bias1;
    const double v_hat = v[i] / bias2;
    theta[i] -= cfg.learning_rate *
                (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta[i]);
  }
}

void adamw_tower(TowerParams& p, const TowerGrads& g, TowerOptState& s,
                 const TrainConfig& cfg, double bias1, double bias2, const char* tower) {
  for (const auto& [row, grad] : g.embed_rows) {
    check_finite(grad.data(), grad.size(), tower);
    adamw_update(p.embed.row(row), s.embed_m.row(row), s.embed_v.row(row), grad.data(),
                 grad.size(), cfg, bias1, bias2);
  }
  check_finite(g.w1.data.data(), g.w1.data.size(), tower);
  adamw_update(p.w1.data.data(), s.w1_m.data.data(), s.w1_v.data.data(), g.w1.data.data(),
               g.w1.data.size(), cfg, bias1, bias2);
  check_finite(g.b1.data(), g.b1.size(), tower);
  adamw_update(p.b1.data(), s.b1_m.data(), s.b1_v.data(), g.b1.data(), g.b1.size(), cfg,
               bias1, bias2);
  check_finite(g.w2.data.data(), g.w2.data.size(), tower);
  adamw_update(p.w2.data.data(), s.w2_m.data.data(), s.w2_v.data.data(), g.w2.data.data(),
               g.w2.data.size(), cfg, bias1, bias2);
  check_finite(g.b2.data(), g.b2.size(), tower);
  adamw_update(p.b2.data(), s.b2_m.data(), s.b2_v.data(), g.b2.data(), g.b2.size(), cfg,
               bias1, bias2);
}

TowerOptState make_tower_state(const EncoderConfig& cfg) {
  TowerOptState s;
  s.embed_m = Matrix(cfg.vocab_buckets, cfg.embed_dim);
  s.embed_v = Matrix(cfg.vocab_buckets, cfg.embed_dim);
  s.w1_m = Matrix(cfg.hidden_dim, cfg.embed_dim);
  s.w1_v = Matrix(cfg.hidden_dim, cfg.embed_dim);
  s.b1_m.assign(cfg.hidden_dim, 0.0);
  s.b1_v.assign(cfg.hidden_dim, 0.0);
  s.w2_m = Matrix(cfg.out_dim, cfg.hidden_dim);
  s.w2_v = Matrix(cfg.out_dim, cfg.hidden_dim);
  s.b2_m.assign(cfg.out_dim, 0.0);
  s.b2_v.assign(cfg.out_dim, 0.0);
  return s;
}

void write_tensor(BinaryWriter& w, const std::vector<std::uint32_t>& dims,
                  const double* data, std::size_t n) {
  w.write_u32(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) w.write_u32(d);
  for (std::size_t i = 0; i < n; ++i) w.write_f64(data[i]);
}

void read_tensor(BinaryReader& r, const std::vector<std::uint32_t>& expect_dims,
                 double* data, std::size_t n) {
  const std::uint32_t ndim = r.read_u32();
  if (ndim != expect_dims.size()) throw ParseError("checkpoint tensor rank mismatch");
  std::size_t total = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = r.read_u32();
    if (d != expect_dims[i]) throw ParseError("checkpoint tensor shape mismatch");
    total *= d;
  }
  if (total != n) throw ParseError("checkpoint tensor size mismatch");
  for (std::size_t i = 0; i < n; ++i) data[i] = r.read_f64();
}

void write_tower(BinaryWriter& w, const TowerParams& p) {
  write_tensor(w, {static_cast<std::uint32_t>(p.embed.rows),
                   static_cast<std::uint32_t>(p.embed.cols)},
               p.embed.data.data(), p.embed.data.size());
  write_tensor(w, {static_cast<std::uint32_t>(p.w1.rows),
                   static_cast<std::uint32_t>(p.w1.cols)},
               p.w1.data.data(), p.w1.data.size());
  write_tensor(w, {static_cast<std::uint32_t>(p.b1.size())}, p.b1.data(), p.b1.size());
  write_tensor(w, {static_cast<std::uint32_t>(p.w2.rows),
                   static_cast<std::uint32_t>(p.w2.cols)},
               p.w2.data.data(), p.w2.data.size());
  write_tensor(w, {static_cast<std::uint32_t>(p.b2.size())}, p.b2.data(), p.b2.size());
}

void read_tower(BinaryReader& r, const EncoderConfig& cfg, TowerParams& p) {
  p.embed = Matrix(cfg.vocab_buckets, cfg.embed_dim);
  read_tensor(r, {cfg.vocab_buckets, cfg.embed_dim}, p.embed.data.data(),
              p.embed.data.size());
  p.w1 = Matrix(cfg.hidden_dim, cfg.embed_dim);
  read_tensor(r, {cfg.hidden_dim, cfg.embed_dim}, p.w1.data.data(), p.w1.data.size());
  p.b1.assign(cfg.hidden_dim, 0.0);
  read_tensor(r, {cfg.hidden_dim}, p.b1.data(), p.b1.size());
  p.w2 = Matrix(cfg.out_dim, cfg.hidden_dim);
  read_tensor(r, {cfg.out_dim, cfg.hidden_dim}, p.w2.data.data(), p.w2.data.size());
  p.b2.assign(cfg.out_dim, 0.0);
  read_tensor(r, {cfg.out_dim}, p.b2.data(), p.b2.size());
}

void write_tower_state(BinaryWriter& w, const TowerOptState& s) {
  auto tensor = [&w](const Matrix& m) {
    write_tensor(w, {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)},
                 m.data.data(), m.data.size());
  };
  auto vec = [&w](const Vec& v) {
    write_tensor(w, {static_cast<std::uint32_t>(v.size())}, v.data(), v.size());
  };
  tensor(s.embed_m);
  tensor(s.embed_v);
  tensor(s.w1_m);
  tensor(s.w1_v);
  vec(s.b1_m);
  vec(s.b1_v);
  tensor(s.w2_m);
  tensor(s.w2_v);
  vec(s.b2_m);
  vec(s.b2_v);
}

void read_tower_state(BinaryReader& r, const EncoderConfig& cfg, TowerOptState& s) {
  auto tensor = [&r](Matrix& m, std::uint32_t rows, std::uint32_t cols) {
    m = Matrix(rows, cols);
    read_tensor(r, {rows, cols}, m.data.data(), m.data.size());
  };
  auto vec = [&r](Vec& v, std::uint32_t n) {
    v.assign(n, 0.0);
    read_tensor(r, {n}, v.data(), v.size());
  };
  tensor(s.embed_m, cfg.vocab_buckets, cfg.embed_dim);
  tensor(s.embed_v, cfg.vocab_buckets, cfg.embed_dim);
  tensor(s.w1_m, cfg.hidden_dim, cfg.embed_dim);
  tensor(s.w1_v, cfg.hidden_dim, cfg.embed_dim);
  vec(s.b1_m, cfg.hidden_dim);
  vec(s.b1_v, cfg.hidden_dim);
  tensor(s.w2_m, cfg.out_dim, cfg.hidden_dim);
  tensor(s.w2_v, cfg.out_dim, cfg.hidden_dim);
  vec(s.b2_m, cfg.out_dim);
  vec(s.b2_v, cfg.out_dim);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (log_interval == 0) throw ConfigError("log_interval must be >= 1");
  loss.validate();
  sampling.validate();
}

OptimizerState make_optimizer_state(const EncoderConfig& cfg) {
  OptimizerState s;
  s.query_tower = make_tower_state(cfg);
  s.item_tower = make_tower_state(cfg);
  return s;
}

void adamw_step(ModelParams& params, const ModelGrads& grads, OptimizerState& state,
                const TrainConfig& cfg) {
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  adamw_tower(params.query_tower, grads.query_tower, state.query_tower, cfg, bias1, bias2,
              "query tower");
  adamw_tower(params.item_tower, grads.item_tower, state.item_tower, cfg, bias1, bias2,
              "item tower");
}

std::vector<std::vector<std::uint32_t>> hash_corpus_tokens(const Corpus& corpus,
                                                           std::uint32_t vocab_buckets) {
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(corpus.size());
  for (const auto& item : corpus.items) {
    out.push_back(hash_tokens(item.title_tokens, vocab_buckets));
  }
  return out;
}

LossValue train_step(ModelParams& params, const TrainingBatch& batch,
                     const std::vector<std::vector<std::uint32_t>>& item_buckets,
                     const TrainConfig& cfg, OptimizerState& state) {
  cfg.validate();
  const EncoderConfig& ecfg = params.config;
  const std::size_t n_queries = batch.queries.size();
  if (n_queries == 0) throw ValidationError("train_step: empty batch");

  // distinct referenced items, each encoded exactly once (post-fusion: one
  // shared item tower for every tier)
  std::vector<std::uint32_t> item_positions;
  for (const auto& bq : batch.queries) {
    item_positions.insert(item_positions.end(), bq.clicked.begin(), bq.clicked.end());
    item_positions.insert(item_positions.end(), bq.unclicked.begin(), bq.unclicked.end());
    item_positions.insert(item_positions.end(), bq.negatives.begin(), bq.negatives.end());
  }
  std::sort(item_positions.begin(), item_positions.end());
  item_positions.erase(std::unique(item_positions.begin(), item_positions.end()),
                       item_positions.end());
  std::unordered_map<std::uint32_t, std::uint32_t> local_of;
  local_of.reserve(item_positions.size());
  for (std::uint32_t l = 0; l < item_positions.size(); ++l) {
    local_of.emplace(item_positions[l], l);
  }

  std::vector<EncodeTrace> item_traces(item_positions.size());
  for (std::size_t l = 0; l < item_positions.size(); ++l) {
    item_traces[l] = encode_traced(params.item_tower, ecfg, item_buckets[item_positions[l]]);
  }
  std::vector<EncodeTrace> query_traces(n_queries);
  for (std::size_t i = 0; i < n_queries; ++i) {
    query_traces[i] = encode_traced(params.query_tower, ecfg, batch.queries[i].query_buckets);
  }

  // score-space upstream gradients, accumulated per embedding
  std::vector<Vec> u_query(n_queries, Vec(ecfg.out_dim, 0.0));
  std::vector<Vec> u_item(item_positions.size(), Vec(ecfg.out_dim, 0.0));
  const double inv_batch = 1.0 / static_cast<double>(n_queries);

  LossValue batch_loss;
  for (std::size_t i = 0; i < n_queries; ++i) {
    const BatchQuery& bq = batch.queries[i];
    const Vec& q = query_traces[i].out;

    auto gather = [&](const std::vector<std::uint32_t>& positions, Vec& scores,
                      std::vector<std::uint32_t>& locals) {
      scores.resize(positions.size());
      locals.resize(positions.size());
      for (std::size_t j = 0; j < positions.size(); ++j) {
        const std::uint32_t l = local_of.at(positions[j]);
        locals[j] = l;
        scores[j] = score(q, item_traces[l].out);
      }
    };

    QueryLossInput input;
    std::vector<std::uint32_t> l_ordered, l_clicked, l_unclicked, l_negative;
    gather(bq.ordered, input.s_ordered, l_ordered);
    gather(bq.clicked, input.s_clicked, l_clicked);
    gather(bq.unclicked, input.s_unclicked, l_unclicked);
    gather(bq.negatives, input.s_negative, l_negative);

    batch_loss += loss_total(input, cfg.loss);
    const ScoreGrads sg = loss_grads(input, cfg.loss);

    auto scatter = [&](const std::vector<std::uint32_t>& locals, const Vec& g) {
      for (std::size_t j = 0; j < locals.size(); ++j) {
        const double gj = g[j] * inv_batch;
        if (gj == 0.0) continue;
        axpy(gj, item_traces[locals[j]].out, u_query[i]);
        axpy(gj, q, u_item[locals[j]]);
      }
    };
    scatter(l_ordered, sg.s_ordered);
    scatter(l_clicked, sg.s_clicked);
    scatter(l_unclicked, sg.s_unclicked);
    scatter(l_negative, sg.s_negative);
  }
  batch_loss *= inv_batch;

  // backward in fixed order: queries then items
  ModelGrads grads;
  grads.query_tower = make_zero_tower_grads(ecfg);
  grads.item_tower = make_zero_tower_grads(ecfg);
  for (std::size_t i = 0; i < n_queries; ++i) {
    encode_backward_accum(params.query_tower, ecfg, batch.queries[i].query_buckets,
                          query_traces[i], u_query[i], grads.query_tower);
  }
  for (std::size_t l = 0; l < item_positions.size(); ++l) {
    encode_backward_accum(params.item_tower, ecfg, item_buckets[item_positions[l]],
                          item_traces[l], u_item[l], grads.item_tower);
  }

  adamw_step(params, grads, state, cfg);
  return batch_loss;
}

TrainResult train(const TrainRun& run, const Corpus& corpus,
                  const std::vector<InteractionRecord>& records) {
  run.encoder.validate();
  run.train.validate();

  TrainResult result;
  OptimizerState state;
  Rng data_rng(run.train.sampling.seed);
  std::uint32_t start_epoch = 0;

  if (run.resume) {
    Checkpoint ckpt = load_checkpoint(run.checkpoint_path);
    if (ckpt.config_hash != run.config_hash) {
      throw ValidationError("resume: checkpoint config hash does not match run config");
    }
    result.params = std::move(ckpt.params);
    OptimizerRestore restore = load_optimizer_state(run.optimizer_path, run.encoder);
    state = std::move(restore.state);
    start_epoch = restore.epochs_done;
    data_rng.set_words(restore.rng_words);
  } else {
    result.params = init_model(run.encoder, run.init_seed);
    state = make_optimizer_state(run.encoder);
    if (!run.trace_path.empty()) {
      write_trace_csv(run.trace_path, {}, /*append=*/false);  // header only
    }
  }

  const auto item_buckets = hash_corpus_tokens(corpus, run.encoder.vocab_buckets);
  result.epochs_run = start_epoch;

  for (std::uint32_t epoch = start_epoch; epoch < run.train.epochs; ++epoch) {
    const auto batches = epoch_batches(records, corpus, run.train.sampling,
                                       run.encoder.vocab_buckets, data_rng);
    std::vector<TraceRow> epoch_rows;
    for (std::uint32_t step = 0; step < batches.size(); ++step) {
      const LossValue loss =
          train_step(result.params, batches[step], item_buckets, run.train, state);
      if ((step + 1) % run.train.log_interval == 0 || step + 1 == batches.size()) {
        epoch_rows.push_back(TraceRow{epoch, step, loss});
      }
    }
    result.trace.insert(result.trace.end(), epoch_rows.begin(), epoch_rows.end());
    if (!run.trace_path.empty()) {
      write_trace_csv(run.trace_path, epoch_rows, /*append=*/true);
    }
    if (!run.checkpoint_path.empty()) {
      save_checkpoint(run.checkpoint_path, result.params, run.config_hash);
    }
    if (!run.optimizer_path.empty()) {
      save_optimizer_state(run.optimizer_path, state, epoch + 1, data_rng);
    }
    result.epochs_run = epoch + 1;
  }

  if (run.train.epochs == 0 || (run.resume && start_epoch >= run.train.epochs)) {
    if (!run.checkpoint_path.empty()) {
      save_checkpoint(run.checkpoint_path, result.params, run.config_hash);
    }
    if (!run.optimizer_path.empty()) {
      save_optimizer_state(run.optimizer_path, state, start_epoch, data_rng);
    }
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     std::uint64_t config_hash) {
  BinaryWriter w(path);
  w.write_magic("MMSE");
  w.write_u32(kCheckpointVersion);
  w.write_u32(params.config.vocab_buckets);
  w.write_u32(params.config.embed_dim);
  w.write_u32(params.config.hidden_dim);
  w.write_u32(params.config.out_dim);
  w.write_u64(config_hash);
  write_tower(w, params.query_tower);
  write_tower(w, params.item_tower);
  w.close();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("checkpoint not found: " + path.string());
  }
  BinaryReader r(path);
  r.expect_magic("MMSE");
  const std::uint32_t version = r.read_u32();
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.params.config.vocab_buckets = r.read_u32();
  ckpt.params.config.embed_dim = r.read_u32();
  ckpt.params.config.hidden_dim = r.read_u32();
  ckpt.params.config.out_dim = r.read_u32();
  ckpt.params.config.validate();
  ckpt.config_hash = r.read_u64();
  read_tower(r, ckpt.params.config, ckpt.params.query_tower);
  read_tower(r, ckpt.params.config, ckpt.params.item_tower);
  return ckpt;
}

void save_optimizer_state(const std::filesystem::path& path, const OptimizerState& state,
                          std::uint32_t epochs_done, const Rng& data_rng) {
  BinaryWriter w(path);
  w.write_magic("MMSO");
  w.write_u32(kOptimizerVersion);
  w.write_u64(state.step);
  w.write_u32(epochs_done);
  for (auto word : data_rng.words()) w.write_u64(word);
  write_tower_state(w, state.query_tower);
  write_tower_state(w, state.item_tower);
  w.close();
}

OptimizerRestore load_optimizer_state(const std::filesystem::path& path,
                                      const EncoderConfig& cfg) {
  if (!std::filesystem::exists(path)) {
    throw IoError("optimizer state not found: " + path.string());
  }
  BinaryReader r(path);
  r.expect_magic("MMSO");
  const std::uint32_t version = r.read_u32();
  if (version != kOptimizerVersion) {
    throw ParseError("unsupported optimizer state version " + std::to_string(version));
  }
  OptimizerRestore restore;
  restore.state.step = r.read_u64();
  restore.epochs_done = r.read_u32();
  for (auto& word : restore.rng_words) word = r.read_u64();
  read_tower_state(r, cfg, restore.state.query_tower);
  read_tower_state(r, cfg, restore.state.item_tower);
  return restore;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows,
                     bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot open trace file: " + path.string());
  if (!append) {
    out << "epoch,step,loss_total,loss_cn,loss_un,loss_cu,loss_ou\n";
  }
  char buf[256];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%u,%u,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.epoch,
                  row.step, row.loss.total, row.loss.cn, row.loss.un, row.loss.cu,
                  row.loss.ou);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace mmse
