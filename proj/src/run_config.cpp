#include "mmse/run_config.hpp"

#include <cstdio>
#include <fstream>

#include "mmse/errors.hpp"
#include "mmse/hash.hpp"

namespace mmse {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + value + "'");
  }
}

std::uint32_t parse_u32(const std::string& key, const std::string& value) {
  const std::uint64_t v = parse_u64(key, value);
  if (v > 0xffffffffULL) throw ConfigError("value out of range for " + key);
  return static_cast<std::uint32_t>(v);
}

double parse_f64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + value + "'");
  }
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "seed") {
    seed = parse_u64(key, value);
  } else if (key == "threads") {
    threads = parse_u32(key, value);
    if (threads == 0) throw ConfigError("threads must be >= 1");
  } else if (key == "out") {
    out_dir = value;
  } else if (key == "index") {
    if (value != "flat" && value != "ivfpq") {
      throw ConfigError("index must be 'flat' or 'ivfpq', got '" + value + "'");
    }
    index_kind = value;
  } else if (key == "top_k") {
    top_k = parse_u32(key, value);
  } else if (key == "latent_dim") {
    synth.latent_dim = parse_u32(key, value);
  } else if (key == "n_items") {
    synth.n_items = parse_u32(key, value);
  } else if (key == "n_queries") {
    synth.n_queries = parse_u32(key, value);
  } else if (key == "buckets_per_dim") {
    synth.buckets_per_dim = parse_u32(key, value);
  } else if (key == "noise_tokens") {
    synth.noise_tokens_per_doc = parse_u32(key, value);
  } else if (key == "max_ordered") {
    synth.max_ordered = parse_u32(key, value);
  } else if (key == "clicked_per_query") {
    synth.clicked_per_query = parse_u32(key, value);
  } else if (key == "unclicked_per_query") {
    synth.unclicked_per_query = parse_u32(key, value);
  } else if (key == "vocab_buckets") {
    encoder.vocab_buckets = parse_u32(key, value);
  } else if (key == "embed_dim") {
    encoder.embed_dim = parse_u32(key, value);
  } else if (key == "hidden_dim") {
    encoder.hidden_dim = parse_u32(key, value);
  } else if (key == "out_dim") {
    encoder.out_dim = parse_u32(key, value);
  } else if (key == "tau1") {
    loss.tau1 = parse_f64(key, value);
  } else if (key == "tau2") {
    loss.tau2 = parse_f64(key, value);
  } else if (key == "margin") {
    loss.margin = parse_f64(key, value);
  } else if (key == "loss") {
    loss = LossConfig::with_terms(value, loss);
  } else if (key == "batch_size") {
    sampling.batch_size = parse_u32(key, value);
  } else if (key == "shared_negatives") {
    sampling.shared_negatives = parse_u32(key, value);
  } else if (key == "lr") {
    train.learning_rate = parse_f64(key, value);
  } else if (key == "beta1") {
    train.beta1 = parse_f64(key, value);
  } else if (key == "beta2") {
    train.beta2 = parse_f64(key, value);
  } else if (key == "adam_eps") {
    train.eps = parse_f64(key, value);
  } else if (key == "weight_decay") {
    train.weight_decay = parse_f64(key, value);
  } else if (key == "epochs") {
    train.epochs = parse_u32(key, value);
  } else if (key == "log_interval") {
    train.log_interval = parse_u32(key, value);
  } else if (key == "nlist") {
    ivfpq.nlist = parse_u32(key, value);
  } else if (key == "nprobe") {
    ivfpq.nprobe = parse_u32(key, value);
  } else if (key == "m_subq") {
    ivfpq.subquantizers = parse_u32(key, value);
  } else if (key == "kmeans_iters") {
    ivfpq.kmeans_iters = parse_u32(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::resolve() {
  synth.seed = seed;
  sampling.seed = derive_seed(seed, "sampling");
  ivfpq.seed = derive_seed(seed, "ivfpq");
  train.loss = loss;
  train.sampling = sampling;
}

std::string RunConfig::canonical_model_config() const {
  char buf[64];
  std::string s;
  auto add_u = [&](const char* key, std::uint64_t v) {
    s += key;
    s += '=';
    s += std::to_string(v);
    s += '\n';
  };
  auto add_f = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key, v);
    s += buf;
  };
  add_u("seed", seed);
  add_u("latent_dim", synth.latent_dim);
  add_u("n_items", synth.n_items);
  add_u("n_queries", synth.n_queries);
  add_u("buckets_per_dim", synth.buckets_per_dim);
  add_u("noise_tokens", synth.noise_tokens_per_doc);
  add_u("max_ordered", synth.max_ordered);
  add_u("clicked_per_query", synth.clicked_per_query);
  add_u("unclicked_per_query", synth.unclicked_per_query);
  add_u("vocab_buckets", encoder.vocab_buckets);
  add_u("embed_dim", encoder.embed_dim);
  add_u("hidden_dim", encoder.hidden_dim);
  add_u("out_dim", encoder.out_dim);
  add_f("tau1", loss.tau1);
  add_f("tau2", loss.tau2);
  add_f("margin", loss.margin);
  s += "loss=" + loss.terms_string() + "\n";
  add_u("batch_size", sampling.batch_size);
  add_u("shared_negatives", sampling.shared_negatives);
  add_f("lr", train.learning_rate);
  add_f("beta1", train.beta1);
  add_f("beta2", train.beta2);
  add_f("adam_eps", train.eps);
  add_f("weight_decay", train.weight_decay);
  add_u("epochs", train.epochs);
  return s;
}

std::uint64_t RunConfig::model_config_hash() const {
  return fnv1a64(canonical_model_config());
}

}  // namespace mmse
