#include "mmse/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mmse/errors.hpp"

namespace mmse {

namespace {

void require_finite(std::span<const double> scores, const char* what) {
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw ValidationError(std::string("non-finite score in ") + what);
    }
  }
}

// softplus(x) = log(1 + e^x), overflow-safe for |x| up to the f64 range
double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(exp(pos) + sum_i exp(neg_i)) with the max factored out
double log_sum_exp_with(double pos, std::span<const double> neg) {
  double m = pos;
  for (double v : neg) m = std::max(m, v);
  double s = std::exp(pos - m);
  for (double v : neg) s += std::exp(v - m);
  return m + std::log(s);
}

// One softmax-cross-entropy sum: each positive competes against the shared
// negatives plus itself. Used by both the clicked-negative and the
// unclicked-negative terms.
double softmax_positive_loss(std::span<const double> positives,
                             std::span<const double> negatives, double tau) {
  const double inv_tau = 1.0 / tau;
  Vec scaled_neg(negatives.size());
  for (std::size_t i = 0; i < negatives.size(); ++i) scaled_neg[i] = negatives[i] * inv_tau;
  double loss = 0.0;
  for (double p : positives) {
    const double sp = p * inv_tau;
    loss += log_sum_exp_with(sp, scaled_neg) - sp;
  }
  return loss;
}

void softmax_positive_grads(std::span<const double> positives,
                            std::span<const double> negatives, double tau,
                            std::span<double> g_pos, std::span<double> g_neg) {
  const double inv_tau = 1.0 / tau;
  Vec scaled_neg(negatives.size());
  for (std::size_t i = 0; i < negatives.size(); ++i) scaled_neg[i] = negatives[i] * inv_tau;
  for (std::size_t c = 0; c < positives.size(); ++c) {
    const double sp = positives[c] * inv_tau;
    const double lse = log_sum_exp_with(sp, scaled_neg);
    // d/ds_pos = (p_pos - 1)/tau; d/ds_neg_i += p_neg_i/tau
    g_pos[c] += (std::exp(sp - lse) - 1.0) * inv_tau;
    for (std::size_t n = 0; n < scaled_neg.size(); ++n) {
      g_neg[n] += std::exp(scaled_neg[n] - lse) * inv_tau;
    }
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(tau1 > 0.0) || !(tau2 > 0.0)) throw ConfigError("temperatures must be > 0");
  if (margin < 0.0) throw ConfigError("margin must be >= 0");
}

LossConfig LossConfig::with_terms(const std::string& csv, const LossConfig& base) {
  LossConfig cfg = base;
  cfg.cn = cfg.un = cfg.cu = cfg.ou = false;
  std::stringstream ss(csv);
  std::string term;
  bool any = false;
  while (std::getline(ss, term, ',')) {
    if (term.empty()) continue;
    any = true;
    if (term == "cn") {
      cfg.cn = true;
    } else if (term == "un") {
      cfg.un = true;
    } else if (term == "cu") {
      cfg.cu = true;
    } else if (term == "ou") {
      cfg.ou = true;
    } else {
      throw ConfigError("unknown loss term '" + term + "' (expected cn,un,cu,ou)");
    }
  }
  if (!any) throw ConfigError("empty loss term list");
  return cfg;
}

std::string LossConfig::terms_string() const {
  std::string s;
  auto append = [&s](bool flag, const char* name) {
    if (!flag) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  append(cn, "cn");
  append(un, "un");
  append(cu, "cu");
  append(ou, "ou");
  return s;
}

LossValue& LossValue::operator+=(const LossValue& o) {
  total += o.total;
  cn += o.cn;
  un += o.un;
  cu += o.cu;
  ou += o.ou;
  return *this;
}

LossValue& LossValue::operator*=(double a) {
  total *= a;
  cn *= a;
  un *= a;
  cu *= a;
  ou *= a;
  return *this;
}

double loss_cn(std::span<const double> s_clicked, std::span<const double> s_negative,
               double tau) {
  if (s_clicked.empty()) throw ValidationError("loss_cn: clicked scores must be non-empty");
  require_finite(s_clicked, "loss_cn clicked");
  require_finite(s_negative, "loss_cn negatives");
  return softmax_positive_loss(s_clicked, s_negative, tau);
}

double loss_un(std::span<const double> s_unclicked, std::span<const double> s_negative,
               double tau) {
  if (s_unclicked.empty()) return 0.0;
  require_finite(s_unclicked, "loss_un unclicked");
  require_finite(s_negative, "loss_un negatives");
  return softmax_positive_loss(s_unclicked, s_negative, tau);
}

double loss_cu(std::span<const double> s_clicked, std::span<const double> s_unclicked,
               double margin) {
  double loss = 0.0;
  for (double su : s_unclicked) {
    for (double sc : s_clicked) {
      loss += std::max(su - sc + margin, 0.0);
    }
  }
  return loss;
}

double loss_ou(std::span<const double> s_ordered, std::span<const double> s_unclicked) {
  double loss = 0.0;
  for (double so : s_ordered) {
    for (double su : s_unclicked) {
      loss += softplus(-(so - su));
    }
  }
  return loss;
}

LossValue loss_total(const QueryLossInput& input, const LossConfig& cfg) {
  cfg.validate();
  if (input.s_clicked.empty()) {
    throw ValidationError("loss_total: clicked scores must be non-empty");
  }
  LossValue v;
  if (cfg.cn) v.cn = loss_cn(input.s_clicked, input.s_negative, cfg.tau1);
  if (cfg.un) v.un = loss_un(input.s_unclicked, input.s_negative, cfg.tau2);
  if (cfg.cu) v.cu = loss_cu(input.s_clicked, input.s_unclicked, cfg.margin);
  if (cfg.ou) v.ou = loss_ou(input.s_ordered, input.s_unclicked);
  v.total = v.cn + v.un + v.cu + v.ou;
  return v;
}

ScoreGrads loss_grads(const QueryLossInput& input, const LossConfig& cfg) {
  cfg.validate();
  if (input.s_clicked.empty()) {
    throw ValidationError("loss_grads: clicked scores must be non-empty");
  }
  ScoreGrads g;
  g.s_ordered.assign(input.s_ordered.size(), 0.0);
  g.s_clicked.assign(input.s_clicked.size(), 0.0);
  g.s_unclicked.assign(input.s_unclicked.size(), 0.0);
  g.s_negative.assign(input.s_negative.size(), 0.0);

  if (cfg.cn) {
    require_finite(input.s_clicked, "loss_grads clicked");
    require_finite(input.s_negative, "loss_grads negatives");
    softmax_positive_grads(input.s_clicked, input.s_negative, cfg.tau1, g.s_clicked,
                           g.s_negative);
  }
  if (cfg.un && !input.s_unclicked.empty()) {
    require_finite(input.s_unclicked, "loss_grads unclicked");
    require_finite(input.s_negative, "loss_grads negatives");
    softmax_positive_grads(input.s_unclicked, input.s_negative, cfg.tau2, g.s_unclicked,
                           g.s_negative);
  }
  if (cfg.cu) {
    // subgradient at the kink (s_u - s_c + margin == 0) is 0
    for (std::size_t u = 0; u < input.s_unclicked.size(); ++u) {
      for (std::size_t c = 0; c < input.s_clicked.size(); ++c) {
        if (input.s_unclicked[u] - input.s_clicked[c] + cfg.margin > 0.0) {
          g.s_unclicked[u] += 1.0;
          g.s_clicked[c] -= 1.0;
        }
      }
    }
  }
  if (cfg.ou) {
    for (std::size_t o = 0; o < input.s_ordered.size(); ++o) {
      for (std::size_t u = 0; u < input.s_unclicked.size(); ++u) {
        const double s = sigmoid(-(input.s_ordered[o] - input.s_unclicked[u]));
        g.s_ordered[o] -= s;
        g.s_unclicked[u] += s;
      }
    }
  }
  return g;
}

}  // namespace mmse
