#pragma once

#include <span>
#include <string>

#include "mmse/tensor.hpp"

namespace mmse {

/// Which loss terms are active, and their temperatures/margin. Ablations
/// toggle terms: M1 = {cn, un}, M2 = {cn, un, cu}, full = all four.
struct LossConfig {
  double tau1 = 1.0 / 30.0;  // clicked-negative softmax temperature
  double tau2 = 1.0 / 30.0;  // unclicked-negative softmax temperature
  double margin = 0.02;      // clicked-unclicked hinge margin
  bool cn = true;
  bool un = true;
  bool cu = true;
  bool ou = true;

  void validate() const;
  /// Parses a comma list from {cn,un,cu,ou}; unknown names are errors.
  static LossConfig with_terms(const std::string& csv, const LossConfig& base = {});
  std::string terms_string() const;
};

/// Precomputed S(q, p) per behavior tier of one query. Ordered items also
/// appear among the clicked scores (P_o is a subset of P_c); their scores are
/// repeated in s_ordered for the ranking terms.
struct QueryLossInput {
  Vec s_ordered;
  Vec s_clicked;   // non-empty
  Vec s_unclicked;
  Vec s_negative;
};

struct LossValue {
  double total = 0.0;
  double cn = 0.0;
  double un = 0.0;
  double cu = 0.0;
  double ou = 0.0;

  LossValue& operator+=(const LossValue& o);
  LossValue& operator*=(double a);
};

/// Gradients of loss_total w.r.t. every score in QueryLossInput, same shapes.
struct ScoreGrads {
  Vec s_ordered;
  Vec s_clicked;
  Vec s_unclicked;
  Vec s_negative;
};

/// Softmax cross-entropy of each clicked score against the negatives plus
/// itself (log-sum-exp form).
double loss_cn(std::span<const double> s_clicked, std::span<const double> s_negative,
               double tau);

/// Same form with unclicked items as the positives; empty unclicked -> 0.
double loss_un(std::span<const double> s_unclicked, std::span<const double> s_negative,
               double tau);

/// Hinge over all clicked x unclicked pairs: sum max(s_u - s_c + margin, 0).
double loss_cu(std::span<const double> s_clicked, std::span<const double> s_unclicked,
               double margin);

/// Pairwise BPR over ordered x unclicked: sum softplus(-(s_o - s_u)).
double loss_ou(std::span<const double> s_ordered, std::span<const double> s_unclicked);

LossValue loss_total(const QueryLossInput& input, const LossConfig& cfg);

ScoreGrads loss_grads(const QueryLossInput& input, const LossConfig& cfg);

}  // namespace mmse
