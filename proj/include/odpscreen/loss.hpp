#pragma once

#include "odpscreen/dataset.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace odpscreen {

enum class LossKind { squared, binomial, cox };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& s);
/// binomial for binary outcomes, cox for survival.
LossKind default_loss(const Outcomes& outcomes);

struct Objective {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

/// Weighted loss sum_i w_i M(y_i, eta_i) bound to one set of outcomes.
///
///   squared   M = (y - eta)^2
///   binomial  M = log(1 + e^eta) - y * eta
///   cox       weighted Breslow partial likelihood: each subject carries
///             w_i in its own event term and in every risk set holding it,
///             -sum_{i: event} w_i [eta_i - log sum_{j: t_j >= t_i} w_j e^{eta_j}]
///
/// The linear predictor is eta = D theta for a caller-supplied design D.
/// Instances are immutable and safe to share across threads.
class LossProblem {
 public:
  /// Throws ValidationError if `kind` does not suit the outcome type.
  LossProblem(LossKind kind, Outcomes outcomes, Eigen::VectorXd weights);

  LossKind kind() const { return kind_; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  const Eigen::VectorXd& weights() const { return weights_; }

  double value(const Eigen::VectorXd& eta) const;
  Objective evaluate(const Eigen::MatrixXd& design, const Eigen::VectorXd& theta) const;

 private:
  void cox_accumulate(const Eigen::MatrixXd& design, const Eigen::VectorXd& eta, Objective& out) const;

  LossKind kind_;
  Outcomes outcomes_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd response_;  // y for squared/binomial, event for cox
  // Cox risk-set layout: subjects by decreasing time, grouped by tied time.
  std::vector<std::size_t> order_;
  std::vector<std::size_t> group_end_;
};

/// Per-biomarker interaction design: columns T, T*X_k, T*Z_1..T*Z_q, so that
/// eta_i = T_i (alpha + beta X_ik + Z_i' omega) for theta = (alpha, beta, omega).
Eigen::MatrixXd interaction_design(const Dataset& d, std::size_t k);

}  // namespace odpscreen
