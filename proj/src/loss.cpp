#include "odpscreen/loss.hpp"

#include "odpscreen/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace odpscreen {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::squared: return "squared";
    case LossKind::binomial: return "binomial";
    case LossKind::cox: return "cox";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "squared") return LossKind::squared;
  if (s == "binomial") return LossKind::binomial;
  if (s == "cox") return LossKind::cox;
  throw ValidationError(fmt::format("unknown loss '{}'", s));
}

LossKind default_loss(const Outcomes& outcomes) {
  return is_survival(outcomes) ? LossKind::cox : LossKind::binomial;
}

namespace {

double log1pexp(double eta) { return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace

LossProblem::LossProblem(LossKind kind, Outcomes outcomes, Eigen::VectorXd weights)
    : kind_(kind), outcomes_(std::move(outcomes)), weights_(std::move(weights)) {
  const std::size_t n = outcome_count(outcomes_);
  if (static_cast<std::size_t>(weights_.size()) != n) throw ValidationError("weights length differs from outcomes");
  if (kind_ == LossKind::cox) {
    const auto* s = std::get_if<SurvivalOutcomes>(&outcomes_);
    if (!s) throw ValidationError("cox loss requires survival outcomes");
    response_ = Eigen::Map<const Eigen::VectorXd>(s->event.data(), static_cast<Eigen::Index>(n));
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return s->time[a] > s->time[b]; });
    for (std::size_t pos = 0; pos < n; ++pos) {
      if (pos + 1 == n || s->time[order_[pos + 1]] != s->time[order_[pos]]) group_end_.push_back(pos + 1);
    }
  } else {
    const auto* b = std::get_if<BinaryOutcomes>(&outcomes_);
    if (!b) throw ValidationError(fmt::format("{} loss requires binary (0/1) outcomes", to_string(kind_)));
    response_ = Eigen::Map<const Eigen::VectorXd>(b->y.data(), static_cast<Eigen::Index>(n));
  }
}

double LossProblem::value(const Eigen::VectorXd& eta) const {
  const auto n = weights_.size();
  double v = 0.0;
  switch (kind_) {
    case LossKind::squared:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = response_(i) - eta(i);
        v += weights_(i) * r * r;
      }
      return v;
    case LossKind::binomial:
      for (Eigen::Index i = 0; i < n; ++i) v += weights_(i) * (log1pexp(eta(i)) - response_(i) * eta(i));
      return v;
    case LossKind::cox: {
      const double shift = eta.maxCoeff();
      double s0 = 0.0;
      std::size_t begin = 0;
      for (std::size_t end : group_end_) {
        for (std::size_t pos = begin; pos < end; ++pos) {
          const auto i = static_cast<Eigen::Index>(order_[pos]);
          s0 += weights_(i) * std::exp(eta(i) - shift);
        }
        const double log_s0 = std::log(s0) + shift;
        for (std::size_t pos = begin; pos < end; ++pos) {
          const auto i = static_cast<Eigen::Index>(order_[pos]);
          if (response_(i) != 0.0) v -= weights_(i) * (eta(i) - log_s0);
        }
        begin = end;
      }
      return v;
    }
  }
  return v;
}

void LossProblem::cox_accumulate(const Eigen::MatrixXd& design, const Eigen::VectorXd& eta, Objective& out) const {
  const auto dim = design.cols();
  const double shift = eta.maxCoeff();
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(dim, dim);
  std::size_t begin = 0;
  for (std::size_t end : group_end_) {
    for (std::size_t pos = begin; pos < end; ++pos) {
      const auto i = static_cast<Eigen::Index>(order_[pos]);
      const double r = weights_(i) * std::exp(eta(i) - shift);
      const auto x = design.row(i).transpose();
      s0 += r;
      s1.noalias() += r * x;
      s2.selfadjointView<Eigen::Lower>().rankUpdate(x, r);
    }
    const double log_s0 = std::log(s0) + shift;
    const Eigen::VectorXd mean = s1 / s0;
    Eigen::MatrixXd cov = s2 / s0;
    cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
    cov.noalias() -= mean * mean.transpose();
    for (std::size_t pos = begin; pos < end; ++pos) {
      const auto i = static_cast<Eigen::Index>(order_[pos]);
      if (response_(i) == 0.0) continue;
      const double wi = weights_(i);
      out.value -= wi * (eta(i) - log_s0);
      out.gradient.noalias() -= wi * (design.row(i).transpose() - mean);
      out.hessian.noalias() += wi * cov;
    }
    begin = end;
  }
}

Objective LossProblem::evaluate(const Eigen::MatrixXd& design, const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd eta = design * theta;
  const auto n = weights_.size();
  const auto dim = design.cols();
  Objective out;
  out.gradient = Eigen::VectorXd::Zero(dim);
  out.hessian = Eigen::MatrixXd::Zero(dim, dim);

  if (kind_ == LossKind::cox) {
    cox_accumulate(design, eta, out);
  } else {
    // Per-subject first and second derivatives of M in eta.
    Eigen::VectorXd d1(n), d2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = weights_(i);
      if (kind_ == LossKind::squared) {
        const double r = response_(i) - eta(i);
        out.value += w * r * r;
        d1(i) = -2.0 * w * r;
        d2(i) = 2.0 * w;
      } else {
        const double p = sigmoid(eta(i));
        out.value += w * (log1pexp(eta(i)) - response_(i) * eta(i));
        d1(i) = w * (p - response_(i));
        d2(i) = w * p * (1.0 - p);
      }
    }
    out.gradient.noalias() = design.transpose() * d1;
    out.hessian.noalias() = design.transpose() * d2.asDiagonal() * design;
  }
  if (!std::isfinite(out.value) || !out.gradient.allFinite() || !out.hessian.allFinite()) {
    throw NumericalError(fmt::format("{} loss produced a non-finite value or derivative", to_string(kind_)));
  }
  return out;
}

Eigen::MatrixXd interaction_design(const Dataset& d, std::size_t k) {
  const auto n = static_cast<Eigen::Index>(d.n());
  const auto q = d.Z.cols();
  Eigen::MatrixXd D(n, q + 2);
  D.col(0) = d.treatment;
  D.col(1) = d.treatment.cwiseProduct(d.X.col(static_cast<Eigen::Index>(k)));
  for (Eigen::Index j = 0; j < q; ++j) D.col(j + 2) = d.treatment.cwiseProduct(d.Z.col(j));
  return D;
}

}  // namespace odpscreen
