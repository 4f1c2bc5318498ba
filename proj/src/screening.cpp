#include "odpscreen/screening.hpp"

#include "odpscreen/error.hpp"
#include "odpscreen/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace odpscreen {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// log sum_l p_l PL(a_l), max-subtracted.
double log_mixture(const ProfileTable& t, const MixturePrior& prior) {
  double m = kNegInf;
  for (std::size_t l = 0; l < t.log_pl_knots.size(); ++l) {
    if (prior.p[l] > 0.0) m = std::max(m, t.log_pl_knots[l]);
  }
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t l = 0; l < t.log_pl_knots.size(); ++l) {
    if (prior.p[l] > 0.0) s += prior.p[l] * std::exp(t.log_pl_knots[l] - m);
  }
  return m + std::log(s);
}

}  // namespace

namespace {

// log of pi PL(0) and (1 - pi) sum_l p_l PL(a_l), and of their sum.
struct LogTerms {
  double null;
  double nonnull;
  double total;
};

LogTerms log_terms(const ProfileTable& t, const MixturePrior& prior) {
  const double a = prior.pi > 0.0 ? std::log(prior.pi) + t.log_pl_null : kNegInf;
  const double b = prior.pi < 1.0 ? std::log1p(-prior.pi) + log_mixture(t, prior) : kNegInf;
  return {a, b, log_add(a, b)};
}

}  // namespace

double log_posterior_null(const ProfileTable& table, const MixturePrior& prior) {
  if (prior.pi <= 0.0) return kNegInf;
  if (prior.pi >= 1.0) return 0.0;
  const auto t = log_terms(table, prior);
  return t.null - t.total;
}

double log_posterior_nonnull(const ProfileTable& table, const MixturePrior& prior) {
  if (prior.pi <= 0.0) return 0.0;
  if (prior.pi >= 1.0) return kNegInf;
  const auto t = log_terms(table, prior);
  return t.nonnull - t.total;
}

double posterior_nonnull(const ProfileTable& table, const MixturePrior& prior) {
  return std::exp(log_posterior_nonnull(table, prior));
}

double posterior_null(const ProfileTable& table, const MixturePrior& prior) {
  return std::exp(log_posterior_null(table, prior));
}

double log_ods(const ProfileTable& table, const MixturePrior& prior) {
  return log_mixture(table, prior) - table.log_pl_null;
}

double ods(const ProfileTable& table, const MixturePrior& prior) { return std::exp(log_ods(table, prior)); }

void apply_odp(std::span<ScreeningRow> rows, std::span<const ProfileTable> tables, const MixturePrior& prior) {
  std::vector<const ProfileTable*> by_k(rows.size(), nullptr);
  for (const auto& t : tables) {
    if (t.k < by_k.size()) by_k[t.k] = &t;
  }
  for (auto& row : rows) {
    const ProfileTable* t = row.k < by_k.size() ? by_k[row.k] : nullptr;
    if (!t || !row.usable) {
      row.log_ods = 0.0;
      row.post_null = prior.pi;
      row.log_post_null = prior.pi > 0.0 ? std::log(prior.pi) : kNegInf;
      row.log_post_nonnull = prior.pi < 1.0 ? std::log1p(-prior.pi) : kNegInf;
      continue;
    }
    row.log_ods = log_ods(*t, prior);
    row.log_post_null = log_posterior_null(*t, prior);
    row.log_post_nonnull = log_posterior_nonnull(*t, prior);
    row.post_null = std::exp(row.log_post_null);
  }
}

SelectionSet select_at_fdr(std::span<const ScreeningRow> rows, double level) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].usable) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rows[a].log_ods != rows[b].log_ods) return rows[a].log_ods > rows[b].log_ods;
    if (rows[a].post_null != rows[b].post_null) return rows[a].post_null < rows[b].post_null;
    return rows[a].k < rows[b].k;
  });

  // Running means are compared with a 1e-12 relative slack so that sums
  // like 0.01 + 0.04 + 0.10 over 3 still meet a 0.05 target.
  double sum = 0.0;
  std::size_t best = 0;
  double best_sum = 0.0;
  for (std::size_t m = 1; m <= order.size(); ++m) {
    sum += rows[order[m - 1]].post_null;
    if (sum / static_cast<double>(m) <= level * (1.0 + 1e-12)) {
      best = m;
      best_sum = sum;
    }
  }
  SelectionSet set;
  set.level = level;
  for (std::size_t i = 0; i < best; ++i) set.members.push_back(rows[order[i]].k);
  if (best > 0) {
    set.lambda = rows[order[best - 1]].ods();
    set.fdr = best_sum / static_cast<double>(best);
  }
  return set;
}

ArmFit fit_arm(const Dataset& d, std::size_t k, bool treated_arm, const NewtonOptions& opts) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.n(); ++i) {
    if ((d.treatment(static_cast<Eigen::Index>(i)) > 0.0) == treated_arm) rows.push_back(i);
  }
  const bool survival = is_survival(d.outcomes);
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto q = survival ? Eigen::Index{0} : d.Z.cols();
  const Eigen::Index dim = survival ? 1 : q + 2;
  ArmFit out;
  if (m < dim + 1) return out;

  Eigen::MatrixXd design(m, dim);
  const auto kk = static_cast<Eigen::Index>(k);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
    if (survival) {
      design(r, 0) = d.X(i, kk);
    } else {
      design(r, 0) = 1.0;
      design(r, 1) = d.X(i, kk);
      for (Eigen::Index j = 0; j < q; ++j) design(r, j + 2) = d.Z(i, j);
    }
  }
  const Eigen::Index slot = survival ? 0 : 1;
  if (design.col(slot).maxCoeff() == design.col(slot).minCoeff()) return out;

  try {
    const LossProblem problem(survival ? LossKind::cox : LossKind::binomial, subset_outcomes(d.outcomes, rows),
                              Eigen::VectorXd::Ones(m));
    const auto nr = newton_minimize(problem, design, opts);
    if (!nr.converged) return out;
    const double var = nr.inverse_hessian(slot, slot);
    if (!(var > 0.0) || !std::isfinite(var)) return out;
    out.beta = nr.theta(slot);
    out.se = std::sqrt(var);
    out.ok = true;
  } catch (const NumericalError&) {
  }
  return out;
}

std::vector<CompetitorStat> competitor_stats(const Dataset& d, std::span<const BiomarkerFit> fits, std::size_t workers,
                                             const NewtonOptions& opts) {
  std::vector<CompetitorStat> out(fits.size());
  parallel_for(fits.size(), workers, [&](std::size_t idx) {
    const auto& fit = fits[idx];
    auto& st = out[idx];
    if (fit.usable()) st.t_stat = fit.beta_hat / fit.se();
    const auto treated = fit_arm(d, fit.k, true, opts);
    const auto control = fit_arm(d, fit.k, false, opts);
    if (treated.ok && control.ok) {
      st.beta_treated = treated.beta;
      st.beta_control = control.beta;
      st.se_treated = treated.se;
      st.se_control = control.se;
      st.s_stat = (treated.beta - control.beta) / std::sqrt(treated.se * treated.se + control.se * control.se);
    } else {
      st.s_flag = true;
    }
  });
  return out;
}

QValues qvalues(std::span<const double> p_values) {
  QValues out;
  const std::size_t m = p_values.size();
  out.p_values.assign(p_values.begin(), p_values.end());
  out.q_values.assign(m, 1.0);
  if (m == 0) return out;
  const double md = static_cast<double>(m);
  const auto above = std::count_if(p_values.begin(), p_values.end(), [](double p) { return p > 0.5; });
  out.pi0 = std::clamp(static_cast<double>(above) / (0.5 * md), 1.0 / md, 1.0);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const std::size_t i = order[r];
    const double q = out.pi0 * md * p_values[i] / static_cast<double>(r + 1);
    running = std::min(running, q);
    out.q_values[i] = running;
  }
  return out;
}

QValues qvalues_from_stats(std::span<const double> stats) {
  std::vector<double> p(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    p[i] = std::isfinite(stats[i]) ? std::erfc(std::abs(stats[i]) / std::numbers::sqrt2) : (std::isnan(stats[i]) ? 1.0 : 0.0);
  }
  return qvalues(p);
}

std::vector<std::size_t> select_by_q(std::span<const double> q_values, double level) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < q_values.size(); ++i) {
    if (q_values[i] <= level) out.push_back(i);
  }
  return out;
}

}  // namespace odpscreen
