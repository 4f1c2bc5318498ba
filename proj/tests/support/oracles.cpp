#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>
#include <set>

namespace oracle {

double squared_loss(std::span<const double> y, const Eigen::VectorXd& w, const Eigen::VectorXd& eta) {
  long double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double r = static_cast<long double>(y[i]) - eta(static_cast<Eigen::Index>(i));
    s += w(static_cast<Eigen::Index>(i)) * r * r;
  }
  return static_cast<double>(s);
}

double binomial_loss(std::span<const double> y, const Eigen::VectorXd& w, const Eigen::VectorXd& eta) {
  long double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double e = eta(static_cast<Eigen::Index>(i));
    // log(1 + e^eta) written two ways to stay finite
    const long double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    s += w(static_cast<Eigen::Index>(i)) * (softplus - y[i] * e);
  }
  return static_cast<double>(s);
}

double cox_loss_bruteforce(std::span<const double> time, std::span<const double> event, const Eigen::VectorXd& w,
                           const Eigen::VectorXd& eta) {
  const std::size_t n = time.size();
  long double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (event[i] == 0.0) continue;
    long double risk = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (time[j] >= time[i]) risk += w(static_cast<Eigen::Index>(j)) * std::exp(static_cast<long double>(eta(static_cast<Eigen::Index>(j))));
    }
    total -= w(static_cast<Eigen::Index>(i)) * (eta(static_cast<Eigen::Index>(i)) - std::log(risk));
  }
  return static_cast<double>(total);
}

Eigen::VectorXd interaction_eta(const odpscreen::Dataset& d, std::size_t k, const Eigen::VectorXd& theta) {
  Eigen::VectorXd eta(static_cast<Eigen::Index>(d.n()));
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    double v = theta(0) + theta(1) * d.X(i, static_cast<Eigen::Index>(k));
    for (Eigen::Index j = 0; j < d.Z.cols(); ++j) v += d.Z(i, j) * theta(2 + j);
    eta(i) = d.treatment(i) * v;
  }
  return eta;
}

namespace {

struct Simplex {
  std::vector<Eigen::VectorXd> x;
  std::vector<double> f;
};

// One Nelder-Mead descent from an axis-aligned simplex of the given size.
void nm_descent(const Fn& fn, Simplex& s, double ftol, int& evals, int max_eval) {
  const std::size_t m = s.x.size();
  const std::size_t dim = m - 1;
  std::vector<std::size_t> idx(m);
  while (evals < max_eval) {
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s.f[a] < s.f[b]; });
    const std::size_t best = idx.front(), worst = idx.back(), second = idx[m - 2];
    double size = 0;
    for (std::size_t i = 0; i < m; ++i) size = std::max(size, (s.x[i] - s.x[best]).cwiseAbs().maxCoeff());
    const double spread = s.f[worst] - s.f[best];
    if (spread <= ftol * (1.0 + std::abs(s.f[best])) && size < 1e-10) return;
    if (size < 1e-13) return;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < m; ++i)
      if (i != worst) centroid += s.x[i];
    centroid /= static_cast<double>(dim);

    auto eval = [&](const Eigen::VectorXd& p) {
      ++evals;
      const double v = fn(p);
      return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    const Eigen::VectorXd xr = centroid + (centroid - s.x[worst]);
    const double fr = eval(xr);
    if (fr < s.f[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - s.x[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        s.x[worst] = xe, s.f[worst] = fe;
      } else {
        s.x[worst] = xr, s.f[worst] = fr;
      }
      continue;
    }
    if (fr < s.f[second]) {
      s.x[worst] = xr, s.f[worst] = fr;
      continue;
    }
    const bool outside = fr < s.f[worst];
    const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                       : Eigen::VectorXd(centroid + 0.5 * (s.x[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : s.f[worst])) {
      s.x[worst] = xc, s.f[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (i == best) continue;
      s.x[i] = s.x[best] + 0.5 * (s.x[i] - s.x[best]);
      s.f[i] = eval(s.x[i]);
    }
  }
}

}  // namespace

NelderMeadResult nelder_mead(const Fn& f, Eigen::VectorXd x0, double step, double ftol, int max_eval) {
  const auto dim = static_cast<std::size_t>(x0.size());
  NelderMeadResult res;
  res.x = x0;
  res.f = f(x0);
  res.evaluations = 1;
  for (int restart = 0; restart < 12 && res.evaluations < max_eval; ++restart) {
    Simplex s;
    s.x.push_back(res.x);
    s.f.push_back(res.f);
    for (std::size_t j = 0; j < dim; ++j) {
      Eigen::VectorXd v = res.x;
      v(static_cast<Eigen::Index>(j)) += step;
      s.x.push_back(v);
      s.f.push_back(f(v));
      ++res.evaluations;
    }
    nm_descent(f, s, ftol, res.evaluations, max_eval);
    const auto it = std::min_element(s.f.begin(), s.f.end());
    const double improvement = res.f - *it;
    res.x = s.x[static_cast<std::size_t>(it - s.f.begin())];
    res.f = *it;
    if (restart >= 2 && improvement <= 1e-15 * (1.0 + std::abs(res.f))) break;
    step = std::max(step * 0.1, 1e-4);
  }
  return res;
}

Eigen::VectorXd central_gradient(const Fn& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd up = x, dn = x;
    up(j) += h;
    dn(j) -= h;
    g(j) = (f(up) - f(dn)) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd central_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g,
                                 const Eigen::VectorXd& x, double h) {
  Eigen::MatrixXd J(x.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd up = x, dn = x;
    up(j) += h;
    dn(j) -= h;
    J.col(j) = (g(up) - g(dn)) / (2.0 * h);
  }
  return 0.5 * (J + J.transpose());
}

double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

Eigen::MatrixXd normal_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd) {
  std::normal_distribution<double> N(0.0, sd);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = N(rng);
  return m;
}

namespace {

Eigen::VectorXd random_arms(std::size_t n, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  Eigen::VectorXd t(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = coin(rng) ? 1.0 : -1.0;
  t(0) = 1.0;
  t(1) = -1.0;
  return t;
}

Eigen::VectorXd random_index(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const Eigen::VectorXd& T,
                             double signal) {
  Eigen::VectorXd eta = 0.3 * X.col(0);
  eta += T.cwiseProduct(signal * X.col(0) + (Z.cols() > 0 ? Eigen::VectorXd(0.2 * Z.col(0)) : Eigen::VectorXd::Zero(T.size())));
  return eta;
}

}  // namespace

odpscreen::Dataset random_binary(std::size_t n, std::size_t p, std::size_t q, Rng& rng, double signal) {
  Eigen::MatrixXd X = normal_matrix(n, p, rng);
  Eigen::MatrixXd Z = normal_matrix(n, q, rng);
  Eigen::VectorXd T = random_arms(n, rng);
  const Eigen::VectorXd eta = random_index(X, Z, T, signal);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  odpscreen::BinaryOutcomes out;
  for (Eigen::Index i = 0; i < eta.size(); ++i) out.y.push_back(U(rng) < 1.0 / (1.0 + std::exp(-eta(i))) ? 1.0 : 0.0);
  return odpscreen::make_dataset(out, T, X, Z);
}

odpscreen::Dataset random_survival(std::size_t n, std::size_t p, std::size_t q, Rng& rng, double signal) {
  Eigen::MatrixXd X = normal_matrix(n, p, rng);
  Eigen::MatrixXd Z = normal_matrix(n, q, rng);
  Eigen::VectorXd T = random_arms(n, rng);
  const Eigen::VectorXd eta = random_index(X, Z, T, signal);
  std::exponential_distribution<double> E(1.0);
  std::uniform_real_distribution<double> C(0.5, 3.0);
  odpscreen::SurvivalOutcomes out;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double t = E(rng) * std::exp(-eta(i));
    const double c = C(rng);
    out.time.push_back(std::min(t, c));
    out.event.push_back(t <= c ? 1.0 : 0.0);
  }
  return odpscreen::make_dataset(out, T, X, Z);
}

std::vector<odpscreen::ProfileTable> random_tables(std::size_t p, std::size_t L, Rng& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<double> knots(L);
  for (std::size_t l = 0; l < L; ++l) knots[l] = -1.0 + 2.0 * static_cast<double>(l) / static_cast<double>(L - 1);
  std::vector<odpscreen::ProfileTable> tables(p);
  for (std::size_t k = 0; k < p; ++k) {
    const double s = 0.01 + 0.09 * U(rng);
    const double truth = U(rng) < 0.7 ? 0.0 : knots[static_cast<std::size_t>(U(rng) * static_cast<double>(L)) % L];
    const double bhat = truth + std::sqrt(s) * N(rng);
    const double offset = -400.0 * U(rng);
    auto& t = tables[k];
    t.k = k;
    t.log_pl_null = offset - bhat * bhat / (2 * s);
    for (double a : knots) t.log_pl_knots.push_back(offset - (bhat - a) * (bhat - a) / (2 * s));
  }
  return tables;
}

InvariantReport screening_invariants(std::span<const odpscreen::ScreeningRow> rows, double pi,
                                     std::span<const odpscreen::SelectionSet> sets) {
  InvariantReport rep;
  if (pi > 0.0 && pi < 1.0) {
    const double log_odds = std::log1p(-pi) - std::log(pi);
    for (const auto& r : rows) {
      const double lhs = r.log_ods + log_odds;
      const double rhs = r.log_post_nonnull - r.log_post_null;
      const double err = std::abs(lhs - rhs);
      ++rep.rows_checked;
      if (!(err <= rep.worst_identity)) rep.worst_identity = std::isfinite(err) ? std::max(rep.worst_identity, err) : err;
      if (!(err < 1e-8)) {
        if (rep.identity_ok) rep.detail += fmt::format("identity off by {:.3g} at biomarker {}; ", err, r.k + 1);
        rep.identity_ok = false;
      }
    }
  }

  std::vector<const odpscreen::SelectionSet*> sorted;
  for (const auto& s : sets) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](auto a, auto b) { return a->level < b->level; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& s = *sorted[i];
    long double sum = 0;
    for (auto m : s.members) sum += rows[m].post_null;
    const double mean = s.members.empty() ? 0.0 : static_cast<double>(sum / s.members.size());
    if (std::abs(mean - s.fdr) > 1e-12) {
      rep.fdr_is_mean = false;
      rep.detail += fmt::format("fdr {} != mean post_null {} at level {}; ", s.fdr, mean, s.level);
    }
    if (s.fdr > s.level + 1e-12) {
      rep.fdr_bounded = false;
      rep.detail += fmt::format("fdr {} above level {}; ", s.fdr, s.level);
    }
    if (i > 0) {
      const std::set<std::size_t> bigger(s.members.begin(), s.members.end());
      for (auto m : sorted[i - 1]->members) {
        if (!bigger.contains(m)) {
          rep.nested = false;
          rep.detail += fmt::format("level {} drops biomarker {}; ", s.level, m + 1);
          break;
        }
      }
    }
  }
  return rep;
}

}  // namespace oracle
