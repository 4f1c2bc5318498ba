#include "odpscreen/propensity.hpp"

#include "odpscreen/error.hpp"
#include "odpscreen/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace odpscreen {

WeightSet compute_weights(const Eigen::VectorXd& treatment, const Eigen::VectorXd& pi) {
  if (treatment.size() != pi.size()) throw ValidationError("treatment and propensity lengths differ");
  if (treatment.size() == 0) throw ValidationError("no subjects");
  const auto n = treatment.size();
  Eigen::VectorXd inv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(pi(i) > 0.0 && pi(i) < 1.0)) {
      throw ValidationError(fmt::format("propensity of subject {} is {}; must lie strictly inside (0,1)", i + 1, pi(i)));
    }
    const double t = treatment(i);
    const double denom = t * pi(i) + (1.0 - t) / 2.0;
    inv(i) = 1.0 / denom;
  }
  WeightSet ws;
  ws.pi = pi;
  ws.A = inv.mean();
  ws.w = inv / ws.A;
  return ws;
}

Eigen::VectorXd clip_propensity(Eigen::VectorXd pi) {
  return pi.cwiseMax(kPropensityLower).cwiseMin(kPropensityUpper);
}

std::size_t FeatureColumns::size() const {
  return static_cast<std::size_t>(X->cols() + (Z ? Z->cols() : 0));
}

Eigen::Ref<const Eigen::VectorXd> FeatureColumns::col(std::size_t j) const {
  const auto px = static_cast<std::size_t>(X->cols());
  if (j < px) return X->col(static_cast<Eigen::Index>(j));
  return Z->col(static_cast<Eigen::Index>(j - px));
}

namespace {

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double log1pexp(double eta) { return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

// Column statistics over the training rows.
struct Standardizer {
  std::vector<double> centers;
  std::vector<double> scales;  // 0 marks a frozen (constant) column
};

Standardizer standardize(const FeatureColumns& f, const Eigen::VectorXd& rows) {
  const double m = rows.sum();
  Standardizer s;
  const std::size_t P = f.size();
  s.centers.resize(P);
  s.scales.resize(P);
  for (std::size_t j = 0; j < P; ++j) {
    const auto x = f.col(j);
    const double c = rows.dot(x) / m;
    const double var = (rows.array() * (x.array() - c).square()).sum() / m;
    s.centers[j] = c;
    const double sd = std::sqrt(std::max(var, 0.0));
    s.scales[j] = sd > 1e-12 * (1.0 + std::abs(c)) ? sd : 0.0;
  }
  return s;
}

// g_j = (1/m) sum_i v_i xs_ij a_i for all j, where `va` already carries v_i.
Eigen::VectorXd standardized_scores(const FeatureColumns& f, const Standardizer& st, const Eigen::VectorXd& va,
                                    double m) {
  const std::size_t P = f.size();
  Eigen::VectorXd raw(static_cast<Eigen::Index>(P));
  const auto px = f.X->cols();
  raw.head(px).noalias() = f.X->transpose() * va;
  if (f.Z && f.Z->cols() > 0) raw.tail(f.Z->cols()).noalias() = f.Z->transpose() * va;
  const double total = va.sum();
  for (std::size_t j = 0; j < P; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    raw(jj) = st.scales[j] > 0.0 ? (raw(jj) - st.centers[j] * total) / (st.scales[j] * m) : 0.0;
  }
  return raw;
}

class LassoSolver {
 public:
  LassoSolver(const FeatureColumns& f, const Eigen::VectorXd& y, const Eigen::VectorXd& rows, const LassoOptions& opts)
      : f_(f), y_(y), v_(rows), opts_(opts), st_(standardize(f, rows)) {
    m_ = v_.sum();
    P_ = f_.size();
    beta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P_));
    in_work_.assign(P_, false);
    const double ybar = v_.dot(y_) / m_;
    if (!(ybar > 0.0 && ybar < 1.0)) throw ValidationError("lasso propensity: training rows contain a single arm");
    b0_ = std::log(ybar / (1.0 - ybar));
    eta_ = Eigen::VectorXd::Constant(y_.size(), b0_);
    null_dev_ = deviance();
    scores_ = gradient_scores();
  }

  const Standardizer& standardizer() const { return st_; }

  double lambda_max() const {
    double lm = 0.0;
    for (std::size_t j = 0; j < P_; ++j) lm = std::max(lm, std::abs(scores_(static_cast<Eigen::Index>(j))));
    return lm;
  }

  // Solves at `lambda` warm-started from the current state.
  void solve(double lambda, double prev_lambda) {
    for (std::size_t j = 0; j < P_; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (st_.scales[j] > 0.0 && (beta_(jj) != 0.0 || std::abs(scores_(jj)) >= 2.0 * lambda - prev_lambda)) {
        add_to_work(j);
      }
    }
    for (int round = 0; round < 1000; ++round) {
      solve_working_set(lambda);
      scores_ = gradient_scores();
      bool added = false;
      for (std::size_t j = 0; j < P_; ++j) {
        if (!in_work_[j] && st_.scales[j] > 0.0 && std::abs(scores_(static_cast<Eigen::Index>(j))) > lambda + opts_.kkt_tol) {
          add_to_work(j);
          added = true;
        }
      }
      if (!added) return;
    }
    throw NumericalError(fmt::format("lasso propensity: working set did not stabilise at penalty {:.6g}", lambda));
  }

  double dev_ratio() const { return null_dev_ > 0.0 ? 1.0 - deviance() / null_dev_ : 0.0; }
  double intercept() const { return b0_; }

  std::vector<std::pair<std::size_t, double>> sparse_beta() const {
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t j : work_) {
      const double b = beta_(static_cast<Eigen::Index>(j));
      if (b != 0.0) out.emplace_back(j, b);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  void add_to_work(std::size_t j) {
    if (in_work_[j]) return;
    in_work_[j] = true;
    work_.push_back(j);
  }

  double xs(std::size_t j, Eigen::Index i) const {
    return (f_.col(j)(i) - st_.centers[j]) / st_.scales[j];
  }

  double deviance() const {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      if (v_(i) != 0.0) dev += v_(i) * (log1pexp(eta_(i)) - y_(i) * eta_(i));
    }
    return 2.0 * dev;
  }

  double penalized_objective(const Eigen::VectorXd& eta, const Eigen::VectorXd& beta, double lambda) const {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      if (v_(i) != 0.0) loss += v_(i) * (log1pexp(eta(i)) - y_(i) * eta(i));
    }
    return loss / m_ + lambda * beta.lpNorm<1>();
  }

  Eigen::VectorXd residual() const {
    Eigen::VectorXd r(y_.size());
    for (Eigen::Index i = 0; i < y_.size(); ++i) r(i) = v_(i) * (y_(i) - sigmoid(eta_(i)));
    return r;
  }

  Eigen::VectorXd gradient_scores() const { return standardized_scores(f_, st_, residual(), m_); }

  double working_kkt(double lambda) const {
    const Eigen::VectorXd r = residual();
    double worst = std::abs(r.sum()) / m_;
    const double total = r.sum();
    for (std::size_t j : work_) {
      const auto x = f_.col(j);
      const double g = (x.dot(r) - st_.centers[j] * total) / (st_.scales[j] * m_);
      const double b = beta_(static_cast<Eigen::Index>(j));
      const double viol = b != 0.0 ? std::abs(g - lambda * (b > 0.0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(g) - lambda);
      worst = std::max(worst, viol);
    }
    return worst;
  }

  void solve_working_set(double lambda) {
    const auto n = y_.size();
    const auto W = work_.size();
    for (int it = 0; it < opts_.max_newton; ++it) {
      if (working_kkt(lambda) < opts_.kkt_tol) return;

      // Quadratic model around the current point; q_i = v_i (y_i - p_i) - w_i * delta_eta_i.
      Eigen::VectorXd w(n), q(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double p = sigmoid(eta_(i));
        w(i) = v_(i) * std::max(p * (1.0 - p), 1e-10);
        q(i) = v_(i) * (y_(i) - p);
      }
      std::vector<double> hdiag(W);
      std::vector<Eigen::VectorXd> xcols(W);
      std::vector<Eigen::VectorXd> wx(W);
      for (std::size_t a = 0; a < W; ++a) {
        const std::size_t j = work_[a];
        xcols[a] = (f_.col(j).array() - st_.centers[j]) / st_.scales[j];
        wx[a] = (w.array() * xcols[a].array()).matrix();
        hdiag[a] = wx[a].dot(xcols[a]) / m_;
      }
      const double wsum = w.sum();
      Eigen::VectorXd trial(static_cast<Eigen::Index>(W));
      for (std::size_t a = 0; a < W; ++a) trial(static_cast<Eigen::Index>(a)) = beta_(static_cast<Eigen::Index>(work_[a]));
      double d0 = 0.0;

      // One coordinate pass over `members`; returns the largest scaled change.
      auto sweep = [&](const std::vector<std::size_t>& members) {
        const double step0 = q.sum() / wsum;
        d0 += step0;
        q -= step0 * w;
        double max_change = std::abs(step0) * std::sqrt(wsum / m_);
        for (std::size_t a : members) {
          const auto aa = static_cast<Eigen::Index>(a);
          if (hdiag[a] <= 0.0) continue;
          const double old = trial(aa);
          const double g = xcols[a].dot(q) / m_ + hdiag[a] * old;
          const double nb = soft_threshold(g, lambda) / hdiag[a];
          const double delta = nb - old;
          if (delta != 0.0) {
            trial(aa) = nb;
            q.noalias() -= delta * wx[a];
            max_change = std::max(max_change, std::abs(delta) * std::sqrt(hdiag[a]));
          }
        }
        return max_change;
      };
      std::vector<std::size_t> everyone(W);
      std::iota(everyone.begin(), everyone.end(), 0);
      std::vector<std::size_t> active;

      // Full passes alternate with passes over the non-zero coordinates only.
      bool inner_done = false;
      int sweeps = 0;
      while (sweeps < opts_.max_sweeps) {
        ++sweeps;
        if (sweep(everyone) < 1e-12) {
          inner_done = true;
          break;
        }
        active.clear();
        for (std::size_t a = 0; a < W; ++a) {
          if (trial(static_cast<Eigen::Index>(a)) != 0.0) active.push_back(a);
        }
        while (sweeps < opts_.max_sweeps) {
          ++sweeps;
          if (sweep(active) < 1e-12) break;
        }
      }
      if (!inner_done) {
        throw NumericalError(fmt::format("lasso propensity: coordinate descent did not converge at penalty {:.6g}", lambda));
      }

      // Line search on the penalised objective.
      Eigen::VectorXd dbeta(static_cast<Eigen::Index>(W));
      Eigen::VectorXd deta = Eigen::VectorXd::Constant(n, d0);
      for (std::size_t a = 0; a < W; ++a) {
        const auto aa = static_cast<Eigen::Index>(a);
        dbeta(aa) = trial(aa) - beta_(static_cast<Eigen::Index>(work_[a]));
        if (dbeta(aa) != 0.0) deta += dbeta(aa) * xcols[a];
      }
      const double f0 = penalized_objective(eta_, beta_, lambda);
      double t = 1.0;
      bool accepted = false;
      for (int h = 0; h < 40; ++h, t *= 0.5) {
        Eigen::VectorXd nbeta = beta_;
        for (std::size_t a = 0; a < W; ++a) {
          nbeta(static_cast<Eigen::Index>(work_[a])) += t * dbeta(static_cast<Eigen::Index>(a));
        }
        const Eigen::VectorXd neta = eta_ + t * deta;
        if (penalized_objective(neta, nbeta, lambda) <= f0 + 1e-15 * std::abs(f0)) {
          beta_ = std::move(nbeta);
          eta_ = neta;
          b0_ += t * d0;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    if (working_kkt(lambda) >= opts_.kkt_tol) {
      throw NumericalError(fmt::format("lasso propensity: proximal Newton did not converge at penalty {:.6g}", lambda));
    }
  }

  const FeatureColumns& f_;
  const Eigen::VectorXd& y_;
  const Eigen::VectorXd& v_;
  LassoOptions opts_;
  Standardizer st_;
  double m_ = 0.0;
  std::size_t P_ = 0;
  double b0_ = 0.0;
  Eigen::VectorXd beta_;
  Eigen::VectorXd eta_;
  Eigen::VectorXd scores_;
  std::vector<std::size_t> work_;
  std::vector<bool> in_work_;
  double null_dev_ = 0.0;
};

}  // namespace

Eigen::VectorXd LassoPath::predictor(const FeatureColumns& features, std::size_t step) const {
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(features.rows()), intercepts[step]);
  for (const auto& [j, b] : coefficients[step]) {
    eta += (b / scales[j]) * (features.col(j).array() - centers[j]).matrix();
  }
  return eta;
}

double lasso_lambda_max(const FeatureColumns& features, const Eigen::VectorXd& y, const Eigen::VectorXd& rows) {
  const double m = rows.sum();
  const double ybar = rows.dot(y) / m;
  const Standardizer st = standardize(features, rows);
  const Eigen::VectorXd r = (rows.array() * (y.array() - ybar)).matrix();
  return standardized_scores(features, st, r, m).cwiseAbs().maxCoeff();
}

LassoPath fit_lasso_path(const FeatureColumns& features, const Eigen::VectorXd& y, const Eigen::VectorXd& rows,
                         std::vector<double> lambdas, const LassoOptions& opts) {
  LassoSolver solver(features, y, rows, opts);
  LassoPath path;
  path.lambda_max = solver.lambda_max();
  if (lambdas.empty()) {
    const std::size_t G = std::max<std::size_t>(opts.grid_size, 1);
    for (std::size_t k = 0; k < G; ++k) {
      const double frac = G == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(G - 1);
      lambdas.push_back(path.lambda_max * std::pow(opts.min_ratio, frac));
    }
  }
  path.centers = solver.standardizer().centers;
  path.scales = solver.standardizer().scales;
  double prev = std::max(path.lambda_max, lambdas.front());
  for (double lambda : lambdas) {
    solver.solve(lambda, prev);
    prev = lambda;
    path.lambdas.push_back(lambda);
    path.intercepts.push_back(solver.intercept());
    path.coefficients.push_back(solver.sparse_beta());
    if (solver.dev_ratio() > opts.max_dev_ratio) break;
  }
  return path;
}

LassoCvResult estimate_propensity_lasso(const Dataset& d, const LassoPropensity& spec, std::uint64_t seed,
                                        std::size_t workers, const LassoOptions& base_opts) {
  const std::size_t n = d.n();
  if (spec.folds < 2) throw ValidationError("lasso propensity needs at least 2 folds");
  if (n < 2 * spec.folds) {
    throw ValidationError(fmt::format("lasso propensity: n={} is smaller than 2 x folds={}", n, spec.folds));
  }
  LassoOptions opts = base_opts;
  opts.grid_size = spec.grid_size;

  const FeatureColumns features{&d.X, &d.Z};
  const Eigen::VectorXd y = (d.treatment.array() > 0.0).cast<double>().matrix();
  const Eigen::VectorXd all = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  const LassoPath full = fit_lasso_path(features, y, all, {}, opts);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold_of[order[pos]] = pos % spec.folds;

  std::vector<LassoPath> paths(spec.folds);
  parallel_for(spec.folds, workers, [&](std::size_t f) {
    Eigen::VectorXd train(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) train(static_cast<Eigen::Index>(i)) = fold_of[i] == f ? 0.0 : 1.0;
    paths[f] = fit_lasso_path(features, y, train, full.lambdas, opts);
  });

  std::size_t steps = full.lambdas.size();
  for (const auto& p : paths) steps = std::min(steps, p.lambdas.size());

  LassoCvResult res;
  res.lambdas.assign(full.lambdas.begin(), full.lambdas.begin() + static_cast<std::ptrdiff_t>(steps));
  res.cv_deviance.assign(steps, 0.0);
  for (std::size_t f = 0; f < spec.folds; ++f) {
    for (std::size_t s = 0; s < steps; ++s) {
      const Eigen::VectorXd eta = paths[f].predictor(features, s);
      double dev = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (fold_of[i] != f) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        dev += 2.0 * (log1pexp(eta(ii)) - y(ii) * eta(ii));
      }
      res.cv_deviance[s] += dev;
    }
  }
  for (auto& v : res.cv_deviance) v /= static_cast<double>(n);

  res.selected = 0;
  for (std::size_t s = 1; s < steps; ++s) {
    if (res.cv_deviance[s] < res.cv_deviance[res.selected]) res.selected = s;
  }
  res.selected_lambda = res.lambdas[res.selected];
  res.selected_nonzero = full.nonzero(res.selected);
  res.intercept_only = res.selected_nonzero == 0;
  const Eigen::VectorXd eta = full.predictor(features, res.selected);
  Eigen::VectorXd pi(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < pi.size(); ++i) pi(i) = sigmoid(eta(i));
  res.pi = clip_propensity(std::move(pi));
  return res;
}

Eigen::VectorXd resolve_propensity(const Dataset& d, const PropensitySpec& spec, std::uint64_t seed,
                                   std::size_t workers, std::string* report) {
  const auto n = static_cast<Eigen::Index>(d.n());
  if (const auto* c = std::get_if<ConstantPropensity>(&spec)) {
    if (!(c->value > 0.0 && c->value < 1.0)) throw ValidationError("constant propensity must lie in (0,1)");
    if (report) *report = fmt::format("constant propensity {}", c->value);
    return Eigen::VectorXd::Constant(n, c->value);
  }
  if (const auto* s = std::get_if<SuppliedPropensity>(&spec)) {
    if (static_cast<Eigen::Index>(s->values.size()) != n) throw ValidationError("propensity column length differs from n");
    for (std::size_t i = 0; i < s->values.size(); ++i) {
      if (!(s->values[i] > 0.0 && s->values[i] < 1.0)) {
        throw ValidationError(fmt::format("row {}: supplied propensity {} outside (0,1)", i + 1, s->values[i]));
      }
    }
    if (report) *report = "supplied propensity column";
    return Eigen::Map<const Eigen::VectorXd>(s->values.data(), n);
  }
  const auto& lasso = std::get<LassoPropensity>(spec);
  auto res = estimate_propensity_lasso(d, lasso, seed, workers);
  if (report) {
    *report = fmt::format("lasso propensity: {} folds, lambda={:.6g} (step {} of {}), {} non-zero coefficients{}",
                          lasso.folds, res.selected_lambda, res.selected + 1, res.lambdas.size(),
                          res.selected_nonzero, res.intercept_only ? " [intercept-only model selected]" : "");
  }
  return res.pi;
}

}  // namespace odpscreen
