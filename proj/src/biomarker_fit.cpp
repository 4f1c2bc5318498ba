#include "odpscreen/biomarker_fit.hpp"

#include "odpscreen/error.hpp"
#include "odpscreen/parallel.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numbers>

namespace odpscreen {

std::string to_string(ProfileMethod m) { return m == ProfileMethod::plugin ? "plugin" : "normal"; }

ProfileMethod parse_profile_method(const std::string& s) {
  if (s == "plugin") return ProfileMethod::plugin;
  if (s == "normal") return ProfileMethod::normal;
  throw ValidationError(fmt::format("unknown profile method '{}'", s));
}

NewtonResult newton_minimize(const LossProblem& problem, const Eigen::MatrixXd& design, const NewtonOptions& opts) {
  NewtonResult res;
  res.theta = Eigen::VectorXd::Zero(design.cols());
  Objective obj = problem.evaluate(design, res.theta);
  res.objective_trace.push_back(obj.value);

  auto small_gradient = [&](const Objective& o) {
    return o.gradient.cwiseAbs().maxCoeff() < opts.grad_tol * (1.0 + std::abs(o.value));
  };

  for (int it = 0; it <= opts.max_iter; ++it) {
    if (small_gradient(obj)) {
      res.converged = true;
      break;
    }
    if (it == opts.max_iter) break;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(obj.hessian);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    const Eigen::VectorXd step = ldlt.solve(-obj.gradient);
    if (!step.allFinite()) break;

    // Near the optimum the full step can raise the objective by roundoff.
    const double slack = 1e-13 * (1.0 + std::abs(obj.value));
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, t *= 0.5) {
      const Eigen::VectorXd cand = res.theta + t * step;
      const double v = problem.value(design * cand);
      if (std::isfinite(v) && v <= obj.value + slack) {
        res.theta = cand;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    obj = problem.evaluate(design, res.theta);
    res.objective_trace.push_back(obj.value);
    res.iterations = it + 1;
  }

  res.objective = obj.value;
  if (res.converged) {
    const Eigen::LLT<Eigen::MatrixXd> llt(obj.hessian);
    if (llt.info() == Eigen::Success) {
      res.inverse_hessian = llt.solve(Eigen::MatrixXd::Identity(design.cols(), design.cols()));
      if (!res.inverse_hessian.allFinite()) res.inverse_hessian.resize(0, 0);
    }
    if (res.inverse_hessian.size() == 0) res.converged = false;
  }
  return res;
}

BiomarkerFit fit_single(const Dataset& d, const LossProblem& problem, std::size_t k, const NewtonOptions& opts) {
  BiomarkerFit fit;
  fit.k = k;
  fit.omega_hat = Eigen::VectorXd::Zero(d.Z.cols());
  if (is_constant_column(d, k)) return fit;

  const Eigen::MatrixXd design = interaction_design(d, k);
  NewtonResult nr;
  try {
    nr = newton_minimize(problem, design, opts);
  } catch (const NumericalError&) {
    fit.status = FitStatus::not_converged;
    return fit;
  }
  fit.iterations = nr.iterations;
  fit.objective = nr.objective;
  fit.alpha_hat = nr.theta(0);
  fit.beta_hat = nr.theta(1);
  fit.omega_hat = nr.theta.tail(d.Z.cols());
  if (nr.converged && nr.inverse_hessian(1, 1) > 0.0) {
    fit.status = FitStatus::converged;
    fit.s = nr.inverse_hessian(1, 1);
  } else {
    fit.status = FitStatus::not_converged;
  }
  return fit;
}

std::vector<BiomarkerFit> fit_all(const Dataset& d, const LossProblem& problem, std::size_t workers,
                                  const NewtonOptions& opts) {
  std::vector<BiomarkerFit> fits(d.p());
  parallel_for(d.p(), workers, [&](std::size_t k) { fits[k] = fit_single(d, problem, k, opts); });
  return fits;
}

ProfileTable profile_plugin(const BiomarkerFit& fit, const Dataset& d, const LossProblem& problem,
                            std::span<const double> knots) {
  if (!fit.usable()) throw ValidationError(fmt::format("biomarker {} has no converged fit to profile", fit.k + 1));
  const auto k = static_cast<Eigen::Index>(fit.k);
  Eigen::VectorXd base = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d.n()), fit.alpha_hat);
  if (d.q() > 0) base.noalias() += d.Z * fit.omega_hat;
  base = base.cwiseProduct(d.treatment);
  const Eigen::VectorXd slope = d.treatment.cwiseProduct(d.X.col(k));

  ProfileTable t;
  t.k = fit.k;
  t.method = ProfileMethod::plugin;
  t.log_pl_null = -problem.value(base);
  t.log_pl_knots.reserve(knots.size());
  Eigen::VectorXd eta(base.size());
  for (double a : knots) {
    eta = base + a * slope;
    t.log_pl_knots.push_back(-problem.value(eta));
  }
  return t;
}

ProfileTable profile_normal(const BiomarkerFit& fit, std::span<const double> knots) {
  if (!std::isfinite(fit.s) || !(fit.s > 0.0)) {
    throw ValidationError(fmt::format("biomarker {} has no finite variance for the normal approximation", fit.k + 1));
  }
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * fit.s);
  auto logpdf = [&](double beta) {
    const double r = fit.beta_hat - beta;
    return norm - r * r / (2.0 * fit.s);
  };
  ProfileTable t;
  t.k = fit.k;
  t.method = ProfileMethod::normal;
  t.log_pl_null = logpdf(0.0);
  t.log_pl_knots.reserve(knots.size());
  for (double a : knots) t.log_pl_knots.push_back(logpdf(a));
  return t;
}

std::vector<ProfileTable> profile_all(std::span<const BiomarkerFit> fits, const Dataset& d, const LossProblem& problem,
                                      ProfileMethod method, std::span<const double> knots, std::size_t workers) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    if (fits[i].usable()) usable.push_back(i);
  }
  std::vector<ProfileTable> tables(usable.size());
  parallel_for(usable.size(), workers, [&](std::size_t idx) {
    const auto& fit = fits[usable[idx]];
    tables[idx] = method == ProfileMethod::plugin ? profile_plugin(fit, d, problem, knots) : profile_normal(fit, knots);
  });
  return tables;
}

}  // namespace odpscreen
