#pragma once

#include "odpscreen/dataset.hpp"
#include "odpscreen/loss.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace odpscreen {

struct NewtonOptions {
  int max_iter = 100;
  int max_halvings = 30;
  double grad_tol = 1e-8;  // relative to 1 + |objective|
};

struct NewtonResult {
  Eigen::VectorXd theta;
  double objective = 0.0;
  Eigen::MatrixXd inverse_hessian;  // empty unless the Hessian was positive definite
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // value after each accepted step, starting at theta = 0
};

/// Minimises the loss over theta for eta = design * theta, starting at 0.
/// Newton steps with step-halving; stops when max|gradient| < grad_tol (1 + |f|).
NewtonResult newton_minimize(const LossProblem& problem, const Eigen::MatrixXd& design, const NewtonOptions& opts = {});

enum class FitStatus { converged, not_converged, unidentified };

struct BiomarkerFit {
  std::size_t k = 0;
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
  Eigen::VectorXd omega_hat;
  double s = std::numeric_limits<double>::infinity();  // variance of beta_hat
  FitStatus status = FitStatus::unidentified;
  int iterations = 0;
  double objective = 0.0;

  bool usable() const { return status == FitStatus::converged; }
  double se() const { return std::sqrt(s); }
};

/// Maximises the weighted synthetic likelihood for biomarker k.
/// s is the (beta, beta) entry of the inverse Hessian at the mode.
BiomarkerFit fit_single(const Dataset& d, const LossProblem& problem, std::size_t k, const NewtonOptions& opts = {});

/// Order-preserving parallel map of fit_single over all biomarkers.
std::vector<BiomarkerFit> fit_all(const Dataset& d, const LossProblem& problem, std::size_t workers,
                                  const NewtonOptions& opts = {});

enum class ProfileMethod { plugin, normal };
std::string to_string(ProfileMethod m);
ProfileMethod parse_profile_method(const std::string& s);

/// log PL_k at beta = 0 and at each knot.
struct ProfileTable {
  std::size_t k = 0;
  double log_pl_null = 0.0;
  std::vector<double> log_pl_knots;
  ProfileMethod method = ProfileMethod::plugin;
};

/// Nuisance parameters fixed at the joint mode; log PL(beta) = -loss(alpha_hat, beta, omega_hat).
ProfileTable profile_plugin(const BiomarkerFit& fit, const Dataset& d, const LossProblem& problem,
                            std::span<const double> knots);

/// log PL(beta) = log phi(beta_hat; beta, s).
ProfileTable profile_normal(const BiomarkerFit& fit, std::span<const double> knots);

/// Profiles every usable fit (unidentified or non-converged fits get no table).
/// Tables are returned in biomarker order.
std::vector<ProfileTable> profile_all(std::span<const BiomarkerFit> fits, const Dataset& d, const LossProblem& problem,
                                      ProfileMethod method, std::span<const double> knots, std::size_t workers);

}  // namespace odpscreen
