#pragma once

#include "odpscreen/biomarker_fit.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace odpscreen {

/// Equally spaced knots a_l = lower + (l-1)(upper-lower)/(L-1).
struct KnotGrid {
  std::vector<double> a;
  double lower = 0.0;
  double upper = 0.0;

  std::size_t size() const { return a.size(); }
};

/// Knots spanning [min, max] of the finite values in beta_hats.
/// Throws ValidationError for L < 2 or a degenerate range.
KnotGrid select_knots(std::span<const double> beta_hats, std::size_t L);

/// Same, restricted to usable fits.
KnotGrid select_knots(std::span<const BiomarkerFit> fits, std::size_t L);

/// Two-groups prior: point mass `pi` at zero, and (1 - pi) spread over the
/// knot grid with masses p.
struct MixturePrior {
  double pi = 0.5;
  std::vector<double> p;
  KnotGrid grid;
};

MixturePrior uniform_prior(const KnotGrid& grid, double pi = 0.5);

enum class MStep {
  weighted,  // p_l proportional to sum_k (1 - xi_k) eta_kl
  appendix,  // p_l = mean_k eta_kl
};
std::string to_string(MStep m);
MStep parse_mstep(const std::string& s);

struct EmOptions {
  double tol = 1e-8;  // relative change of the marginal log-likelihood
  int max_iter = 5000;
  MStep mstep = MStep::weighted;
  std::size_t workers = 1;
};

struct EmTrace {
  std::vector<double> loglik;  // at the parameters entering each iteration
  std::vector<double> pi;
  std::vector<double> xi;      // posterior null responsibility per table
  Eigen::MatrixXd eta;         // tables x L, knot responsibility given non-null
  int iterations = 0;
  bool converged = false;
  bool boundary_init = false;
};

struct EmResult {
  MixturePrior prior;
  EmTrace trace;
};

/// Sum over tables of log[pi PL_k(0) + (1-pi) sum_l p_l PL_k(a_l)].
double marginal_loglik(std::span<const ProfileTable> tables, const MixturePrior& prior);

/// Maximises the marginal likelihood over (pi, p) by EM, starting at `init`.
///
/// An interior pi is kept within [1e-12, 1 - 1e-12] between iterations; an
/// init exactly at 0 or 1 is a fixed point and is reported via boundary_init.
/// Throws NumericalError if a responsibility becomes NaN.
EmResult em_fit(std::span<const ProfileTable> tables, const MixturePrior& init, const EmOptions& opts = {});

}  // namespace odpscreen
