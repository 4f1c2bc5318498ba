#pragma once

#include "odpscreen/dataset.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace odpscreen {

inline constexpr double kPropensityLower = 0.01;
inline constexpr double kPropensityUpper = 0.99;

struct ConstantPropensity {
  double value = 0.5;
};
struct SuppliedPropensity {
  std::vector<double> values;
};
struct LassoPropensity {
  std::size_t folds = 10;
  std::size_t grid_size = 100;
};
using PropensitySpec = std::variant<ConstantPropensity, SuppliedPropensity, LassoPropensity>;

/// Inverse-propensity weights normalised to sum to n.
///
/// For subject i the assignment probability of the arm actually received is
/// d_i = pi_i (treated) or 1 - pi_i (control). A is the mean of 1/d_i and
/// w_i = (1/d_i) / A.
struct WeightSet {
  Eigen::VectorXd pi;
  double A = 1.0;
  Eigen::VectorXd w;
};

/// Throws ValidationError when lengths differ or any pi_i lies outside (0,1).
WeightSet compute_weights(const Eigen::VectorXd& treatment, const Eigen::VectorXd& pi);

Eigen::VectorXd clip_propensity(Eigen::VectorXd pi);

// ---------------------------------------------------------------------------
// Lasso-penalised logistic regression for P(T = +1 | X, Z)
// ---------------------------------------------------------------------------

struct LassoOptions {
  std::size_t grid_size = 100;
  double min_ratio = 1e-3;      // smallest lambda / lambda_max
  double kkt_tol = 1e-7;        // stationarity residual accepted per lambda
  int max_newton = 200;         // proximal Newton steps per lambda
  int max_sweeps = 20000;       // coordinate sweeps per Newton step
  double max_dev_ratio = 0.999; // stop the path once the fit is this saturated
};

/// Feature columns of a propensity design: biomarkers followed by confounders.
/// Columns are referenced, never copied.
struct FeatureColumns {
  const Eigen::MatrixXd* X = nullptr;
  const Eigen::MatrixXd* Z = nullptr;

  std::size_t size() const;
  std::size_t rows() const { return static_cast<std::size_t>(X->rows()); }
  Eigen::Ref<const Eigen::VectorXd> col(std::size_t j) const;
};

/// Solution path in standardised coordinates.
///
/// The objective at penalty lambda is
///   (1/m) sum_i v_i [log(1 + e^{eta_i}) - y_i eta_i] + lambda * sum_j |b_j|
/// with eta_i = b0 + sum_j b_j (x_ij - center_j) / scale_j, m = sum_i v_i and
/// v_i in {0,1} marking training rows. Zero-variance columns are frozen at 0.
struct LassoPath {
  std::vector<double> lambdas;
  std::vector<double> intercepts;
  std::vector<std::vector<std::pair<std::size_t, double>>> coefficients;  // sparse, standardised
  std::vector<double> centers;
  std::vector<double> scales;
  double lambda_max = 0.0;

  std::size_t nonzero(std::size_t step) const { return coefficients[step].size(); }
  /// Linear predictor for every row of `features` at path step `step`.
  Eigen::VectorXd predictor(const FeatureColumns& features, std::size_t step) const;
};

/// Smallest lambda at which every coefficient is zero.
double lasso_lambda_max(const FeatureColumns& features, const Eigen::VectorXd& y, const Eigen::VectorXd& rows);

/// Fits the path along a decreasing lambda grid with warm starts.
///
/// An empty `lambdas` requests the default grid: grid_size log-spaced values
/// from lambda_max down to min_ratio * lambda_max. The path may end early
/// once the deviance ratio exceeds max_dev_ratio. Throws NumericalError
/// naming the penalty if the solver fails to reach kkt_tol.
LassoPath fit_lasso_path(const FeatureColumns& features, const Eigen::VectorXd& y, const Eigen::VectorXd& rows,
                         std::vector<double> lambdas, const LassoOptions& opts);

struct LassoCvResult {
  std::vector<double> lambdas;
  std::vector<double> cv_deviance;  // mean out-of-fold deviance per lambda
  std::size_t selected = 0;
  double selected_lambda = 0.0;
  std::size_t selected_nonzero = 0;
  bool intercept_only = false;
  Eigen::VectorXd pi;  // clipped fitted probabilities on all rows
};

/// K-fold cross-validated lasso propensity with a seeded fold assignment.
/// Ties in CV deviance go to the larger penalty.
LassoCvResult estimate_propensity_lasso(const Dataset& d, const LassoPropensity& spec, std::uint64_t seed,
                                        std::size_t workers = 1, const LassoOptions& opts = {});

/// Resolves any PropensitySpec to a per-subject probability vector.
Eigen::VectorXd resolve_propensity(const Dataset& d, const PropensitySpec& spec, std::uint64_t seed,
                                   std::size_t workers, std::string* report = nullptr);

}  // namespace odpscreen
