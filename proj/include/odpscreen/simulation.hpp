#pragma once

#include "odpscreen/dataset.hpp"
#include "odpscreen/pipeline.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace odpscreen {

using SimRng = std::mt19937_64;

/// One independent stream per (seed, replication) pair.
SimRng replication_rng(std::uint64_t seed, std::uint64_t replication);

enum class SimOutcome { binary, survival };
std::string to_string(SimOutcome o);
SimOutcome parse_sim_outcome(const std::string& s);

struct SimConfig {
  std::size_t n = 1000;
  std::size_t p = 3000;
  SimOutcome outcome = SimOutcome::binary;
  double pi_null = 0.8;
  std::size_t replications = 200;
  std::uint64_t seed = 1;
  std::vector<double> fdr_levels = kDefaultFdrLevels;
  std::vector<std::size_t> knots_plugin{100};
  std::vector<std::size_t> knots_normal{50, 100, 150, 200};
  bool estimate_propensity = false;  // lasso instead of the true propensity
  std::size_t lasso_folds = 10;
  bool confounders_in_dataset = true;  // false drops Z from the returned Dataset (q = 0)
  EmOptions em;
  std::size_t workers = 1;
};

/// Ground truth of one generated cohort.
struct SimTruth {
  Eigen::VectorXd beta;
  std::vector<bool> null_mask;  // true where beta_k == 0
  std::vector<double> gamma{0.2, -0.2, 0.2, -0.2, 0.2, -0.2};
  std::vector<double> delta{0.2, -0.2, 0.2, -0.2, 0.2, -0.2};
  double xi1 = 0.1;
  double xi2 = 0.1;
};

/// Rows i.i.d. N(0, Sigma), Sigma_ij = 0.1^|i-j|, via the exact AR(1) recursion.
Eigen::MatrixXd gen_covariates(std::size_t n, std::size_t p, SimRng& rng);

/// n x 2 confounders with mean 0.1 X_1 - 0.1 X_10, unit variances, covariance 0.2.
Eigen::MatrixXd gen_confounders(const Eigen::MatrixXd& X, SimRng& rng);

struct TreatmentDraw {
  Eigen::VectorXd treatment;   // {-1,+1}
  Eigen::VectorXd propensity;  // true P(T=+1)
};
/// P(T=+1) = logistic(0.2 X_1 + 0.1 X_2 + 0.1 Z_1).
TreatmentDraw gen_treatment(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, SimRng& rng);

/// beta_k = 0 w.p. pi_null, else N(0.2, 0.1^2) w.p. 0.3 and N(-0.5, 0.1^2) w.p. 0.7.
SimTruth gen_effects(std::size_t p, double pi_null, SimRng& rng);

/// Linear index sum gamma X + sum delta X^2 + T sum beta X + xi1 T Z1 + xi2 T Z2 (without noise).
Eigen::VectorXd latent_index(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const Eigen::VectorXd& T,
                             const SimTruth& truth);

/// Binary: Y = 1{index + eps > 0}. Survival: exp(index + eps) censored by U(20, 60).
/// eps ~ N(0, 5^2) in both cases.
Outcomes gen_outcome(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const Eigen::VectorXd& T,
                     const SimTruth& truth, SimOutcome kind, SimRng& rng);

struct SimData {
  Dataset data;
  SimTruth truth;
  Eigen::VectorXd propensity;
};

/// Full cohort for replication `rep`.
SimData simulate(const SimConfig& cfg, std::uint64_t rep);

/// Truth table: biomarker, beta, is_null.
void write_truth(const std::filesystem::path& path, const SimData& sim);
/// One column "propensity" with the true P(T=+1).
void write_propensity(const std::filesystem::path& path, const Eigen::VectorXd& pi);

struct MethodCounts {
  std::string method;
  std::vector<double> tp;  // per FDR level
  std::vector<double> fp;
};

struct ReplicationResult {
  bool ok = false;
  std::string error;
  double censoring = 0.0;
  double pi_hat_plugin = 0.0;
  std::vector<MethodCounts> methods;
};

struct BenchmarkSummary {
  std::vector<double> fdr_levels;
  std::vector<std::string> methods;
  std::vector<ReplicationResult> replications;
  std::size_t failed = 0;
  // [method][level], averaged over successful replications.
  std::vector<std::vector<double>> avg_tp;
  std::vector<std::vector<double>> avg_fp;
  std::vector<std::vector<double>> avg_fdp;  // mean of FP / max(1, TP + FP)

  std::size_t method_index(const std::string& name) const;
};

std::string odp_method_name(ProfileMethod m, std::size_t knots);

/// Runs one replication: generate, screen with every configured method, count.
ReplicationResult run_replication(const SimConfig& cfg, std::uint64_t rep, std::size_t inner_workers = 1);

/// Replications in parallel with per-replication RNG streams; failures are
/// logged in the summary and excluded from the averages.
BenchmarkSummary run_benchmark(const SimConfig& cfg);

/// Table layout: method, fdr_level, avg_tp, avg_fp.
void write_benchmark(const std::filesystem::path& path, const BenchmarkSummary& s);
/// Per-replication counts: rep, method, fdr_level, tp, fp.
void write_benchmark_replications(const std::filesystem::path& path, const BenchmarkSummary& s);

}  // namespace odpscreen
