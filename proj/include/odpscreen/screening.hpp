#pragma once

#include "odpscreen/biomarker_fit.hpp"
#include "odpscreen/dataset.hpp"
#include "odpscreen/loss.hpp"
#include "odpscreen/prior_em.hpp"

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace odpscreen {

/// P(non-null | data) under the fitted two-groups prior.
double posterior_nonnull(const ProfileTable& table, const MixturePrior& prior);

/// P(null | data), computed directly rather than as 1 - posterior_nonnull.
double posterior_null(const ProfileTable& table, const MixturePrior& prior);

/// Log-domain versions; finite even when the probability itself underflows.
double log_posterior_null(const ProfileTable& table, const MixturePrior& prior);
double log_posterior_nonnull(const ProfileTable& table, const MixturePrior& prior);

/// log of sum_l p_l PL(a_l) / PL(0). Stays finite when ODS itself overflows.
double log_ods(const ProfileTable& table, const MixturePrior& prior);

/// Model-based optimal discovery statistic sum_l p_l PL(a_l) / PL(0).
double ods(const ProfileTable& table, const MixturePrior& prior);

struct ScreeningRow {
  std::size_t k = 0;
  bool usable = false;  // false: unidentified or non-converged fit
  double beta_hat = 0.0;
  double se = std::numeric_limits<double>::infinity();
  double log_ods = 0.0;  // 0 (ODS = 1) when unusable
  double post_null = 1.0;
  double log_post_null = 0.0;
  double log_post_nonnull = -std::numeric_limits<double>::infinity();
  double t_stat = 0.0;
  double s_stat = 0.0;
  bool s_flag = false;  // arm-specific fit failed; s_stat set to 0
  double p_value = 1.0;
  double q_value = 1.0;

  double ods() const { return std::exp(log_ods); }
};

struct SelectionSet {
  double level = 0.0;
  double lambda = std::numeric_limits<double>::infinity();  // ODS threshold; +inf when empty
  std::vector<std::size_t> members;                         // biomarker indices in ODS order
  double fdr = 0.0;                                         // mean post_null over members
};

/// Longest ODS-ordered prefix whose running mean post_null stays <= level.
/// Ordering: ODS descending, then post_null ascending, then index. Unusable
/// rows are never selected.
SelectionSet select_at_fdr(std::span<const ScreeningRow> rows, double level);

/// Fills log_ods and post_null for each row from its table. Rows without a
/// table keep ODS = 1 and post_null = pi (no evidence either way).
void apply_odp(std::span<ScreeningRow> rows, std::span<const ProfileTable> tables, const MixturePrior& prior);

struct CompetitorStat {
  double t_stat = 0.0;
  double s_stat = 0.0;
  bool s_flag = false;
  double beta_treated = 0.0;
  double beta_control = 0.0;
  double se_treated = 0.0;
  double se_control = 0.0;
};

/// Unweighted arm-specific regression of the outcome on biomarker k.
/// Binary: logistic on (1, X_k, Z). Survival: Cox on X_k only.
struct ArmFit {
  double beta = 0.0;
  double se = 0.0;
  bool ok = false;
};
ArmFit fit_arm(const Dataset& d, std::size_t k, bool treated_arm, const NewtonOptions& opts = {});

/// T_k = beta_hat / se from the weighted interaction fit, and
/// S_k = (b1 - b0) / sqrt(se1^2 + se0^2) from the arm-specific fits.
std::vector<CompetitorStat> competitor_stats(const Dataset& d, std::span<const BiomarkerFit> fits, std::size_t workers,
                                             const NewtonOptions& opts = {});

struct QValues {
  std::vector<double> p_values;
  std::vector<double> q_values;
  double pi0 = 1.0;
};

/// Two-sided normal p-values and Storey q-values (pi0 tuning at 0.5).
QValues qvalues_from_stats(std::span<const double> stats);
/// Storey q-values for given p-values.
QValues qvalues(std::span<const double> p_values);

/// Members with q <= level.
std::vector<std::size_t> select_by_q(std::span<const double> q_values, double level);

}  // namespace odpscreen
