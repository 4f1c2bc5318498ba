#pragma once

#include "odpscreen/biomarker_fit.hpp"
#include "odpscreen/dataset.hpp"
#include "odpscreen/loss.hpp"
#include "odpscreen/prior_em.hpp"
#include "odpscreen/propensity.hpp"
#include "odpscreen/screening.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace odpscreen {

inline const std::vector<double> kDefaultFdrLevels{0.05, 0.10, 0.15, 0.20};

/// Which competitor statistic feeds the p_value / q_value report columns.
enum class Competitor { t, s };

struct ScreenOptions {
  std::optional<LossKind> loss;  // defaults from the outcome type
  ProfileMethod method = ProfileMethod::plugin;
  std::size_t knots = 100;
  std::vector<double> fdr_levels = kDefaultFdrLevels;
  EmOptions em;
  NewtonOptions newton;
  std::size_t workers = 1;
  bool odp = true;
  bool competitors = true;
  Competitor reported = Competitor::t;
};

/// ODP screening for one profile construction and one knot count.
struct OdpRun {
  ProfileMethod method = ProfileMethod::plugin;
  KnotGrid grid;
  EmResult em;
  std::vector<double> log_ods;    // per biomarker
  std::vector<double> post_null;  // per biomarker
  std::vector<double> log_post_null;
  std::vector<double> log_post_nonnull;
  std::vector<SelectionSet> selections;  // one per FDR level
};

/// Knot selection, profiling, EM and FDR selection on top of existing fits.
OdpRun run_odp(const Dataset& d, const LossProblem& problem, std::span<const BiomarkerFit> fits, ProfileMethod method,
               std::size_t knots, const EmOptions& em, std::span<const double> levels, std::size_t workers);

struct ScreenResult {
  LossKind loss = LossKind::binomial;
  std::vector<BiomarkerFit> fits;
  std::optional<OdpRun> odp;
  std::vector<CompetitorStat> competitors;
  QValues t_q;
  QValues s_q;
  std::vector<ScreeningRow> rows;
  std::vector<double> fdr_levels;
  std::vector<std::vector<bool>> selected;  // [level][biomarker]
  std::vector<std::string> diagnostics;
};

ScreenResult screen(const Dataset& d, const WeightSet& weights, const ScreenOptions& opts);

/// "sel_05" for 0.05 and so on.
std::string selection_column(double level);

/// Main report. Columns: biomarker beta_hat se ods post_null t_stat s_stat
/// p_value q_value sel_<level>...; ODP columns print NA when ODP was not run.
void write_report(const std::filesystem::path& path, const Dataset& d, const ScreenResult& r);
/// Sidecar per-biomarker fit diagnostics: k converged iterations beta_hat se.
void write_fit_table(const std::filesystem::path& path, const ScreenResult& r);
/// Estimated prior: "# null_mass = ..." then knot, mass rows.
void write_prior(const std::filesystem::path& path, const MixturePrior& prior);
/// EM trace: iter loglik pi.
void write_em_trace(const std::filesystem::path& path, const EmTrace& trace);

}  // namespace odpscreen
