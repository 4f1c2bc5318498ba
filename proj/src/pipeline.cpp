#include "odpscreen/pipeline.hpp"

#include "odpscreen/error.hpp"

#include <fmt/format.h>
#include <fmt/os.h>

#include <cmath>

namespace odpscreen {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.10g}", v);
}

}  // namespace

std::string selection_column(double level) {
  return fmt::format("sel_{:02d}", static_cast<int>(std::lround(level * 100.0)));
}

OdpRun run_odp(const Dataset& d, const LossProblem& problem, std::span<const BiomarkerFit> fits, ProfileMethod method,
               std::size_t knots, const EmOptions& em, std::span<const double> levels, std::size_t workers) {
  OdpRun run;
  run.method = method;
  run.grid = select_knots(fits, knots);
  const auto tables = profile_all(fits, d, problem, method, run.grid.a, workers);
  EmOptions em_opts = em;
  em_opts.workers = workers;
  run.em = em_fit(tables, uniform_prior(run.grid), em_opts);

  std::vector<ScreeningRow> rows(fits.size());
  for (std::size_t i = 0; i < fits.size(); ++i) {
    rows[i].k = fits[i].k;
    rows[i].usable = fits[i].usable();
  }
  apply_odp(rows, tables, run.em.prior);
  for (const auto& row : rows) {
    run.log_ods.push_back(row.log_ods);
    run.post_null.push_back(row.post_null);
    run.log_post_null.push_back(row.log_post_null);
    run.log_post_nonnull.push_back(row.log_post_nonnull);
  }
  for (double level : levels) run.selections.push_back(select_at_fdr(rows, level));
  return run;
}

ScreenResult screen(const Dataset& d, const WeightSet& weights, const ScreenOptions& opts) {
  for (double level : opts.fdr_levels) {
    if (!(level > 0.0 && level < 1.0)) throw ValidationError(fmt::format("FDR level {} outside (0,1)", level));
  }
  ScreenResult r;
  r.loss = opts.loss.value_or(default_loss(d.outcomes));
  r.fdr_levels = opts.fdr_levels;
  const LossProblem problem(r.loss, d.outcomes, weights.w);
  r.fits = fit_all(d, problem, opts.workers, opts.newton);

  std::size_t unidentified = 0;
  std::size_t failed = 0;
  for (const auto& f : r.fits) {
    if (f.status == FitStatus::unidentified) ++unidentified;
    if (f.status == FitStatus::not_converged) ++failed;
  }
  if (unidentified > 0) r.diagnostics.push_back(fmt::format("{} biomarker(s) unidentified (constant column)", unidentified));
  if (failed > 0) r.diagnostics.push_back(fmt::format("{} biomarker fit(s) did not converge; reported with ODS = 1", failed));

  r.rows.resize(d.p());
  for (std::size_t k = 0; k < d.p(); ++k) {
    auto& row = r.rows[k];
    row.k = k;
    row.usable = r.fits[k].usable();
    row.beta_hat = r.fits[k].beta_hat;
    row.se = r.fits[k].se();
    row.log_ods = std::numeric_limits<double>::quiet_NaN();
    row.post_null = std::numeric_limits<double>::quiet_NaN();
  }

  if (opts.odp) {
    r.odp = run_odp(d, problem, r.fits, opts.method, opts.knots, opts.em, opts.fdr_levels, opts.workers);
    if (r.odp->em.trace.boundary_init) r.diagnostics.push_back("EM initialised on the boundary of [0,1]");
    if (!r.odp->em.trace.converged) {
      r.diagnostics.push_back(fmt::format("EM stopped at the iteration cap ({})", r.odp->em.trace.iterations));
    }
    for (std::size_t k = 0; k < d.p(); ++k) {
      r.rows[k].log_ods = r.odp->log_ods[k];
      r.rows[k].post_null = r.odp->post_null[k];
      r.rows[k].log_post_null = r.odp->log_post_null[k];
      r.rows[k].log_post_nonnull = r.odp->log_post_nonnull[k];
    }
  }

  if (opts.competitors) {
    r.competitors = competitor_stats(d, r.fits, opts.workers, opts.newton);
    std::vector<double> t(d.p()), s(d.p());
    std::size_t flagged = 0;
    for (std::size_t k = 0; k < d.p(); ++k) {
      t[k] = r.competitors[k].t_stat;
      s[k] = r.competitors[k].s_stat;
      r.rows[k].t_stat = t[k];
      r.rows[k].s_stat = s[k];
      r.rows[k].s_flag = r.competitors[k].s_flag;
      flagged += r.competitors[k].s_flag ? 1 : 0;
    }
    if (flagged > 0) r.diagnostics.push_back(fmt::format("{} arm-specific fit(s) failed; S statistic set to 0", flagged));
    r.t_q = qvalues_from_stats(t);
    r.s_q = qvalues_from_stats(s);
    const auto& chosen = opts.reported == Competitor::t ? r.t_q : r.s_q;
    for (std::size_t k = 0; k < d.p(); ++k) {
      r.rows[k].p_value = chosen.p_values[k];
      r.rows[k].q_value = chosen.q_values[k];
    }
  } else {
    for (auto& row : r.rows) {
      row.t_stat = row.s_stat = row.p_value = row.q_value = std::numeric_limits<double>::quiet_NaN();
    }
  }

  // Selection flags: ODP when run, otherwise the reported competitor's q-values.
  for (std::size_t li = 0; li < opts.fdr_levels.size(); ++li) {
    std::vector<bool> flags(d.p(), false);
    if (r.odp) {
      for (auto k : r.odp->selections[li].members) flags[k] = true;
    } else if (opts.competitors) {
      const auto& chosen = opts.reported == Competitor::t ? r.t_q : r.s_q;
      for (auto k : select_by_q(chosen.q_values, opts.fdr_levels[li])) flags[k] = true;
    }
    r.selected.push_back(std::move(flags));
  }
  return r;
}

void write_report(const std::filesystem::path& path, const Dataset& d, const ScreenResult& r) {
  auto out = fmt::output_file(path.string());
  out.print("biomarker\tbeta_hat\tse\tods\tpost_null\tt_stat\ts_stat\tp_value\tq_value");
  for (double level : r.fdr_levels) out.print("\t{}", selection_column(level));
  out.print("\n");
  for (std::size_t k = 0; k < r.rows.size(); ++k) {
    const auto& row = r.rows[k];
    out.print("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}", d.biomarker_names[k], num(row.beta_hat), num(row.se),
              std::isnan(row.log_ods) ? "NA" : num(row.ods()), num(row.post_null), num(row.t_stat), num(row.s_stat),
              num(row.p_value), num(row.q_value));
    for (std::size_t li = 0; li < r.fdr_levels.size(); ++li) out.print("\t{}", !r.odp ? "NA" : r.selected[li][k] ? "1" : "0");
    out.print("\n");
  }
}

void write_fit_table(const std::filesystem::path& path, const ScreenResult& r) {
  auto out = fmt::output_file(path.string());
  out.print("k\tconverged\titerations\tbeta_hat\tse\n");
  for (const auto& f : r.fits) {
    out.print("{}\t{}\t{}\t{}\t{}\n", f.k + 1, f.usable() ? 1 : 0, f.iterations, num(f.beta_hat), num(f.se()));
  }
}

void write_prior(const std::filesystem::path& path, const MixturePrior& prior) {
  auto out = fmt::output_file(path.string());
  out.print("# null_mass = {}\n", num(prior.pi));
  out.print("knot\tmass\n");
  for (std::size_t l = 0; l < prior.p.size(); ++l) out.print("{}\t{}\n", num(prior.grid.a[l]), num(prior.p[l]));
}

void write_em_trace(const std::filesystem::path& path, const EmTrace& trace) {
  auto out = fmt::output_file(path.string());
  out.print("iter\tloglik\tpi\n");
  for (std::size_t t = 0; t < trace.loglik.size(); ++t) {
    out.print("{}\t{}\t{}\n", t, fmt::format("{:.17g}", trace.loglik[t]), num(trace.pi[t]));
  }
}

}  // namespace odpscreen
