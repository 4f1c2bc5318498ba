#include "odpscreen/cli.hpp"

#include "odpscreen/dataset.hpp"
#include "odpscreen/error.hpp"
#include "odpscreen/parallel.hpp"
#include "odpscreen/pipeline.hpp"
#include "odpscreen/simulation.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/os.h>

#include <charconv>
#include <chrono>
#include <filesystem>

namespace odpscreen::cli {

namespace fs = std::filesystem;

namespace {

const auto kStart = std::chrono::steady_clock::now();

template <class... Args>
void log(fmt::format_string<Args...> f, Args&&... args) {
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - kStart).count();
  fmt::print(stderr, "odpscreen [{:7.1f}s] {}\n", secs, fmt::format(f, std::forward<Args>(args)...));
}

double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) throw ValidationError(fmt::format("{}: not a number: '{}'", what, s));
  return v;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find(',', start);
    const auto stop = pos == std::string::npos ? text.size() : pos;
    if (stop > start) out.push_back(text.substr(start, stop - start));
    start = stop + 1;
  }
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split(text)) {
    const double v = parse_double(item, "knot list");
    if (!(v >= 2.0) || v != std::floor(v)) throw ValidationError(fmt::format("knot count must be an integer >= 2: '{}'", item));
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = fmt::output_file(path.string());
  out.print("{}", text);
}

// Options shared by screen and qvalue.
struct DataArgs {
  std::string data;
  std::string outcome = "y";
  std::string treatment = "trt";
  std::string confounders;
  std::string ignore;
  std::string propensity = "lasso:folds=10";
  std::string loss;
  std::string fdr = "0.05,0.10,0.15,0.20";
  std::uint64_t seed = 1;
  std::string out = ".";
  std::string stat = "t";
};

struct OdpArgs {
  std::string method = "plugin";
  std::size_t knots = 100;
  double em_tol = 1e-8;
  std::size_t em_maxiter = 5000;
  std::string mstep = "weighted";
  bool em_trace = false;
};

void add_data_options(CLI::App* sub, DataArgs& a) {
  sub->add_option("--data", a.data, "Input CSV")->required();
  sub->add_option("--outcome", a.outcome, "Outcome column (y) or survival columns (time,event)")->capture_default_str();
  sub->add_option("--treatment", a.treatment, "Treatment column, coded 0/1 or -1/+1")->capture_default_str();
  sub->add_option("--confounders", a.confounders, "Comma-separated confounder columns")->capture_default_str();
  sub->add_option("--ignore", a.ignore, "Comma-separated columns to skip")->capture_default_str();
  sub->add_option("--propensity", a.propensity, "constant:<p> | column:<name> | lasso[:folds=K]")->capture_default_str();
  sub->add_option("--loss", a.loss, "squared | binomial | cox (default from outcome type)")->capture_default_str();
  sub->add_option("--fdr", a.fdr, "Comma-separated FDR levels")->capture_default_str();
  sub->add_option("--seed", a.seed, "Seed for cross-validation folds")->capture_default_str();
  sub->add_option("--out", a.out, "Output directory")->capture_default_str();
  sub->add_option("--stat", a.stat, "Competitor feeding p_value/q_value: t | s")->capture_default_str();
}

void add_em_options(CLI::App* sub, OdpArgs& a) {
  sub->add_option("--em-tol", a.em_tol, "Relative log-likelihood tolerance")->capture_default_str();
  sub->add_option("--em-maxiter", a.em_maxiter, "EM iteration cap")->capture_default_str();
  sub->add_option("--mstep", a.mstep, "weighted | appendix")->capture_default_str();
}

EmOptions em_options(const OdpArgs& a) {
  if (!(a.em_tol > 0.0)) throw ValidationError("--em-tol must be positive");
  if (a.em_maxiter == 0) throw ValidationError("--em-maxiter must be positive");
  EmOptions em;
  em.tol = a.em_tol;
  em.max_iter = a.em_maxiter;
  em.mstep = parse_mstep(a.mstep);
  return em;
}

std::vector<double> fdr_levels(const std::string& text) {
  auto levels = parse_list(text);
  if (levels.empty()) throw ValidationError("--fdr needs at least one level");
  for (double l : levels) {
    if (!(l > 0.0 && l < 1.0)) throw ValidationError(fmt::format("FDR level {} outside (0,1)", l));
  }
  return levels;
}

void write_provenance(const fs::path& dir, const CLI::App* sub) {
  write_text(dir / "provenance.ini",
             fmt::format("# odpscreen {}; re-run with: odpscreen {} --config <this file>\n[{}]\n{}", sub->get_name(),
                         sub->get_name(), sub->get_name(), sub->config_to_str(true, false)));
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError(fmt::format("cannot create output directory '{}': {}", out, ec.message()));
  return dir;
}

int run_screen(const CLI::App* sub, const DataArgs& a, const OdpArgs* odp, std::size_t workers) {
  const auto t0 = std::chrono::steady_clock::now();
  Schema schema;
  schema.outcome = split(a.outcome);
  schema.treatment = a.treatment;
  schema.confounders = split(a.confounders);
  schema.ignored = split(a.ignore);
  std::string prop_column;
  auto spec = parse_propensity(a.propensity, &prop_column);
  if (!prop_column.empty()) {
    schema.ignored.push_back(prop_column);
    spec = SuppliedPropensity{load_column(a.data, prop_column)};
  }
  const auto levels = fdr_levels(a.fdr);
  ScreenOptions opts;
  opts.fdr_levels = levels;
  opts.workers = workers;
  if (!a.loss.empty()) opts.loss = parse_loss_kind(a.loss);
  if (a.stat == "t") {
    opts.reported = Competitor::t;
  } else if (a.stat == "s") {
    opts.reported = Competitor::s;
  } else {
    throw ValidationError(fmt::format("--stat must be t or s, got '{}'", a.stat));
  }
  if (odp) {
    opts.method = parse_profile_method(odp->method);
    if (odp->knots < 2) throw ValidationError("--knots must be at least 2");
    opts.knots = odp->knots;
    opts.em = em_options(*odp);
  } else {
    opts.odp = false;
  }
  const auto dir = prepare_out(a.out);

  const auto d = load_dataset(a.data, schema);
  log("loaded {} subjects, {} biomarkers, {} confounders", d.n(), d.p(), d.q());
  for (const auto& diag : validate_dataset(d)) {
    log("{}: {}", diag.level == Diagnostic::Level::warning ? "warning" : "note", diag.message);
  }
  std::string prop_report;
  const auto pi = resolve_propensity(d, spec, a.seed, workers, &prop_report);
  if (!prop_report.empty()) log("{}", prop_report);
  const auto weights = compute_weights(d.treatment, pi);

  log("fitting {} biomarkers on {} worker(s)", d.p(), workers);
  const auto r = screen(d, weights, opts);
  for (const auto& msg : r.diagnostics) log("warning: {}", msg);

  write_report(dir / "report.tsv", d, r);
  write_fit_table(dir / "fits.tsv", r);
  if (r.odp) {
    write_prior(dir / "prior.tsv", r.odp->em.prior);
    if (odp->em_trace) write_em_trace(dir / "em_trace.tsv", r.odp->em.trace);
    log("EM: {} iterations, null mass {:.4f}", r.odp->em.trace.iterations, r.odp->em.prior.pi);
    for (const auto& s : r.odp->selections) log("FDR {:.2f}: {} selected", s.level, s.members.size());
  } else {
    for (std::size_t li = 0; li < levels.size(); ++li) {
      std::size_t count = 0;
      for (bool f : r.selected[li]) count += f ? 1 : 0;
      log("q <= {:.2f}: {} selected", levels[li], count);
    }
  }
  write_provenance(dir, sub);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log("wrote {} in {:.1f}s", (dir / "report.tsv").string(), secs);
  return 0;
}

}  // namespace

PropensitySpec parse_propensity(const std::string& text, std::string* column) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (kind == "constant") {
    const double v = arg.empty() ? 0.5 : parse_double(arg, "--propensity constant");
    if (!(v > 0.0 && v < 1.0)) throw ValidationError("constant propensity must lie in (0,1)");
    return ConstantPropensity{v};
  }
  if (kind == "column") {
    if (arg.empty()) throw ValidationError("--propensity column:<name> needs a column name");
    if (column) *column = arg;
    return SuppliedPropensity{};
  }
  if (kind == "lasso") {
    LassoPropensity spec;
    if (!arg.empty()) {
      if (arg.rfind("folds=", 0) != 0) throw ValidationError(fmt::format("unknown lasso option '{}'", arg));
      const double k = parse_double(arg.substr(6), "--propensity lasso folds");
      if (!(k >= 2.0) || k != std::floor(k)) throw ValidationError("lasso folds must be an integer >= 2");
      spec.folds = static_cast<std::size_t>(k);
    }
    return spec;
  }
  throw ValidationError(fmt::format("unknown propensity spec '{}'", text));
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  for (auto item : split(text)) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    item = first == std::string::npos ? std::string{} : item.substr(first, last - first + 1);
    out.push_back(parse_double(item, "list"));
  }
  return out;
}

int run(std::vector<std::string> args) {
  CLI::App app{"Predictive biomarker screening with the optimal discovery procedure", "odpscreen"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "key = value file written as provenance.ini; flags take precedence");
  std::size_t workers = 1;

  DataArgs screen_args;
  OdpArgs odp_args;
  auto* screen_cmd = app.add_subcommand("screen", "ODP screening of a CSV dataset");
  add_data_options(screen_cmd, screen_args);
  screen_cmd->add_option("--method", odp_args.method, "plugin | normal")->capture_default_str();
  screen_cmd->add_option("--knots", odp_args.knots, "Number of grid knots")->capture_default_str();
  add_em_options(screen_cmd, odp_args);
  screen_cmd->add_flag("--em-trace", odp_args.em_trace, "Write em_trace.tsv");
  screen_cmd->add_option("--workers", workers, "Worker threads (0 = all cores)")->capture_default_str();

  DataArgs q_args;
  auto* q_cmd = app.add_subcommand("qvalue", "T/S statistics with Storey q-values only");
  add_data_options(q_cmd, q_args);
  q_cmd->add_option("--workers", workers, "Worker threads (0 = all cores)")->capture_default_str();

  SimConfig sim;
  std::string sim_outcome = "binary";
  std::string sim_out = ".";
  auto* sim_cmd = app.add_subcommand("simulate", "Generate one synthetic cohort");
  sim_cmd->add_option("--outcome", sim_outcome, "binary | survival")->capture_default_str();
  sim_cmd->add_option("--pi0", sim.pi_null, "Null probability")->capture_default_str();
  sim_cmd->add_option("--n", sim.n, "Subjects")->capture_default_str();
  sim_cmd->add_option("--p", sim.p, "Biomarkers (>= 10)")->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Seed")->capture_default_str();
  std::uint64_t sim_rep = 0;
  sim_cmd->add_option("--replicate", sim_rep, "Replication index within the seed")->capture_default_str();
  sim_cmd->add_option("--out", sim_out, "Output directory")->capture_default_str();

  SimConfig bench;
  std::string bench_outcome = "binary";
  std::string bench_out = ".";
  std::string bench_fdr = "0.05,0.10,0.15,0.20";
  std::string knots_p = "100";
  std::string knots_n = "50,100,150,200";
  OdpArgs bench_em;
  auto* bench_cmd = app.add_subcommand("benchmark", "Monte-Carlo comparison of ODP against T and S");
  bench_cmd->add_option("--outcome", bench_outcome, "binary | survival")->capture_default_str();
  bench_cmd->add_option("--pi0", bench.pi_null, "Null probability")->capture_default_str();
  bench_cmd->add_option("--n", bench.n, "Subjects")->capture_default_str();
  bench_cmd->add_option("--p", bench.p, "Biomarkers (>= 10)")->capture_default_str();
  bench_cmd->add_option("--reps", bench.replications, "Replications")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Seed")->capture_default_str();
  bench_cmd->add_option("--fdr", bench_fdr, "Comma-separated FDR levels")->capture_default_str();
  bench_cmd->add_option("--knots-plugin", knots_p, "Knot counts for ODP-P")->capture_default_str();
  bench_cmd->add_option("--knots-normal", knots_n, "Knot counts for ODP-N")->capture_default_str();
  bench_cmd->add_flag("--estimate-propensity", bench.estimate_propensity, "Lasso propensity instead of the truth");
  bench_cmd->add_option("--lasso-folds", bench.lasso_folds, "Folds for --estimate-propensity")->capture_default_str();
  add_em_options(bench_cmd, bench_em);
  bench_cmd->add_option("--workers", workers, "Worker threads (0 = all cores)")->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "Output directory")->capture_default_str();

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  workers = resolve_workers(workers);

  try {
    if (screen_cmd->parsed()) return run_screen(screen_cmd, screen_args, &odp_args, workers);
    if (q_cmd->parsed()) return run_screen(q_cmd, q_args, nullptr, workers);
    if (sim_cmd->parsed()) {
      sim.outcome = parse_sim_outcome(sim_outcome);
      if (!(sim.pi_null > 0.0 && sim.pi_null < 1.0)) throw ValidationError("--pi0 must lie in (0,1)");
      const auto dir = prepare_out(sim_out);
      const auto data = simulate(sim, sim_rep);
      write_dataset(dir / "dataset.csv", data.data);
      write_truth(dir / "truth.tsv", data);
      write_propensity(dir / "propensity.tsv", data.propensity);
      write_provenance(dir, sim_cmd);
      std::size_t nonnull = 0;
      for (bool b : data.truth.null_mask) nonnull += b ? 0 : 1;
      log("wrote {} subjects x {} biomarkers ({} non-null) to {}", sim.n, sim.p, nonnull, dir.string());
      if (sim.outcome == SimOutcome::survival) log("censoring fraction {:.3f}", censoring_fraction(data.data));
      return 0;
    }
    if (bench_cmd->parsed()) {
      bench.outcome = parse_sim_outcome(bench_outcome);
      if (!(bench.pi_null > 0.0 && bench.pi_null < 1.0)) throw ValidationError("--pi0 must lie in (0,1)");
      if (bench.replications == 0) throw ValidationError("--reps must be positive");
      if (bench.p < 10) throw ValidationError("--p must be at least 10");
      bench.fdr_levels = fdr_levels(bench_fdr);
      bench.knots_plugin = parse_counts(knots_p);
      bench.knots_normal = parse_counts(knots_n);
      bench.em = em_options(bench_em);
      bench.workers = workers;
      const auto dir = prepare_out(bench_out);
      const auto t0 = std::chrono::steady_clock::now();
      const auto summary = run_benchmark(bench);
      for (std::size_t r = 0; r < summary.replications.size(); ++r) {
        if (!summary.replications[r].ok) log("replication {} failed: {}", r, summary.replications[r].error);
      }
      if (summary.failed == summary.replications.size()) throw NumericalError("every replication failed");
      write_benchmark(dir / "benchmark.tsv", summary);
      write_benchmark_replications(dir / "benchmark_reps.tsv", summary);
      write_provenance(dir, bench_cmd);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log("{} replications ({} failed) in {:.1f}s", summary.replications.size(), summary.failed, secs);
      return 0;
    }
  } catch (const ValidationError& e) {
    log("error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    log("failed: {}", e.what());
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace odpscreen::cli
