#include "odpscreen/simulation.hpp"

#include "odpscreen/error.hpp"
#include "odpscreen/parallel.hpp"
#include "odpscreen/propensity.hpp"

#include <fmt/format.h>
#include <fmt/os.h>

#include <cmath>

namespace odpscreen {

SimRng replication_rng(std::uint64_t seed, std::uint64_t replication) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replication), static_cast<std::uint32_t>(replication >> 32)};
  return SimRng(seq);
}

std::string to_string(SimOutcome o) { return o == SimOutcome::binary ? "binary" : "survival"; }

SimOutcome parse_sim_outcome(const std::string& s) {
  if (s == "binary") return SimOutcome::binary;
  if (s == "survival") return SimOutcome::survival;
  throw ValidationError(fmt::format("unknown outcome type '{}'", s));
}

Eigen::MatrixXd gen_covariates(std::size_t n, std::size_t p, SimRng& rng) {
  if (n == 0 || p == 0) throw ValidationError("covariate matrix needs n, p >= 1");
  std::normal_distribution<double> normal;
  constexpr double rho = 0.1;
  const double innov = std::sqrt(1.0 - rho * rho);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double prev = normal(rng);
    X(i, 0) = prev;
    for (Eigen::Index j = 1; j < X.cols(); ++j) {
      prev = rho * prev + innov * normal(rng);
      X(i, j) = prev;
    }
  }
  return X;
}

Eigen::MatrixXd gen_confounders(const Eigen::MatrixXd& X, SimRng& rng) {
  if (X.cols() < 10) throw ValidationError("confounder model needs at least 10 biomarkers");
  std::normal_distribution<double> normal;
  // Cholesky factor of [[1, 0.2], [0.2, 1]].
  constexpr double c = 0.2;
  const double s = std::sqrt(1.0 - c * c);
  Eigen::MatrixXd Z(X.rows(), 2);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double mu = 0.1 * X(i, 0) - 0.1 * X(i, 9);
    const double e1 = normal(rng);
    const double e2 = normal(rng);
    Z(i, 0) = mu + e1;
    Z(i, 1) = mu + c * e1 + s * e2;
  }
  return Z;
}

TreatmentDraw gen_treatment(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, SimRng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  TreatmentDraw out;
  out.treatment.resize(X.rows());
  out.propensity.resize(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double lin = 0.2 * X(i, 0) + (X.cols() > 1 ? 0.1 * X(i, 1) : 0.0) + (Z.cols() > 0 ? 0.1 * Z(i, 0) : 0.0);
    const double pr = 1.0 / (1.0 + std::exp(-lin));
    out.propensity(i) = pr;
    out.treatment(i) = unif(rng) < pr ? 1.0 : -1.0;
  }
  return out;
}

SimTruth gen_effects(std::size_t p, double pi_null, SimRng& rng) {
  if (!(pi_null > 0.0 && pi_null < 1.0)) throw ValidationError("null probability must lie in (0,1)");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  SimTruth t;
  t.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  t.null_mask.assign(p, true);
  for (std::size_t k = 0; k < p; ++k) {
    if (unif(rng) < pi_null) continue;
    const bool positive = unif(rng) < 0.3;
    const double mean = positive ? 0.2 : -0.5;
    const double b = mean + 0.1 * normal(rng);
    t.beta(static_cast<Eigen::Index>(k)) = b;
    t.null_mask[k] = b == 0.0;
  }
  return t;
}

Eigen::VectorXd latent_index(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const Eigen::VectorXd& T,
                             const SimTruth& truth) {
  Eigen::VectorXd index = T.cwiseProduct(X * truth.beta);
  const auto main_cols = std::min<Eigen::Index>(static_cast<Eigen::Index>(truth.gamma.size()), X.cols());
  for (Eigen::Index j = 0; j < main_cols; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    index += truth.gamma[jj] * X.col(j) + truth.delta[jj] * X.col(j).cwiseAbs2();
  }
  if (Z.cols() >= 2) index += T.cwiseProduct(truth.xi1 * Z.col(0) + truth.xi2 * Z.col(1));
  return index;
}

Outcomes gen_outcome(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const Eigen::VectorXd& T,
                     const SimTruth& truth, SimOutcome kind, SimRng& rng) {
  if (truth.beta.size() != X.cols()) throw ValidationError("effect vector length differs from biomarker count");
  std::normal_distribution<double> noise(0.0, 5.0);
  const Eigen::VectorXd index = latent_index(X, Z, T, truth);
  const auto n = static_cast<std::size_t>(X.rows());
  if (kind == SimOutcome::binary) {
    BinaryOutcomes out;
    out.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.y[i] = index(static_cast<Eigen::Index>(i)) + noise(rng) > 0.0 ? 1.0 : 0.0;
    return out;
  }
  std::uniform_real_distribution<double> censor(20.0, 60.0);
  SurvivalOutcomes out;
  out.time.resize(n);
  out.event.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double latent = std::exp(index(static_cast<Eigen::Index>(i)) + noise(rng));
    const double c = censor(rng);
    const bool event = latent <= c;
    out.time[i] = std::max(event ? latent : c, std::numeric_limits<double>::min());
    out.event[i] = event ? 1.0 : 0.0;
  }
  return out;
}

SimData simulate(const SimConfig& cfg, std::uint64_t rep) {
  if (cfg.n < 2) throw ValidationError("simulation needs n >= 2");
  auto rng = replication_rng(cfg.seed, rep);
  Eigen::MatrixXd X = gen_covariates(cfg.n, cfg.p, rng);
  Eigen::MatrixXd Z = gen_confounders(X, rng);
  auto treat = gen_treatment(X, Z, rng);
  auto truth = gen_effects(cfg.p, cfg.pi_null, rng);
  auto outcomes = gen_outcome(X, Z, treat.treatment, truth, cfg.outcome, rng);
  if (!cfg.confounders_in_dataset) Z.resize(X.rows(), 0);
  SimData sim{make_dataset(std::move(outcomes), std::move(treat.treatment), std::move(X), std::move(Z)),
              std::move(truth), std::move(treat.propensity)};
  return sim;
}

void write_truth(const std::filesystem::path& path, const SimData& sim) {
  auto out = fmt::output_file(path.string());
  out.print("biomarker\tbeta\tis_null\n");
  for (std::size_t k = 0; k < sim.data.p(); ++k) {
    out.print("{}\t{:.17g}\t{}\n", sim.data.biomarker_names[k], sim.truth.beta(static_cast<Eigen::Index>(k)),
              sim.truth.null_mask[k] ? 1 : 0);
  }
}

void write_propensity(const std::filesystem::path& path, const Eigen::VectorXd& pi) {
  auto out = fmt::output_file(path.string());
  out.print("propensity\n");
  for (Eigen::Index i = 0; i < pi.size(); ++i) out.print("{:.17g}\n", pi(i));
}

std::string odp_method_name(ProfileMethod m, std::size_t knots) {
  return fmt::format("ODP-{}(L={})", m == ProfileMethod::plugin ? "P" : "N", knots);
}

namespace {

MethodCounts count_selection(std::string name, const std::vector<std::vector<std::size_t>>& selected,
                             const SimTruth& truth) {
  MethodCounts mc;
  mc.method = std::move(name);
  for (const auto& set : selected) {
    double tp = 0.0;
    double fp = 0.0;
    for (auto k : set) (truth.null_mask[k] ? fp : tp) += 1.0;
    mc.tp.push_back(tp);
    mc.fp.push_back(fp);
  }
  return mc;
}

}  // namespace

ReplicationResult run_replication(const SimConfig& cfg, std::uint64_t rep, std::size_t inner_workers) {
  ReplicationResult res;
  const auto sim = simulate(cfg, rep);
  const auto& d = sim.data;
  res.censoring = censoring_fraction(d);

  Eigen::VectorXd pi = sim.propensity;
  if (cfg.estimate_propensity) {
    pi = estimate_propensity_lasso(d, LassoPropensity{cfg.lasso_folds, 100}, cfg.seed + rep, inner_workers).pi;
  }
  const auto weights = compute_weights(d.treatment, pi);
  const LossProblem problem(default_loss(d.outcomes), d.outcomes, weights.w);
  const auto fits = fit_all(d, problem, inner_workers);

  auto add_odp = [&](ProfileMethod method, std::size_t L) {
    const auto run = run_odp(d, problem, fits, method, L, cfg.em, cfg.fdr_levels, inner_workers);
    if (method == ProfileMethod::plugin && res.pi_hat_plugin == 0.0) res.pi_hat_plugin = run.em.prior.pi;
    std::vector<std::vector<std::size_t>> sets;
    for (const auto& s : run.selections) sets.push_back(s.members);
    res.methods.push_back(count_selection(odp_method_name(method, L), sets, sim.truth));
  };
  for (auto L : cfg.knots_plugin) add_odp(ProfileMethod::plugin, L);
  for (auto L : cfg.knots_normal) add_odp(ProfileMethod::normal, L);

  const auto comp = competitor_stats(d, fits, inner_workers);
  std::vector<double> t(d.p()), s(d.p());
  for (std::size_t k = 0; k < d.p(); ++k) {
    t[k] = comp[k].t_stat;
    s[k] = comp[k].s_stat;
  }
  for (const auto& [name, stats] : {std::pair<const char*, const std::vector<double>*>{"T", &t}, {"S", &s}}) {
    const auto qv = qvalues_from_stats(*stats);
    std::vector<std::vector<std::size_t>> sets;
    for (double level : cfg.fdr_levels) sets.push_back(select_by_q(qv.q_values, level));
    res.methods.push_back(count_selection(name, sets, sim.truth));
  }
  res.ok = true;
  return res;
}

std::size_t BenchmarkSummary::method_index(const std::string& name) const {
  for (std::size_t m = 0; m < methods.size(); ++m) {
    if (methods[m] == name) return m;
  }
  throw ValidationError(fmt::format("benchmark has no method '{}'", name));
}

BenchmarkSummary run_benchmark(const SimConfig& cfg) {
  BenchmarkSummary s;
  s.fdr_levels = cfg.fdr_levels;
  s.replications.resize(cfg.replications);
  parallel_for(cfg.replications, cfg.workers, [&](std::size_t rep) {
    try {
      s.replications[rep] = run_replication(cfg, rep, 1);
    } catch (const std::exception& e) {
      s.replications[rep].ok = false;
      s.replications[rep].error = e.what();
    }
  });

  for (const auto& r : s.replications) {
    if (!r.ok) {
      ++s.failed;
      continue;
    }
    if (s.methods.empty()) {
      for (const auto& m : r.methods) s.methods.push_back(m.method);
    }
  }
  const std::size_t M = s.methods.size();
  const std::size_t Lv = cfg.fdr_levels.size();
  s.avg_tp.assign(M, std::vector<double>(Lv, 0.0));
  s.avg_fp.assign(M, std::vector<double>(Lv, 0.0));
  s.avg_fdp.assign(M, std::vector<double>(Lv, 0.0));
  const double ok = static_cast<double>(cfg.replications - s.failed);
  if (ok == 0.0) return s;
  for (const auto& r : s.replications) {
    if (!r.ok) continue;
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t l = 0; l < Lv; ++l) {
        const double tp = r.methods[m].tp[l];
        const double fp = r.methods[m].fp[l];
        s.avg_tp[m][l] += tp / ok;
        s.avg_fp[m][l] += fp / ok;
        s.avg_fdp[m][l] += fp / std::max(1.0, tp + fp) / ok;
      }
    }
  }
  return s;
}

void write_benchmark(const std::filesystem::path& path, const BenchmarkSummary& s) {
  auto out = fmt::output_file(path.string());
  out.print("method\tfdr_level\tavg_tp\tavg_fp\n");
  for (std::size_t m = 0; m < s.methods.size(); ++m) {
    for (std::size_t l = 0; l < s.fdr_levels.size(); ++l) {
      out.print("{}\t{:.2f}\t{:.4f}\t{:.4f}\n", s.methods[m], s.fdr_levels[l], s.avg_tp[m][l], s.avg_fp[m][l]);
    }
  }
}

void write_benchmark_replications(const std::filesystem::path& path, const BenchmarkSummary& s) {
  auto out = fmt::output_file(path.string());
  out.print("rep\tmethod\tfdr_level\ttp\tfp\n");
  for (std::size_t r = 0; r < s.replications.size(); ++r) {
    const auto& rep = s.replications[r];
    if (!rep.ok) continue;
    for (const auto& m : rep.methods) {
      for (std::size_t l = 0; l < s.fdr_levels.size(); ++l) {
        out.print("{}\t{}\t{:.2f}\t{}\t{}\n", r, m.method, s.fdr_levels[l], m.tp[l], m.fp[l]);
      }
    }
  }
}

}  // namespace odpscreen
