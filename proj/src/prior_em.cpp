#include "odpscreen/prior_em.hpp"

#include "odpscreen/error.hpp"
#include "odpscreen/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace odpscreen {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPiFloor = 1e-12;
constexpr std::size_t kChunk = 256;

// Knot masses decay geometrically toward zero and turn subnormal, which
// makes every product with them far slower. Subnormals are flushed to zero
// while a guard is alive; they are below any quantity the E-step resolves.
class FlushDenormals {
 public:
#if defined(__SSE2__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

// Neumaier-compensated accumulator.
struct CompensatedSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      c += (sum - t) + x;
    } else {
      c += (x - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + c; }
};

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

void check_tables(std::span<const ProfileTable> tables, std::size_t L) {
  for (const auto& t : tables) {
    if (t.log_pl_knots.size() != L) {
      throw ValidationError(fmt::format("profile table for biomarker {} has {} knots, grid has {}", t.k + 1,
                                        t.log_pl_knots.size(), L));
    }
    if (!std::isfinite(t.log_pl_null) ||
        !std::all_of(t.log_pl_knots.begin(), t.log_pl_knots.end(), [](double v) { return std::isfinite(v); })) {
      throw ValidationError(fmt::format("profile table for biomarker {} has non-finite entries", t.k + 1));
    }
  }
}

// Per-table likelihoods shifted by their maximum so every entry is in (0, 1].
class ShiftedTables {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  ShiftedTables(std::span<const ProfileTable> tables, std::size_t L)
      : tables_(tables), K_(tables.size()), L_(L), knots_(static_cast<Eigen::Index>(K_), static_cast<Eigen::Index>(L)) {
    shift_.resize(K_);
    null_.resize(K_);
    null_lin_.resize(K_);
    for (std::size_t k = 0; k < K_; ++k) {
      const auto& t = tables[k];
      double m = t.log_pl_null;
      for (double v : t.log_pl_knots) m = std::max(m, v);
      shift_[k] = m;
      null_[k] = t.log_pl_null - m;
      null_lin_[k] = std::exp(null_[k]);
      for (std::size_t l = 0; l < L_; ++l) {
        knots_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) = std::exp(t.log_pl_knots[l] - m);
      }
    }
  }

  std::size_t size() const { return K_; }
  std::size_t knots() const { return L_; }

  auto block(std::size_t begin, std::size_t end) const {
    return knots_.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
  }

  double shift(std::size_t k) const { return shift_[k]; }
  double log_null(std::size_t k) const { return null_[k]; }
  double null_lin(std::size_t k) const { return null_lin_[k]; }

  // log sum_l p_l PL_k(a_l) - shift, in the log domain.
  double log_mix_slow(std::size_t k, const std::vector<double>& logp) const {
    double lm = kNegInf;
    const auto& lk = tables_[k].log_pl_knots;
    for (std::size_t l = 0; l < L_; ++l) {
      if (logp[l] == kNegInf) continue;
      lm = log_add(lm, logp[l] + lk[l] - shift_[k]);
    }
    return lm;
  }

  // Adds weight * eta_kl to out, in the log domain.
  void add_eta_slow(std::size_t k, double log_mix, const std::vector<double>& logp, double weight, double* out) const {
    if (weight == 0.0 || log_mix == kNegInf) return;
    const auto& lk = tables_[k].log_pl_knots;
    for (std::size_t l = 0; l < L_; ++l) {
      if (logp[l] == kNegInf) continue;
      out[l] += weight * std::exp(logp[l] + lk[l] - shift_[k] - log_mix);
    }
  }

 private:
  std::span<const ProfileTable> tables_;
  std::size_t K_;
  std::size_t L_;
  std::vector<double> shift_;
  std::vector<double> null_;
  std::vector<double> null_lin_;
  RowMatrix knots_;
};

// E-step for one table: log marginal (shift removed), xi and the
// non-null mixture sum. `mix` is sum_l p_l e_kl from the shifted table.
struct RowState {
  double log_d = 0.0;
  double xi = 0.0;
  double mix = 0.0;
  double log_mix = kNegInf;
  bool slow = false;
};

RowState e_step_row(const ShiftedTables& t, std::size_t k, double mix, double pi, double lpi, double l1pi,
                    const std::vector<double>& logp) {
  RowState r;
  r.mix = mix;
  if (mix > 1e-280) {
    const double a = pi * t.null_lin(k);
    const double b = (1.0 - pi) * mix;
    const double d = a + b;
    if (d > 1e-280) {
      r.log_d = std::log(d);
      r.xi = a / d;
      r.log_mix = std::log(mix);
      return r;
    }
  }
  // Underflow: redo everything in the log domain.
  r.slow = true;
  r.log_mix = t.log_mix_slow(k, logp);
  const double a = lpi == kNegInf ? kNegInf : lpi + t.log_null(k);
  const double b = (l1pi == kNegInf || r.log_mix == kNegInf) ? kNegInf : l1pi + r.log_mix;
  r.log_d = log_add(a, b);
  r.xi = a == kNegInf ? 0.0 : std::exp(a - r.log_d);
  return r;
}

struct ChunkResult {
  CompensatedSum loglik;
  CompensatedSum xi;
  CompensatedSum mix_weight;
  Eigen::VectorXd acc;     // sum_k scale_k e_kl, multiplied by p_l afterwards
  std::vector<double> direct;  // eta sums of rows handled in the log domain
  bool nan = false;
};

}  // namespace

std::string to_string(MStep m) { return m == MStep::weighted ? "weighted" : "appendix"; }

MStep parse_mstep(const std::string& s) {
  if (s == "weighted") return MStep::weighted;
  if (s == "appendix") return MStep::appendix;
  throw ValidationError(fmt::format("unknown M-step variant '{}'", s));
}

KnotGrid select_knots(std::span<const double> beta_hats, std::size_t L) {
  if (L < 2) throw ValidationError("at least two knots are required");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double b : beta_hats) {
    if (!std::isfinite(b)) continue;
    lo = std::min(lo, b);
    hi = std::max(hi, b);
  }
  if (!(hi > lo)) throw ValidationError("degenerate knot range");
  KnotGrid g;
  g.lower = lo;
  g.upper = hi;
  g.a.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    g.a[l] = lo + static_cast<double>(l) * (hi - lo) / static_cast<double>(L - 1);
  }
  return g;
}

KnotGrid select_knots(std::span<const BiomarkerFit> fits, std::size_t L) {
  std::vector<double> betas;
  for (const auto& f : fits) {
    if (f.usable()) betas.push_back(f.beta_hat);
  }
  return select_knots(betas, L);
}

MixturePrior uniform_prior(const KnotGrid& grid, double pi) {
  MixturePrior prior;
  prior.pi = pi;
  prior.grid = grid;
  prior.p.assign(grid.size(), 1.0 / static_cast<double>(grid.size()));
  return prior;
}

double marginal_loglik(std::span<const ProfileTable> tables, const MixturePrior& prior) {
  const double lpi = safe_log(prior.pi);
  const double l1pi = prior.pi < 1.0 ? std::log1p(-prior.pi) : kNegInf;
  CompensatedSum total;
  for (const auto& t : tables) {
    // Max-subtraction over every term of the mixture.
    double m = t.log_pl_null;
    for (double v : t.log_pl_knots) m = std::max(m, v);
    double mix = kNegInf;
    for (std::size_t l = 0; l < t.log_pl_knots.size(); ++l) {
      if (prior.p[l] > 0.0) mix = log_add(mix, std::log(prior.p[l]) + t.log_pl_knots[l] - m);
    }
    const double a = lpi == kNegInf ? kNegInf : lpi + t.log_pl_null - m;
    const double b = l1pi == kNegInf || mix == kNegInf ? kNegInf : l1pi + mix;
    total.add(m + log_add(a, b));
  }
  return total.value();
}

EmResult em_fit(std::span<const ProfileTable> tables, const MixturePrior& init, const EmOptions& opts) {
  const std::size_t L = init.grid.size();
  if (init.p.size() != L) throw ValidationError("prior masses and knot grid differ in length");
  if (!(init.pi >= 0.0 && init.pi <= 1.0)) throw ValidationError("initial null mass must lie in [0,1]");
  double psum = 0.0;
  for (double v : init.p) {
    if (!(v >= 0.0)) throw ValidationError("initial knot masses must be non-negative");
    psum += v;
  }
  if (std::abs(psum - 1.0) > 1e-10) throw ValidationError("initial knot masses must sum to 1");
  if (tables.empty()) throw ValidationError("EM needs at least one profile table");
  check_tables(tables, L);

  const ShiftedTables shifted(tables, L);
  const std::size_t K = shifted.size();
  const std::size_t chunks = (K + kChunk - 1) / kChunk;

  EmResult res;
  res.prior = init;
  auto& trace = res.trace;
  trace.boundary_init = init.pi == 0.0 || init.pi == 1.0;
  double raw_pi = init.pi;

  std::vector<ChunkResult> parts(chunks);
  std::vector<double> logp(L);
  double prev_ll = 0.0;

  for (int iter = 0;; ++iter) {
    const auto& p = res.prior.p;
    for (std::size_t l = 0; l < L; ++l) logp[l] = safe_log(p[l]);
    const double lpi = safe_log(res.prior.pi);
    const double l1pi = res.prior.pi < 1.0 ? std::log1p(-res.prior.pi) : kNegInf;
    const bool weighted = opts.mstep == MStep::weighted;
    const double pi = res.prior.pi;
    const Eigen::Map<const Eigen::VectorXd> pvec(p.data(), static_cast<Eigen::Index>(L));

    parallel_for(chunks, opts.workers, [&](std::size_t c) {
      const FlushDenormals guard;
      ChunkResult& part = parts[c];
      part = ChunkResult{};
      part.direct.assign(L, 0.0);
      const std::size_t begin = c * kChunk;
      const std::size_t end = std::min(K, begin + kChunk);
      const auto E = shifted.block(begin, end);
      const Eigen::VectorXd mix = E * pvec;
      Eigen::VectorXd scale = Eigen::VectorXd::Zero(mix.size());
      for (std::size_t k = begin; k < end; ++k) {
        const auto i = static_cast<Eigen::Index>(k - begin);
        const auto r = e_step_row(shifted, k, mix(i), pi, lpi, l1pi, logp);
        if (std::isnan(r.xi) || std::isnan(r.log_d)) {
          part.nan = true;
          return;
        }
        part.loglik.add(shifted.shift(k) + r.log_d);
        part.xi.add(r.xi);
        const double weight = weighted ? 1.0 - r.xi : 1.0;
        part.mix_weight.add(weight);
        if (r.slow) {
          shifted.add_eta_slow(k, r.log_mix, logp, weight, part.direct.data());
        } else {
          scale(i) = weight / r.mix;
        }
      }
      part.acc = E.transpose() * scale;
    });

    CompensatedSum ll_sum;
    CompensatedSum xi_sum;
    std::vector<CompensatedSum> acc(L);
    for (const auto& part : parts) {
      if (part.nan) throw NumericalError("EM responsibilities became NaN");
      ll_sum.add(part.loglik.value());
      xi_sum.add(part.xi.value());
      for (std::size_t l = 0; l < L; ++l) {
        acc[l].add(p[l] * part.acc(static_cast<Eigen::Index>(l)));
        acc[l].add(part.direct[l]);
      }
    }
    const double ll = ll_sum.value();
    trace.loglik.push_back(ll);
    trace.pi.push_back(res.prior.pi);

    if (iter > 0 && std::abs(ll - prev_ll) < opts.tol * std::max(std::abs(prev_ll), 1.0)) {
      trace.converged = true;
      trace.iterations = iter;
      break;
    }
    if (iter >= opts.max_iter) {
      trace.iterations = iter;
      break;
    }
    prev_ll = ll;

    // M-step.
    raw_pi = xi_sum.value() / static_cast<double>(K);
    double total = 0.0;
    std::vector<double> next(L);
    for (std::size_t l = 0; l < L; ++l) {
      next[l] = acc[l].value();
      total += next[l];
    }
    if (total > 0.0) {
      for (auto& v : next) v /= total;
      res.prior.p = std::move(next);
    }
    res.prior.pi = trace.boundary_init ? raw_pi : std::clamp(raw_pi, kPiFloor, 1.0 - kPiFloor);
  }

  // Final responsibilities at the reported prior.
  trace.xi.assign(K, 0.0);
  trace.eta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(L));
  {
    const auto& p = res.prior.p;
    for (std::size_t l = 0; l < L; ++l) logp[l] = safe_log(p[l]);
    const double lpi = safe_log(res.prior.pi);
    const double l1pi = res.prior.pi < 1.0 ? std::log1p(-res.prior.pi) : kNegInf;
    const Eigen::Map<const Eigen::VectorXd> pvec(p.data(), static_cast<Eigen::Index>(L));
    parallel_for(K, opts.workers, [&](std::size_t k) {
      const FlushDenormals guard;
      const auto kk = static_cast<Eigen::Index>(k);
      const auto E = shifted.block(k, k + 1);
      const double mix = E.row(0).dot(pvec.transpose());
      const auto r = e_step_row(shifted, k, mix, res.prior.pi, lpi, l1pi, logp);
      trace.xi[k] = r.xi;
      if (r.slow) {
        std::vector<double> eta(L, 0.0);
        shifted.add_eta_slow(k, r.log_mix, logp, 1.0, eta.data());
        for (std::size_t l = 0; l < L; ++l) trace.eta(kk, static_cast<Eigen::Index>(l)) = eta[l];
      } else {
        for (std::size_t l = 0; l < L; ++l) {
          trace.eta(kk, static_cast<Eigen::Index>(l)) = p[l] * E(0, static_cast<Eigen::Index>(l)) / mix;
        }
      }
    });
  }
  res.prior.pi = raw_pi;
  return res;
}

}  // namespace odpscreen
