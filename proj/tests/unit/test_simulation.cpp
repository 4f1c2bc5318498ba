#include "odpscreen/error.hpp"
#include "odpscreen/simulation.hpp"

#include <doctest.h>

#include <cmath>

using namespace odpscreen;

namespace {

constexpr std::size_t kBig = 100000;
const double kTol = 4.0 / std::sqrt(static_cast<double>(kBig));

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd x = a.array() - a.mean();
  const Eigen::ArrayXd y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
}

double var(const Eigen::VectorXd& a) { return (a.array() - a.mean()).square().sum() / static_cast<double>(a.size() - 1); }

SimTruth zero_truth(std::size_t p) {
  SimTruth t;
  t.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  t.null_mask.assign(p, true);
  return t;
}

}  // namespace

TEST_CASE("covariates: unit variances and AR(1) correlations") {
  auto rng = replication_rng(1, 0);
  const auto X = gen_covariates(kBig, 12, rng);
  for (Eigen::Index j = 0; j < 12; ++j) {
    CHECK(std::abs(var(X.col(j)) - 1.0) < kTol);
    CHECK(std::abs(X.col(j).mean()) < kTol);
  }
  for (Eigen::Index j = 1; j < 12; ++j) CHECK(std::abs(corr(X.col(j), X.col(j - 1)) - 0.1) < kTol);
  for (Eigen::Index j = 2; j < 12; ++j) CHECK(std::abs(corr(X.col(j), X.col(j - 2)) - 0.01) < kTol);
  CHECK(std::abs(corr(X.col(0), X.col(5))) < kTol);
}

TEST_CASE("confounders: conditional mean, unit variance and covariance 0.2") {
  auto rng = replication_rng(2, 0);
  const auto X = gen_covariates(kBig, 10, rng);
  const auto Z = gen_confounders(X, rng);
  REQUIRE(Z.cols() == 2);
  Eigen::MatrixXd D(static_cast<Eigen::Index>(kBig), 3);
  D << Eigen::VectorXd::Ones(static_cast<Eigen::Index>(kBig)), X.col(0), X.col(9);
  const Eigen::VectorXd coef = D.colPivHouseholderQr().solve(Z.col(0));
  CHECK(std::abs(coef(0)) < kTol);
  CHECK(std::abs(coef(1) - 0.1) < kTol);
  CHECK(std::abs(coef(2) + 0.1) < kTol);
  // given X: unit variances, covariance 0.2
  const Eigen::VectorXd r1 = Z.col(0) - D * coef;
  const Eigen::VectorXd coef2 = D.colPivHouseholderQr().solve(Z.col(1));
  const Eigen::VectorXd r2 = Z.col(1) - D * coef2;
  CHECK(std::abs(var(r1) - 1.0) < kTol);
  CHECK(std::abs(var(r2) - 1.0) < kTol);
  CHECK(std::abs(r1.dot(r2) / kBig - 0.2) < kTol);

  auto small = replication_rng(2, 1);
  CHECK_THROWS_AS(gen_confounders(gen_covariates(5, 9, small), small), ValidationError);
}

TEST_CASE("treatment probabilities") {
  auto rng = replication_rng(3, 0);
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, 10);
  X(1, 0) = 10.0;
  const auto draw = gen_treatment(X, Eigen::MatrixXd::Zero(2, 2), rng);
  CHECK(draw.propensity(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(draw.propensity(1) == doctest::Approx(0.8807970779778823).epsilon(1e-14));
  CHECK(std::abs(draw.treatment(0)) == 1.0);

  const auto Xb = gen_covariates(kBig, 10, rng);
  const auto Zb = gen_confounders(Xb, rng);
  const auto big = gen_treatment(Xb, Zb, rng);
  const double treated = (big.treatment.array() > 0).cast<double>().mean();
  CHECK(std::abs(treated - 0.5) < kTol);
  // draws follow the stated probabilities
  CHECK(std::abs(treated - big.propensity.mean()) < kTol);
}

TEST_CASE("effect mixture") {
  auto rng = replication_rng(4, 0);
  const auto t = gen_effects(kBig, 0.5, rng);
  double nulls = 0, sum = 0, sum2 = 0, high = 0;
  for (std::size_t k = 0; k < kBig; ++k) {
    const double b = t.beta(static_cast<Eigen::Index>(k));
    CHECK(t.null_mask[k] == (b == 0.0));
    if (b == 0.0) {
      ++nulls;
      continue;
    }
    sum += b;
    sum2 += b * b;
    high += b > -0.15;
  }
  const double nn = kBig - nulls;
  CHECK(std::abs(nulls / kBig - 0.5) < 4 * std::sqrt(0.25 / kBig));
  const double mean = sum / nn;
  const double sd = std::sqrt(sum2 / nn - mean * mean);
  CHECK(std::abs(mean + 0.29) < 4 * sd / std::sqrt(nn));
  CHECK(std::abs(high / nn - 0.3) < 4 * std::sqrt(0.21 / nn));

  const auto degenerate = gen_effects(kBig, 1.0 - 1e-9, rng);
  CHECK(degenerate.beta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("latent index variance matches the analytic value") {
  auto rng = replication_rng(5, 0);
  const auto X = gen_covariates(kBig, 10, rng);
  const Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kBig), 2);
  const Eigen::VectorXd T = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(kBig));
  auto truth = zero_truth(10);
  truth.xi1 = truth.xi2 = 0.0;
  const auto idx = latent_index(X, Z, T, truth);
  // Var(sum g X) = g' S g, Var(sum d X^2) = 2 d' (S o S) d, and the two are uncorrelated
  Eigen::MatrixXd S(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) S(i, j) = std::pow(0.1, std::abs(i - j));
  const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(truth.gamma.data(), 6);
  const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(truth.delta.data(), 6);
  const double analytic = g.dot(S * g) + 2.0 * d.dot(S.cwiseProduct(S) * d);
  const Eigen::ArrayXd c = idx.array() - idx.mean();
  const double v = c.square().mean();
  const double se = std::sqrt(((c.square() - v).square()).mean() / kBig);
  CHECK(std::abs(v - analytic) < 4 * se);
  CHECK(std::abs(idx.mean() - d.sum()) < 4 * std::sqrt(v / kBig));
}

TEST_CASE("outcomes: symmetric threshold and survival censoring") {
  auto rng = replication_rng(6, 0);
  const auto X = gen_covariates(kBig, 10, rng);
  const Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kBig), 2);
  Eigen::VectorXd T = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(kBig));
  auto truth = zero_truth(10);
  truth.gamma.assign(6, 0.0);
  truth.delta.assign(6, 0.0);
  const auto bin = gen_outcome(X, Z, T, truth, SimOutcome::binary, rng);
  const auto& y = std::get<BinaryOutcomes>(bin).y;
  double ones = 0;
  for (double v : y) ones += v;
  CHECK(std::abs(ones / kBig - 0.5) < kTol);

  SimConfig cfg;
  cfg.n = 20000;
  cfg.p = 200;
  cfg.outcome = SimOutcome::survival;
  const auto sim = simulate(cfg, 0);
  const double cens = censoring_fraction(sim.data);
  MESSAGE("censoring fraction ", cens);
  CHECK(cens >= 0.2);
  CHECK(cens <= 0.4);
  const auto& so = std::get<SurvivalOutcomes>(sim.data.outcomes);
  for (std::size_t i = 0; i < so.time.size(); ++i) {
    CHECK(so.time[i] > 0.0);
    if (so.event[i] == 0.0) CHECK((so.time[i] >= 20.0 && so.time[i] <= 60.0));
  }
}

TEST_CASE("replications are reproducible and independent of workers") {
  SimConfig cfg;
  cfg.n = 150;
  cfg.p = 40;
  cfg.seed = 77;
  const auto a = simulate(cfg, 3);
  const auto b = simulate(cfg, 3);
  const auto c = simulate(cfg, 4);
  CHECK(a.data.X == b.data.X);
  CHECK(a.data.treatment == b.data.treatment);
  CHECK(a.truth.beta == b.truth.beta);
  CHECK(a.data.X != c.data.X);
  REQUIRE(a.data.q() == 2);
  cfg.confounders_in_dataset = false;
  const auto noz = simulate(cfg, 3);
  CHECK(noz.data.q() == 0);
  CHECK(noz.data.X == a.data.X);

  cfg.confounders_in_dataset = true;
  cfg.replications = 3;
  cfg.knots_normal = {20, 40};
  cfg.knots_plugin = {20};
  cfg.workers = 1;
  const auto s1 = run_benchmark(cfg);
  cfg.workers = 3;
  const auto s3 = run_benchmark(cfg);
  CHECK(s1.methods == s3.methods);
  CHECK(s1.avg_tp == s3.avg_tp);
  CHECK(s1.avg_fp == s3.avg_fp);
  CHECK(s1.failed == 0);
  CHECK(s1.methods == std::vector<std::string>{"ODP-P(L=20)", "ODP-N(L=20)", "ODP-N(L=40)", "T", "S"});
}

TEST_CASE("zero-signal benchmark finds nothing") {
  SimConfig cfg;
  cfg.n = 200;
  cfg.p = 60;
  cfg.pi_null = 1.0 - 1e-9;
  cfg.replications = 2;
  cfg.knots_normal = {30};
  cfg.knots_plugin = {30};
  const auto s = run_benchmark(cfg);
  REQUIRE(s.failed == 0);
  for (const auto& m : s.avg_tp)
    for (double v : m) CHECK(v == 0.0);
}
