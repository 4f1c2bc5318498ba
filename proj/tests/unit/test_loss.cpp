#include "odpscreen/biomarker_fit.hpp"
#include "odpscreen/error.hpp"
#include "odpscreen/loss.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace odpscreen;

namespace {

Eigen::VectorXd random_weights(std::size_t n, oracle::Rng& rng) {
  std::uniform_real_distribution<double> U(0.2, 3.0);
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = U(rng);
  return w * (static_cast<double>(n) / w.sum());
}

const std::vector<double>& response(const Outcomes& o) {
  if (auto* b = std::get_if<BinaryOutcomes>(&o)) return b->y;
  return std::get<SurvivalOutcomes>(o).time;
}

double oracle_value(LossKind kind, const Dataset& d, const Eigen::VectorXd& w, const Eigen::VectorXd& eta) {
  switch (kind) {
    case LossKind::squared:
      return oracle::squared_loss(response(d.outcomes), w, eta);
    case LossKind::binomial:
      return oracle::binomial_loss(response(d.outcomes), w, eta);
    case LossKind::cox: {
      const auto& s = std::get<SurvivalOutcomes>(d.outcomes);
      return oracle::cox_loss_bruteforce(s.time, s.event, w, eta);
    }
  }
  return 0;
}

}  // namespace

TEST_CASE("squared loss at theta = 0 is the sum of squared responses") {
  oracle::Rng rng(1);
  const auto d = oracle::random_binary(30, 2, 1, rng);
  const auto& y = std::get<BinaryOutcomes>(d.outcomes).y;
  const LossProblem prob(LossKind::squared, d.outcomes, Eigen::VectorXd::Ones(30));
  const auto obj = prob.evaluate(interaction_design(d, 0), Eigen::VectorXd::Zero(3));
  CHECK(obj.value == std::accumulate(y.begin(), y.end(), 0.0, [](double a, double v) { return a + v * v; }));
}

TEST_CASE("cox loss on three uncensored subjects equals the hand expansion") {
  // times 1 < 2 < 3: risk sets {1,2,3}, {2,3}, {3}
  const Eigen::VectorXd w = (Eigen::VectorXd(3) << 0.5, 1.0, 1.5).finished();
  const Eigen::VectorXd eta = (Eigen::VectorXd(3) << 0.3, -0.2, 0.7).finished();
  const LossProblem prob(LossKind::cox, SurvivalOutcomes{{2.0, 1.0, 3.0}, {1, 1, 1}}, w);
  auto e = [&](int i) { return w(i) * std::exp(eta(i)); };
  const double expected = -(w(1) * (eta(1) - std::log(e(0) + e(1) + e(2))) + w(0) * (eta(0) - std::log(e(0) + e(2))) +
                            w(2) * (eta(2) - std::log(e(2))));
  CHECK(prob.value(eta) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("loss values agree with independent evaluations, with ties and censoring") {
  oracle::Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    auto surv = oracle::random_survival(60, 1, 2, rng);
    // force ties in observed time, including event/censor ties
    auto so = std::get<SurvivalOutcomes>(surv.outcomes);
    for (std::size_t i = 0; i < so.time.size(); i += 3) so.time[i] = std::round(so.time[i] * 4) / 4 + 0.25;
    surv = make_dataset(so, surv.treatment, surv.X, surv.Z);
    const auto bin = oracle::random_binary(60, 1, 2, rng);
    const Eigen::VectorXd w = random_weights(60, rng);
    const Eigen::VectorXd theta = oracle::normal_matrix(4, 1, rng);
    for (auto kind : {LossKind::squared, LossKind::binomial, LossKind::cox}) {
      const Dataset& d = kind == LossKind::cox ? surv : bin;
      const LossProblem prob(kind, d.outcomes, w);
      const Eigen::VectorXd eta = oracle::interaction_eta(d, 0, theta);
      const double v = prob.evaluate(interaction_design(d, 0), theta).value;
      CHECK(v == doctest::Approx(oracle_value(kind, d, w, eta)).epsilon(1e-12));
      CHECK(prob.value(eta) == doctest::Approx(v).epsilon(1e-13));
    }
  }
}

TEST_CASE("gradients and Hessians match central finite differences") {
  oracle::Rng rng(3);
  std::uniform_int_distribution<int> nd(10, 100), qd(0, 2);
  double worst_g = 0, worst_h = 0;
  for (int rep = 0; rep < 30; ++rep) {
    const auto n = static_cast<std::size_t>(nd(rng));
    const auto q = static_cast<std::size_t>(qd(rng));
    const auto bin = oracle::random_binary(n, 1, q, rng);
    const auto surv = oracle::random_survival(n, 1, q, rng);
    const Eigen::VectorXd w = random_weights(n, rng);
    const Eigen::VectorXd theta = 0.5 * oracle::normal_matrix(q + 2, 1, rng);
    for (auto kind : {LossKind::squared, LossKind::binomial, LossKind::cox}) {
      const Dataset& d = kind == LossKind::cox ? surv : bin;
      const LossProblem prob(kind, d.outcomes, w);
      const Eigen::MatrixXd D = interaction_design(d, 0);
      const auto obj = prob.evaluate(D, theta);
      const auto g_fd = oracle::central_gradient([&](const Eigen::VectorXd& t) { return prob.value(D * t); }, theta);
      const auto h_fd = oracle::central_jacobian([&](const Eigen::VectorXd& t) { return prob.evaluate(D, t).gradient; },
                                                 theta);
      worst_g = std::max(worst_g, oracle::rel_error(obj.gradient, g_fd));
      worst_h = std::max(worst_h, oracle::rel_error(obj.hessian, h_fd));
    }
  }
  CHECK(worst_g < 1e-5);
  CHECK(worst_h < 1e-5);
}

TEST_CASE("binomial and cox Hessians are positive semidefinite") {
  oracle::Rng rng(4);
  for (int rep = 0; rep < 40; ++rep) {
    const auto bin = oracle::random_binary(25, 1, 2, rng);
    const auto surv = oracle::random_survival(25, 1, 2, rng);
    const Eigen::VectorXd w = random_weights(25, rng);
    const Eigen::VectorXd theta = 3.0 * oracle::normal_matrix(4, 1, rng);
    for (auto kind : {LossKind::binomial, LossKind::cox}) {
      const Dataset& d = kind == LossKind::cox ? surv : bin;
      const LossProblem prob(kind, d.outcomes, w);
      const auto obj = prob.evaluate(interaction_design(d, 0), theta);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(obj.hessian);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff()));
    }
  }
}

TEST_CASE("squared loss minimum matches the weighted normal equations") {
  oracle::Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto d = oracle::random_binary(80, 1, 2, rng);
    const Eigen::VectorXd w = random_weights(80, rng);
    const LossProblem prob(LossKind::squared, d.outcomes, w);
    const Eigen::MatrixXd D = interaction_design(d, 0);
    const auto& y = std::get<BinaryOutcomes>(d.outcomes).y;
    const Eigen::VectorXd Y = Eigen::Map<const Eigen::VectorXd>(y.data(), 80);
    const Eigen::MatrixXd DtW = D.transpose() * w.asDiagonal();
    const Eigen::VectorXd closed = (DtW * D).ldlt().solve(DtW * Y);
    const auto fit = newton_minimize(prob, D);
    REQUIRE(fit.converged);
    CHECK(oracle::rel_error(fit.theta, closed) < 1e-10);
    CHECK(fit.objective == doctest::Approx(oracle::squared_loss(y, w, D * closed)).epsilon(1e-10));
  }
}

TEST_CASE("binomial loss is stable for extreme predictors") {
  const LossProblem prob(LossKind::binomial, BinaryOutcomes{{1, 0, 1, 0}}, Eigen::VectorXd::Ones(4));
  const Eigen::VectorXd eta = (Eigen::VectorXd(4) << 800, 800, -800, -800).finished();
  // y=1,eta=800 -> 0; y=0,eta=800 -> 800; y=1,eta=-800 -> 800; y=0,eta=-800 -> 0
  CHECK(prob.value(eta) == doctest::Approx(1600.0).epsilon(1e-15));
}

TEST_CASE("loss kinds must suit the outcome type") {
  CHECK_THROWS_AS(LossProblem(LossKind::cox, BinaryOutcomes{{0, 1}}, Eigen::VectorXd::Ones(2)), ValidationError);
  CHECK_THROWS_AS(LossProblem(LossKind::binomial, SurvivalOutcomes{{1, 2}, {1, 0}}, Eigen::VectorXd::Ones(2)),
                  ValidationError);
  CHECK_THROWS_AS(LossProblem(LossKind::binomial, BinaryOutcomes{{0, 1}}, Eigen::VectorXd::Ones(3)), ValidationError);
  CHECK(default_loss(BinaryOutcomes{}) == LossKind::binomial);
  CHECK(default_loss(SurvivalOutcomes{}) == LossKind::cox);
  CHECK(parse_loss_kind("cox") == LossKind::cox);
  CHECK_THROWS_AS(parse_loss_kind("huber"), ValidationError);
}

TEST_CASE("interaction design columns") {
  oracle::Rng rng(6);
  const auto d = oracle::random_binary(10, 3, 2, rng);
  const auto D = interaction_design(d, 2);
  REQUIRE(D.cols() == 4);
  for (Eigen::Index i = 0; i < 10; ++i) {
    CHECK(D(i, 0) == d.treatment(i));
    CHECK(D(i, 1) == d.treatment(i) * d.X(i, 2));
    CHECK(D(i, 3) == d.treatment(i) * d.Z(i, 1));
  }
}
