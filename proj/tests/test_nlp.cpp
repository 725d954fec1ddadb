#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <memory>

#include "amgs/datagen.hpp"
#include "amgs/error.hpp"
#include "amgs/nlp.hpp"

using namespace amgs;

namespace {

using Eigen::VectorXd;

// min (x1-1)^2 + (x2-2)^2 s.t. x1 + x2 = 1; optimum (0, 1), J = 2.
NlpFunctions toy_equality() {
  NlpFunctions f;
  f.n = 2;
  f.n_eq = 1;
  f.lower = VectorXd::Constant(2, -10.0);
  f.upper = VectorXd::Constant(2, 10.0);
  f.values = [](const VectorXd& x) {
    NlpValues v;
    v.f = std::pow(x[0] - 1, 2) + std::pow(x[1] - 2, 2);
    v.c = VectorXd::Constant(1, x[0] + x[1] - 1);
    v.g = VectorXd(0);
    return v;
  };
  f.derivatives = [v = f.values](const VectorXd& x) {
    NlpDerivatives d;
    d.v = v(x);
    d.grad = VectorXd(2);
    d.grad << 2 * (x[0] - 1), 2 * (x[1] - 2);
    d.jc = Eigen::MatrixXd::Ones(1, 2);
    d.jg = Eigen::MatrixXd(0, 2);
    return d;
  };
  return f;
}

// min x s.t. x >= 2 as a bound.
NlpFunctions toy_bound() {
  NlpFunctions f;
  f.n = 1;
  f.lower = VectorXd::Constant(1, 2.0);
  f.upper = VectorXd::Constant(1, 10.0);
  f.values = [](const VectorXd& x) {
    NlpValues v;
    v.f = x[0];
    v.c = VectorXd(0);
    v.g = VectorXd(0);
    return v;
  };
  f.derivatives = [v = f.values](const VectorXd& x) {
    NlpDerivatives d;
    d.v = v(x);
    d.grad = VectorXd::Ones(1);
    d.jc = Eigen::MatrixXd(0, 1);
    d.jg = Eigen::MatrixXd(0, 1);
    return d;
  };
  return f;
}

// min x1 + x2 s.t. x1^2 + x2^2 <= 2; optimum (-1, -1).
NlpFunctions toy_inequality() {
  NlpFunctions f;
  f.n = 2;
  f.n_ineq = 1;
  f.lower = VectorXd::Constant(2, -5.0);
  f.upper = VectorXd::Constant(2, 5.0);
  f.values = [](const VectorXd& x) {
    NlpValues v;
    v.f = x[0] + x[1];
    v.c = VectorXd(0);
    v.g = VectorXd::Constant(1, x.squaredNorm() - 2.0);
    return v;
  };
  f.derivatives = [v = f.values](const VectorXd& x) {
    NlpDerivatives d;
    d.v = v(x);
    d.grad = VectorXd::Ones(2);
    d.jc = Eigen::MatrixXd(0, 2);
    d.jg = 2.0 * x.transpose();
    return d;
  };
  return f;
}

std::shared_ptr<HaloFamily> family() {
  static auto f = std::make_shared<HaloFamily>(SystemParams{});
  return f;
}

ProblemSpec desk_spec(Variant v, double alpha) {
  ProblemSpec s;
  s.variant = v;
  s.alpha = alpha;
  s.n_segments = 10;
  return s;
}

}  // namespace

TEST_CASE("equality-constrained toy problem") {
  SolverConfig cfg;
  const auto out = solve(toy_equality(), VectorXd::Zero(2), cfg);
  CHECK(out.status == SolveStatus::kOptimal);
  CHECK(std::abs(out.x_final[0] - 0.0) < 1e-6);
  CHECK(std::abs(out.x_final[1] - 1.0) < 1e-6);
  CHECK(std::abs(out.objective - 2.0) < 1e-6);
}

TEST_CASE("active bound toy problem") {
  SolverConfig cfg;
  const auto out = solve(toy_bound(), VectorXd::Constant(1, 7.0), cfg);
  CHECK(out.status == SolveStatus::kOptimal);
  CHECK(std::abs(out.x_final[0] - 2.0) < 1e-6);
  // A start outside the box is clipped first.
  const auto clipped = solve(toy_bound(), VectorXd::Constant(1, -3.0), cfg);
  CHECK(std::abs(clipped.x_final[0] - 2.0) < 1e-6);
}

TEST_CASE("inequality toy problem") {
  SolverConfig cfg;
  const auto out = solve(toy_inequality(), VectorXd::Constant(2, 0.5), cfg);
  CHECK(out.status == SolveStatus::kOptimal);
  CHECK(std::abs(out.x_final[0] + 1.0) < 1e-6);
  CHECK(std::abs(out.x_final[1] + 1.0) < 1e-6);
  CHECK(std::abs(out.objective + 2.0) < 1e-6);
}

TEST_CASE("classification") {
  SolverConfig cfg;
  SolveOutcome o;
  o.feas_residual = 0.0;
  o.kkt_residual = 0.0;
  CHECK(classify(o, cfg) == SolveStatus::kOptimal);
  o.feas_residual = 1e-7;
  o.kkt_residual = 1.0;
  CHECK(classify(o, cfg) == SolveStatus::kFeasible);
  o.feas_residual = 0.1;
  CHECK(classify(o, cfg) == SolveStatus::kFailed);
  o.feas_residual = 0.1;
  o.kkt_residual = 0.0;
  CHECK(classify(o, cfg) == SolveStatus::kFailed);
  o.feas_residual = std::numeric_limits<double>::quiet_NaN();
  CHECK(classify(o, cfg) == SolveStatus::kFailed);

  for (auto s : {SolveStatus::kFailed, SolveStatus::kFeasible, SolveStatus::kOptimal})
    CHECK(status_from_string(to_string(s)) == s);
}

TEST_CASE("solver config validation") {
  SolverConfig cfg;
  cfg.tol_feas = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = SolverConfig{};
  cfg.max_wall_time_s = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("non-finite start fails") {
  SolverConfig cfg;
  VectorXd x0 = VectorXd::Zero(2);
  x0[0] = std::numeric_limits<double>::quiet_NaN();
  const auto out = solve(toy_equality(), x0, cfg);
  CHECK(out.status == SolveStatus::kFailed);
  CHECK(!out.reason.empty());
}

TEST_CASE("determinism on a desk-scale instance") {
  const Problem pr(desk_spec(Variant::kHybridCost, 0.5), family());
  SolverConfig cfg;
  cfg.max_wall_time_s = 1e6;
  cfg.max_total_iterations = 40;
  const VectorXd x0 = sample_uniform(pr.bounds(), 17);
  const auto a = solve(pr, x0, cfg);
  const auto b = solve(pr, x0, cfg);
  CHECK(a.x_final == b.x_final);
  CHECK(a.objective == b.objective);
  CHECK(a.feas_residual == b.feas_residual);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("monotone feasibility and classification soundness on random instances") {
  SolverConfig cfg;
  cfg.max_wall_time_s = 10.0;
  int optimal = 0;
  for (int k = 0; k < 20; ++k) {
    const Variant v = k % 2 == 0 ? Variant::kHybridCost : Variant::kVariableTerminal;
    const double alpha = 0.05 * k;
    const Problem pr(desk_spec(v, alpha), family());
    const VectorXd x0 = sample_uniform(pr.bounds(), 1000 + k);
    const SolveOutcome out = solve(pr, x0, cfg);
    CAPTURE(k);
    CAPTURE(out.reason);
    REQUIRE(!out.trace.empty());
    // Once the penalty stops rising, max|c| never grows: each outer step that
    // keeps the penalty is no worse than every earlier step.
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : out.trace) {
      if (!r.rho_increased && r.outer > 0) CHECK(r.feas <= best);
      best = std::min(best, r.feas);
    }
    // Re-evaluating at x_final reproduces the reported feasibility.
    if (std::isfinite(out.feas_residual))
      CHECK(std::abs(transcription_feasibility(pr, out.x_final, cfg.integrator_tol) - out.feas_residual) < 1e-10);
    CHECK(out.status == classify(out, cfg));
    CHECK(pr.bounds().lower.cwiseMax(out.x_final).cwiseMin(pr.bounds().upper) == out.x_final);
    optimal += out.status == SolveStatus::kOptimal;
  }
  MESSAGE("optimal runs: " << optimal << " of 20");
}

TEST_CASE("outcome serialization") {
  SolveOutcome o;
  o.status = SolveStatus::kFeasible;
  o.x_final = VectorXd::LinSpaced(3, 0.0, 1.0);
  o.objective = -0.5;
  const auto j = Json::parse(outcome_to_json(o, 42, "uniform"));
  CHECK(j.at("status") == "feasible");
  CHECK(j.at("seed") == 42);
  CHECK(j.at("method") == "uniform");
  CHECK(j.at("x_final").size() == 3);
  for (const char* k : {"objective", "kkt_residual", "feas_residual", "iterations", "wall_time_s"})
    CHECK(j.contains(k));
}
