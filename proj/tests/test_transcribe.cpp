#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "amgs/datagen.hpp"
#include "amgs/error.hpp"
#include "amgs/rng.hpp"
#include "amgs/transcribe.hpp"

using namespace amgs;

namespace {

ProblemSpec spec_of(Variant v, double alpha, int n = 10) {
  ProblemSpec s;
  s.variant = v;
  s.alpha = alpha;
  s.n_segments = n;
  return s;
}

std::shared_ptr<HaloFamily> family() {
  static auto f = std::make_shared<HaloFamily>(SystemParams{});
  return f;
}

// A moderate decision vector away from the lunar approach.
Eigen::VectorXd moderate_x(const Problem& pr, std::uint64_t seed) {
  const Layout L = pr.layout();
  CounterRng r(seed);
  Eigen::VectorXd x(pr.dim());
  x[Layout::kTauS] = r.uniform(2.0, 4.0);
  x[Layout::kTauI] = r.uniform(0.5, 1.0);
  x[Layout::kTauF] = r.uniform(0.5, 1.5);
  if (pr.spec().variant == Variant::kVariableTerminal) {
    x[Layout::kT1] = r.uniform(0.2, 2.0);
    x[Layout::kT2] = r.uniform(5.5, 9.0);
  }
  x[L.m_f()] = r.uniform(600.0, 700.0);
  for (int k = 0; k < L.n; ++k)
    for (int a = 0; a < 3; ++a) x[L.u(k, a)] = r.uniform(-0.5, 0.5);
  return x;
}

SystemParams leg_params(const ProblemSpec& s) {
  SystemParams p = s.params;
  p.mass_floor_kg = 1e-6;
  p.flow_smoothing_newtons = s.flow_smoothing_newtons;
  return p;
}

ControlSchedule forward_schedule(const Eigen::VectorXd& x, const Layout& L) {
  ControlSchedule s{{x[Layout::kTauI], Vec3::Zero()}};
  const double dt = x[Layout::kTauS] / L.n;
  for (int k = 0; k < L.n / 2; ++k) s.push_back({dt, Vec3(x[L.u(k, 0)], x[L.u(k, 1)], x[L.u(k, 2)])});
  return s;
}

// Backward-leg controls in forward time order, then the final coast.
ControlSchedule backward_schedule(const Eigen::VectorXd& x, const Layout& L) {
  ControlSchedule s;
  const double dt = x[Layout::kTauS] / L.n;
  for (int k = L.n / 2; k < L.n; ++k) s.push_back({dt, Vec3(x[L.u(k, 0)], x[L.u(k, 1)], x[L.u(k, 2)])});
  s.push_back({x[Layout::kTauF], Vec3::Zero()});
  return s;
}

double rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace

TEST_CASE("initial boundary is deterministic and physical") {
  const SystemParams p;
  const State7 a = initial_boundary(p), b = initial_boundary(p);
  CHECK(a.q == b.q);
  CHECK(a.v == b.v);
  CHECK(a.m == b.m);
  CHECK(a.m < 1000.0);
  CHECK(a.m > 300.0);

  const Trajectory tr = spiral_trajectory(p);
  REQUIRE(tr.states.size() > 10);
  int rises = 0;
  for (std::size_t i = 1; i < tr.states.size(); ++i) rises += energy(tr.states[i], p) > energy(tr.states[i - 1], p);
  CHECK(rises == static_cast<int>(tr.states.size()) - 1);
  CHECK((tr.final.qv() - a.qv()).norm() == 0.0);
}

TEST_CASE("decision vector dimension and layout") {
  for (int n : {4, 10, 20}) {
    CHECK(spec_of(Variant::kHybridCost, 0.0, n).dim() == 3 * n + 4);
    CHECK(spec_of(Variant::kVariableTerminal, 0.0, n).dim() == 3 * n + 6);
  }
  const Layout L{Variant::kVariableTerminal, 10};
  CHECK(L.m_f() == 5);
  CHECK(L.u(0, 0) == 6);
  CHECK(L.u(9, 2) == 35);
  CHECK(L.dim() == 36);

  DecisionVector d;
  d.tau_s = 1;
  d.tau_i = 2;
  d.tau_f = 3;
  d.t1 = 4;
  d.t2 = 5;
  d.m_f = 6;
  d.u = {Vec3(7, 8, 9), Vec3(10, 11, 12)};
  const Eigen::VectorXd x = d.flatten(Variant::kVariableTerminal);
  for (int i = 0; i < 12; ++i) CHECK(x[i] == i + 1);
  const DecisionVector back = DecisionVector::unflatten(x, Variant::kVariableTerminal, 2);
  CHECK(back.u[1] == d.u[1]);
  CHECK(back.m_f == 6);
  CHECK(d.flatten(Variant::kHybridCost).size() == 10);
}

TEST_CASE("hybrid cost closed forms") {
  ProblemSpec s = spec_of(Variant::kHybridCost, 1.0);
  const Layout L{s.variant, s.n_segments};
  Eigen::VectorXd x = Eigen::VectorXd::Zero(s.dim());
  x[L.m_f()] = 800.0;
  CHECK(hybrid_cost(x, s) == doctest::Approx(-0.8).epsilon(1e-15));

  s.alpha = 0.0;
  x[Layout::kTauS] = s.tau_s_max;
  x[Layout::kTauI] = s.tau_i_max;
  x[Layout::kTauF] = s.tau_f_max;
  CHECK(hybrid_cost(x, s) == doctest::Approx(1.0).epsilon(1e-15));

  x[Layout::kTauS] = 3.0;
  x[Layout::kTauI] = 1.0;
  x[Layout::kTauF] = 0.5;
  s.alpha = 0.0;
  const double j0 = hybrid_cost(x, s);
  s.alpha = 1.0;
  const double j1 = hybrid_cost(x, s);
  s.alpha = 0.5;
  CHECK(hybrid_cost(x, s) == doctest::Approx(0.5 * (j0 + j1)).epsilon(1e-15));

  // Variable terminal ignores alpha as a weight: minimum fuel.
  ProblemSpec v = spec_of(Variant::kVariableTerminal, 0.3);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(v.dim());
  y[Layout{v.variant, v.n_segments}.m_f()] = 700.0;
  CHECK(hybrid_cost(y, v) == doctest::Approx(-0.7).epsilon(1e-15));
}

TEST_CASE("cost stays within its range on the box") {
  for (double alpha : {0.0, 0.3, 1.0}) {
    const Problem pr(spec_of(Variant::kHybridCost, alpha), family());
    for (std::uint64_t k = 0; k < 200; ++k) {
      const double j = pr.cost(sample_uniform(pr.bounds(), k));
      CHECK(j >= -1.0);
      CHECK(j <= 1.0);
    }
  }
}

TEST_CASE("analytic cost gradient entries") {
  const Problem pr(spec_of(Variant::kHybridCost, 1.0), family());
  const Layout L = pr.layout();
  const Eigen::VectorXd x = moderate_x(pr, 3);
  const Derivatives d = pr.derivatives(x);
  CHECK(d.cost_gradient[L.m_f()] == -1.0 / pr.spec().initial_mass_kg);
  for (int k = 0; k < L.n; ++k)
    for (int a = 0; a < 3; ++a) CHECK(d.cost_gradient[L.u(k, a)] == 0.0);
  CHECK(d.cost_gradient[Layout::kTauS] == 0.0);

  const Problem half(spec_of(Variant::kHybridCost, 0.5), family());
  const Derivatives e = half.derivatives(x);
  const double tmax = 10.0 + 5.0 + 5.0;
  CHECK(e.cost_gradient[Layout::kTauI] == doctest::Approx(0.5 / tmax).epsilon(1e-15));
  CHECK(e.cost_gradient[half.layout().m_f()] == doctest::Approx(-0.5 / 1000.0).epsilon(1e-15));
}

TEST_CASE("residual Jacobian matches step-halved differences") {
  for (Variant v : {Variant::kHybridCost, Variant::kVariableTerminal}) {
    const Problem pr(spec_of(v, 0.5), family());
    const Eigen::VectorXd x = moderate_x(pr, 7);
    const Derivatives d = pr.derivatives(x);
    auto column = [&](int j, double h) {
      Eigen::VectorXd a = x, b = x;
      a[j] += h;
      b[j] -= h;
      return Eigen::VectorXd((pr.evaluate(a, 1e-13).c - pr.evaluate(b, 1e-13).c) / (2.0 * h));
    };
    const Layout L = pr.layout();
    std::vector<int> cols{Layout::kTauS, Layout::kTauI, Layout::kTauF, L.m_f(), L.u(1, 0), L.u(8, 2)};
    if (v == Variant::kVariableTerminal) {
      cols.push_back(Layout::kT1);
      cols.push_back(Layout::kT2);
    }
    for (int j : cols) {
      const double h = j == L.m_f() ? 1e-2 : 1e-4;
      const Eigen::VectorXd rich = (4.0 * column(j, h / 2) - column(j, h)) / 3.0;
      CAPTURE(j);
      CHECK(rel(d.jc.col(j), rich) < 1e-5);
    }
  }
}

TEST_CASE("residuals agree with an independent shooting of both legs") {
  for (Variant v : {Variant::kHybridCost, Variant::kVariableTerminal}) {
    const Problem pr(spec_of(v, 0.25), family());
    const Layout L = pr.layout();
    const SystemParams p = leg_params(pr.spec());
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const Eigen::VectorXd x = moderate_x(pr, seed);
      const EvalReport r = pr.evaluate(x);

      const State7 fwd = propagate_final(pr.initial_state(), forward_schedule(x, L), 0.0, p, 1e-12);
      CHECK(rel(fwd.qv(), r.forward_end.qv()) < 1e-9);
      CHECK(std::abs(fwd.m - r.forward_end.m) < 1e-9);

      // Running the backward end forward through the second half lands on the terminal state.
      const State7 term = propagate_final(r.backward_end, backward_schedule(x, L), 0.0, p, 1e-12);
      CHECK(rel(term.qv(), pr.terminal_state(x, 1e-12)) < 1e-6);
      CHECK(std::abs(term.m - x[L.m_f()]) < 1e-6);

      Residual c;
      c.head<3>() = fwd.q - r.backward_end.q;
      c.segment<3>(3) = fwd.v - r.backward_end.v;
      c[6] = fwd.m - r.backward_end.m;
      CHECK((c - r.c).norm() < 1e-6);
    }
  }
}

TEST_CASE("matched construction has zero position and velocity residual") {
  const Problem pr(spec_of(Variant::kHybridCost, 0.5), family());
  const Layout L = pr.layout();
  const SystemParams p = leg_params(pr.spec());
  const Eigen::VectorXd x = moderate_x(pr, 11);
  const EvalReport r = pr.evaluate(x);
  // Terminal state reached from the forward endpoint; the backward leg started
  // there must come back to the forward endpoint.
  const State7 end = propagate_final(r.forward_end, backward_schedule(x, L), 0.0, p, 1e-12);
  const State7 back = propagate_final(end, backward_schedule(x, L), 0.0, p, 1e-12, Direction::kBackward);
  CHECK((back.q - r.forward_end.q).norm() < 1e-9);
  CHECK((back.v - r.forward_end.v).norm() < 1e-9);
  CHECK(std::abs(back.m - r.forward_end.m) < 1e-9);
}

TEST_CASE("zero thrust keeps the spiral-end mass") {
  const Problem pr(spec_of(Variant::kHybridCost, 0.5), family());
  const Layout L = pr.layout();
  Eigen::VectorXd x = moderate_x(pr, 5);
  for (int k = 0; k < L.n; ++k)
    for (int a = 0; a < 3; ++a) x[L.u(k, a)] = 0.0;
  const EvalReport r = pr.evaluate(x);
  CHECK(r.c[6] == doctest::Approx(pr.initial_state().m - x[L.m_f()]).epsilon(1e-12));
  for (double t : r.throttles) CHECK(t == 0.0);
}

TEST_CASE("thrust segments are time ordered") {
  const Problem pr(spec_of(Variant::kHybridCost, 0.5), family());
  const Layout L = pr.layout();
  Eigen::VectorXd x = moderate_x(pr, 9);
  const Residual c0 = pr.evaluate(x).c;
  Eigen::VectorXd swapped = x;
  for (int a = 0; a < 3; ++a) std::swap(swapped[L.u(0, a)], swapped[L.u(1, a)]);
  CHECK((pr.evaluate(swapped).c - c0).norm() > 1e-8);

  for (int a = 0; a < 3; ++a) x[L.u(1, a)] = x[L.u(0, a)];
  Eigen::VectorXd same = x;
  for (int a = 0; a < 3; ++a) std::swap(same[L.u(0, a)], same[L.u(1, a)]);
  CHECK((pr.evaluate(same).c - pr.evaluate(x).c).norm() == 0.0);
}

TEST_CASE("bounds and constraint measures") {
  const Problem pr(spec_of(Variant::kVariableTerminal, 0.5), family());
  const Box& b = pr.bounds();
  const Layout L = pr.layout();
  CHECK(b.lower[Layout::kTauS] == 0.5);
  CHECK(b.upper[Layout::kTauS] == 10.0);
  CHECK(b.upper[Layout::kTauI] == 5.0);
  CHECK(b.lower[Layout::kT2] == 5.0);
  CHECK(b.upper[Layout::kT2] == 11.0);
  CHECK(b.upper[Layout::kT1] == doctest::Approx(pr.halo().period));
  CHECK(b.lower[L.m_f()] == 300.0);
  CHECK(b.upper[L.m_f()] == 1000.0);

  Eigen::VectorXd x = moderate_x(pr, 1);
  CHECK(pr.bound_violation(x) == 0.0);
  x[L.u(2, 0)] = 1.0;
  x[L.u(2, 1)] = 1.0;
  CHECK(pr.bound_violation(x) > 0.0);
  CHECK(pr.norm_constraints(x)[2] == doctest::Approx(1.0 + 1.0 + x[L.u(2, 2)] * x[L.u(2, 2)] - 1.0));
}

TEST_CASE("evaluation failures are typed") {
  const Problem pr(spec_of(Variant::kHybridCost, 0.5), family());
  Eigen::VectorXd x = moderate_x(pr, 1);
  x[Layout::kTauI] = -1.0;
  CHECK_THROWS_AS(pr.evaluate(x), Error);
  CHECK_THROWS_AS(pr.evaluate(Eigen::VectorXd::Zero(3)), Error);
  ProblemSpec bad = spec_of(Variant::kHybridCost, 1.5);
  CHECK_THROWS_AS(bad.validate(), Error);
}
