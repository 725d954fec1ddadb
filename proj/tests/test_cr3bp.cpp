#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/LU>

#include "amgs/cr3bp.hpp"
#include "amgs/error.hpp"
#include "amgs/rng.hpp"

using namespace amgs;

namespace {

const SystemParams kP;

// Effective potential; the natural acceleration is its gradient plus Coriolis terms.
double omega(const Vec3& q, double mu) {
  const auto r = primary_distances(q, mu);
  return 0.5 * (q[0] * q[0] + q[1] * q[1]) + (1.0 - mu) / r[0] + mu / r[1];
}

State7 mirror(const State7& s) {
  State7 m = s;
  m.q[1] = -s.q[1];
  m.v[0] = -s.v[0];
  m.v[2] = -s.v[2];
  return m;
}

Vec6 random_state(CounterRng& r) {
  Vec6 s;
  s << r.uniform(0.75, 0.9), r.uniform(-0.05, 0.05), r.uniform(-0.05, 0.05), r.uniform(-0.1, 0.1),
      r.uniform(-0.1, 0.1), r.uniform(-0.1, 0.1);
  return s;
}

}  // namespace

TEST_CASE("lagrange points are equilibria") {
  const auto L = lagrange_points(kP);
  for (const auto& q : L) {
    State7 s;
    s.q = q;
    const auto d = eom_natural(s, kP);
    CHECK(d.dq.norm() == 0.0);
    CHECK(d.dv.norm() < 1e-10);
    CHECK(d.dm == 0.0);
  }
  CHECK(L[3][0] == 0.5 - kP.mu);
  CHECK(L[3][1] == std::sqrt(3.0) / 2.0);
  CHECK(L[4][1] == -std::sqrt(3.0) / 2.0);
  CHECK(L[0][0] > -kP.mu);
  CHECK(L[0][0] < 1.0 - kP.mu);
}

TEST_CASE("energy at L1 matches the quoted value") {
  State7 s;
  s.q = lagrange_points(kP)[0];
  CHECK(std::abs(energy(s, kP) - (-1.594)) < 2e-3);
}

TEST_CASE("energy grows with the kinetic term") {
  State7 s;
  s.q = Vec3(0.8, 0.02, 0.01);
  const double e0 = energy(s, kP);
  s.v = Vec3(0.1, 0.0, 0.0);
  const double e1 = energy(s, kP);
  s.v = Vec3(0.2, 0.0, 0.0);
  const double e2 = energy(s, kP);
  CHECK(e1 > e0);
  CHECK(e2 > e1);
  CHECK(e1 - e0 == doctest::Approx(0.005).epsilon(1e-12));
}

TEST_CASE("natural acceleration matches the potential gradient") {
  CounterRng r(11);
  for (int k = 0; k < 10; ++k) {
    State7 s;
    s.q = Vec3(r.uniform(-0.5, 1.2), r.uniform(-0.6, 0.6), r.uniform(-0.3, 0.3));
    s.v = Vec3(r.uniform(-0.5, 0.5), r.uniform(-0.5, 0.5), r.uniform(-0.5, 0.5));
    const double h = 1e-5;
    Vec3 grad;
    for (int i = 0; i < 3; ++i) {
      Vec3 a = s.q, b = s.q;
      a[i] += h;
      b[i] -= h;
      grad[i] = (omega(a, kP.mu) - omega(b, kP.mu)) / (2.0 * h);
    }
    const Vec3 expect = grad + Vec3(2.0 * s.v[1], -2.0 * s.v[0], 0.0);
    const auto d = eom_natural(s, kP);
    CHECK((d.dv - expect).norm() / expect.norm() < 1e-8);
    CHECK(d.dq == s.v);
  }
}

TEST_CASE("singularity floor") {
  State7 s;
  s.q = Vec3(-kP.mu, 0.0, 0.0);
  CHECK_THROWS_AS(eom_natural(s, kP), Error);
  try {
    eom_natural(s, kP);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingularity);
  }
}

TEST_CASE("controlled dynamics") {
  State7 s;
  s.q = Vec3(0.8, 0.1, 0.0);
  s.v = Vec3(0.0, 0.2, 0.0);
  s.m = 1000.0;
  const auto n = eom_natural(s, kP);
  const auto z = eom_controlled(s, Vec3::Zero(), kP);
  CHECK(z.dv == n.dv);
  CHECK(z.dm == 0.0);

  const Vec3 u(0.6, 0.0, 0.8);  // 1 N
  const auto c = eom_controlled(s, u, kP);
  const double accel_si = (c.dv - n.dv).norm() / kP.accel_scale();
  CHECK(accel_si == doctest::Approx(0.001).epsilon(1e-12));
  const double flow_si = -c.dm / kP.time_unit_s;
  CHECK(flow_si == doctest::Approx(1.0 / (1000.0 * 9.80665)).epsilon(1e-12));
  CHECK(flow_si == doctest::Approx(1.0197e-4).epsilon(1e-4));

  CHECK_THROWS_AS(eom_controlled(s, Vec3(2.0, 0.0, 0.0), kP), Error);
  s.m = 200.0;
  CHECK_THROWS_AS(eom_controlled(s, u, kP), Error);
}

TEST_CASE("zero-time propagation is the identity") {
  State7 s;
  s.q = Vec3(0.82, 0.0, 0.01);
  s.v = Vec3(0.0, 0.13, 0.0);
  const auto tr = propagate(s, {}, 0.0, kP, 1e-12);
  CHECK(tr.final.q == s.q);
  CHECK(tr.final.v == s.v);
  CHECK(tr.final.m == s.m);
}

TEST_CASE("ballistic energy conservation over 10 and 20 time units") {
  State7 s;
  s.q = Vec3(0.82, 0.0, 0.02);
  s.v = Vec3(0.0, 0.13, 0.0);
  const double e0 = energy(s, kP);
  for (double t : {10.0, 20.0}) {
    const auto tr = propagate(s, {}, t, kP, 1e-12);
    double worst = 0.0;
    for (const auto& x : tr.states) worst = std::max(worst, std::abs(energy(x, kP) - e0));
    CHECK(worst / std::abs(e0) < 1e-9);
  }
}

TEST_CASE("forward then backward recovers the start") {
  State7 s;
  s.q = Vec3(0.7, 0.1, 0.02);
  s.v = Vec3(0.05, 0.3, 0.0);
  s.m = 900.0;
  const ControlSchedule sched{
      {0.3, Vec3(0.5, 0.5, 0.0)}, {0.2, Vec3::Zero()}, {0.4, Vec3(0.0, -0.7, 0.3)}, {0.5, Vec3::Zero()}};
  const auto fwd = propagate(s, sched, 0.0, kP, 1e-12);
  const auto bwd = propagate(fwd.final, sched, 0.0, kP, 1e-12, Direction::kBackward);
  CHECK((bwd.final.qv() - s.qv()).norm() / s.qv().norm() < 1e-8);
  CHECK(std::abs(bwd.final.m - s.m) / s.m < 1e-8);
  CHECK(fwd.final.m < s.m);
}

TEST_CASE("mass is non-increasing forward and constant on coasts") {
  State7 s;
  s.q = Vec3(0.7, 0.1, 0.02);
  s.v = Vec3(0.05, 0.3, 0.0);
  s.m = 900.0;
  const auto coast = propagate(s, {{0.5, Vec3::Zero()}}, 0.0, kP, 1e-12);
  for (const auto& x : coast.states) CHECK(x.m == s.m);
  const auto burn = propagate(s, {{0.5, Vec3(0.0, 1.0, 0.0)}}, 0.0, kP, 1e-12);
  for (std::size_t i = 1; i < burn.states.size(); ++i) CHECK(burn.states[i].m < burn.states[i - 1].m);
}

TEST_CASE("mirror symmetry of the flow") {
  CounterRng r(5);
  for (int k = 0; k < 5; ++k) {
    State7 s = State7::from(random_state(r), 1000.0);
    const double t = r.uniform(0.5, 3.0);
    const State7 s1 = propagate_final(s, {}, t, kP, 1e-12);
    // The mirrored end state, run forward for t, lands on the mirrored start.
    const State7 back = propagate_final(mirror(s1), {}, t, kP, 1e-12);
    CHECK((back.qv() - mirror(s).qv()).norm() < 1e-8);
  }
}

TEST_CASE("state transition matrix") {
  CounterRng r0(1);
  const Vec6 s0 = random_state(r0);
  const auto [x0, phi0] = propagate_stm(s0, 0.0, kP, 1e-12);
  CHECK(phi0 == Mat6::Identity());
  CHECK(x0 == s0);

  CounterRng r(3);
  for (int k = 0; k < 10; ++k) {
    const Vec6 s = random_state(r);
    const double t = r.uniform(0.1, 3.0);
    const auto [xf, phi] = propagate_stm(s, t, kP, 1e-12);
    CHECK((xf - flow(s, t, kP, 1e-12)).norm() < 1e-9);
    Mat6 fd;
    const double d = 1e-7;
    for (int j = 0; j < 6; ++j) {
      Vec6 a = s, b = s;
      a[j] += d;
      b[j] -= d;
      fd.col(j) = (flow(a, t, kP, 1e-13) - flow(b, t, kP, 1e-13)) / (2.0 * d);
    }
    CHECK((fd - phi).norm() / phi.norm() < 1e-5);
    CHECK(std::abs(phi.determinant() - 1.0) < 1e-6);
  }
}

TEST_CASE("tolerance range is enforced") {
  State7 s;
  s.q = Vec3(0.8, 0.0, 0.0);
  CHECK_THROWS_AS(propagate(s, {}, 1.0, kP, 1e-3), Error);
}
