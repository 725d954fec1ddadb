#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "amgs/error.hpp"
#include "amgs/halo.hpp"

using namespace amgs;

namespace {

const SystemParams kP;

const HaloOrbit& anchor() {
  static const HaloOrbit h = solve_halo(kEnergyL1 + 0.01, kP);
  return h;
}

}  // namespace

TEST_CASE("energy from alpha") {
  CHECK(energy_from_alpha(0.0) == doctest::Approx(-1.586).epsilon(1e-14));
  CHECK(energy_from_alpha(1.0) == doctest::Approx(-1.499).epsilon(1e-14));
  CHECK(energy_from_alpha(0.5) == doctest::Approx(-1.5425).epsilon(1e-14));
  CHECK_THROWS_AS(energy_from_alpha(-0.01), Error);
  CHECK_THROWS_AS(energy_from_alpha(1.01), Error);
}

TEST_CASE("anchor orbit period") {
  const HaloOrbit& h = anchor();
  CHECK(std::abs(h.period - 2.748) / 2.748 < 0.01);
  CHECK(std::abs(energy(h.crossing_state, kP) - h.energy) < 1e-10);
  CHECK(std::abs(h.energy - (kEnergyL1 + 0.01)) < 1e-10);
}

TEST_CASE("periodicity and crossing convention") {
  const double l1 = lagrange_points(kP)[0][0];
  for (double alpha : {0.0, 0.5, 1.0}) {
    const HaloOrbit h = solve_halo(energy_from_alpha(alpha), kP);
    CHECK(h.crossing_state[1] == 0.0);
    CHECK(h.crossing_state[3] == 0.0);
    CHECK(h.crossing_state[5] == 0.0);
    // Earth-side crossing: the other plane crossing lies further out.
    CHECK(h.crossing_state[0] < flow(h.crossing_state, 0.5 * h.period, kP, 1e-12)[0]);
    if (alpha <= 0.5) CHECK(h.crossing_state[0] < l1);
    const Vec6 back = flow(h.crossing_state, h.period, kP, 1e-12);
    CHECK((back - h.crossing_state).norm() < 1e-9);
  }
}

TEST_CASE("monodromy spectrum") {
  const HaloOrbit& h = anchor();
  CHECK(std::abs(h.monodromy.determinant() - 1.0) < 1e-6);
  CHECK(std::abs(h.stable_eigval * h.unstable_eigval - 1.0) < 1e-6);
  CHECK(std::abs(h.stable_eigval) < 1.0);
  CHECK(h.stable_eigvec.norm() == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::EigenSolver<Mat6> es(h.monodromy);
  std::vector<std::complex<double>> ev(es.eigenvalues().data(), es.eigenvalues().data() + 6);
  int near_one = 0, hyperbolic = 0;
  for (const auto& l : ev) {
    if (std::abs(l - 1.0) < 1e-3) ++near_one;
    if (std::abs(l.imag()) < 1e-9 && std::abs(std::abs(l.real()) - 1.0) > 0.1) ++hyperbolic;
  }
  CHECK(near_one == 2);
  CHECK(hyperbolic == 2);
  // Reciprocal pairing: every eigenvalue has a partner with product one.
  for (const auto& l : ev) {
    double best = 1e300;
    for (const auto& m : ev) best = std::min(best, std::abs(l * m - 1.0));
    CHECK(best < 1e-6);
  }

  const StableDirection sd = stable_direction(h);
  CHECK(sd.eigval == h.stable_eigval);
  CHECK((h.monodromy * sd.eigvec - sd.eigval * sd.eigvec).norm() < 1e-6);
}

TEST_CASE("stable direction contracts forward and expands backward") {
  const HaloOrbit& h = anchor();
  const Vec6 x = h.crossing_state + 1e-6 * h.stable_eigvec;
  const Vec6 fwd = flow(x, h.period, kP, 1e-12);
  const Vec6 ref = flow(h.crossing_state, h.period, kP, 1e-12);
  CHECK((fwd - ref).norm() < 1e-6);
  const double d_back = distance_to_orbit(h, flow(x, -5.0, kP, 1e-12).head<3>(), kP);
  CHECK(d_back > 1e-5);
}

TEST_CASE("family amplitude is monotone in energy") {
  HaloFamily fam(kP);
  double prev = -1.0;
  for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto h = fam.at_alpha(alpha);
    const double a = out_of_plane_amplitude(*h, kP);
    CHECK(a > prev);
    prev = a;
  }
  CHECK(fam.at_alpha(0.5).get() == fam.at_alpha(0.5).get());
}

TEST_CASE("manifold terminal state") {
  const HaloOrbit& h = anchor();
  ManifoldArcSpec spec;
  spec.t1 = 0.3 * h.period;

  ManifoldArcSpec zero = spec;
  zero.t2 = 0.0;
  const Vec6 ins = manifold_insertion_state(h, spec, kP);
  CHECK(manifold_terminal_state(h, zero, kP, 1e-12, false) == ins);
  CHECK_THROWS_AS(manifold_terminal_state(h, zero, kP), Error);

  // Unperturbed arcs stay on the orbit until round-off, amplified by the
  // unstable multiplier (~2e3 per period), takes over.
  ManifoldArcSpec flat = spec;
  flat.eps_mag = 0.0;
  for (double t2 : {0.5, 1.0, 2.0, 3.0}) {
    flat.t2 = t2;
    const Vec6 s = manifold_terminal_state(h, flat, kP, 1e-12, false);
    CHECK(distance_to_orbit(h, s.head<3>(), kP) < 1e-8);
  }

  for (double t2 : {5.0, 8.0, 11.0}) {
    spec.t2 = t2;
    CHECK(std::abs(energy(manifold_terminal_state(h, spec, kP), kP) - h.energy) < 1e-6);
  }

  ManifoldArcSpec bad = spec;
  bad.t1 = h.period + 0.1;
  CHECK_THROWS_AS(manifold_terminal_state(h, bad, kP), Error);
  bad = spec;
  bad.t2 = 12.0;
  CHECK_THROWS_AS(manifold_terminal_state(h, bad, kP), Error);
}

TEST_CASE("manifold arc sampling") {
  const HaloOrbit& h = anchor();
  ManifoldArcSpec spec;
  spec.t1 = 0.6 * h.period;
  spec.t2 = 9.0;
  const auto two = manifold_arc(h, spec, 2, kP);
  REQUIRE(two.size() == 2);
  CHECK(two.back() == manifold_terminal_state(h, spec, kP));
  CHECK(two.front() == manifold_insertion_state(h, spec, kP));
  for (const auto& s : manifold_arc(h, spec, 25, kP)) CHECK(std::abs(energy(s, kP) - h.energy) < 1e-6);
}

TEST_CASE("manifold arcs shrink as alpha grows") {
  HaloFamily fam(kP);
  // Mean distance travelled from the orbit over the longest coast.
  auto extent = [&](double alpha) {
    const auto h = fam.at_alpha(alpha);
    double sum = 0.0;
    const int n = 8;
    for (int k = 0; k < n; ++k) {
      ManifoldArcSpec s;
      s.t1 = h->period * k / n;
      s.t2 = s.t2_max;
      sum += (manifold_terminal_state(*h, s, kP).head<3>() - manifold_insertion_state(*h, s, kP).head<3>()).norm();
    }
    return sum / n;
  };
  CHECK(extent(1.0) < extent(0.0));
}

TEST_CASE("terminal state is continuous in t1 and t2") {
  const HaloOrbit& h = anchor();
  ManifoldArcSpec s;
  s.t1 = 0.4 * h.period;
  s.t2 = 7.0;
  const Vec6 x0 = manifold_terminal_state(h, s, kP);
  auto shifted = [&](double d1, double d2) {
    ManifoldArcSpec t = s;
    t.t1 += d1;
    t.t2 += d2;
    return (manifold_terminal_state(h, t, kP) - x0).norm();
  };
  for (auto [d1, d2] : {std::pair{1e-3, 0.0}, std::pair{0.0, 1e-3}}) {
    const double a = shifted(d1, d2), b = shifted(d1 / 2, d2 / 2);
    CHECK(a > 0.0);
    CHECK(b / a == doctest::Approx(0.5).epsilon(0.05));
  }
}

TEST_CASE("analytic manifold sensitivity matches finite differences") {
  const HaloOrbit& h = anchor();
  ManifoldArcSpec s;
  s.t1 = 0.25 * h.period;
  s.t2 = 6.5;
  const auto sens = manifold_terminal_sensitivity(h, s, kP);
  CHECK((sens.terminal - manifold_terminal_state(h, s, kP)).norm() < 1e-6);
  const double d = 1e-6;
  auto at = [&](double d1, double d2) {
    ManifoldArcSpec t = s;
    t.t1 += d1;
    t.t2 += d2;
    return manifold_terminal_state(h, t, kP);
  };
  const Vec6 fd1 = (at(d, 0) - at(-d, 0)) / (2 * d);
  const Vec6 fd2 = (at(0, d) - at(0, -d)) / (2 * d);
  CHECK((fd1 - sens.d_t1).norm() / fd1.norm() < 1e-5);
  CHECK((fd2 - sens.d_t2).norm() / fd2.norm() < 1e-5);
}
