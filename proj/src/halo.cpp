#include "amgs/halo.hpp"

#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>

#include <Eigen/Dense>

#include "amgs/error.hpp"

namespace amgs {

namespace {

// Earth-side crossing of a corrected northern L1 halo near e = -1.5834; the
// continuation starts from here.
constexpr double kSeedQ1 = 0.823425017420;
constexpr double kSeedQ3 = 0.03;
constexpr double kSeedV2 = 0.140032888274;

Vec6 crossing_vector(double q1, double q3, double v2) {
  Vec6 s;
  s << q1, 0.0, q3, 0.0, v2, 0.0;
  return s;
}

// Gradient of the effective potential (q1^2+q2^2)/2 + (1-mu)/rho1 + mu/rho2.
Vec3 potential_gradient(const Vec3& q, double mu) {
  const Vec3 d1(q[0] + mu, q[1], q[2]);
  const Vec3 d2(q[0] - 1.0 + mu, q[1], q[2]);
  const double r1 = d1.norm(), r2 = d2.norm();
  Vec3 g = -(1.0 - mu) / (r1 * r1 * r1) * d1 - mu / (r2 * r2 * r2) * d2;
  g[0] += q[0];
  g[1] += q[1];
  return g;
}

struct Correction {
  Vec6 state;
  double half_period;
};

// Newton iteration on (q1, q3, v2) enforcing v1 = v3 = 0 at the next plane
// crossing and energy = target. Returns false when it fails to converge.
bool correct(Vec6 x, double target_e, const SystemParams& p, const HaloOptions& opt, Correction& out) {
  for (int it = 0; it < opt.max_iterations; ++it) {
    const auto [th, sf] = next_plane_crossing(x, p, opt.tol, 0.3, 6.0);
    const auto [sf2, phi] = propagate_stm(x, th, p, opt.tol);
    const State7 sfs = State7::from(sf2, 1.0);
    const Vec3 acc = eom_natural(sfs, p).dv;

    const Eigen::Vector3d f(sf2[3], sf2[5], energy(x, p) - target_e);
    const double scale = std::max({std::abs(f[0]), std::abs(f[1]), std::abs(f[2])});
    if (scale < opt.newton_tol) {
      out.state = x;
      out.half_period = th;
      return true;
    }
    const int cols[3] = {0, 2, 4};
    Eigen::Matrix3d jac;
    for (int j = 0; j < 3; ++j) {
      const int c = cols[j];
      jac(0, j) = phi(3, c) - acc[0] / sf2[4] * phi(1, c);
      jac(1, j) = phi(5, c) - acc[2] / sf2[4] * phi(1, c);
    }
    const Vec3 grad = potential_gradient(x.head<3>(), p.mu);
    jac(2, 0) = -grad[0];
    jac(2, 1) = -grad[2];
    jac(2, 2) = x[4];
    Eigen::Vector3d dx = jac.colPivHouseholderQr().solve(-f);
    if (!dx.allFinite()) return false;
    const double n = dx.norm();
    if (n > 0.02) dx *= 0.02 / n;
    x[0] += dx[0];
    x[2] += dx[1];
    x[4] += dx[2];
  }
  return false;
}

HaloOrbit finish(const Correction& c, double target_e, const SystemParams& p, const HaloOptions& opt) {
  HaloOrbit h;
  h.crossing_state = c.state;
  h.period = 2.0 * c.half_period;
  h.energy = energy(c.state, p);
  // Keep the plane crossing nearest Earth. For the upper part of the family
  // (alpha above ~0.74) this crossing lies beyond q1(L1).
  const auto [t_other, other] = next_plane_crossing(c.state, p, opt.tol, 0.3, 6.0);
  (void)t_other;
  require(c.state[0] < other[0], ErrorCode::kNonConvergence, "corrected halo crossing is not the Earth-side one");
  (void)target_e;
  h.monodromy = propagate_stm(c.state, h.period, p, opt.tol).second;
  const StableDirection sd = stable_direction(h);
  h.stable_eigval = sd.eigval;
  h.stable_eigvec = sd.eigvec;

  Eigen::EigenSolver<Mat6> es(h.monodromy);
  double best = 0.0;
  for (int i = 0; i < 6; ++i) {
    const auto lam = es.eigenvalues()[i];
    if (std::abs(lam.imag()) < 1e-8 * std::abs(lam) && std::abs(lam.real()) > best) best = std::abs(lam.real());
  }
  h.unstable_eigval = best;
  return h;
}

HaloOrbit continue_from(Vec6 x, double e0, double target_e, const SystemParams& p, const HaloOptions& opt) {
  Correction c;
  if (!correct(x, e0, p, opt, c)) fail(ErrorCode::kNonConvergence, "halo correction failed at the starting orbit");
  x = c.state;
  double e = e0;
  double step = opt.continuation_step;
  Vec6 prev_x = x;
  double prev_e = e;
  bool have_prev = false;
  while (std::abs(target_e - e) > 0.0) {
    const double dir = target_e > e ? 1.0 : -1.0;
    const double h = std::min(step, std::abs(target_e - e));
    const double e_next = e + dir * h;
    Vec6 guess = x;
    if (have_prev && std::abs(e - prev_e) > 0.0) guess = x + (x - prev_x) * ((e_next - e) / (e - prev_e));
    Correction nc;
    if (correct(guess, e_next, p, opt, nc) || correct(x, e_next, p, opt, nc)) {
      prev_x = x;
      prev_e = e;
      have_prev = true;
      x = nc.state;
      e = e_next;
      c = nc;
      step = std::min(opt.continuation_step, step * 1.5);
    } else {
      step *= 0.5;
      if (step < opt.min_step) {
        std::ostringstream os;
        os << "halo continuation stalled at e=" << e << " while targeting e=" << target_e;
        fail(ErrorCode::kNonConvergence, os.str());
      }
    }
  }
  return finish(c, target_e, p, opt);
}

}  // namespace

double energy_from_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    std::ostringstream os;
    os << "alpha " << alpha << " outside [0, 1]";
    fail(ErrorCode::kDomain, os.str());
  }
  return kEnergyL1 + kEnergyPertMin + alpha * (kEnergyPertMax - kEnergyPertMin);
}

HaloOrbit solve_halo(double target_e, const SystemParams& p, const HaloOptions& opt) {
  p.validate();
  const Vec6 seed = crossing_vector(kSeedQ1, kSeedQ3, kSeedV2);
  return continue_from(seed, energy(seed, p), target_e, p, opt);
}

HaloOrbit continue_halo(const HaloOrbit& from, double target_e, const SystemParams& p, const HaloOptions& opt) {
  return continue_from(from.crossing_state, from.energy, target_e, p, opt);
}

StableDirection stable_direction(const HaloOrbit& h) {
  Eigen::EigenSolver<Mat6> es(h.monodromy);
  int best = -1;
  double best_mag = 1.0;
  for (int i = 0; i < 6; ++i) {
    const auto lam = es.eigenvalues()[i];
    const double mag = std::abs(lam);
    if (std::abs(lam.imag()) <= 1e-8 * std::max(mag, 1e-300) && mag < best_mag && mag < 1.0 - 1e-6) {
      best = i;
      best_mag = mag;
    }
  }
  require(best >= 0, ErrorCode::kNonConvergence, "monodromy matrix has no real eigenvalue inside the unit circle");
  Vec6 v = es.eigenvectors().col(best).real();
  v.normalize();
  if (v[0] > 0.0) v = -v;
  return {es.eigenvalues()[best].real(), v};
}

void validate_arc_spec(const HaloOrbit& h, const ManifoldArcSpec& spec, bool check_t2) {
  std::ostringstream os;
  if (!(spec.t1 >= 0.0 && spec.t1 < h.period)) {
    os << "t1=" << spec.t1 << " outside [0, " << h.period << ")";
    fail(ErrorCode::kDomain, os.str());
  }
  if (check_t2 && !(spec.t2 >= spec.t2_min && spec.t2 <= spec.t2_max)) {
    os << "t2=" << spec.t2 << " outside [" << spec.t2_min << ", " << spec.t2_max << "]";
    fail(ErrorCode::kDomain, os.str());
  }
  if (!(spec.t2 >= 0.0) || !std::isfinite(spec.t2)) fail(ErrorCode::kDomain, "t2 must be finite and non-negative");
  require(spec.eps_mag >= 0.0, ErrorCode::kDomain, "eps_mag must be non-negative");
  require(spec.branch_sign == 1 || spec.branch_sign == -1, ErrorCode::kDomain, "branch_sign must be +1 or -1");
}

Vec6 manifold_insertion_state(const HaloOrbit& h, const ManifoldArcSpec& spec, const SystemParams& p, double tol) {
  Vec6 s = h.crossing_state;
  Vec6 dir = h.stable_eigvec;
  if (spec.t1 > 0.0) {
    const auto [st, phi] = propagate_stm(h.crossing_state, spec.t1, p, tol);
    s = st;
    dir = phi * h.stable_eigvec;
    dir.normalize();
  }
  return s + (spec.eps_mag * spec.branch_sign) * dir;
}

Vec6 manifold_terminal_state(const HaloOrbit& h, const ManifoldArcSpec& spec, const SystemParams& p, double tol,
                             bool check_t2) {
  validate_arc_spec(h, spec, check_t2);
  const Vec6 ins = manifold_insertion_state(h, spec, p, tol);
  if (spec.t2 == 0.0) return ins;
  return flow(ins, -spec.t2, p, tol);
}

ManifoldSensitivity manifold_terminal_sensitivity(const HaloOrbit& h, const ManifoldArcSpec& spec,
                                                  const SystemParams& p, double tol) {
  validate_arc_spec(h, spec, false);
  Vec6 s = h.crossing_state;
  Vec6 d = h.stable_eigvec;
  if (spec.t1 > 0.0) {
    const auto [st, phi] = propagate_stm(h.crossing_state, spec.t1, p, tol);
    s = st;
    d = phi * h.stable_eigvec;
  }
  const Vec6 n = d.normalized();
  const double k = spec.eps_mag * spec.branch_sign;
  const Vec6 ins = s + k * n;
  const Mat6 A = natural_jacobian(s, p);
  const Vec6 an = A * n;
  Vec6 d_ins = natural_field(s, p) + k * (an - n * n.dot(an));

  ManifoldSensitivity out;
  if (spec.t2 == 0.0) {
    out.terminal = ins;
    out.d_t1 = d_ins;
  } else {
    const auto [term, phi2] = propagate_stm(ins, -spec.t2, p, tol);
    out.terminal = term;
    out.d_t1 = phi2 * d_ins;
  }
  out.d_t2 = -natural_field(out.terminal, p);
  return out;
}

std::vector<Vec6> manifold_arc(const HaloOrbit& h, const ManifoldArcSpec& spec, std::size_t n_samples,
                               const SystemParams& p, double tol, bool check_t2) {
  validate_arc_spec(h, spec, check_t2);
  require(n_samples >= 2, ErrorCode::kInvalidArgument, "manifold_arc needs at least two samples");
  std::vector<Vec6> out;
  out.reserve(n_samples);
  Vec6 s = manifold_insertion_state(h, spec, p, tol);
  out.push_back(s);
  const double dt = spec.t2 / static_cast<double>(n_samples - 1);
  for (std::size_t i = 1; i < n_samples; ++i) {
    if (dt > 0.0) s = flow(s, -dt, p, tol);
    out.push_back(s);
  }
  return out;
}

std::vector<Vec6> sample_orbit(const HaloOrbit& h, std::size_t n, const SystemParams& p, double tol) {
  std::vector<Vec6> out;
  out.reserve(n);
  Vec6 s = h.crossing_state;
  const double dt = h.period / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(s);
    s = flow(s, dt, p, tol);
  }
  return out;
}

double distance_to_orbit(const HaloOrbit& h, const Vec3& q, const SystemParams& p, double tol) {
  const std::size_t n = 400;
  const auto pts = sample_orbit(h, n, p, tol);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (pts[i].head<3>() - q).norm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  // Golden-section refinement of the phase within one sample spacing.
  const double dt = h.period / static_cast<double>(n);
  const Vec6 base = pts[best];
  auto dist = [&](double tau) { return (flow(base, tau, p, tol).head<3>() - q).norm(); };
  double a = -dt, b = dt;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = dist(c), fd = dist(d);
  for (int it = 0; it < 60 && (b - a) > 1e-13; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = dist(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = dist(d);
    }
  }
  return std::min({best_d, fc, fd});
}

double out_of_plane_amplitude(const HaloOrbit& h, const SystemParams& p) {
  double amp = 0.0;
  for (const auto& s : sample_orbit(h, 200, p)) amp = std::max(amp, std::abs(s[2]));
  return amp;
}

std::shared_ptr<const HaloOrbit> HaloFamily::at_energy(double e) {
  const long long key = std::llround(e * 1e10);
  {
    std::shared_lock lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  std::shared_ptr<const HaloOrbit> nearest;
  {
    std::shared_lock lock(mutex_);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [k, orbit] : cache_) {
      const double d = std::abs(orbit->energy - e);
      if (d < best) {
        best = d;
        nearest = orbit;
      }
    }
  }
  auto orbit = std::make_shared<const HaloOrbit>(nearest ? continue_halo(*nearest, e, params_, opt_)
                                                         : solve_halo(e, params_, opt_));
  std::unique_lock lock(mutex_);
  auto [it, inserted] = cache_.emplace(key, orbit);
  return it->second;
}

}  // namespace amgs
