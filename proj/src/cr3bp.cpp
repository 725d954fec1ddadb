#include "amgs/cr3bp.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <boost/math/tools/toms748_solve.hpp>

#include "amgs/dop853.hpp"
#include "amgs/error.hpp"

namespace amgs {

namespace {

void check_tol(double tol) {
  require(tol >= 1e-13 && tol <= 1e-6, ErrorCode::kInvalidArgument,
          "integration tolerance must lie in [1e-13, 1e-6]");
}

struct Accel {
  Vec3 a;
  double rho1, rho2;
};

inline Accel natural_accel(const Vec3& q, const Vec3& v, const SystemParams& p) {
  const double mu = p.mu;
  const double dx1 = q[0] + mu, dx2 = q[0] - 1.0 + mu;
  const double yz = q[1] * q[1] + q[2] * q[2];
  const double r1sq = dx1 * dx1 + yz, r2sq = dx2 * dx2 + yz;
  const double rho1 = std::sqrt(r1sq), rho2 = std::sqrt(r2sq);
  if (rho1 < p.rho_min || rho2 < p.rho_min) {
    std::ostringstream os;
    os << "singularity: distance to " << (rho1 < p.rho_min ? "primary" : "secondary") << " below "
       << p.rho_min;
    fail(ErrorCode::kSingularity, os.str());
  }
  const double k1 = (1.0 - mu) / (r1sq * rho1), k2 = mu / (r2sq * rho2);
  Vec3 a;
  a[0] = 2.0 * v[1] + q[0] - k1 * dx1 - k2 * dx2;
  a[1] = -2.0 * v[0] + q[1] - k1 * q[1] - k2 * q[1];
  a[2] = -k1 * q[2] - k2 * q[2];
  return {a, rho1, rho2};
}

using Y7 = ode::Vec<7>;
using Y6 = ode::Vec<6>;
using Y42 = ode::Vec<42>;

Y7 pack(const State7& s) { return {s.q[0], s.q[1], s.q[2], s.v[0], s.v[1], s.v[2], s.m}; }

State7 unpack(const Y7& y) {
  State7 s;
  s.q = Vec3(y[0], y[1], y[2]);
  s.v = Vec3(y[3], y[4], y[5]);
  s.m = y[6];
  return s;
}

// Right-hand side for a constant-thrust arc. Precomputes the thrust magnitude
// and normalized mass flow.
struct ThrustRhs {
  const SystemParams& p;
  Vec3 u;
  double umag;
  double mdot;
  double ascale;

  ThrustRhs(const SystemParams& params, const Vec3& thrust)
      : p(params), u(thrust), umag(thrust.norm()), mdot(params.mass_flow(thrust.norm())),
        ascale(params.accel_scale()) {}

  void operator()(double, const Y7& y, Y7& dy) const {
    const Vec3 q(y[0], y[1], y[2]), v(y[3], y[4], y[5]);
    Accel acc = natural_accel(q, v, p);
    dy[0] = y[3];
    dy[1] = y[4];
    dy[2] = y[5];
    if (umag > 0.0) {
      const double m = y[6];
      if (!(m > p.mass_floor_kg)) {
        std::ostringstream os;
        os << "mass " << m << " kg at or below floor " << p.mass_floor_kg << " kg";
        fail(ErrorCode::kMassFloor, os.str());
      }
      const double k = ascale / m;
      dy[3] = acc.a[0] + k * u[0];
      dy[4] = acc.a[1] + k * u[1];
      dy[5] = acc.a[2] + k * u[2];
      dy[6] = -mdot;
    } else {
      dy[3] = acc.a[0];
      dy[4] = acc.a[1];
      dy[5] = acc.a[2];
      dy[6] = 0.0;
    }
  }
};

struct NaturalRhs6 {
  const SystemParams& p;
  void operator()(double, const Y6& y, Y6& dy) const {
    const Vec3 q(y[0], y[1], y[2]), v(y[3], y[4], y[5]);
    const Vec3 a = natural_accel(q, v, p).a;
    dy = {y[3], y[4], y[5], a[0], a[1], a[2]};
  }
};

// Hessian of the effective potential (q1^2+q2^2)/2 + (1-mu)/rho1 + mu/rho2.
Eigen::Matrix3d potential_hessian(const Vec3& q, const SystemParams& p) {
  const double mu = p.mu;
  const Vec3 d1(q[0] + mu, q[1], q[2]);
  const Vec3 d2(q[0] - 1.0 + mu, q[1], q[2]);
  const double r1 = d1.norm(), r2 = d2.norm();
  if (r1 < p.rho_min || r2 < p.rho_min) fail(ErrorCode::kSingularity, "singularity in variational equations");
  const double r13 = r1 * r1 * r1, r15 = r13 * r1 * r1;
  const double r23 = r2 * r2 * r2, r25 = r23 * r2 * r2;
  Eigen::Matrix3d h = -((1.0 - mu) / r13 + mu / r23) * Eigen::Matrix3d::Identity();
  h += 3.0 * (1.0 - mu) / r15 * d1 * d1.transpose() + 3.0 * mu / r25 * d2 * d2.transpose();
  h(0, 0) += 1.0;
  h(1, 1) += 1.0;
  return h;
}

struct VariationalRhs {
  const SystemParams& p;
  void operator()(double, const Y42& y, Y42& dy) const {
    const Vec3 q(y[0], y[1], y[2]), v(y[3], y[4], y[5]);
    const Vec3 a = natural_accel(q, v, p).a;
    dy[0] = y[3];
    dy[1] = y[4];
    dy[2] = y[5];
    dy[3] = a[0];
    dy[4] = a[1];
    dy[5] = a[2];
    const Eigen::Matrix3d h = potential_hessian(q, p);
    // Phi stored row-major after the state: Phi(i,j) = y[6 + 6*i + j].
    Eigen::Map<const Eigen::Matrix<double, 6, 6, Eigen::RowMajor>> phi(y.data() + 6);
    Eigen::Map<Eigen::Matrix<double, 6, 6, Eigen::RowMajor>> dphi(dy.data() + 6);
    dphi.topRows<3>() = phi.bottomRows<3>();
    dphi.bottomRows<3>() = h * phi.topRows<3>();
    dphi.row(3) += 2.0 * phi.row(4);
    dphi.row(4) -= 2.0 * phi.row(3);
  }
};

void check_segment(const ControlSegment& seg, const SystemParams& p, std::size_t idx) {
  if (!(seg.duration >= 0.0) || !std::isfinite(seg.duration)) {
    std::ostringstream os;
    os << "segment " << idx << " has invalid duration " << seg.duration;
    fail(ErrorCode::kInvalidArgument, os.str());
  }
  if (!(seg.u.norm() <= p.thrust_max_newtons * (1.0 + 1e-12))) {
    std::ostringstream os;
    os << "segment " << idx << " thrust " << seg.u.norm() << " N exceeds " << p.thrust_max_newtons << " N";
    fail(ErrorCode::kThrustBound, os.str());
  }
}

template <class Observer>
State7 run(const State7& s0, const ControlSchedule& schedule, double coast_after, const SystemParams& p, double tol,
           Direction direction, Observer&& obs) {
  check_tol(tol);
  require(coast_after >= 0.0 && std::isfinite(coast_after), ErrorCode::kInvalidArgument,
          "coast duration must be finite and non-negative");
  for (std::size_t i = 0; i < schedule.size(); ++i) check_segment(schedule[i], p, i);

  ode::Options opt;
  opt.rtol = tol;
  opt.atol = tol;
  Y7 y = pack(s0);
  const double sign = direction == Direction::kForward ? 1.0 : -1.0;
  double t = 0.0;
  auto arc = [&](const Vec3& u, double duration) {
    if (duration <= 0.0) return;
    ThrustRhs rhs(p, u);
    const double t_end = t + sign * duration;
    ode::integrate<7>(rhs, y, t, t_end, opt, [&](double tt, const Y7& yy) { obs(tt, yy); });
    t = t_end;
  };
  if (direction == Direction::kForward) {
    for (const auto& seg : schedule) arc(seg.u, seg.duration);
    arc(Vec3::Zero(), coast_after);
  } else {
    for (auto it = schedule.rbegin(); it != schedule.rend(); ++it) arc(it->u, it->duration);
    arc(Vec3::Zero(), coast_after);
  }
  return unpack(y);
}

// Thrust held along the rotating-frame velocity direction.
struct TangentialRhs {
  const SystemParams& p;
  double thrust;
  double mdot;
  double ascale;

  TangentialRhs(const SystemParams& params, double t)
      : p(params), thrust(t), mdot(params.mass_flow(t)), ascale(params.accel_scale()) {}

  void operator()(double, const Y7& y, Y7& dy) const {
    const Vec3 q(y[0], y[1], y[2]), v(y[3], y[4], y[5]);
    Accel acc = natural_accel(q, v, p);
    const double m = y[6];
    if (!(m > p.mass_floor_kg)) fail(ErrorCode::kMassFloor, "mass reached the floor during tangential thrust");
    const double k = ascale * thrust / (m * v.norm());
    dy = {y[3], y[4], y[5], acc.a[0] + k * v[0], acc.a[1] + k * v[1], acc.a[2] + k * v[2], -mdot};
  }
};

}  // namespace

void SystemParams::validate() const {
  require(mu > 0.0 && mu < 0.5, ErrorCode::kInvalidArgument, "mu must lie in (0, 1/2)");
  require(isp_seconds > 0.0, ErrorCode::kInvalidArgument, "isp must be positive");
  require(g0 > 0.0, ErrorCode::kInvalidArgument, "g0 must be positive");
  require(thrust_max_newtons > 0.0, ErrorCode::kInvalidArgument, "maximum thrust must be positive");
  require(length_unit_km > 0.0 && time_unit_s > 0.0 && mass_unit_kg > 0.0, ErrorCode::kInvalidArgument,
          "normalization scales must be positive");
  require(mass_floor_kg >= 0.0 && rho_min > 0.0, ErrorCode::kInvalidArgument, "invalid floors");
  require(flow_smoothing_newtons >= 0.0, ErrorCode::kInvalidArgument, "flow smoothing must be non-negative");
}

Vec6 State7::qv() const {
  Vec6 out;
  out << q, v;
  return out;
}

State7 State7::from(const Vec6& qv, double m) {
  State7 s;
  s.q = qv.head<3>();
  s.v = qv.tail<3>();
  s.m = m;
  return s;
}

bool State7::finite() const { return q.allFinite() && v.allFinite() && std::isfinite(m); }

std::array<double, 2> primary_distances(const Vec3& q, double mu) {
  const double yz = q[1] * q[1] + q[2] * q[2];
  return {std::sqrt((q[0] + mu) * (q[0] + mu) + yz), std::sqrt((q[0] - 1.0 + mu) * (q[0] - 1.0 + mu) + yz)};
}

StateDerivative eom_natural(const State7& s, const SystemParams& p) {
  StateDerivative d;
  d.dq = s.v;
  d.dv = natural_accel(s.q, s.v, p).a;
  d.dm = 0.0;
  return d;
}

Vec6 natural_field(const Vec6& s, const SystemParams& p) {
  const StateDerivative d = eom_natural(State7::from(s, 1.0), p);
  Vec6 out;
  out << d.dq, d.dv;
  return out;
}

StateDerivative eom_controlled(const State7& s, const Vec3& u, const SystemParams& p) {
  const double umag = u.norm();
  if (!(umag <= p.thrust_max_newtons * (1.0 + 1e-12))) {
    std::ostringstream os;
    os << "thrust " << umag << " N exceeds " << p.thrust_max_newtons << " N";
    fail(ErrorCode::kThrustBound, os.str());
  }
  if (!(s.m > p.mass_floor_kg)) {
    std::ostringstream os;
    os << "mass " << s.m << " kg at or below floor " << p.mass_floor_kg << " kg";
    fail(ErrorCode::kMassFloor, os.str());
  }
  StateDerivative d = eom_natural(s, p);
  d.dv += (p.accel_scale() / s.m) * u;
  d.dm = -p.mass_flow(umag);
  return d;
}

double energy(const Vec6& qv, const SystemParams& p) {
  const Vec3 q = qv.head<3>();
  const auto [rho1, rho2] = primary_distances(q, p.mu);
  if (rho1 < p.rho_min || rho2 < p.rho_min) fail(ErrorCode::kSingularity, "energy evaluated at a primary");
  return 0.5 * qv.tail<3>().squaredNorm() - 0.5 * (q[0] * q[0] + q[1] * q[1]) - (1.0 - p.mu) / rho1 - p.mu / rho2;
}

double energy(const State7& s, const SystemParams& p) { return energy(s.qv(), p); }

std::array<Vec3, 5> lagrange_points(const SystemParams& p) {
  require(p.mu > 0.0 && p.mu < 0.5, ErrorCode::kInvalidArgument, "mu must lie in (0, 1/2)");
  const double mu = p.mu;
  // dOmega/dq1 on the q1-axis.
  auto f = [mu](double x) {
    const double d1 = x + mu, d2 = x - 1.0 + mu;
    return x - (1.0 - mu) * d1 / std::pow(std::abs(d1), 3) - mu * d2 / std::pow(std::abs(d2), 3);
  };
  auto solve = [&](double lo, double hi, const char* name) {
    boost::uintmax_t iters = 200;
    const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(50), iters);
    const double x = 0.5 * (a + b);
    if (iters >= 200 || std::abs(f(x)) > 1e-12) {
      std::ostringstream os;
      os << "root finder did not converge for " << name << " in bracket [" << lo << ", " << hi << "]";
      fail(ErrorCode::kNonConvergence, os.str());
    }
    return x;
  };
  const double eps = 1e-9;
  std::array<Vec3, 5> L;
  L[0] = Vec3(solve(-mu + eps, 1.0 - mu - eps, "L1"), 0.0, 0.0);
  L[1] = Vec3(solve(1.0 - mu + eps, 2.0, "L2"), 0.0, 0.0);
  L[2] = Vec3(solve(-2.0, -mu - eps, "L3"), 0.0, 0.0);
  L[3] = Vec3(0.5 - mu, std::sqrt(3.0) / 2.0, 0.0);
  L[4] = Vec3(0.5 - mu, -std::sqrt(3.0) / 2.0, 0.0);
  return L;
}

Trajectory propagate(const State7& s0, const ControlSchedule& schedule, double coast_after, const SystemParams& p,
                     double tol, Direction direction, bool record) {
  Trajectory traj;
  if (record) {
    traj.t.push_back(0.0);
    traj.states.push_back(s0);
  }
  traj.final = run(s0, schedule, coast_after, p, tol, direction, [&](double t, const Y7& y) {
    if (record) {
      traj.t.push_back(t);
      traj.states.push_back(unpack(y));
    }
  });
  return traj;
}

State7 propagate_final(const State7& s0, const ControlSchedule& schedule, double coast_after, const SystemParams& p,
                       double tol, Direction direction) {
  return run(s0, schedule, coast_after, p, tol, direction, [](double, const Y7&) {});
}

Vec6 flow(const Vec6& s0, double elapsed, const SystemParams& p, double tol) {
  check_tol(tol);
  ode::Options opt;
  opt.rtol = tol;
  opt.atol = tol;
  Y6 y;
  for (int i = 0; i < 6; ++i) y[i] = s0[i];
  ode::integrate<6>(NaturalRhs6{p}, y, 0.0, elapsed, opt);
  Vec6 out;
  for (int i = 0; i < 6; ++i) out[i] = y[i];
  return out;
}

std::pair<Vec6, Stm> propagate_stm(const Vec6& s0, double elapsed, const SystemParams& p, double tol) {
  check_tol(tol);
  ode::Options opt;
  opt.rtol = tol;
  opt.atol = tol;
  Y42 y{};
  for (int i = 0; i < 6; ++i) {
    y[i] = s0[i];
    y[6 + 6 * i + i] = 1.0;
  }
  ode::integrate<42>(VariationalRhs{p}, y, 0.0, elapsed, opt);
  Vec6 s;
  Stm phi;
  for (int i = 0; i < 6; ++i) {
    s[i] = y[i];
    for (int j = 0; j < 6; ++j) phi(i, j) = y[6 + 6 * i + j];
  }
  return {s, phi};
}

std::pair<double, Vec6> next_plane_crossing(const Vec6& s0, const SystemParams& p, double tol, double t_min,
                                            double t_max) {
  check_tol(tol);
  ode::Options opt;
  opt.rtol = tol;
  opt.atol = tol;
  Y6 y;
  for (int i = 0; i < 6; ++i) y[i] = s0[i];
  double t_prev = 0.0;
  Y6 y_prev = y;
  bool found = false;
  ode::integrate<6>(NaturalRhs6{p}, y, 0.0, t_max, opt, [&](double t, const Y6& yy) {
    if (t_prev >= t_min && (y_prev[1] < 0.0) != (yy[1] < 0.0)) {
      found = true;
      return false;
    }
    t_prev = t;
    y_prev = yy;
    return true;
  });
  require(found, ErrorCode::kNonConvergence, "no q1q3-plane crossing found before t_max");
  Vec6 base;
  for (int i = 0; i < 6; ++i) base[i] = y_prev[i];
  double dt = 0.0;
  Vec6 s = base;
  for (int it = 0; it < 30; ++it) {
    s = dt == 0.0 ? base : flow(base, dt, p, tol);
    const double step = s[1] / s[4];
    dt -= step;
    if (std::abs(step) < 1e-15) break;
  }
  s = flow(base, dt, p, tol);
  return {t_prev + dt, s};
}

Mat6 natural_jacobian(const Vec6& s, const SystemParams& p) {
  Mat6 a = Mat6::Zero();
  a.topRightCorner<3, 3>().setIdentity();
  a.bottomLeftCorner<3, 3>() = potential_hessian(s.head<3>(), p);
  a(3, 4) = 2.0;
  a(4, 3) = -2.0;
  return a;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, double mass_unit_kg) {
  os << "t,q1,q2,q3,v1,v2,v3,m\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const auto& s = traj.states[i];
    os << traj.t[i] << ',' << s.q[0] << ',' << s.q[1] << ',' << s.q[2] << ',' << s.v[0] << ',' << s.v[1] << ','
       << s.v[2] << ',' << s.m / mass_unit_kg << '\n';
  }
}

State7 propagate_arc(const State7& s0, const Vec3& u, double elapsed, const SystemParams& p, double tol,
                     std::vector<double>* steps) {
  check_tol(tol);
  require(std::isfinite(elapsed) && u.allFinite(), ErrorCode::kInvalidArgument, "arc inputs must be finite");
  if (elapsed == 0.0) return s0;
  ode::Options opt;
  opt.rtol = tol;
  opt.atol = tol;
  opt.steps_out = steps;
  Y7 y = pack(s0);
  ode::integrate<7>(ThrustRhs(p, u), y, 0.0, elapsed, opt);
  return unpack(y);
}

State7 replay_arc(const State7& s0, const Vec3& u, const std::vector<double>& steps, double elapsed,
                  const SystemParams& p) {
  require(std::isfinite(elapsed) && u.allFinite(), ErrorCode::kInvalidArgument, "arc inputs must be finite");
  std::vector<double> h;
  h.reserve(steps.size() + 1);
  double left = elapsed;
  for (double s : steps) {
    if (s == 0.0 || (s > 0.0) != (elapsed > 0.0) || std::abs(s) >= std::abs(left)) break;
    h.push_back(s);
    left -= s;
  }
  // Extending past the recorded sequence lengthens its last step.
  if (h.size() == steps.size() && !h.empty()) {
    left += h.back();
    h.pop_back();
  }
  if (left != 0.0) h.push_back(left);
  Y7 y = pack(s0);
  ode::replay<7>(ThrustRhs(p, u), y, 0.0, h);
  const State7 out = unpack(y);
  require(out.finite(), ErrorCode::kNonFinite, "replayed arc produced a non-finite state");
  return out;
}

void propagate_arc(const State7& s0, const Vec3& u, double elapsed, const SystemParams& p, double tol,
                   Trajectory& append, double t_offset) {
  check_tol(tol);
  require(std::isfinite(elapsed) && u.allFinite(), ErrorCode::kInvalidArgument, "arc inputs must be finite");
  ode::Options opt;
  opt.rtol = tol;
  opt.atol = tol;
  Y7 y = pack(s0);
  if (elapsed != 0.0) {
    ode::integrate<7>(ThrustRhs(p, u), y, 0.0, elapsed, opt, [&](double t, const Y7& yy) {
      append.t.push_back(t_offset + t);
      append.states.push_back(unpack(yy));
    });
  }
  append.final = unpack(y);
}

Trajectory propagate_tangential(const State7& s0, double thrust_newtons, double duration, const SystemParams& p,
                                double tol, bool record) {
  check_tol(tol);
  require(duration >= 0.0 && std::isfinite(duration), ErrorCode::kInvalidArgument, "spiral duration must be >= 0");
  require(thrust_newtons >= 0.0 && thrust_newtons <= p.thrust_max_newtons * (1.0 + 1e-12), ErrorCode::kThrustBound,
          "tangential thrust exceeds the thrust limit");
  ode::Options opt;
  opt.rtol = tol;
  opt.atol = tol;
  Trajectory traj;
  Y7 y = pack(s0);
  if (record) {
    traj.t.push_back(0.0);
    traj.states.push_back(s0);
  }
  if (duration > 0.0) {
    ode::integrate<7>(TangentialRhs(p, thrust_newtons), y, 0.0, duration, opt, [&](double t, const Y7& yy) {
      if (record) {
        traj.t.push_back(t);
        traj.states.push_back(unpack(yy));
      }
    });
  }
  traj.final = unpack(y);
  return traj;
}

}  // namespace amgs
