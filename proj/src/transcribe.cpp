#include "amgs/transcribe.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

#include <Eigen/Geometry>

#include "amgs/error.hpp"

namespace amgs {

namespace {

using Key = std::tuple<double, double, double, double, double, double, double, double, double, double, double>;

Key spiral_key(const SystemParams& p, const SpiralConfig& c, double m0) {
  return {p.mu,           p.isp_seconds,       p.g0,          p.length_unit_km, p.time_unit_s, c.earth_radius_km,
          c.perigee_altitude_km, c.apogee_radius_km, c.duration_days, c.thrust_newtons, m0 + 1e6 * c.tol};
}

std::mutex g_spiral_mutex;
std::map<Key, State7> g_spiral_cache;

[[noreturn]] void leg_failure(const char* leg, int segment, const Error& e) {
  std::ostringstream os;
  os << leg << (segment < 0 ? " coast" : " segment ");
  if (segment >= 0) os << segment + 1;
  os << ": " << e.what();
  fail(ErrorCode::kEvaluationFailure, os.str());
}

State7 arc(const State7& s, const Vec3& u, double dt, const SystemParams& p, double tol, const char* leg, int segment,
           std::vector<double>* steps = nullptr) {
  try {
    return propagate_arc(s, u, dt, p, tol, steps);
  } catch (const Error& e) {
    leg_failure(leg, segment, e);
  }
}

// Arc of duration `target` on the step sequence recorded for the nominal arc.
State7 rearc(const State7& s, const Vec3& u, const std::vector<double>& steps, double target,
             const SystemParams& p, const char* leg, int segment) {
  try {
    if (target == 0.0) return s;
    return replay_arc(s, u, steps, target, p);
  } catch (const Error& e) {
    leg_failure(leg, segment, e);
  }
}

Vec3 control(const Eigen::VectorXd& x, const Layout& L, int k) {
  return Vec3(x[L.u(k, 0)], x[L.u(k, 1)], x[L.u(k, 2)]);
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::kHybridCost ? "hybrid_cost" : "variable_terminal"; }

Variant variant_from_string(const std::string& s) {
  if (s == "hybrid_cost" || s == "I" || s == "1") return Variant::kHybridCost;
  if (s == "variable_terminal" || s == "II" || s == "2") return Variant::kVariableTerminal;
  fail(ErrorCode::kParse, "unknown problem variant '" + s + "'");
}

void ProblemSpec::validate() const {
  params.validate();
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::kDomain, "alpha must lie in [0, 1]");
  require(n_segments >= 2 && n_segments % 2 == 0, ErrorCode::kInvalidArgument, "n_segments must be even and >= 2");
  require(tau_s_min >= 0.0 && tau_s_max > tau_s_min, ErrorCode::kInvalidArgument, "bad tau_s bounds");
  require(tau_i_max >= 0.0 && tau_f_max >= 0.0, ErrorCode::kInvalidArgument, "bad coast bounds");
  require(tau_s_max + tau_i_max + tau_f_max > 0.0, ErrorCode::kInvalidArgument, "time normalization is zero");
  require(t2_min >= 0.0 && t2_max >= t2_min, ErrorCode::kInvalidArgument, "bad t2 bounds");
  require(fixed_t1_fraction >= 0.0 && fixed_t1_fraction < 1.0, ErrorCode::kInvalidArgument,
          "fixed_t1_fraction must lie in [0, 1)");
  require(fixed_t2 >= 0.0, ErrorCode::kInvalidArgument, "fixed_t2 must be non-negative");
  require(initial_mass_kg > params.mass_floor_kg, ErrorCode::kInvalidArgument, "initial mass must exceed dry mass");
  require(flow_smoothing_newtons >= 0.0, ErrorCode::kInvalidArgument, "flow smoothing must be non-negative");
  require(eps_mag >= 0.0 && (branch_sign == 1 || branch_sign == -1), ErrorCode::kInvalidArgument,
          "bad manifold perturbation");
  require(spiral.duration_days >= 0.0 && spiral.thrust_newtons >= 0.0 && spiral.apogee_radius_km > 0.0 &&
              spiral.perigee_altitude_km > -spiral.earth_radius_km,
          ErrorCode::kInvalidArgument, "bad spiral configuration");
}

double ProblemSpec::halo_energy() const {
  return variant == Variant::kHybridCost ? kEnergyL1 + fixed_e_pert : energy_from_alpha(alpha);
}

Eigen::VectorXd DecisionVector::flatten(Variant v) const {
  const Layout L{v, static_cast<int>(u.size())};
  Eigen::VectorXd x(L.dim());
  x[Layout::kTauS] = tau_s;
  x[Layout::kTauI] = tau_i;
  x[Layout::kTauF] = tau_f;
  if (v == Variant::kVariableTerminal) {
    x[Layout::kT1] = t1;
    x[Layout::kT2] = t2;
  }
  x[L.m_f()] = m_f;
  for (int k = 0; k < L.n; ++k)
    for (int a = 0; a < 3; ++a) x[L.u(k, a)] = u[k][a];
  return x;
}

DecisionVector DecisionVector::unflatten(const Eigen::VectorXd& x, Variant v, int n_segments) {
  const Layout L{v, n_segments};
  require(x.size() == L.dim(), ErrorCode::kInvalidArgument, "decision vector has the wrong dimension");
  DecisionVector d;
  d.tau_s = x[Layout::kTauS];
  d.tau_i = x[Layout::kTauI];
  d.tau_f = x[Layout::kTauF];
  if (v == Variant::kVariableTerminal) {
    d.t1 = x[Layout::kT1];
    d.t2 = x[Layout::kT2];
  }
  d.m_f = x[L.m_f()];
  d.u.resize(n_segments);
  for (int k = 0; k < n_segments; ++k) d.u[k] = control(x, L, k);
  return d;
}

State7 gto_state(const SystemParams& p, const SpiralConfig& cfg, double initial_mass_kg) {
  const double rp = (cfg.earth_radius_km + cfg.perigee_altitude_km) / p.length_unit_km;
  const double ra = cfg.apogee_radius_km / p.length_unit_km;
  require(ra >= rp, ErrorCode::kInvalidArgument, "GTO apogee radius below perigee radius");
  const double a = 0.5 * (rp + ra);
  const double vp = std::sqrt((1.0 - p.mu) * (2.0 / rp - 1.0 / a));
  const Vec3 r_rel(rp, 0.0, 0.0);
  const Vec3 v_rel(0.0, vp, 0.0);
  State7 s;
  s.q = Vec3(-p.mu, 0.0, 0.0) + r_rel;
  s.v = v_rel - Vec3::UnitZ().cross(r_rel);
  s.m = initial_mass_kg;
  return s;
}

Trajectory spiral_trajectory(const SystemParams& p, const SpiralConfig& cfg, double initial_mass_kg) {
  const double duration = cfg.duration_days * 86400.0 / p.time_unit_s;
  return propagate_tangential(gto_state(p, cfg, initial_mass_kg), cfg.thrust_newtons, duration, p, cfg.tol, true);
}

State7 initial_boundary(const SystemParams& p, const SpiralConfig& cfg, double initial_mass_kg) {
  const Key key = spiral_key(p, cfg, initial_mass_kg);
  std::lock_guard lock(g_spiral_mutex);
  auto it = g_spiral_cache.find(key);
  if (it != g_spiral_cache.end()) return it->second;
  const double duration = cfg.duration_days * 86400.0 / p.time_unit_s;
  const State7 end =
      propagate_tangential(gto_state(p, cfg, initial_mass_kg), cfg.thrust_newtons, duration, p, cfg.tol, false).final;
  g_spiral_cache.emplace(key, end);
  return end;
}

double hybrid_cost(const Eigen::VectorXd& x, const ProblemSpec& spec) {
  const Layout L{spec.variant, spec.n_segments};
  require(x.size() == L.dim(), ErrorCode::kInvalidArgument, "decision vector has the wrong dimension");
  const double w = spec.omega();
  const double tof = x[Layout::kTauS] + x[Layout::kTauI] + x[Layout::kTauF];
  const double tof_max = spec.tau_s_max + spec.tau_i_max + spec.tau_f_max;
  return w * (-x[L.m_f()] / spec.initial_mass_kg) + (1.0 - w) * tof / tof_max;
}

struct Problem::Legs {
  double dt = 0.0;
  std::vector<State7> fwd;  // fwd[0] after the initial coast, fwd[k+1] after segment k
  std::vector<State7> bwd;  // bwd[0] after the final coast, bwd[j+1] after segment N-1-j
  // Accepted step sizes of each arc, indexed like the states above.
  std::vector<std::vector<double>> fwd_steps;
  std::vector<std::vector<double>> bwd_steps;
  Vec6 terminal = Vec6::Zero();
};

Problem::Problem(ProblemSpec spec, std::shared_ptr<HaloFamily> family)
    : spec_(std::move(spec)), layout_{spec_.variant, spec_.n_segments} {
  spec_.validate();
  if (!family) family = std::make_shared<HaloFamily>(spec_.params);
  halo_ = family->at_energy(spec_.halo_energy());
  initial_ = initial_boundary(spec_.params, spec_.spiral, spec_.initial_mass_kg);

  const int n = dim();
  box_.lower.resize(n);
  box_.upper.resize(n);
  box_.lower[Layout::kTauS] = spec_.tau_s_min;
  box_.upper[Layout::kTauS] = spec_.tau_s_max;
  box_.lower[Layout::kTauI] = 0.0;
  box_.upper[Layout::kTauI] = spec_.tau_i_max;
  box_.lower[Layout::kTauF] = 0.0;
  box_.upper[Layout::kTauF] = spec_.tau_f_max;
  if (spec_.variant == Variant::kVariableTerminal) {
    box_.lower[Layout::kT1] = 0.0;
    box_.upper[Layout::kT1] = halo_->period;
    box_.lower[Layout::kT2] = spec_.t2_min;
    box_.upper[Layout::kT2] = spec_.t2_max;
  }
  box_.lower[layout_.m_f()] = spec_.params.mass_floor_kg;
  box_.upper[layout_.m_f()] = spec_.initial_mass_kg;
  const double tmax = spec_.params.thrust_max_newtons;
  for (int i = layout_.u(0); i < n; ++i) {
    box_.lower[i] = -tmax;
    box_.upper[i] = tmax;
  }

  if (spec_.variant == Variant::kHybridCost) {
    ManifoldArcSpec a;
    a.t1 = spec_.fixed_t1_fraction * halo_->period;
    a.t2 = spec_.fixed_t2;
    a.eps_mag = spec_.eps_mag;
    a.branch_sign = spec_.branch_sign;
    fixed_terminal_ = manifold_terminal_state(*halo_, a, spec_.params, 1e-12, false);
  }
}

ManifoldArcSpec Problem::arc_spec(const Eigen::VectorXd& x) const {
  ManifoldArcSpec a;
  a.eps_mag = spec_.eps_mag;
  a.branch_sign = spec_.branch_sign;
  a.t2_min = spec_.t2_min;
  a.t2_max = spec_.t2_max;
  if (spec_.variant == Variant::kHybridCost) {
    a.t1 = spec_.fixed_t1_fraction * halo_->period;
    a.t2 = spec_.fixed_t2;
  } else {
    // The transported stable direction is continuous across t1 = T^H since the
    // stable multiplier is positive, so wrapping keeps the map smooth.
    const double T = halo_->period;
    double t1 = std::fmod(x[Layout::kT1], T);
    if (t1 < 0.0) t1 += T;
    if (t1 >= T) t1 = 0.0;
    a.t1 = t1;
    a.t2 = x[Layout::kT2];
  }
  return a;
}

Vec6 Problem::terminal_state(const Eigen::VectorXd& x, double tol) const {
  if (spec_.variant == Variant::kHybridCost) return fixed_terminal_;
  try {
    return manifold_terminal_state(*halo_, arc_spec(x), spec_.params, tol, false);
  } catch (const Error& e) {
    fail(ErrorCode::kEvaluationFailure, std::string("manifold terminal state: ") + e.what());
  }
}

namespace {

// The box on m_f already carries the dry-mass limit; stencil points may dip
// just below it, so propagation inside the transcription uses a token floor.
SystemParams leg_params(const ProblemSpec& spec) {
  SystemParams q = spec.params;
  q.mass_floor_kg = 1e-6;
  q.flow_smoothing_newtons = spec.flow_smoothing_newtons;
  return q;
}

}  // namespace

Problem::Legs Problem::run_legs(const Eigen::VectorXd& x, double tol, bool keep_steps) const {
  require(x.size() == dim(), ErrorCode::kInvalidArgument, "decision vector has the wrong dimension");
  require(x.allFinite(), ErrorCode::kNonFinite, "decision vector is not finite");
  const SystemParams p = leg_params(spec_);
  const int n = layout_.n, h = n / 2;
  Legs legs;
  legs.dt = x[Layout::kTauS] / n;
  legs.fwd.resize(h + 1);
  legs.bwd.resize(n - h + 1);
  legs.fwd_steps.resize(keep_steps ? h + 1 : 0);
  legs.bwd_steps.resize(keep_steps ? n - h + 1 : 0);
  auto steps = [&](std::vector<std::vector<double>>& v, int i) { return keep_steps ? &v[i] : nullptr; };

  legs.fwd[0] = arc(initial_, Vec3::Zero(), x[Layout::kTauI], p, tol, "forward", -1, steps(legs.fwd_steps, 0));
  for (int k = 0; k < h; ++k)
    legs.fwd[k + 1] = arc(legs.fwd[k], control(x, layout_, k), legs.dt, p, tol, "forward", k,
                          steps(legs.fwd_steps, k + 1));
  legs.terminal = terminal_state(x, tol);
  legs.bwd[0] = arc(State7::from(legs.terminal, x[layout_.m_f()]), Vec3::Zero(), -x[Layout::kTauF], p, tol,
                    "backward", -1, steps(legs.bwd_steps, 0));
  for (int j = 0; j < n - h; ++j) {
    const int k = n - 1 - j;
    legs.bwd[j + 1] = arc(legs.bwd[j], control(x, layout_, k), -legs.dt, p, tol, "backward", k,
                          steps(legs.bwd_steps, j + 1));
  }
  return legs;
}

namespace {

Residual residual_of(const State7& f, const State7& b) {
  Residual c;
  c.head<3>() = f.q - b.q;
  c.segment<3>(3) = f.v - b.v;
  c[6] = f.m - b.m;
  return c;
}

}  // namespace

EvalReport Problem::evaluate(const Eigen::VectorXd& x, double tol, bool record) const {
  require(x.size() == dim(), ErrorCode::kInvalidArgument, "decision vector has the wrong dimension");
  require(x.allFinite(), ErrorCode::kNonFinite, "decision vector is not finite");
  require(x[Layout::kTauS] >= 0.0 && x[Layout::kTauI] >= 0.0 && x[Layout::kTauF] >= 0.0, ErrorCode::kDomain,
          "times must be non-negative");
  require(x[layout_.m_f()] > 0.0, ErrorCode::kDomain, "final mass must be positive");
  if (spec_.variant == Variant::kVariableTerminal)
    require(x[Layout::kT2] >= 0.0, ErrorCode::kDomain, "t2 must be non-negative");

  EvalReport r;
  r.cost = cost(x);
  r.throttles.resize(layout_.n);
  for (int k = 0; k < layout_.n; ++k) r.throttles[k] = control(x, layout_, k).norm() / spec_.params.thrust_max_newtons;

  if (!record) {
    const Legs legs = run_legs(x, tol, false);
    r.forward_end = legs.fwd.back();
    r.backward_end = legs.bwd.back();
    r.terminal = State7::from(legs.terminal, x[layout_.m_f()]);
    r.c = residual_of(r.forward_end, r.backward_end);
    return r;
  }

  const SystemParams p = leg_params(spec_);
  const double dt = x[Layout::kTauS] / layout_.n;
  auto recorded = [&](Trajectory& tr, const State7& s, const Vec3& u, double elapsed, const char* leg, int seg) {
    try {
      propagate_arc(s, u, elapsed, p, tol, tr, tr.t.empty() ? 0.0 : tr.t.back());
    } catch (const Error& e) {
      leg_failure(leg, seg, e);
    }
  };
  r.forward.t.push_back(0.0);
  r.forward.states.push_back(initial_);
  r.forward.final = initial_;
  recorded(r.forward, initial_, Vec3::Zero(), x[Layout::kTauI], "forward", -1);
  for (int k = 0; k < layout_.n / 2; ++k) recorded(r.forward, r.forward.final, control(x, layout_, k), dt, "forward", k);

  r.terminal = State7::from(terminal_state(x, tol), x[layout_.m_f()]);
  r.backward.t.push_back(0.0);
  r.backward.states.push_back(r.terminal);
  r.backward.final = r.terminal;
  recorded(r.backward, r.terminal, Vec3::Zero(), -x[Layout::kTauF], "backward", -1);
  for (int k = layout_.n - 1; k >= layout_.n / 2; --k)
    recorded(r.backward, r.backward.final, control(x, layout_, k), -dt, "backward", k);

  r.forward_end = r.forward.final;
  r.backward_end = r.backward.final;
  r.c = residual_of(r.forward_end, r.backward_end);
  return r;
}

Eigen::VectorXd Problem::norm_constraints(const Eigen::VectorXd& x) const {
  const double t2 = spec_.params.thrust_max_newtons * spec_.params.thrust_max_newtons;
  Eigen::VectorXd g(layout_.n);
  for (int k = 0; k < layout_.n; ++k) g[k] = control(x, layout_, k).squaredNorm() - t2;
  return g;
}

double Problem::bound_violation(const Eigen::VectorXd& x) const {
  double v = 0.0;
  for (int i = 0; i < dim(); ++i) v = std::max({v, box_.lower[i] - x[i], x[i] - box_.upper[i]});
  for (int k = 0; k < layout_.n; ++k)
    v = std::max(v, control(x, layout_, k).norm() - spec_.params.thrust_max_newtons);
  return v;
}

double Problem::fd_step(int index) const {
  if (index == layout_.m_f()) return 1e-4;
  return 1e-7;
}

// Central differences on the step sequences of the nominal run: every stencil
// propagation replays the nominal accepted steps (with the tail adjusted when
// a duration changes), so the quotients are free of step-selection noise. The manifold
// parameters enter through the analytic terminal-state sensitivity followed
// by a directional difference along the backward leg.
Derivatives Problem::derivatives(const Eigen::VectorXd& x, double tol) const {
  const Legs base = run_legs(x, tol, true);
  const SystemParams p = leg_params(spec_);
  const int n = dim();
  const int ns = layout_.n, h = ns / 2;

  Derivatives d;
  d.cost = cost(x);
  d.c = residual_of(base.fwd.back(), base.bwd.back());
  d.cost_gradient = Eigen::VectorXd::Zero(n);
  const double w = spec_.omega();
  const double tof_max = spec_.tau_s_max + spec_.tau_i_max + spec_.tau_f_max;
  d.cost_gradient[Layout::kTauS] = (1.0 - w) / tof_max;
  d.cost_gradient[Layout::kTauI] = (1.0 - w) / tof_max;
  d.cost_gradient[Layout::kTauF] = (1.0 - w) / tof_max;
  d.cost_gradient[layout_.m_f()] = -w / spec_.initial_mass_kg;
  d.jc.resize(7, n);

  ManifoldSensitivity sens;
  if (spec_.variant == Variant::kVariableTerminal) {
    try {
      sens = manifold_terminal_sensitivity(*halo_, arc_spec(x), spec_.params, tol);
    } catch (const Error& e) {
      fail(ErrorCode::kEvaluationFailure, std::string("manifold sensitivity: ") + e.what());
    }
  }

  auto forward_from = [&](std::vector<State7>& fwd, int k0, const Eigen::VectorXd& xp) {
    const double dt = xp[Layout::kTauS] / ns;
    for (int k = k0; k < h; ++k)
      fwd[k + 1] = rearc(fwd[k], control(xp, layout_, k), base.fwd_steps[k + 1], dt, p, "forward", k);
  };
  auto backward_from = [&](std::vector<State7>& bwd, int j0, const Eigen::VectorXd& xp) {
    const double dt = xp[Layout::kTauS] / ns;
    for (int j = j0; j < ns - h; ++j) {
      const int k = ns - 1 - j;
      bwd[j + 1] = rearc(bwd[j], control(xp, layout_, k), base.bwd_steps[j + 1], -dt, p, "backward", k);
    }
  };
  auto backward_all = [&](std::vector<State7>& bwd, const Vec6& term, const Eigen::VectorXd& xp) {
    bwd[0] = rearc(State7::from(term, xp[layout_.m_f()]), Vec3::Zero(), base.bwd_steps[0], -xp[Layout::kTauF], p, "backward", -1);
    backward_from(bwd, 0, xp);
  };

  std::vector<State7> fwd, bwd;
  Eigen::VectorXd xp = x;
  // Residual at xp (or at x with the terminal state moved by `dterm`).
  auto perturbed = [&](int i, const Vec6& dterm) -> Residual {
    fwd = base.fwd;
    bwd = base.bwd;
    const bool manifold = spec_.variant == Variant::kVariableTerminal && (i == Layout::kT1 || i == Layout::kT2);
    if (i == Layout::kTauS) {
      forward_from(fwd, 0, xp);
      backward_from(bwd, 0, xp);
    } else if (i == Layout::kTauI) {
      fwd[0] = rearc(initial_, Vec3::Zero(), base.fwd_steps[0], xp[Layout::kTauI], p, "forward", -1);
      forward_from(fwd, 0, xp);
    } else if (manifold) {
      backward_all(bwd, base.terminal + dterm, xp);
    } else if (i == Layout::kTauF || i == layout_.m_f()) {
      backward_all(bwd, base.terminal, xp);
    } else {
      const int k = (i - layout_.u(0)) / 3;
      if (k < h)
        forward_from(fwd, k, xp);
      else
        backward_from(bwd, ns - 1 - k, xp);
    }
    return residual_of(fwd.back(), bwd.back());
  };

  for (int i = 0; i < n; ++i) {
    const double step = fd_step(i);
    const bool manifold = spec_.variant == Variant::kVariableTerminal && (i == Layout::kT1 || i == Layout::kT2);
    Residual cp, cm;
    if (manifold) {
      const Vec6 dir = (i == Layout::kT1 ? sens.d_t1 : sens.d_t2) * step;
      cp = perturbed(i, dir);
      cm = perturbed(i, -dir);
    } else {
      xp[i] = x[i] + step;
      cp = perturbed(i, Vec6::Zero());
      xp[i] = x[i] - step;
      cm = perturbed(i, Vec6::Zero());
      xp[i] = x[i];
    }
    d.jc.col(i) = (cp - cm) / (2.0 * step);
  }
  return d;
}

}  // namespace amgs
