// Earth-Moon circular restricted three-body dynamics in the normalized
// rotating frame, with optional constant-thrust low-thrust propulsion.
//
// Units: positions in distance between primaries, time in (orbital period)/2pi.
// Spacecraft mass is carried in kilograms; thrust (N) and mass flow (kg/s)
// are converted to normalized acceleration and kg per time unit on evaluation.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace amgs {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Stm = Mat6;

struct SystemParams {
  double mu = 0.0121505856;
  double isp_seconds = 1000.0;
  double g0 = 9.80665;
  double thrust_max_newtons = 1.0;
  double length_unit_km = 384400.0;
  double time_unit_s = 375190.0;
  double mass_unit_kg = 1000.0;
  double mass_floor_kg = 300.0;
  double rho_min = 1e-9;
  // When positive, mass flow uses sqrt(|u|^2 + d^2) - d in place of |u| so it
  // is differentiable at zero thrust. Zero keeps the exact law.
  double flow_smoothing_newtons = 0.0;

  void validate() const;

  // m/s^2 -> normalized acceleration
  double accel_scale() const { return time_unit_s * time_unit_s / (length_unit_km * 1000.0); }
  // Mass flow for thrust |u| (N), in kg per normalized time unit.
  double mass_flow(double thrust_newtons) const {
    const double d = flow_smoothing_newtons;
    const double t = d > 0.0 ? std::sqrt(thrust_newtons * thrust_newtons + d * d) - d : thrust_newtons;
    return t / (isp_seconds * g0) * time_unit_s;
  }
};

struct State7 {
  Vec3 q = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double m = 1000.0;

  Vec6 qv() const;
  static State7 from(const Vec6& qv, double m);
  bool finite() const;
};

struct StateDerivative {
  Vec3 dq = Vec3::Zero();
  Vec3 dv = Vec3::Zero();
  double dm = 0.0;
};

struct ControlSegment {
  double duration = 0.0;  // normalized time, >= 0
  Vec3 u = Vec3::Zero();  // thrust vector, N
};

using ControlSchedule = std::vector<ControlSegment>;

enum class Direction { kForward, kBackward };

struct Trajectory {
  std::vector<double> t;
  std::vector<State7> states;
  State7 final;
};

// Distances to the primary and secondary.
std::array<double, 2> primary_distances(const Vec3& q, double mu);

StateDerivative eom_natural(const State7& s, const SystemParams& p);
// Natural vector field on (q, v).
Vec6 natural_field(const Vec6& s, const SystemParams& p);
StateDerivative eom_controlled(const State7& s, const Vec3& u, const SystemParams& p);

// Rotating-frame energy e = |v|^2/2 - (q1^2+q2^2)/2 - (1-mu)/rho1 - mu/rho2.
double energy(const State7& s, const SystemParams& p);
double energy(const Vec6& qv, const SystemParams& p);

// L1..L5 in order.
std::array<Vec3, 5> lagrange_points(const SystemParams& p);

// Integrates segment by segment with the control held constant, then coasts
// for `coast_after`. A backward propagation walks the schedule in reverse
// order with negated time. `record` keeps every accepted step.
Trajectory propagate(const State7& s0, const ControlSchedule& schedule, double coast_after, const SystemParams& p,
                     double tol, Direction direction = Direction::kForward, bool record = true);

// Final state only; the hot path used by the transcription.
State7 propagate_final(const State7& s0, const ControlSchedule& schedule, double coast_after, const SystemParams& p,
                       double tol, Direction direction = Direction::kForward);

// One constant-thrust arc over signed `elapsed`. The thrust bound is not
// checked here: optimizer iterates may exceed it and are penalized instead.
// `steps`, when given, receives the accepted step sizes.
State7 propagate_arc(const State7& s0, const Vec3& u, double elapsed, const SystemParams& p, double tol,
                     std::vector<double>* steps = nullptr);
// Re-integrates over `elapsed` with a recorded step sequence and no error
// control. The sequence is kept up to its tail, which is stretched or trimmed
// so the steps add up to `elapsed`.
State7 replay_arc(const State7& s0, const Vec3& u, const std::vector<double>& steps, double elapsed,
                  const SystemParams& p);
// Same, appending every accepted step (time shifted by t_offset) and setting `final`.
void propagate_arc(const State7& s0, const Vec3& u, double elapsed, const SystemParams& p, double tol,
                   Trajectory& append, double t_offset);

// Thrust of fixed magnitude along the rotating-frame velocity.
Trajectory propagate_tangential(const State7& s0, double thrust_newtons, double duration, const SystemParams& p,
                                double tol, bool record = true);

// Ballistic flow over signed `elapsed` together with the 6x6 state transition matrix.
std::pair<Vec6, Stm> propagate_stm(const Vec6& s0, double elapsed, const SystemParams& p, double tol);

// Ballistic flow of a 6-state over signed `elapsed`.
Vec6 flow(const Vec6& s0, double elapsed, const SystemParams& p, double tol);

// First crossing of the q1q3-plane (q2 = 0) after `t_min`, refined by Newton
// iteration on the crossing time. Returns (time, state).
std::pair<double, Vec6> next_plane_crossing(const Vec6& s0, const SystemParams& p, double tol, double t_min,
                                            double t_max = 20.0);

// Jacobian of the natural vector field with respect to (q, v).
Mat6 natural_jacobian(const Vec6& s, const SystemParams& p);

// Mass is written normalized by `mass_unit_kg`.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, double mass_unit_kg);

}  // namespace amgs
