// Forward-backward shooting transcription of the GTO-to-manifold transfer.
//
// Decision vectors are flat arrays in the order
//   [tau_s, tau_i, tau_f, (t1, t2,) m_f, u_1x, u_1y, u_1z, ..., u_Nz]
// with t1, t2 present only for the variable-terminal variant.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amgs/cr3bp.hpp"
#include "amgs/halo.hpp"

namespace amgs {

enum class Variant { kHybridCost, kVariableTerminal };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct SpiralConfig {
  double earth_radius_km = 6378.137;
  double perigee_altitude_km = 400.0;
  double apogee_radius_km = 42164.0;
  double duration_days = 30.0;
  double thrust_newtons = 1.0;
  double tol = 1e-12;
};

struct ProblemSpec {
  Variant variant = Variant::kHybridCost;
  double alpha = 0.0;  // cost weight (hybrid cost) or halo-energy parameter (variable terminal)
  int n_segments = 20;
  double tau_s_min = 0.5;
  double tau_s_max = 10.0;
  double tau_i_max = 5.0;
  double tau_f_max = 5.0;
  double t2_min = 5.0;
  double t2_max = 11.0;
  double fixed_t1_fraction = 0.2;  // hybrid cost: t1 = fraction * T^H
  double fixed_t2 = 8.0;
  double fixed_e_pert = 0.01;
  double initial_mass_kg = 1000.0;
  double eps_mag = 1e-6;
  int branch_sign = +1;
  // Mass-flow smoothing used on the transfer arcs (see SystemParams).
  double flow_smoothing_newtons = 1e-3;
  SpiralConfig spiral;
  SystemParams params;

  void validate() const;
  int dim() const { return (variant == Variant::kHybridCost ? 4 : 6) + 3 * n_segments; }
  // Weight on the fuel term; the variable-terminal problem is minimum fuel.
  double omega() const { return variant == Variant::kHybridCost ? alpha : 1.0; }
  double halo_energy() const;
};

// Index map into the flat decision vector.
struct Layout {
  Variant variant;
  int n;

  static constexpr int kTauS = 0;
  static constexpr int kTauI = 1;
  static constexpr int kTauF = 2;
  static constexpr int kT1 = 3;
  static constexpr int kT2 = 4;
  int m_f() const { return variant == Variant::kHybridCost ? 3 : 5; }
  int u(int segment, int axis = 0) const { return m_f() + 1 + 3 * segment + axis; }
  int dim() const { return m_f() + 1 + 3 * n; }
};

struct DecisionVector {
  double tau_s = 0.0;
  double tau_i = 0.0;
  double tau_f = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
  double m_f = 0.0;
  std::vector<Vec3> u;

  Eigen::VectorXd flatten(Variant v) const;
  static DecisionVector unflatten(const Eigen::VectorXd& x, Variant v, int n_segments);
};

struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

using Residual = Eigen::Matrix<double, 7, 1>;

struct EvalReport {
  double cost = 0.0;
  Residual c = Residual::Zero();  // position (3), velocity (3), mass in kg (1)
  State7 forward_end;
  State7 backward_end;
  State7 terminal;  // manifold state carrying m_f
  Trajectory forward;   // filled when recording
  Trajectory backward;  // filled when recording, in backward-time order
  std::vector<double> throttles;
};

struct Derivatives {
  double cost = 0.0;
  Residual c = Residual::Zero();
  Eigen::VectorXd cost_gradient;
  Eigen::Matrix<double, 7, Eigen::Dynamic> jc;
};

// GTO state at zero phase: perigee on the +q1 side of Earth, prograde.
State7 gto_state(const SystemParams& p, const SpiralConfig& cfg, double initial_mass_kg);

// Spiral end state; computed once per configuration and cached.
State7 initial_boundary(const SystemParams& p, const SpiralConfig& cfg = {}, double initial_mass_kg = 1000.0);

Trajectory spiral_trajectory(const SystemParams& p, const SpiralConfig& cfg = {}, double initial_mass_kg = 1000.0);

double hybrid_cost(const Eigen::VectorXd& x, const ProblemSpec& spec);

class Problem {
 public:
  explicit Problem(ProblemSpec spec, std::shared_ptr<HaloFamily> family = nullptr);

  const ProblemSpec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }
  int dim() const { return layout_.dim(); }
  const HaloOrbit& halo() const { return *halo_; }
  const State7& initial_state() const { return initial_; }
  const Box& bounds() const { return box_; }

  // Arc spec for x; t1 is wrapped into [0, T^H).
  ManifoldArcSpec arc_spec(const Eigen::VectorXd& x) const;
  Vec6 terminal_state(const Eigen::VectorXd& x, double tol) const;

  EvalReport evaluate(const Eigen::VectorXd& x, double tol = 1e-12, bool record = false) const;
  double cost(const Eigen::VectorXd& x) const { return hybrid_cost(x, spec_); }
  // Thrust-norm inequalities |u_i|^2 - T_max^2 <= 0.
  Eigen::VectorXd norm_constraints(const Eigen::VectorXd& x) const;
  // Largest violation of the box and the norm constraints.
  double bound_violation(const Eigen::VectorXd& x) const;

  // Analytic cost gradient and central-difference residual Jacobian.
  Derivatives derivatives(const Eigen::VectorXd& x, double tol = 1e-12) const;
  double fd_step(int index) const;

 private:
  struct Legs;
  Legs run_legs(const Eigen::VectorXd& x, double tol, bool keep_steps) const;

  ProblemSpec spec_;
  Layout layout_;
  std::shared_ptr<const HaloOrbit> halo_;
  State7 initial_;
  Box box_;
  Vec6 fixed_terminal_ = Vec6::Zero();
};

}  // namespace amgs
