// Northern L1 halo family: differential correction with energy continuation,
// monodromy eigenstructure, and the (t1, t2)-parameterized stable manifold.
#pragma once

#include <map>
#include <memory>
#include <shared_mutex>
#include <vector>

#include "amgs/cr3bp.hpp"

namespace amgs {

inline constexpr double kEnergyL1 = -1.594;
inline constexpr double kEnergyPertMin = 0.008;
inline constexpr double kEnergyPertMax = 0.095;

struct HaloOrbit {
  double energy = 0.0;
  double period = 0.0;
  Vec6 crossing_state = Vec6::Zero();  // q2 = v1 = v3 = 0, Earth-side crossing
  Mat6 monodromy = Mat6::Identity();
  Vec6 stable_eigvec = Vec6::Zero();  // unit norm, q1 component <= 0
  double stable_eigval = 0.0;
  double unstable_eigval = 0.0;
};

struct ManifoldArcSpec {
  double t1 = 0.0;
  double t2 = 5.0;
  double eps_mag = 1e-6;
  int branch_sign = +1;  // +1 follows the Earth-side (interior) branch
  double t2_min = 5.0;
  double t2_max = 11.0;
};

struct HaloOptions {
  int max_iterations = 50;
  double newton_tol = 1e-12;
  double continuation_step = 0.002;
  double min_step = 1e-6;
  double tol = 1e-12;  // propagation tolerance
};

// e = e_L1 + e_pert,min + alpha (e_pert,max - e_pert,min), alpha in [0, 1].
double energy_from_alpha(double alpha);

// Corrects from the built-in seed orbit and continues in energy to target_e.
HaloOrbit solve_halo(double target_e, const SystemParams& p, const HaloOptions& opt = {});

// Continues from an already corrected family member to target_e.
HaloOrbit continue_halo(const HaloOrbit& from, double target_e, const SystemParams& p, const HaloOptions& opt = {});

struct StableDirection {
  double eigval;
  Vec6 eigvec;
};

StableDirection stable_direction(const HaloOrbit& h);

// Throws kDomain when spec lies outside [0, T) x [t2_min, t2_max]. Bounds on t2
// are skipped with `check_t2 = false`, which the grid scans over [0, t2_max] use.
void validate_arc_spec(const HaloOrbit& h, const ManifoldArcSpec& spec, bool check_t2 = true);

// Perturbed on-orbit state at phase t1 (before the backward coast).
Vec6 manifold_insertion_state(const HaloOrbit& h, const ManifoldArcSpec& spec, const SystemParams& p,
                              double tol = 1e-12);

Vec6 manifold_terminal_state(const HaloOrbit& h, const ManifoldArcSpec& spec, const SystemParams& p,
                             double tol = 1e-12, bool check_t2 = true);

struct ManifoldSensitivity {
  Vec6 terminal;
  Vec6 d_t1;  // d terminal / d t1
  Vec6 d_t2;  // d terminal / d t2
};

// Terminal state with its analytic derivatives in t1 and t2, including the
// rotation of the transported stable direction.
ManifoldSensitivity manifold_terminal_sensitivity(const HaloOrbit& h, const ManifoldArcSpec& spec,
                                                  const SystemParams& p, double tol = 1e-12);

// n_samples states evenly spaced along the backward coast, first at t2 = 0
// (the insertion state), last at the full t2.
std::vector<Vec6> manifold_arc(const HaloOrbit& h, const ManifoldArcSpec& spec, std::size_t n_samples,
                               const SystemParams& p, double tol = 1e-12, bool check_t2 = true);

// Samples one period of the orbit at n evenly spaced phases.
std::vector<Vec6> sample_orbit(const HaloOrbit& h, std::size_t n, const SystemParams& p, double tol = 1e-12);

// Minimum distance from a state's position to the orbit, by dense sampling
// refined with a local search in phase.
double distance_to_orbit(const HaloOrbit& h, const Vec3& q, const SystemParams& p, double tol = 1e-12);

// Maximum |q3| along the orbit.
double out_of_plane_amplitude(const HaloOrbit& h, const SystemParams& p);

// Read-mostly memo of corrected orbits keyed by quantized energy. Each new
// orbit continues from the cached member nearest in energy.
class HaloFamily {
 public:
  explicit HaloFamily(SystemParams p, HaloOptions opt = {}) : params_(p), opt_(opt) {}

  std::shared_ptr<const HaloOrbit> at_energy(double e);
  std::shared_ptr<const HaloOrbit> at_alpha(double alpha) { return at_energy(energy_from_alpha(alpha)); }
  const SystemParams& params() const { return params_; }

 private:
  SystemParams params_;
  HaloOptions opt_;
  mutable std::shared_mutex mutex_;
  std::map<long long, std::shared_ptr<const HaloOrbit>> cache_;
};

}  // namespace amgs
