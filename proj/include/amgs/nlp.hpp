// Augmented-Lagrangian solver for box-constrained nonlinear programs with
// equality and inequality constraints, plus the transcription adapter.
//
// Outer loop: PHR augmented Lagrangian. Inner loop: projected Newton-type
// steps on variables scaled to the bound box, with a Gauss-Newton model of the
// penalty terms, a damped BFGS secant model of the remaining curvature, and
// Levenberg-Marquardt damping.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amgs/transcribe.hpp"

namespace amgs {

struct NlpValues {
  double f = 0.0;
  Eigen::VectorXd c;  // equalities, c = 0
  Eigen::VectorXd g;  // inequalities, g <= 0
};

struct NlpDerivatives {
  NlpValues v;
  Eigen::VectorXd grad;  // df/dx
  Eigen::MatrixXd jc;
  Eigen::MatrixXd jg;
  // Diagonal second derivatives of each g_k (rows), when known; empty otherwise.
  Eigen::MatrixXd g_hess_diag;
};

// Callbacks throw amgs::Error on evaluation failure.
struct NlpFunctions {
  int n = 0;
  int n_eq = 0;
  int n_ineq = 0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::function<NlpValues(const Eigen::VectorXd&)> values;
  std::function<NlpDerivatives(const Eigen::VectorXd&)> derivatives;
};

struct SolverConfig {
  double max_wall_time_s = 240.0;
  int max_outer_iterations = 60;
  int max_inner_iterations = 80;  // per outer iteration
  int max_total_iterations = 3000;
  double tol_feas = 1e-6;
  double tol_opt = 1e-5;
  double rho_initial = 10.0;
  double rho_factor = 10.0;
  double rho_max = 1e12;
  double feas_reduction = 0.25;  // required shrink of max|c| to keep the penalty
  double inner_tol_initial = 1e-2;
  double integrator_tol = 1e-12;
  bool secant_update = true;

  void validate() const;
};

enum class SolveStatus { kFailed, kFeasible, kOptimal };

std::string to_string(SolveStatus s);
SolveStatus status_from_string(const std::string& s);

struct OuterRecord {
  int outer = 0;
  int inner_iterations = 0;
  double rho = 0.0;  // penalty in force after this outer step
  bool rho_increased = false;
  double feas = 0.0;
  double kkt = 0.0;
  double objective = 0.0;
};

struct SolveOutcome {
  SolveStatus status = SolveStatus::kFailed;
  Eigen::VectorXd x_final;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double feas_residual = 0.0;
  int iterations = 0;
  double wall_time_s = 0.0;
  std::string reason;
  std::vector<OuterRecord> trace;
};

// max(|c|_inf, max_k g_k^+, box violation).
double feasibility(const NlpFunctions& nlp, const Eigen::VectorXd& x, const NlpValues& v);

SolveOutcome solve(const NlpFunctions& nlp, const Eigen::VectorXd& x0, const SolverConfig& cfg);

// Transcription as an NLP: mass residual divided by the initial mass, thrust
// norms as |u_k|^2 / T_max^2 - 1 <= 0.
NlpFunctions make_nlp(const Problem& problem, double integrator_tol);

SolveOutcome solve(const Problem& problem, const Eigen::VectorXd& x0, const SolverConfig& cfg);

// Status implied by the residuals alone.
SolveStatus classify(const SolveOutcome& outcome, const SolverConfig& cfg);

// Feasibility measure of the transcription at x, recomputed from scratch.
double transcription_feasibility(const Problem& problem, const Eigen::VectorXd& x, double integrator_tol);

std::string outcome_to_json(const SolveOutcome& outcome, std::uint64_t seed, const std::string& method);

}  // namespace amgs
