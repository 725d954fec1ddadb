// Warm-start studies and structure diagnostics over solved decision vectors:
// uniform versus diffusion initialization, throttle histograms, manifold
// endpoints, fixed-arc basin scans and per-alpha cluster statistics.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amgs/config.hpp"
#include "amgs/datagen.hpp"
#include "amgs/ddpm.hpp"
#include "amgs/halo.hpp"
#include "amgs/nlp.hpp"
#include "amgs/transcribe.hpp"

namespace amgs {

enum class InitMethod { kUniform, kDiffusion };

std::string to_string(InitMethod m);
InitMethod init_method_from_string(const std::string& s);

struct StudyConfig {
  std::vector<double> alphas;           // held out of training
  std::vector<double> training_alphas;  // recorded for provenance
  int n_init = 100;                     // per method per alpha
  std::vector<InitMethod> methods{InitMethod::kUniform, InitMethod::kDiffusion};
  SolverConfig solver;
  std::uint64_t seed = 1;
  double guidance = 1.3;
  int workers = 1;
  int n_bootstrap = 10000;
  int histogram_bins = 20;

  void validate() const;
};

Json to_json(const StudyConfig& c);
void apply_json(const Json& j, StudyConfig& c, const std::string& where = "study");

struct StudyRun {
  InitMethod method = InitMethod::kUniform;
  double alpha = 0.0;
  int index = 0;  // initialization index within (method, alpha)
  std::uint64_t seed = 0;
  SolveStatus status = SolveStatus::kFailed;
  double objective = 0.0;
  double solve_time_s = 0.0;
  double sample_time_s = 0.0;  // amortized model sampling time; 0 for uniform
  double total_time_s = 0.0;   // solve + sample
  int iterations = 0;
  double feas_residual = 0.0;
  double kkt_residual = 0.0;
  bool init_clipped = false;  // diffusion sample left the box before clipping
  std::string reason;
  Eigen::VectorXd x0;
  Eigen::VectorXd x;
};

struct TimeStats {
  int count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
  double q25 = 0.0;
  double median = 0.0;
};

// Empty input gives no statistics.
std::optional<TimeStats> time_stats(std::vector<double> times);

// Linear-interpolation quantile of sorted values, p in [0, 1].
double quantile_sorted(const std::vector<double>& sorted, double p);

struct Histogram {
  std::vector<double> edges;  // size bins + 1
  std::vector<int> counts;
};

Histogram histogram(const std::vector<double>& values, int bins);

struct MethodStats {
  InitMethod method = InitMethod::kUniform;
  int n = 0;
  double feasibility_ratio = 0.0;  // feasible or optimal
  double optimality_ratio = 0.0;
  std::optional<TimeStats> feasible_time;  // total time over feasible or optimal runs
  std::optional<TimeStats> optimal_time;   // total time over optimal runs
  double sample_time_per_init_s = 0.0;
  int clipped_inits = 0;
  Histogram objective_histogram;  // over feasible or optimal runs
  std::vector<StudyRun> runs;
};

struct Comparison {
  bool available = false;  // both methods present
  double feasibility_diff = 0.0;  // diffusion - uniform
  double p_feasibility = 1.0;     // one-sided bootstrap, H1: diffusion higher
  double optimality_diff = 0.0;
  double p_optimality = 1.0;
  bool median_available = false;
  double median_time_diff = 0.0;  // diffusion - uniform, feasible runs
  double p_median_time = 1.0;     // one-sided bootstrap, H1: diffusion lower
};

struct StudyResult {
  std::vector<MethodStats> methods;
  Comparison comparison;
  double sampling_wall_time_s = 0.0;
};

// One-sided bootstrap p-value that mean(a) > mean(b) for 0/1 outcomes.
double bootstrap_p_greater(const std::vector<double>& a, const std::vector<double>& b, int n_boot, std::uint64_t seed);
// One-sided bootstrap p-value that median(a) < median(b).
double bootstrap_p_median_less(const std::vector<double>& a, const std::vector<double>& b, int n_boot,
                               std::uint64_t seed);

struct StudyHooks {
  // Replaces the transcription solver, for stubs.
  std::function<SolveOutcome(const Problem&, const Eigen::VectorXd&, const SolverConfig&)> solve;
  // Replaces model sampling: (alpha, n, seed) -> dim x n initial guesses.
  std::function<Eigen::MatrixXd(double, int, std::uint64_t)> sample;
  std::function<void(int, int)> progress;
};

// Runs every (method, alpha, index) solve. Both methods see the same alpha
// sequence and solver config; diffusion needs a model or a sample hook.
StudyResult warmstart_study(const ProblemSpec& spec, const Denoiser* model, const NoiseSchedule* schedule,
                            const StudyConfig& cfg, const StudyHooks& hooks = {});

MethodStats method_stats(InitMethod m, std::vector<StudyRun> runs, int histogram_bins);
Comparison compare_methods(const MethodStats& uniform, const MethodStats& diffusion, int n_boot,
                           std::uint64_t seed);

Json study_to_json(const StudyResult& r);
// study.json and study.csv under dir, each carrying `config`.
void write_study(const StudyResult& r, const std::string& dir, const Json& config);

// |u_k| / T_max for every segment of x.
std::vector<double> throttles(const Eigen::VectorXd& x, const Layout& layout, double thrust_max_newtons);

// Rows are segments, columns bins over [0, 1]; each row sums to 100.
Eigen::MatrixXd throttle_density(const std::vector<Eigen::VectorXd>& xs, const Layout& layout,
                                 double thrust_max_newtons, int n_bins);

struct ThrottleSummary {
  double mean = 0.0;
  double extreme_fraction = 0.0;  // share in the bottom or top decile
  int count = 0;
};

ThrottleSummary summarize_throttles(const std::vector<Eigen::VectorXd>& xs, const Layout& layout,
                                    double thrust_max_newtons);

struct EndpointRow {
  std::int64_t run = 0;
  double alpha = 0.0;
  double t1 = 0.0;  // wrapped into [0, T^H)
  double period = 0.0;
  double t2 = 0.0;
  Vec6 terminal = Vec6::Zero();
};

// Variant-II records mapped onto their manifold arcs.
std::vector<EndpointRow> endpoint_map(const Dataset& ds, HaloFamily& family, double tol = 1e-10);

// Share of cells of a grid over (t1 / T^H) x [t2_min, t2_max] holding an endpoint.
double endpoint_occupancy(const std::vector<EndpointRow>& rows, double t2_min, double t2_max, int n1 = 20,
                          int n2 = 20);

struct Polyline {
  double alpha = 0.0;
  double t1 = 0.0;
  std::vector<double> t2;
  std::vector<Vec3> points;
};

// Manifold arcs at n_arcs phases for each alpha, sampled at n_points values of t2.
std::vector<Polyline> manifold_backdrop(const std::vector<double>& alphas, HaloFamily& family, const ProblemSpec& spec,
                                        int n_arcs, int n_points);

struct BasinConfig {
  double alpha = 0.5;
  int n1 = 10;
  int n2 = 10;
  int starts_per_node = 3;
  std::uint64_t seed = 1;
  int workers = 1;
  SolverConfig solver;
};

struct BasinScan {
  std::vector<double> t1;  // node values
  std::vector<double> t2;
  Eigen::MatrixXd objective;  // n1 x n2, NaN where no start converged
  int basins = 0;
};

// Grid node i, j sits at t1 = T^H * i / n1 and t2 = t2_min + (t2_max - t2_min) * j / n2,
// seeded by its coordinates so refined grids reproduce shared nodes.
BasinScan basin_grid_scan(const ProblemSpec& spec, const BasinConfig& cfg,
                          std::shared_ptr<HaloFamily> family = nullptr, const StudyHooks& hooks = {});

// Connected regions (4-neighbour) of cells within `band` relative of a local minimum.
int count_basins(const Eigen::MatrixXd& values, double band = 0.01);

struct ClusterStats {
  double alpha = 0.0;
  int count = 0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();        // (time of flight, m_f)
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();  // unbiased
};

// Groups by alpha in increasing order; every group needs two records.
std::vector<ClusterStats> cluster_stats(const std::vector<DatasetRecord>& records, const Layout& layout);

// CSV writers; the first line is "# " followed by the config JSON.
void write_throttle_csv(const Eigen::MatrixXd& density, const std::string& path, const Json& config);
void write_endpoints_csv(const std::vector<EndpointRow>& rows, const std::vector<Polyline>& backdrop,
                         const std::string& path, const Json& config);
void write_basin_csv(const BasinScan& scan, const std::string& path, const Json& config);
void write_cluster_csv(const std::vector<ClusterStats>& stats, const std::string& path, const Json& config);

// Quick-look renderings.
std::string svg_heatmap(const Eigen::MatrixXd& values, const std::string& title, const std::string& x_label,
                        const std::string& y_label);
std::string svg_scatter(const std::vector<Eigen::Vector2d>& points, const std::vector<double>& color,
                        const std::string& title, const std::string& x_label, const std::string& y_label);

}  // namespace amgs
