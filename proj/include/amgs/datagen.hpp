// Solve farm, objective filtering and JSON Lines dataset persistence.
//
// A dataset file holds a header object on its first line followed by one
// record per line. Generation also writes `<stem>.failures.jsonl` and keeps
// `<stem>.checkpoint` current so an interrupted run resumes without redoing
// finished seeds.
#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amgs/config.hpp"
#include "amgs/nlp.hpp"
#include "amgs/transcribe.hpp"

namespace amgs {

// Independent uniform draws per entry, reproducible from the seed.
Eigen::VectorXd sample_uniform(const Box& bounds, std::uint64_t seed);

enum class AlphaMode { kFixedGrid, kUniform };

std::string to_string(AlphaMode m);
AlphaMode alpha_mode_from_string(const std::string& s);

struct DatasetRecord {
  std::int64_t run = 0;
  double alpha = 0.0;
  Eigen::VectorXd x;
  double objective = 0.0;
  SolveStatus status = SolveStatus::kFeasible;
  double solve_time_s = 0.0;
  std::uint64_t rng_seed = 0;
  Variant variant = Variant::kHybridCost;
  int iterations = 0;
  double feas_residual = 0.0;
  double kkt_residual = 0.0;
};

struct FailureRecord {
  std::int64_t run = 0;
  double alpha = 0.0;
  std::uint64_t rng_seed = 0;
  double solve_time_s = 0.0;
  std::string reason;
};

struct GenerateConfig {
  int n_runs = 100;
  AlphaMode alpha_mode = AlphaMode::kFixedGrid;
  // Grid mode: run i uses grid_alphas[i % size]. Uniform mode: alpha ~ U[alpha_min, alpha_max].
  std::vector<double> grid_alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double alpha_min = 0.0;
  double alpha_max = 1.0;
  std::uint64_t seed = 1;
  int workers = 1;
  SolverConfig solver;

  void validate() const;
};

Json to_json(const GenerateConfig& g);
void apply_json(const Json& j, GenerateConfig& g, const std::string& where = "generation");

struct DatasetHeader {
  ProblemSpec spec;  // template; each record carries its own alpha
  int dim = 0;
  Box bounds;        // box at the template alpha (t1's upper bound follows T^H(alpha))
  GenerateConfig generation;
  std::string code_version = kCodeVersion;
  int runs_completed = 0;
  int failed = 0;
  Json extra = Json::object();  // effective CLI config and lineage, echoed verbatim
};

struct Dataset {
  DatasetHeader header;
  std::vector<DatasetRecord> records;
};

// Seed and alpha for run i, shared by generation and resume.
std::uint64_t run_seed(const GenerateConfig& cfg, std::int64_t run);
double run_alpha(const GenerateConfig& cfg, std::int64_t run);

struct GenerateHooks {
  // Called after each finished run with (finished, total); may be empty.
  std::function<void(int, int)> progress;
  // When set and raised, workers stop taking new runs; finished runs stay saved.
  const std::atomic<bool>* cancel = nullptr;
};

// Runs the farm into `path` (the .jsonl file). With resume set, finished runs
// found in the existing files are kept and skipped. A dry run writes nothing
// and returns the empty dataset with its header.
Dataset generate_dataset(const ProblemSpec& spec, const GenerateConfig& cfg, const std::string& path, bool resume,
                         bool dry_run = false, const Json& extra = Json::object(), const GenerateHooks& hooks = {});

// Keeps ceil(keep_fraction * n) records per alpha bucket (grid mode) or overall
// (uniform mode): lowest objective for the hybrid-cost variant, highest m_f for
// the variable-terminal variant, earlier record first on ties. Kept records
// retain their order.
Dataset filter_top(const Dataset& ds, double keep_fraction);
// Same, with the bucketing chosen explicitly.
Dataset filter_top(const Dataset& ds, double keep_fraction, bool per_bucket);

Json header_to_json(const DatasetHeader& h);
DatasetHeader header_from_json(const Json& j);
Json record_to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const Json& j);

void write_dataset(const Dataset& ds, const std::string& path);
// Strict mode throws kParse naming the first bad line; permissive mode stops
// at it and returns the records before it. Dimension or variant mismatches
// against the header always throw kHeaderMismatch.
Dataset read_dataset(const std::string& path, bool permissive = false);

std::string failures_path(const std::string& dataset_path);
std::string checkpoint_path(const std::string& dataset_path);
std::vector<FailureRecord> read_failures(const std::string& path);

// ProblemSpec for one record of a dataset.
ProblemSpec record_spec(const DatasetHeader& h, const DatasetRecord& r);

}  // namespace amgs
