#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <unistd.h>

#include "amgs/datagen.hpp"
#include "amgs/error.hpp"

using namespace amgs;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("amgs_datagen_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

DatasetRecord record(std::int64_t run, double alpha, double objective, double m_f, int dim, int mf_index) {
  DatasetRecord r;
  r.run = run;
  r.alpha = alpha;
  r.x = Eigen::VectorXd::Zero(dim);
  r.x[mf_index] = m_f;
  r.objective = objective;
  r.rng_seed = 1000 + static_cast<std::uint64_t>(run);
  return r;
}

Dataset small_dataset(Variant v = Variant::kHybridCost) {
  Dataset ds;
  ds.header.spec.variant = v;
  ds.header.spec.n_segments = 2;
  ds.header.dim = ds.header.spec.dim();
  ds.header.bounds.lower = Eigen::VectorXd::Zero(ds.header.dim);
  ds.header.bounds.upper = Eigen::VectorXd::Ones(ds.header.dim);
  return ds;
}

// A tiny farm whose solves stop on an iteration cap, so outcomes do not
// depend on wall-clock time.
ProblemSpec tiny_spec() {
  ProblemSpec s;
  s.n_segments = 4;
  return s;
}

GenerateConfig tiny_config(int n_runs) {
  GenerateConfig g;
  g.n_runs = n_runs;
  g.grid_alphas = {0.0, 1.0};
  g.seed = 9;
  g.solver.max_wall_time_s = 1e6;
  g.solver.max_total_iterations = 12;
  return g;
}

bool same_outcome(const DatasetRecord& a, const DatasetRecord& b) {
  return a.run == b.run && a.alpha == b.alpha && a.x == b.x && a.objective == b.objective && a.status == b.status &&
         a.rng_seed == b.rng_seed;
}

}  // namespace

TEST_CASE("uniform sampling") {
  Box b;
  b.lower = Eigen::VectorXd::LinSpaced(4, 0.0, 3.0);
  b.upper = b.lower;
  CHECK(sample_uniform(b, 5) == b.lower);

  b.upper = b.lower.array() + 2.0;
  CHECK(sample_uniform(b, 5) == sample_uniform(b, 5));
  CHECK(sample_uniform(b, 5) != sample_uniform(b, 6));
  const Eigen::VectorXd x = sample_uniform(b, 7);
  CHECK((x.array() >= b.lower.array()).all());
  CHECK((x.array() <= b.upper.array()).all());

  Box bad = b;
  bad.upper[1] = bad.lower[1] - 1.0;
  CHECK_THROWS_AS(sample_uniform(bad, 1), Error);

  Box unit;
  unit.lower = Eigen::VectorXd::Zero(1);
  unit.upper = Eigen::VectorXd::Ones(1);
  std::vector<double> u;
  for (std::uint64_t s = 0; s < 10000; ++s) u.push_back(sample_uniform(unit, s)[0]);
  double mean = 0.0;
  for (double v : u) mean += v / u.size();
  CHECK(std::abs(mean - 0.5) < 0.02);
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double n = static_cast<double>(u.size());
    ks = std::max({ks, std::abs((i + 1) / n - u[i]), std::abs(u[i] - i / n)});
  }
  CHECK(ks < 0.02);
}

TEST_CASE("grid alphas partition the runs") {
  GenerateConfig g;
  g.n_runs = 110;
  std::vector<int> count(11, 0);
  for (int i = 0; i < g.n_runs; ++i) {
    const double a = run_alpha(g, i);
    const int k = static_cast<int>(std::lround(a * 10));
    REQUIRE(std::abs(a - 0.1 * k) < 1e-12);
    ++count[k];
  }
  for (int c : count) CHECK(c == 10);

  g.alpha_mode = AlphaMode::kUniform;
  std::set<std::uint64_t> seeds;
  for (int i = 0; i < 1000; ++i) {
    const double a = run_alpha(g, i);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    seeds.insert(run_seed(g, i));
  }
  CHECK(seeds.size() == 1000);
}

TEST_CASE("filter keeps the best fraction") {
  Dataset ds = small_dataset();
  const int dim = ds.header.dim, mf = 3;
  for (int i = 0; i < 4; ++i) ds.records.push_back(record(i, 0.0, 4.0 - i, 500.0, dim, mf));
  Dataset half = filter_top(ds, 0.5, false);
  REQUIRE(half.records.size() == 2);
  // Objectives 1 and 2 survive, in their original order.
  CHECK(half.records[0].objective == 2.0);
  CHECK(half.records[1].objective == 1.0);

  const Dataset all = filter_top(ds, 1.0);
  REQUIRE(all.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) CHECK(same_outcome(all.records[i], ds.records[i]));

  CHECK(filter_top(ds, 0.3, false).records.size() == 2);  // ceil(1.2)
  CHECK_THROWS_AS(filter_top(ds, 0.0), Error);
  CHECK_THROWS_AS(filter_top(small_dataset(), 0.5), Error);
}

TEST_CASE("filter works per alpha bucket in grid mode") {
  Dataset ds = small_dataset();
  const int dim = ds.header.dim, mf = 3;
  for (int i = 0; i < 8; ++i) ds.records.push_back(record(i, i % 2 == 0 ? 0.0 : 1.0, 10.0 + i, 500.0, dim, mf));
  const Dataset f = filter_top(ds, 0.5);  // grid mode by default
  int low = 0, high = 0;
  for (const auto& r : f.records) (r.alpha == 0.0 ? low : high)++;
  CHECK(low == 2);
  CHECK(high == 2);
  // Every discarded record is weakly worse than every kept one in its bucket.
  for (const auto& d : ds.records) {
    const bool kept = std::any_of(f.records.begin(), f.records.end(), [&](const auto& k) { return k.run == d.run; });
    if (kept) continue;
    for (const auto& k : f.records)
      if (k.alpha == d.alpha) CHECK(d.objective >= k.objective);
  }
}

TEST_CASE("variable-terminal filter ranks by final mass with index tie-break") {
  Dataset ds = small_dataset(Variant::kVariableTerminal);
  ds.header.generation.alpha_mode = AlphaMode::kUniform;
  const int dim = ds.header.dim, mf = 5;
  ds.records.push_back(record(0, 0.1, 0.0, 600.0, dim, mf));
  ds.records.push_back(record(1, 0.2, 0.0, 700.0, dim, mf));
  ds.records.push_back(record(2, 0.3, 0.0, 650.0, dim, mf));
  ds.records.push_back(record(3, 0.4, 0.0, 650.0, dim, mf));
  const Dataset f = filter_top(ds, 0.5);
  REQUIRE(f.records.size() == 2);
  CHECK(f.records[0].run == 1);
  CHECK(f.records[1].run == 2);
}

TEST_CASE("dataset round trip and corrupt files") {
  const fs::path dir = scratch_dir("io");
  Dataset ds = small_dataset();
  ds.header.extra = Json{{"note", "test"}};
  for (int i = 0; i < 3; ++i) {
    DatasetRecord r = record(i, 0.5, -0.1 * i, 700.0 + i, ds.header.dim, 3);
    r.x[0] = 1.0 / 3.0 + i;
    r.status = i == 0 ? SolveStatus::kFeasible : SolveStatus::kOptimal;
    r.solve_time_s = 0.25 * i;
    ds.records.push_back(r);
  }
  const std::string path = (dir / "d.jsonl").string();
  write_dataset(ds, path);
  const Dataset back = read_dataset(path);
  CHECK(header_to_json(back.header) == header_to_json(ds.header));
  REQUIRE(back.records.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(record_to_json(back.records[i]) == record_to_json(ds.records[i]));
    CHECK(back.records[i].x == ds.records[i].x);
  }

  // Truncated final line.
  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  const std::string cut = (dir / "cut.jsonl").string();
  std::ofstream(cut) << text.substr(0, text.size() - 20);
  try {
    read_dataset(cut);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find(":4:") != std::string::npos);
  }
  CHECK(read_dataset(cut, true).records.size() == 2);

  // A record of another dimension.
  Json bad = record_to_json(ds.records[0]);
  bad["x"] = std::vector<double>(5, 0.0);
  const std::string mixed = (dir / "mixed.jsonl").string();
  std::ofstream(mixed) << text << bad.dump() << "\n";
  try {
    read_dataset(mixed, true);
    FAIL("expected a header mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kHeaderMismatch);
  }
}

TEST_CASE("dry run writes nothing and keeps a complete header") {
  const fs::path dir = scratch_dir("dry");
  const std::string path = (dir / "d.jsonl").string();
  const Dataset ds = generate_dataset(tiny_spec(), tiny_config(4), path, false, true);
  CHECK(ds.records.empty());
  CHECK(ds.header.dim == tiny_spec().dim());
  CHECK(ds.header.bounds.lower.size() == ds.header.dim);
  CHECK(ds.header.generation.n_runs == 4);
  CHECK(fs::is_empty(dir));
}

TEST_CASE("interrupted generation resumes to the uninterrupted result") {
  const fs::path dir = scratch_dir("resume");
  const std::string full = (dir / "full.jsonl").string(), part = (dir / "part.jsonl").string();
  const ProblemSpec spec = tiny_spec();
  const GenerateConfig cfg = tiny_config(4);

  const Dataset ref = generate_dataset(spec, cfg, full, false);
  CHECK(ref.header.runs_completed == 4);
  CHECK(static_cast<int>(ref.records.size()) + ref.header.failed == 4);

  std::atomic<bool> stop{false};
  GenerateHooks hooks;
  hooks.cancel = &stop;
  hooks.progress = [&](int done, int) {
    if (done >= 2) stop = true;
  };
  const Dataset first = generate_dataset(spec, cfg, part, false, false, Json::object(), hooks);
  CHECK(first.header.runs_completed == 2);

  const Dataset resumed = generate_dataset(spec, cfg, part, true);
  CHECK(resumed.header.runs_completed == 4);
  REQUIRE(resumed.records.size() == ref.records.size());
  for (std::size_t i = 0; i < ref.records.size(); ++i) CHECK(same_outcome(resumed.records[i], ref.records[i]));
  CHECK(read_failures(failures_path(part)).size() == read_failures(failures_path(full)).size());

  std::set<std::uint64_t> seeds;
  for (const auto& r : resumed.records) seeds.insert(r.rng_seed);
  CHECK(seeds.size() == resumed.records.size());

  // Resuming under different settings is refused.
  GenerateConfig other = cfg;
  other.seed = 10;
  CHECK_THROWS_AS(generate_dataset(spec, other, part, true), Error);
}

TEST_CASE("a dataset header reconstructs the problem of its records") {
  const std::string path = std::string(AMGS_SOURCE_DIR) + "/artifacts/e2e/train.jsonl";
  if (!fs::exists(path)) {
    MESSAGE("no generated dataset at " << path);
    return;
  }
  const Dataset ds = read_dataset(path, true);
  REQUIRE(!ds.records.empty());
  auto family = std::make_shared<HaloFamily>(ds.header.spec.params);
  int checked = 0;
  for (const auto& r : ds.records) {
    const Problem pr(record_spec(ds.header, r), family);
    CHECK(transcription_feasibility(pr, r.x, ds.header.generation.solver.integrator_tol) <=
          ds.header.generation.solver.tol_feas);
    if (++checked == 5) break;
  }
}
