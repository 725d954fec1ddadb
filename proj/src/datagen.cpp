#include "amgs/datagen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "amgs/error.hpp"
#include "amgs/parallel.hpp"
#include "amgs/rng.hpp"

namespace amgs {

Eigen::VectorXd sample_uniform(const Box& bounds, std::uint64_t seed) {
  require(bounds.lower.size() == bounds.upper.size(), ErrorCode::kInvalidArgument, "bound sizes differ");
  const auto n = bounds.lower.size();
  for (Eigen::Index i = 0; i < n; ++i)
    require(std::isfinite(bounds.lower[i]) && std::isfinite(bounds.upper[i]) && bounds.lower[i] <= bounds.upper[i],
            ErrorCode::kInvalidArgument, "invalid bounds at entry " + std::to_string(i));
  CounterRng rng(seed);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    x[i] = bounds.lower[i] == bounds.upper[i] ? bounds.lower[i] : bounds.lower[i] + (bounds.upper[i] - bounds.lower[i]) * u;
  }
  return x;
}

std::string to_string(AlphaMode m) { return m == AlphaMode::kFixedGrid ? "fixed_grid" : "uniform"; }

AlphaMode alpha_mode_from_string(const std::string& s) {
  if (s == "fixed_grid" || s == "grid") return AlphaMode::kFixedGrid;
  if (s == "uniform") return AlphaMode::kUniform;
  fail(ErrorCode::kInvalidArgument, "unknown alpha mode '" + s + "'");
}

void GenerateConfig::validate() const {
  require(n_runs >= 0, ErrorCode::kInvalidArgument, "n_runs must be non-negative");
  require(workers >= 1, ErrorCode::kInvalidArgument, "workers must be at least 1");
  if (alpha_mode == AlphaMode::kFixedGrid) {
    require(!grid_alphas.empty(), ErrorCode::kInvalidArgument, "grid_alphas is empty");
    for (double a : grid_alphas)
      require(std::isfinite(a) && a >= 0.0 && a <= 1.0, ErrorCode::kInvalidArgument, "grid alpha outside [0, 1]");
  } else {
    require(std::isfinite(alpha_min) && std::isfinite(alpha_max) && 0.0 <= alpha_min && alpha_min <= alpha_max &&
                alpha_max <= 1.0,
            ErrorCode::kInvalidArgument, "uniform alpha range must lie in [0, 1]");
  }
  solver.validate();
}

std::uint64_t run_seed(const GenerateConfig& cfg, std::int64_t run) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(run));
}

double run_alpha(const GenerateConfig& cfg, std::int64_t run) {
  if (cfg.alpha_mode == AlphaMode::kFixedGrid)
    return cfg.grid_alphas[static_cast<std::size_t>(run) % cfg.grid_alphas.size()];
  CounterRng rng(derive_seed(run_seed(cfg, run), 2));
  return rng.uniform(cfg.alpha_min, cfg.alpha_max);
}

namespace {

Json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const Json& j, const std::string& what) {
  require(j.is_array(), ErrorCode::kParse, what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), ErrorCode::kParse, what + " entries must be numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Json generation_to_json(const GenerateConfig& g) {
  Json j;
  j["n_runs"] = g.n_runs;
  j["alpha_mode"] = to_string(g.alpha_mode);
  j["grid_alphas"] = g.grid_alphas;
  j["alpha_min"] = g.alpha_min;
  j["alpha_max"] = g.alpha_max;
  j["seed"] = g.seed;
  j["workers"] = g.workers;
  j["solver"] = to_json(g.solver);
  return j;
}

GenerateConfig generation_from_json(const Json& j) {
  GenerateConfig g;
  g.n_runs = j.at("n_runs").get<int>();
  g.alpha_mode = alpha_mode_from_string(j.at("alpha_mode").get<std::string>());
  g.grid_alphas = j.at("grid_alphas").get<std::vector<double>>();
  g.alpha_min = j.at("alpha_min").get<double>();
  g.alpha_max = j.at("alpha_max").get<double>();
  g.seed = j.at("seed").get<std::uint64_t>();
  g.workers = j.at("workers").get<int>();
  apply_json(j.at("solver"), g.solver, "generation.solver");
  return g;
}

}  // namespace

Json to_json(const GenerateConfig& g) { return generation_to_json(g); }

void apply_json(const Json& j, GenerateConfig& g, const std::string& where) {
  require(j.is_object(), ErrorCode::kParse, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = it.value();
    const std::string at = where + "." + k;
    auto integer = [&] {
      require(v.is_number_integer(), ErrorCode::kParse, at + " must be an integer");
      return v.get<long long>();
    };
    auto number = [&] {
      require(v.is_number(), ErrorCode::kParse, at + " must be a number");
      return v.get<double>();
    };
    if (k == "n_runs") g.n_runs = static_cast<int>(integer());
    else if (k == "alpha_mode") {
      require(v.is_string(), ErrorCode::kParse, at + " must be a string");
      g.alpha_mode = alpha_mode_from_string(v.get<std::string>());
    } else if (k == "grid_alphas") {
      require(v.is_array(), ErrorCode::kParse, at + " must be an array of numbers");
      g.grid_alphas.clear();
      for (const auto& e : v) {
        require(e.is_number(), ErrorCode::kParse, at + " must be an array of numbers");
        g.grid_alphas.push_back(e.get<double>());
      }
    } else if (k == "alpha_min") g.alpha_min = number();
    else if (k == "alpha_max") g.alpha_max = number();
    else if (k == "seed") g.seed = static_cast<std::uint64_t>(integer());
    else if (k == "workers") g.workers = static_cast<int>(integer());
    else if (k == "solver") apply_json(v, g.solver, at);
    else fail(ErrorCode::kParse, "unknown key " + at);
  }
}

namespace {

// Fields that must agree for a resumed run to continue the same experiment.
Json resume_key(const DatasetHeader& h) {
  Json g = generation_to_json(h.generation);
  g.erase("n_runs");
  g.erase("workers");
  return Json{{"problem", to_json(h.spec)}, {"generation", g}};
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json failure_to_json(const FailureRecord& f) {
  Json j;
  j["run"] = f.run;
  j["alpha"] = f.alpha;
  j["rng_seed"] = f.rng_seed;
  j["status"] = "failed";
  j["solve_time_s"] = f.solve_time_s;
  j["reason"] = f.reason;
  return j;
}

FailureRecord failure_from_json(const Json& j) {
  FailureRecord f;
  f.run = j.at("run").get<std::int64_t>();
  f.alpha = j.at("alpha").get<double>();
  f.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  f.solve_time_s = j.at("solve_time_s").get<double>();
  f.reason = j.at("reason").get<std::string>();
  return f;
}

std::string dataset_text(const Dataset& ds) {
  std::string out = header_to_json(ds.header).dump() + "\n";
  for (const auto& r : ds.records) out += record_to_json(r).dump() + "\n";
  return out;
}

std::string failures_text(const std::vector<FailureRecord>& fs) {
  std::string out;
  for (const auto& f : fs) out += failure_to_json(f).dump() + "\n";
  return out;
}

std::vector<FailureRecord> read_failures_permissive(const std::string& path) {
  std::vector<FailureRecord> out;
  if (!std::filesystem::exists(path)) return out;
  for (const auto& line : split_lines(slurp(path))) {
    if (line.empty()) continue;
    try {
      out.push_back(failure_from_json(Json::parse(line)));
    } catch (const std::exception&) {
      break;
    }
  }
  return out;
}

}  // namespace

std::string failures_path(const std::string& p) {
  const std::filesystem::path fp(p);
  return (fp.parent_path() / fp.stem()).string() + ".failures.jsonl";
}

std::string checkpoint_path(const std::string& p) {
  const std::filesystem::path fp(p);
  return (fp.parent_path() / fp.stem()).string() + ".checkpoint";
}

Json header_to_json(const DatasetHeader& h) {
  Json j;
  j["format"] = "amgs-dataset";
  j["format_version"] = 1;
  j["code_version"] = h.code_version;
  j["variant"] = to_string(h.spec.variant);
  j["dim"] = h.dim;
  j["problem"] = to_json(h.spec);
  j["bounds"] = Json{{"lower", vec_json(h.bounds.lower)}, {"upper", vec_json(h.bounds.upper)}};
  Json norm;
  norm["tof_max"] = h.spec.tau_s_max + h.spec.tau_i_max + h.spec.tau_f_max;
  norm["initial_mass_kg"] = h.spec.initial_mass_kg;
  norm["thrust_max_newtons"] = h.spec.params.thrust_max_newtons;
  norm["length_unit_km"] = h.spec.params.length_unit_km;
  norm["time_unit_s"] = h.spec.params.time_unit_s;
  j["normalization"] = norm;
  j["generation"] = generation_to_json(h.generation);
  j["counts"] = Json{{"runs_completed", h.runs_completed}, {"failed", h.failed}};
  j["config"] = h.extra;
  return j;
}

DatasetHeader header_from_json(const Json& j) {
  try {
    require(j.is_object() && j.value("format", "") == "amgs-dataset", ErrorCode::kParse, "not a dataset header");
    DatasetHeader h;
    apply_json(j.at("problem"), h.spec, "problem");
    h.dim = j.at("dim").get<int>();
    require(h.dim == h.spec.dim(), ErrorCode::kHeaderMismatch, "header dimension does not match its problem spec");
    require(variant_from_string(j.at("variant").get<std::string>()) == h.spec.variant, ErrorCode::kHeaderMismatch,
            "header variant does not match its problem spec");
    h.bounds.lower = vec_from(j.at("bounds").at("lower"), "bounds.lower");
    h.bounds.upper = vec_from(j.at("bounds").at("upper"), "bounds.upper");
    require(h.bounds.lower.size() == h.dim && h.bounds.upper.size() == h.dim, ErrorCode::kHeaderMismatch,
            "header bounds have the wrong dimension");
    h.generation = generation_from_json(j.at("generation"));
    h.code_version = j.at("code_version").get<std::string>();
    h.runs_completed = j.at("counts").at("runs_completed").get<int>();
    h.failed = j.at("counts").at("failed").get<int>();
    h.extra = j.value("config", Json::object());
    return h;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("dataset header: ") + e.what());
  }
}

Json record_to_json(const DatasetRecord& r) {
  Json j;
  j["run"] = r.run;
  j["alpha"] = r.alpha;
  j["x"] = vec_json(r.x);
  j["objective"] = r.objective;
  j["status"] = to_string(r.status);
  j["solve_time_s"] = r.solve_time_s;
  j["rng_seed"] = r.rng_seed;
  j["variant"] = to_string(r.variant);
  j["iterations"] = r.iterations;
  j["feas_residual"] = r.feas_residual;
  j["kkt_residual"] = r.kkt_residual;
  return j;
}

DatasetRecord record_from_json(const Json& j) {
  try {
    DatasetRecord r;
    r.run = j.at("run").get<std::int64_t>();
    r.alpha = j.at("alpha").get<double>();
    r.x = vec_from(j.at("x"), "x");
    r.objective = j.at("objective").get<double>();
    r.status = status_from_string(j.at("status").get<std::string>());
    require(r.status != SolveStatus::kFailed, ErrorCode::kParse, "failed runs cannot be dataset records");
    r.solve_time_s = j.at("solve_time_s").get<double>();
    r.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    r.variant = variant_from_string(j.at("variant").get<std::string>());
    r.iterations = j.value("iterations", 0);
    r.feas_residual = j.value("feas_residual", 0.0);
    r.kkt_residual = j.value("kkt_residual", 0.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, e.what());
  }
}

void write_dataset(const Dataset& ds, const std::string& path) {
  for (const auto& r : ds.records) {
    require(r.x.size() == ds.header.dim, ErrorCode::kHeaderMismatch, "record dimension differs from the header");
    require(r.variant == ds.header.spec.variant, ErrorCode::kHeaderMismatch, "record variant differs from the header");
  }
  write_text_atomic(path, dataset_text(ds));
}

Dataset read_dataset(const std::string& path, bool permissive) {
  const auto lines = split_lines(slurp(path));
  require(!lines.empty() && !lines[0].empty(), ErrorCode::kParse, path + ":1: missing header");
  Dataset ds;
  try {
    ds.header = header_from_json(Json::parse(lines[0]));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path + ":1: " + e.what());
  } catch (const Error& e) {
    fail(e.code(), path + ":1: " + e.what());
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path + ":" + std::to_string(i + 1) + ": ";
    DatasetRecord r;
    try {
      r = record_from_json(Json::parse(lines[i]));
    } catch (const std::exception& e) {
      if (permissive) break;
      fail(ErrorCode::kParse, where + e.what());
    }
    require(r.x.size() == ds.header.dim, ErrorCode::kHeaderMismatch,
            where + "record dimension " + std::to_string(r.x.size()) + " differs from header dimension " +
                std::to_string(ds.header.dim));
    require(r.variant == ds.header.spec.variant, ErrorCode::kHeaderMismatch, where + "record variant differs from header");
    ds.records.push_back(std::move(r));
  }
  return ds;
}

std::vector<FailureRecord> read_failures(const std::string& path) {
  std::vector<FailureRecord> out;
  const auto lines = split_lines(slurp(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      out.push_back(failure_from_json(Json::parse(lines[i])));
    } catch (const std::exception& e) {
      fail(ErrorCode::kParse, path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

ProblemSpec record_spec(const DatasetHeader& h, const DatasetRecord& r) {
  ProblemSpec s = h.spec;
  s.alpha = r.alpha;
  return s;
}

Dataset generate_dataset(const ProblemSpec& spec, const GenerateConfig& cfg, const std::string& path, bool resume,
                         bool dry_run, const Json& extra, const GenerateHooks& hooks) {
  spec.validate();
  cfg.validate();

  auto family = std::make_shared<HaloFamily>(spec.params);
  Dataset ds;
  ds.header.spec = spec;
  ds.header.dim = spec.dim();
  ds.header.bounds = Problem(spec, family).bounds();
  ds.header.generation = cfg;
  ds.header.extra = extra;
  if (dry_run) return ds;

  const std::string fpath = failures_path(path), cpath = checkpoint_path(path);
  std::vector<FailureRecord> failures;
  if (resume && std::filesystem::exists(path)) {
    Dataset old = read_dataset(path, true);
    require(resume_key(old.header) == resume_key(ds.header), ErrorCode::kHeaderMismatch,
            "cannot resume " + path + ": problem or generation settings differ");
    for (auto& r : old.records)
      if (r.run < cfg.n_runs) ds.records.push_back(std::move(r));
    for (auto& f : read_failures_permissive(fpath))
      if (f.run < cfg.n_runs) failures.push_back(std::move(f));
  }
  // Drop duplicates that a crash between append and checkpoint could leave.
  std::set<std::int64_t> done;
  {
    std::vector<DatasetRecord> rs;
    for (auto& r : ds.records)
      if (done.insert(r.run).second) rs.push_back(std::move(r));
    ds.records = std::move(rs);
    std::vector<FailureRecord> fs;
    for (auto& f : failures)
      if (done.insert(f.run).second) fs.push_back(std::move(f));
    failures = std::move(fs);
  }

  auto finalize_header = [&] {
    ds.header.runs_completed = static_cast<int>(ds.records.size() + failures.size());
    ds.header.failed = static_cast<int>(failures.size());
  };
  auto write_checkpoint = [&] {
    Json c;
    c["n_runs"] = cfg.n_runs;
    c["runs_completed"] = ds.records.size() + failures.size();
    c["records"] = ds.records.size();
    c["failed"] = failures.size();
    c["completed_runs"] = std::vector<std::int64_t>(done.begin(), done.end());
    write_text_atomic(cpath, c.dump() + "\n");
  };

  if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  }
  finalize_header();
  write_text_atomic(path, dataset_text(ds));
  write_text_atomic(fpath, failures_text(failures));
  write_checkpoint();

  std::vector<std::int64_t> todo;
  for (std::int64_t i = 0; i < cfg.n_runs; ++i)
    if (!done.count(i)) todo.push_back(i);

  std::ofstream rec_out(path, std::ios::app), fail_out(fpath, std::ios::app);
  require(rec_out.good() && fail_out.good(), ErrorCode::kIo, "cannot append to " + path);
  std::mutex writer;
  int finished = static_cast<int>(done.size());

  parallel_for(todo.size(), cfg.workers, [&](std::size_t k) {
    if (hooks.cancel && hooks.cancel->load()) return;
    const std::int64_t run = todo[k];
    const std::uint64_t seed = run_seed(cfg, run);
    const double alpha = run_alpha(cfg, run);
    ProblemSpec s = spec;
    s.alpha = alpha;
    const auto t0 = std::chrono::steady_clock::now();
    SolveOutcome o;
    try {
      const Problem pr(s, family);
      o = solve(pr, sample_uniform(pr.bounds(), derive_seed(seed, 1)), cfg.solver);
    } catch (const Error& e) {
      o.status = SolveStatus::kFailed;
      o.reason = std::string("setup failure: ") + e.what();
      o.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    std::lock_guard<std::mutex> lock(writer);
    if (o.status == SolveStatus::kFailed) {
      FailureRecord f{run, alpha, seed, o.wall_time_s, o.reason};
      fail_out << failure_to_json(f).dump() << "\n";
      fail_out.flush();
      failures.push_back(std::move(f));
    } else {
      DatasetRecord r;
      r.run = run;
      r.alpha = alpha;
      r.x = o.x_final;
      r.objective = o.objective;
      r.status = o.status;
      r.solve_time_s = o.wall_time_s;
      r.rng_seed = seed;
      r.variant = spec.variant;
      r.iterations = o.iterations;
      r.feas_residual = o.feas_residual;
      r.kkt_residual = o.kkt_residual;
      rec_out << record_to_json(r).dump() << "\n";
      rec_out.flush();
      ds.records.push_back(std::move(r));
    }
    done.insert(run);
    write_checkpoint();
    ++finished;
    if (hooks.progress) hooks.progress(finished, cfg.n_runs);
  });
  rec_out.close();
  fail_out.close();

  std::sort(ds.records.begin(), ds.records.end(), [](const auto& a, const auto& b) { return a.run < b.run; });
  std::sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) { return a.run < b.run; });
  finalize_header();
  write_text_atomic(path, dataset_text(ds));
  write_text_atomic(fpath, failures_text(failures));
  write_checkpoint();
  return ds;
}

Dataset filter_top(const Dataset& ds, double keep_fraction) {
  return filter_top(ds, keep_fraction, ds.header.generation.alpha_mode == AlphaMode::kFixedGrid);
}

Dataset filter_top(const Dataset& ds, double keep_fraction, bool per_bucket) {
  require(!ds.records.empty(), ErrorCode::kInvalidArgument, "cannot filter an empty dataset");
  require(keep_fraction > 0.0 && keep_fraction <= 1.0, ErrorCode::kInvalidArgument, "keep_fraction must lie in (0, 1]");
  const bool by_mass = ds.header.spec.variant == Variant::kVariableTerminal;
  const int mf = Layout{ds.header.spec.variant, ds.header.spec.n_segments}.m_f();
  // Smaller is better.
  auto key = [&](const DatasetRecord& r) { return by_mass ? -r.x[mf] : r.objective; };

  std::vector<std::vector<std::size_t>> buckets;
  if (per_bucket) {
    std::vector<double> alphas;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      const auto it = std::find(alphas.begin(), alphas.end(), ds.records[i].alpha);
      const std::size_t b = static_cast<std::size_t>(it - alphas.begin());
      if (it == alphas.end()) {
        alphas.push_back(ds.records[i].alpha);
        buckets.emplace_back();
      }
      buckets[b].push_back(i);
    }
  } else {
    buckets.emplace_back(ds.records.size());
    std::iota(buckets[0].begin(), buckets[0].end(), std::size_t{0});
  }

  std::vector<char> keep(ds.records.size(), 0);
  for (auto& b : buckets) {
    std::stable_sort(b.begin(), b.end(), [&](std::size_t i, std::size_t j) { return key(ds.records[i]) < key(ds.records[j]); });
    const auto n_keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(b.size()) - 1e-9));
    for (std::size_t k = 0; k < std::min(n_keep, b.size()); ++k) keep[b[k]] = 1;
  }
  Dataset out;
  out.header = ds.header;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (keep[i]) out.records.push_back(ds.records[i]);
  return out;
}

}  // namespace amgs
