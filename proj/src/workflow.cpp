#include "amgs/workflow.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <sstream>

#include "amgs/bench.hpp"
#include "amgs/datagen.hpp"
#include "amgs/ddpm.hpp"
#include "amgs/error.hpp"
#include "amgs/halo.hpp"

namespace amgs {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// ------------------------------------------------------------ config access

double get_num(const Json& c, const char* key, const std::string& where) {
  const Json& v = c.at(key);
  require(v.is_number(), ErrorCode::kParse, where + "." + key + " must be a number");
  return v.get<double>();
}

int get_int(const Json& c, const char* key, const std::string& where) {
  const Json& v = c.at(key);
  require(v.is_number_integer(), ErrorCode::kParse, where + "." + key + " must be an integer");
  return v.get<int>();
}

std::uint64_t get_u64(const Json& c, const char* key, const std::string& where) {
  const Json& v = c.at(key);
  require(v.is_number_integer() && v.get<long long>() >= 0, ErrorCode::kParse,
          where + "." + key + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

bool get_bool(const Json& c, const char* key, const std::string& where) {
  const Json& v = c.at(key);
  require(v.is_boolean(), ErrorCode::kParse, where + "." + key + " must be a boolean");
  return v.get<bool>();
}

std::string get_str(const Json& c, const char* key, const std::string& where, bool allow_empty = false) {
  const Json& v = c.at(key);
  require(v.is_string(), ErrorCode::kParse, where + "." + key + " must be a string");
  const auto s = v.get<std::string>();
  require(allow_empty || !s.empty(), ErrorCode::kInvalidArgument, where + "." + key + " must not be empty");
  return s;
}

std::string opt_str(const Json& c, const char* key, const std::string& where) {
  if (c.at(key).is_null()) return "";
  return get_str(c, key, where, true);
}

ProblemSpec problem_from(const Json& j, const std::string& where) {
  ProblemSpec s;
  apply_json(j, s, where);
  s.validate();
  return s;
}

SolverConfig solver_from(const Json& j, const std::string& where) {
  SolverConfig s;
  apply_json(j, s, where);
  s.validate();
  return s;
}

ProblemSpec default_problem(Variant v) {
  ProblemSpec s;
  s.variant = v;
  s.n_segments = 10;
  return s;
}

SolverConfig default_solver() {
  SolverConfig s;
  s.max_wall_time_s = 60.0;
  return s;
}

GenerateConfig default_generation() {
  GenerateConfig g;
  g.solver = default_solver();
  return g;
}

StudyConfig default_study() {
  StudyConfig s;
  s.alphas = {0.15, 0.85};
  s.training_alphas = {0.0, 0.25, 0.5, 0.75, 1.0};
  s.solver = default_solver();
  return s;
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void make_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
}

void make_parent(const std::string& path) { make_dir(fs::path(path).parent_path().string()); }

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

Json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

struct Ctx {
  std::string name;
  Json cfg;  // effective config
  const WorkflowLog& log;
  Json outputs = Json::array();

  void say(const std::string& s) const {
    if (log) log(s);
  }
  void wrote(const std::string& path) { outputs.push_back(path); }
};

GenerateHooks progress_hooks(const Ctx& c, const std::string& what) {
  GenerateHooks h;
  const auto t0 = std::chrono::steady_clock::now();
  h.progress = [&c, what, t0](int done, int total) {
    if (done % 25 == 0 || done == total) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      c.say(what + " " + std::to_string(done) + "/" + std::to_string(total) + " (" + num(std::round(s)) + " s)");
    }
  };
  return h;
}

// ---------------------------------------------------------------- defaults

Json defaults_for(const std::string& name) {
  if (name == "halo")
    return Json{{"alpha", 0.0}, {"e_pert", nullptr}, {"samples", 200}, {"params", to_json(SystemParams{})},
                {"output", "halo.csv"}};
  if (name == "manifold")
    return Json{{"alpha", 0.0},
                {"n_arcs", 24},
                {"n_points", 60},
                {"problem", to_json(default_problem(Variant::kVariableTerminal))},
                {"output", "manifold.csv"}};
  if (name == "scan")
    return Json{{"problem", to_json(default_problem(Variant::kVariableTerminal))},
                {"alpha", 0.5},
                {"n1", 10},
                {"n2", 10},
                {"starts_per_node", 3},
                {"seed", 1},
                {"workers", 1},
                {"solver", to_json(default_solver())},
                {"output_dir", "scan"},
                {"svg", true}};
  if (name == "datagen")
    return Json{{"problem", to_json(default_problem(Variant::kHybridCost))},
                {"generation", to_json(default_generation())},
                {"output", "dataset.jsonl"},
                {"resume", false}};
  if (name == "train")
    return Json{{"dataset", ""},
                {"keep_fraction", 1.0},
                {"train", to_json(TrainConfig{})},
                {"output", "model.json"},
                {"curve", "train_curve.csv"}};
  if (name == "sample")
    return Json{{"model", ""}, {"alpha", 0.5}, {"guidance", 1.3}, {"n", 100},
                {"seed", 1},   {"clip", true},  {"output", "samples.csv"}};
  if (name == "bench")
    return Json{{"problem", to_json(default_problem(Variant::kHybridCost))},
                {"model", nullptr},
                {"run_study", true},
                {"study", to_json(default_study())},
                {"dataset", nullptr},
                {"throttle_bins", 10},
                {"output_dir", "bench"},
                {"svg", true}};
  if (name == "export")
    return Json{{"dataset", ""}, {"keep_fraction", 1.0}, {"output", "dataset.csv"}};
  if (name == "e2e") {
    GenerateConfig g = default_generation();
    g.n_runs = 1450;
    g.grid_alphas = {0.0, 0.25, 0.5, 0.75, 1.0};
    GenerateConfig sg = default_generation();
    sg.n_runs = 120;
    sg.alpha_mode = AlphaMode::kUniform;
    sg.seed = 2;
    StudyConfig st = default_study();
    st.seed = 7;
    return Json{{"output_dir", "artifacts/e2e"},
                {"problem", to_json(default_problem(Variant::kHybridCost))},
                {"generation", to_json(g)},
                {"keep_fraction", 1.0},
                {"train", to_json(TrainConfig{})},
                {"study", to_json(st)},
                {"structure_problem", to_json(default_problem(Variant::kVariableTerminal))},
                {"structure_generation", to_json(sg)},
                {"throttle_bins", 10},
                {"svg", true}};
  }
  fail(ErrorCode::kInvalidArgument, "unknown workflow '" + name + "'");
}

// --------------------------------------------------------------- workflows

Json run_halo(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  SystemParams p;
  apply_json(j.at("params"), p, "params");
  const int n = get_int(j, "samples", "halo");
  require(n > 0, ErrorCode::kInvalidArgument, "halo.samples must be positive");
  double e;
  if (j.at("e_pert").is_null()) {
    const double a = get_num(j, "alpha", "halo");
    require(a >= 0.0 && a <= 1.0, ErrorCode::kInvalidArgument, "halo.alpha must lie in [0, 1]");
    e = energy_from_alpha(a);
  } else {
    e = kEnergyL1 + get_num(j, "e_pert", "halo");
  }
  const std::string out = get_str(j, "output", "halo");
  if (dry) return Json{{"energy", e}};
  c.say("correcting halo at energy " + num(e));
  const HaloOrbit h = solve_halo(e, p);
  const auto states = sample_orbit(h, static_cast<std::size_t>(n), p);
  std::ostringstream o;
  o << "# " << c.cfg.dump() << "\nt,q1,q2,q3,v1,v2,v3\n";
  for (std::size_t k = 0; k < states.size(); ++k) {
    o << num(h.period * static_cast<double>(k) / static_cast<double>(states.size()));
    for (int i = 0; i < 6; ++i) o << ',' << num(states[k][i]);
    o << '\n';
  }
  make_parent(out);
  write_text_atomic(out, o.str());
  c.wrote(out);
  return Json{{"energy", h.energy},
              {"period", h.period},
              {"crossing_state", vec_json(h.crossing_state)},
              {"stable_eigval", h.stable_eigval},
              {"unstable_eigval", h.unstable_eigval}};
}

Json run_manifold(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  const ProblemSpec spec = problem_from(j.at("problem"), "problem");
  const double a = get_num(j, "alpha", "manifold");
  require(a >= 0.0 && a <= 1.0, ErrorCode::kInvalidArgument, "manifold.alpha must lie in [0, 1]");
  const int arcs = get_int(j, "n_arcs", "manifold"), pts = get_int(j, "n_points", "manifold");
  require(arcs > 0 && pts > 1, ErrorCode::kInvalidArgument, "manifold needs n_arcs > 0 and n_points > 1");
  const std::string out = get_str(j, "output", "manifold");
  if (dry) return Json::object();
  HaloFamily family(spec.params);
  const auto lines = manifold_backdrop({a}, family, spec, arcs, pts);
  write_endpoints_csv({}, lines, out, c.cfg);
  c.wrote(out);
  return Json{{"arcs", lines.size()}, {"period", family.at_alpha(a)->period}};
}

Json run_scan(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  const ProblemSpec spec = problem_from(j.at("problem"), "problem");
  BasinConfig b;
  b.alpha = get_num(j, "alpha", "scan");
  b.n1 = get_int(j, "n1", "scan");
  b.n2 = get_int(j, "n2", "scan");
  b.starts_per_node = get_int(j, "starts_per_node", "scan");
  b.seed = get_u64(j, "seed", "scan");
  b.workers = get_int(j, "workers", "scan");
  b.solver = solver_from(j.at("solver"), "solver");
  require(spec.variant == Variant::kVariableTerminal, ErrorCode::kInvalidArgument,
          "scan needs problem.variant = variable_terminal");
  require(b.n1 > 0 && b.n2 > 0 && b.starts_per_node > 0 && b.workers > 0, ErrorCode::kInvalidArgument,
          "scan sizes, starts and workers must be positive");
  const std::string dir = get_str(j, "output_dir", "scan");
  const bool svg = get_bool(j, "svg", "scan");
  if (dry) return Json::object();
  make_dir(dir);
  StudyHooks hooks;
  hooks.progress = [&c](int done, int total) {
    c.say("scan node " + std::to_string(done) + "/" + std::to_string(total));
  };
  const BasinScan scan = basin_grid_scan(spec, b, nullptr, hooks);
  write_basin_csv(scan, path_in(dir, "basin.csv"), c.cfg);
  c.wrote(path_in(dir, "basin.csv"));
  if (svg) {
    write_text_atomic(path_in(dir, "basin.svg"), svg_heatmap(scan.objective, "best objective", "t2", "t1"));
    c.wrote(path_in(dir, "basin.svg"));
  }
  int missing = 0;
  for (Eigen::Index i = 0; i < scan.objective.size(); ++i) missing += !std::isfinite(scan.objective.data()[i]);
  return Json{{"basins", scan.basins}, {"missing_nodes", missing}};
}

Json run_datagen(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  const ProblemSpec spec = problem_from(j.at("problem"), "problem");
  GenerateConfig g;
  apply_json(j.at("generation"), g, "generation");
  g.validate();
  const std::string out = get_str(j, "output", "datagen");
  const bool resume = get_bool(j, "resume", "datagen");
  make_parent(out);
  const Dataset ds = generate_dataset(spec, g, out, resume, dry, c.cfg, progress_hooks(c, "datagen"));
  if (dry) return Json{{"dim", ds.header.dim}};
  c.wrote(out);
  c.wrote(failures_path(out));
  return Json{{"records", ds.records.size()},
              {"failed", ds.header.failed},
              {"runs_completed", ds.header.runs_completed},
              {"fingerprint", file_fingerprint(out)}};
}

// Trains on a dataset file; the checkpoint records the problem template and lineage.
Checkpoint train_on(const Ctx& c, const std::string& data_path, double keep, const TrainConfig& tc,
                    const std::string& model_path, const std::string& curve, const Json& config, Json& summary) {
  const Dataset all = read_dataset(data_path);
  require(!all.records.empty(), ErrorCode::kInvalidArgument, data_path + " holds no records");
  const Dataset ds = filter_top(all, keep);
  MatrixXd x(ds.header.dim, static_cast<Eigen::Index>(ds.records.size()));
  VectorXd y(x.cols());
  for (std::size_t k = 0; k < ds.records.size(); ++k) {
    x.col(static_cast<Eigen::Index>(k)) = ds.records[k].x;
    y[static_cast<Eigen::Index>(k)] = ds.records[k].alpha;
  }
  c.say("training on " + std::to_string(ds.records.size()) + " of " + std::to_string(all.records.size()) +
        " records");
  const auto t0 = std::chrono::steady_clock::now();
  if (!curve.empty()) make_parent(curve);
  TrainResult r = train(x, y, tc, curve, [&c, &tc](int epoch, double loss) {
    if ((epoch + 1) % 100 == 0 || epoch + 1 == tc.epochs)
      c.say("epoch " + std::to_string(epoch + 1) + " loss " + num(loss));
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Checkpoint ck;
  ck.model = std::move(r.model);
  ck.train = tc;
  ck.dataset_fingerprint = file_fingerprint(data_path);
  ck.extra = Json{{"config", config},
                  {"problem", to_json(all.header.spec)},
                  {"dataset", data_path},
                  {"keep_fraction", keep},
                  {"n_train", ds.records.size()}};
  make_parent(model_path);
  save_checkpoint(ck, model_path);
  summary = Json{{"n_train", ds.records.size()},
                 {"epochs_run", r.epoch_loss.size()},
                 {"final_loss", r.epoch_loss.empty() ? Json(nullptr) : Json(r.epoch_loss.back())},
                 {"diverged", r.diverged},
                 {"message", r.message},
                 {"train_time_s", secs},
                 {"dataset_fingerprint", ck.dataset_fingerprint},
                 {"model_fingerprint", file_fingerprint(model_path)}};
  return ck;
}

Json run_train(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  const std::string data = get_str(j, "dataset", "train");
  const double keep = get_num(j, "keep_fraction", "train");
  require(keep > 0.0 && keep <= 1.0, ErrorCode::kInvalidArgument, "keep_fraction must lie in (0, 1]");
  TrainConfig tc;
  apply_json(j.at("train"), tc, "train");
  tc.validate();
  const std::string out = get_str(j, "output", "train");
  const std::string curve = get_str(j, "curve", "train", true);
  if (dry) {
    const Dataset ds = read_dataset(data);
    return Json{{"records", ds.records.size()}, {"dim", ds.header.dim}};
  }
  Json summary;
  train_on(c, data, keep, tc, out, curve, c.cfg, summary);
  c.wrote(out);
  if (!curve.empty()) c.wrote(curve);
  return summary;
}

Box box_for(const Checkpoint& ck, double alpha) {
  require(ck.extra.contains("problem"), ErrorCode::kParse, "checkpoint does not record its problem");
  ProblemSpec s = problem_from(ck.extra.at("problem"), "checkpoint.problem");
  s.alpha = alpha;
  return Problem(s).bounds();
}

Json run_sample(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  const std::string model = get_str(j, "model", "sample");
  const double a = get_num(j, "alpha", "sample"), w = get_num(j, "guidance", "sample");
  const int n = get_int(j, "n", "sample");
  require(n >= 0, ErrorCode::kInvalidArgument, "sample.n must be non-negative");
  require(a >= 0.0 && a <= 1.0, ErrorCode::kInvalidArgument, "sample.alpha must lie in [0, 1]");
  const std::uint64_t seed = get_u64(j, "seed", "sample");
  const bool clip = get_bool(j, "clip", "sample");
  const std::string out = get_str(j, "output", "sample");
  const Checkpoint ck = load_checkpoint(model);
  if (dry) return Json{{"dim", ck.model.topology().dim}};
  Box box;
  if (clip) box = box_for(ck, a);
  const auto t0 = std::chrono::steady_clock::now();
  const SampleResult r = sample_ddpm(ck.model, ck.train.schedule(), a, w, n, seed, clip ? &box : nullptr);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream o;
  o << "# " << Json{{"config", c.cfg}, {"model_fingerprint", file_fingerprint(model)}}.dump() << "\nchain";
  for (Eigen::Index i = 0; i < r.samples.rows(); ++i) o << ",x" << i;
  o << '\n';
  for (Eigen::Index k = 0; k < r.samples.cols(); ++k) {
    o << k;
    for (Eigen::Index i = 0; i < r.samples.rows(); ++i) o << ',' << num(r.samples(i, k));
    o << '\n';
  }
  make_parent(out);
  write_text_atomic(out, o.str());
  c.wrote(out);
  return Json{{"n", n}, {"out_of_box", r.out_of_box}, {"sampling_time_s", secs}};
}

std::vector<VectorXd> xs_where(const Dataset& ds, const std::function<bool(const DatasetRecord&)>& keep) {
  std::vector<VectorXd> out;
  for (const auto& r : ds.records)
    if (keep(r)) out.push_back(r.x);
  return out;
}

// Throttle, cluster and endpoint diagnostics of one dataset into dir.
Json dataset_diagnostics(Ctx& c, const Dataset& ds, const std::string& dir, int bins, bool svg,
                         const std::string& tag) {
  Json res;
  const ProblemSpec& spec = ds.header.spec;
  const Layout L{spec.variant, spec.n_segments};
  const double tmax = spec.params.thrust_max_newtons;
  std::map<double, int> per_alpha;
  for (const auto& r : ds.records) ++per_alpha[r.alpha];
  if (!ds.records.empty()) {
    const auto all = xs_where(ds, [](const DatasetRecord&) { return true; });
    const MatrixXd d = throttle_density(all, L, tmax, bins);
    const std::string p = path_in(dir, tag + "throttle.csv");
    write_throttle_csv(d, p, c.cfg);
    c.wrote(p);
    if (svg) {
      write_text_atomic(path_in(dir, tag + "throttle.svg"), svg_heatmap(d, "throttle density [%]", "bin", "segment"));
      c.wrote(path_in(dir, tag + "throttle.svg"));
    }
  }
  Json by_alpha = Json::array();
  for (const auto& [a, count] : per_alpha) {
    const double alpha = a;
    const auto opt = xs_where(ds, [&](const DatasetRecord& r) {
      return r.alpha == alpha && r.status == SolveStatus::kOptimal;
    });
    const auto feas = xs_where(ds, [&](const DatasetRecord& r) { return r.alpha == alpha; });
    Json e{{"alpha", a}, {"records", count}, {"optimal", opt.size()}};
    const ThrottleSummary so = opt.empty() ? ThrottleSummary{} : summarize_throttles(opt, L, tmax);
    const ThrottleSummary sf = summarize_throttles(feas, L, tmax);
    e["optimal_mean_throttle"] = opt.empty() ? Json(nullptr) : Json(so.mean);
    e["optimal_extreme_fraction"] = opt.empty() ? Json(nullptr) : Json(so.extreme_fraction);
    e["mean_throttle"] = sf.mean;
    e["extreme_fraction"] = sf.extreme_fraction;
    by_alpha.push_back(e);
  }
  res["throttle_by_alpha"] = by_alpha;

  bool clusters_ok = !per_alpha.empty();
  for (const auto& [a, count] : per_alpha) clusters_ok = clusters_ok && count >= 2;
  if (clusters_ok && per_alpha.size() <= 50) {
    const auto cs = cluster_stats(ds.records, L);
    const std::string p = path_in(dir, tag + "clusters.csv");
    write_cluster_csv(cs, p, c.cfg);
    c.wrote(p);
    Json arr = Json::array();
    for (const auto& s : cs)
      arr.push_back({{"alpha", s.alpha}, {"count", s.count}, {"mean_tof", s.mean[0]}, {"mean_mf", s.mean[1]}});
    res["clusters"] = arr;
  }

  if (spec.variant == Variant::kVariableTerminal && !ds.records.empty()) {
    HaloFamily family(spec.params);
    const auto rows = endpoint_map(ds, family);
    std::vector<double> alphas{0.0, 0.5, 1.0};
    const auto lines = manifold_backdrop(alphas, family, spec, 12, 40);
    const std::string p = path_in(dir, tag + "endpoints.csv");
    write_endpoints_csv(rows, lines, p, c.cfg);
    c.wrote(p);
    res["endpoint_occupancy"] = endpoint_occupancy(rows, spec.t2_min, spec.t2_max, 20, 20);
    res["endpoints"] = rows.size();
    if (svg) {
      std::vector<Eigen::Vector2d> pts;
      std::vector<double> col;
      for (const auto& r : rows) {
        pts.emplace_back(r.t1 / r.period, r.t2);
        col.push_back(r.alpha);
      }
      write_text_atomic(path_in(dir, tag + "endpoints.svg"), svg_scatter(pts, col, "manifold endpoints", "t1 / T", "t2"));
      c.wrote(path_in(dir, tag + "endpoints.svg"));
    }
  }
  return res;
}

Json study_summary(const Json& study) {
  Json s;
  for (const auto& m : study.at("methods")) {
    s[m.at("method").get<std::string>()] = Json{{"n", m.at("n")},
                                                {"feasibility_ratio", m.at("feasibility_ratio")},
                                                {"optimality_ratio", m.at("optimality_ratio")},
                                                {"feasible_time_s", m.at("feasible_time_s")},
                                                {"optimal_time_s", m.at("optimal_time_s")},
                                                {"sample_time_per_init_s", m.at("sample_time_per_init_s")},
                                                {"clipped_inits", m.at("clipped_inits")}};
  }
  s["comparison"] = study.at("comparison");
  return s;
}

Json run_bench(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  const ProblemSpec spec = problem_from(j.at("problem"), "problem");
  const std::string model = opt_str(j, "model", "bench");
  const std::string data = opt_str(j, "dataset", "bench");
  const bool do_study = get_bool(j, "run_study", "bench");
  StudyConfig sc;
  apply_json(j.at("study"), sc, "study");
  sc.validate();
  const int bins = get_int(j, "throttle_bins", "bench");
  require(bins > 0, ErrorCode::kInvalidArgument, "throttle_bins must be positive");
  const std::string dir = get_str(j, "output_dir", "bench");
  const bool svg = get_bool(j, "svg", "bench");
  const bool wants_diffusion =
      std::find(sc.methods.begin(), sc.methods.end(), InitMethod::kDiffusion) != sc.methods.end();
  require(!do_study || !wants_diffusion || !model.empty(), ErrorCode::kInvalidArgument,
          "the diffusion method needs bench.model");
  std::optional<Checkpoint> ck;
  if (do_study && wants_diffusion) {
    ck = load_checkpoint(model);
    require(ck->model.topology().dim == spec.dim(), ErrorCode::kHeaderMismatch,
            "model dimension does not match bench.problem");
  }
  if (dry) return Json::object();
  make_dir(dir);
  Json res;
  if (do_study) {
    StudyHooks hooks;
    hooks.progress = [&c](int done, int total) {
      if (done % 10 == 0 || done == total) c.say("study " + std::to_string(done) + "/" + std::to_string(total));
    };
    NoiseSchedule sched;
    if (ck) sched = ck->train.schedule();
    const StudyResult r = warmstart_study(spec, ck ? &ck->model : nullptr, ck ? &sched : nullptr, sc, hooks);
    Json config{{"config", c.cfg}, {"model_fingerprint", ck ? Json(file_fingerprint(model)) : Json(nullptr)}};
    write_study(r, dir, config);
    c.wrote(path_in(dir, "study.json"));
    c.wrote(path_in(dir, "study.csv"));
    res["study"] = study_summary(study_to_json(r));
  }
  if (!data.empty()) {
    const Dataset ds = read_dataset(data);
    res["diagnostics"] = dataset_diagnostics(c, ds, dir, bins, svg, "");
  }
  return res;
}

Json run_export(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  const std::string data = get_str(j, "dataset", "export");
  const double keep = get_num(j, "keep_fraction", "export");
  require(keep > 0.0 && keep <= 1.0, ErrorCode::kInvalidArgument, "keep_fraction must lie in (0, 1]");
  const std::string out = get_str(j, "output", "export");
  const Dataset all = read_dataset(data);
  if (dry) return Json{{"records", all.records.size()}};
  const Dataset ds = all.records.empty() ? all : filter_top(all, keep);
  std::ostringstream o;
  o << "# " << Json{{"config", c.cfg}, {"dataset_fingerprint", file_fingerprint(data)}}.dump()
    << "\nrun,alpha,status,objective,solve_time_s";
  for (int i = 0; i < ds.header.dim; ++i) o << ",x" << i;
  o << '\n';
  for (const auto& r : ds.records) {
    o << r.run << ',' << num(r.alpha) << ',' << to_string(r.status) << ',' << num(r.objective) << ','
      << num(r.solve_time_s);
    for (Eigen::Index i = 0; i < r.x.size(); ++i) o << ',' << num(r.x[i]);
    o << '\n';
  }
  make_parent(out);
  write_text_atomic(out, o.str());
  c.wrote(out);
  return Json{{"records", ds.records.size()}};
}

// ------------------------------------------------------------------- e2e

Json run_e2e(Ctx& c, bool dry) {
  const Json& j = c.cfg;
  const std::string dir = get_str(j, "output_dir", "e2e");
  const ProblemSpec spec = problem_from(j.at("problem"), "problem");
  require(spec.variant == Variant::kHybridCost, ErrorCode::kInvalidArgument, "e2e.problem must be hybrid_cost");
  GenerateConfig g;
  apply_json(j.at("generation"), g, "generation");
  g.validate();
  const double keep = get_num(j, "keep_fraction", "e2e");
  require(keep > 0.0 && keep <= 1.0, ErrorCode::kInvalidArgument, "keep_fraction must lie in (0, 1]");
  TrainConfig tc;
  apply_json(j.at("train"), tc, "train");
  tc.validate();
  StudyConfig sc;
  apply_json(j.at("study"), sc, "study");
  sc.validate();
  for (double a : sc.alphas)
    for (double t : g.grid_alphas)
      require(a != t, ErrorCode::kInvalidArgument, "study alpha " + num(a) + " is also a training alpha");
  const ProblemSpec sspec = problem_from(j.at("structure_problem"), "structure_problem");
  require(sspec.variant == Variant::kVariableTerminal, ErrorCode::kInvalidArgument,
          "structure_problem must be variable_terminal");
  GenerateConfig sg;
  apply_json(j.at("structure_generation"), sg, "structure_generation");
  sg.validate();
  const int bins = get_int(j, "throttle_bins", "e2e");
  const bool svg = get_bool(j, "svg", "e2e");
  if (dry) return Json{{"dim", spec.dim()}};
  make_dir(dir);
  Json res;

  // 1. training data
  const std::string data_path = path_in(dir, "train.jsonl");
  c.say("generating training data into " + data_path);
  const Json data_cfg{{"workflow", "e2e"}, {"problem", j.at("problem")}, {"generation", j.at("generation")}};
  const Dataset ds = generate_dataset(spec, g, data_path, true, false, data_cfg, progress_hooks(c, "datagen"));
  c.wrote(data_path);
  const std::string data_fp = file_fingerprint(data_path);
  std::map<double, int> per_alpha;
  for (const auto& r : ds.records) ++per_alpha[r.alpha];
  Json pa = Json::object();
  for (const auto& [a, n] : per_alpha) pa[num(a)] = n;
  res["dataset"] = Json{{"records", ds.records.size()},
                        {"failed", ds.header.failed},
                        {"runs", ds.header.runs_completed},
                        {"per_alpha", pa},
                        {"fingerprint", data_fp}};

  // 2. model, reused when the lineage matches
  const std::string model_path = path_in(dir, "model.json");
  const Json train_cfg{{"keep_fraction", keep}, {"train", to_json(tc)}};
  bool reuse = false;
  if (fs::exists(model_path)) {
    try {
      const Checkpoint old = load_checkpoint(model_path);
      reuse = old.dataset_fingerprint == data_fp && old.extra.value("config", Json()) == train_cfg;
    } catch (const Error&) {
      reuse = false;
    }
  }
  Json msum;
  if (reuse) {
    c.say("reusing " + model_path);
    msum = Json{{"reused", true}, {"model_fingerprint", file_fingerprint(model_path)}};
  } else {
    train_on(c, data_path, keep, tc, model_path, path_in(dir, "train_curve.csv"), train_cfg, msum);
    c.wrote(path_in(dir, "train_curve.csv"));
  }
  c.wrote(model_path);
  res["model"] = msum;
  const Checkpoint ck = load_checkpoint(model_path);
  const std::string model_fp = file_fingerprint(model_path);

  // 3. warm-start study, reused when config and model match
  const std::string study_dir = path_in(dir, "study");
  const Json study_cfg{{"problem", j.at("problem")}, {"study", to_json(sc)}, {"model_fingerprint", model_fp}};
  Json study;
  if (fs::exists(path_in(study_dir, "study.json"))) {
    const Json old = read_json_file(path_in(study_dir, "study.json"));
    if (old.value("config", Json()) == study_cfg) study = old;
  }
  if (study.is_null()) {
    c.say("warm-start study at alphas " + Json(sc.alphas).dump());
    StudyHooks hooks;
    hooks.progress = [&c](int done, int total) {
      if (done % 10 == 0 || done == total) c.say("study " + std::to_string(done) + "/" + std::to_string(total));
    };
    const NoiseSchedule sched = ck.train.schedule();
    const StudyResult r = warmstart_study(spec, &ck.model, &sched, sc, hooks);
    write_study(r, study_dir, study_cfg);
    study = read_json_file(path_in(study_dir, "study.json"));
  } else {
    c.say("reusing " + path_in(study_dir, "study.json"));
  }
  c.wrote(path_in(study_dir, "study.json"));
  c.wrote(path_in(study_dir, "study.csv"));
  res["study"] = study_summary(study);

  // 4. structure diagnostics
  Json structure;
  structure["training"] = dataset_diagnostics(c, ds, dir, bins, svg, "train_");
  const std::string sdata = path_in(dir, "structure.jsonl");
  c.say("generating variable-terminal data into " + sdata);
  const Json sdata_cfg{{"workflow", "e2e"},
                       {"problem", j.at("structure_problem")},
                       {"generation", j.at("structure_generation")}};
  const Dataset sds = generate_dataset(sspec, sg, sdata, true, false, sdata_cfg, progress_hooks(c, "structure"));
  c.wrote(sdata);
  structure["variable_terminal"] = dataset_diagnostics(c, sds, dir, bins, svg, "structure_");
  structure["variable_terminal"]["records"] = sds.records.size();
  structure["variable_terminal"]["failed"] = sds.header.failed;
  res["structure"] = structure;

  const std::string summary = path_in(dir, "e2e.json");
  Json doc{{"format", "amgs-e2e"}, {"code_version", kCodeVersion}, {"config", c.cfg}};
  for (auto it = res.begin(); it != res.end(); ++it) doc[it.key()] = it.value();
  write_text_atomic(summary, doc.dump(1) + "\n");
  c.wrote(summary);
  return res;
}

}  // namespace

std::vector<std::string> workflow_names() {
  return {"halo", "manifold", "scan", "datagen", "train", "sample", "bench", "export", "e2e"};
}

Json workflow_defaults(const std::string& name) { return defaults_for(name); }

Json merge_config(const Json& base, const Json& over, const std::string& where) {
  require(over.is_object(), ErrorCode::kParse, where + " must be an object");
  Json out = base;
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string at = where + "." + it.key();
    require(base.contains(it.key()), ErrorCode::kParse, "unknown key " + at);
    const Json& b = base.at(it.key());
    if (b.is_object()) {
      require(it.value().is_object(), ErrorCode::kParse, at + " must be an object");
      out[it.key()] = merge_config(b, it.value(), at);
    } else {
      out[it.key()] = it.value();
    }
  }
  return out;
}

Json run_workflow(const std::string& name, const Json& config, bool dry_run, const WorkflowLog& log) {
  Ctx c{name, merge_config(defaults_for(name), config, name), log};
  Json r;
  if (name == "halo") r = run_halo(c, dry_run);
  else if (name == "manifold") r = run_manifold(c, dry_run);
  else if (name == "scan") r = run_scan(c, dry_run);
  else if (name == "datagen") r = run_datagen(c, dry_run);
  else if (name == "train") r = run_train(c, dry_run);
  else if (name == "sample") r = run_sample(c, dry_run);
  else if (name == "bench") r = run_bench(c, dry_run);
  else if (name == "export") r = run_export(c, dry_run);
  else r = run_e2e(c, dry_run);
  Json out{{"command", name}, {"dry_run", dry_run}, {"config", c.cfg}, {"outputs", c.outputs}};
  for (auto it = r.begin(); it != r.end(); ++it) out[it.key()] = it.value();
  return out;
}

}  // namespace amgs
