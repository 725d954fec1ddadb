#include "amgs/bench.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "amgs/error.hpp"
#include "amgs/parallel.hpp"
#include "amgs/rng.hpp"

namespace amgs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Json opt_stats(const std::optional<TimeStats>& s) {
  if (!s) return nullptr;
  return Json{{"count", s->count}, {"mean", s->mean}, {"std", s->std}, {"q25", s->q25}, {"median", s->median}};
}

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + parent.string() + ": " + ec.message());
}

std::string config_line(const Json& config) { return "# " + config.dump() + "\n"; }

std::vector<double> as_vector(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

std::string to_string(InitMethod m) { return m == InitMethod::kUniform ? "uniform" : "diffusion"; }

InitMethod init_method_from_string(const std::string& s) {
  if (s == "uniform") return InitMethod::kUniform;
  if (s == "diffusion") return InitMethod::kDiffusion;
  fail(ErrorCode::kParse, "unknown initialization method '" + s + "'");
}

// ------------------------------------------------------------------ config

void StudyConfig::validate() const {
  require(!alphas.empty(), ErrorCode::kInvalidArgument, "study needs at least one alpha");
  for (double a : alphas)
    require(std::isfinite(a) && a >= 0.0 && a <= 1.0, ErrorCode::kInvalidArgument, "study alphas must lie in [0, 1]");
  require(n_init > 0, ErrorCode::kInvalidArgument, "n_init must be positive");
  require(!methods.empty(), ErrorCode::kInvalidArgument, "study needs at least one method");
  require(workers > 0 && n_bootstrap > 0 && histogram_bins > 0, ErrorCode::kInvalidArgument,
          "workers, n_bootstrap and histogram_bins must be positive");
  require(std::isfinite(guidance), ErrorCode::kInvalidArgument, "guidance must be finite");
  solver.validate();
}

Json to_json(const StudyConfig& c) {
  Json j;
  j["alphas"] = c.alphas;
  j["training_alphas"] = c.training_alphas;
  j["n_init"] = c.n_init;
  Json m = Json::array();
  for (auto x : c.methods) m.push_back(to_string(x));
  j["methods"] = m;
  j["seed"] = c.seed;
  j["guidance"] = c.guidance;
  j["workers"] = c.workers;
  j["n_bootstrap"] = c.n_bootstrap;
  j["histogram_bins"] = c.histogram_bins;
  j["solver"] = to_json(c.solver);
  return j;
}

void apply_json(const Json& j, StudyConfig& c, const std::string& where) {
  require(j.is_object(), ErrorCode::kParse, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = it.value();
    const std::string at = where + "." + k;
    auto integer = [&] {
      require(v.is_number_integer(), ErrorCode::kParse, at + " must be an integer");
      return v.get<long long>();
    };
    auto numbers = [&] {
      require(v.is_array(), ErrorCode::kParse, at + " must be an array of numbers");
      std::vector<double> out;
      for (const auto& e : v) {
        require(e.is_number(), ErrorCode::kParse, at + " must be an array of numbers");
        out.push_back(e.get<double>());
      }
      return out;
    };
    if (k == "alphas") c.alphas = numbers();
    else if (k == "training_alphas") c.training_alphas = numbers();
    else if (k == "n_init") c.n_init = static_cast<int>(integer());
    else if (k == "methods") {
      require(v.is_array(), ErrorCode::kParse, at + " must be an array of strings");
      c.methods.clear();
      for (const auto& e : v) {
        require(e.is_string(), ErrorCode::kParse, at + " must be an array of strings");
        c.methods.push_back(init_method_from_string(e.get<std::string>()));
      }
    } else if (k == "seed") c.seed = static_cast<std::uint64_t>(integer());
    else if (k == "guidance") {
      require(v.is_number(), ErrorCode::kParse, at + " must be a number");
      c.guidance = v.get<double>();
    } else if (k == "workers") c.workers = static_cast<int>(integer());
    else if (k == "n_bootstrap") c.n_bootstrap = static_cast<int>(integer());
    else if (k == "histogram_bins") c.histogram_bins = static_cast<int>(integer());
    else if (k == "solver") apply_json(v, c.solver, at);
    else fail(ErrorCode::kParse, "unknown key " + at);
  }
}

// -------------------------------------------------------------- statistics

double quantile_sorted(const std::vector<double>& s, double p) {
  require(!s.empty(), ErrorCode::kInvalidArgument, "quantile of an empty set");
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

std::optional<TimeStats> time_stats(std::vector<double> t) {
  if (t.empty()) return std::nullopt;
  std::sort(t.begin(), t.end());
  TimeStats s;
  s.count = static_cast<int>(t.size());
  s.mean = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
  if (t.size() > 1) {
    double ss = 0.0;
    for (double v : t) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(t.size() - 1));
  }
  s.q25 = quantile_sorted(t, 0.25);
  s.median = quantile_sorted(t, 0.5);
  return s;
}

Histogram histogram(const std::vector<double>& values, int bins) {
  require(bins > 0, ErrorCode::kInvalidArgument, "histogram needs a positive bin count");
  Histogram h;
  if (values.empty()) return h;
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * i / bins);
  for (double v : values) {
    const int b = std::clamp(static_cast<int>((v - lo) / (hi - lo) * bins), 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

std::vector<double> resample(const std::vector<double>& v, CounterRng& rng) {
  std::vector<double> out(v.size());
  for (auto& x : out) x = v[rng.below(v.size())];
  return out;
}

}  // namespace

double bootstrap_p_greater(const std::vector<double>& a, const std::vector<double>& b, int n_boot,
                           std::uint64_t seed) {
  if (a.empty() || b.empty()) return 1.0;
  CounterRng rng(seed);
  int hits = 0;
  for (int k = 0; k < n_boot; ++k) {
    const auto ra = resample(a, rng), rb = resample(b, rng);
    const double d = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size()) -
                     std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
    if (d <= 0.0) ++hits;
  }
  return (1.0 + hits) / (1.0 + n_boot);
}

double bootstrap_p_median_less(const std::vector<double>& a, const std::vector<double>& b, int n_boot,
                               std::uint64_t seed) {
  if (a.empty() || b.empty()) return 1.0;
  CounterRng rng(seed);
  int hits = 0;
  for (int k = 0; k < n_boot; ++k)
    if (median_of(resample(a, rng)) - median_of(resample(b, rng)) >= 0.0) ++hits;
  return (1.0 + hits) / (1.0 + n_boot);
}

MethodStats method_stats(InitMethod m, std::vector<StudyRun> runs, int histogram_bins) {
  MethodStats s;
  s.method = m;
  s.n = static_cast<int>(runs.size());
  std::vector<double> feas_t, opt_t, objectives;
  double sample_total = 0.0;
  for (const auto& r : runs) {
    sample_total += r.sample_time_s;
    if (r.init_clipped) ++s.clipped_inits;
    if (r.status == SolveStatus::kFailed) continue;
    feas_t.push_back(r.total_time_s);
    objectives.push_back(r.objective);
    if (r.status == SolveStatus::kOptimal) opt_t.push_back(r.total_time_s);
  }
  if (s.n > 0) {
    s.feasibility_ratio = static_cast<double>(feas_t.size()) / s.n;
    s.optimality_ratio = static_cast<double>(opt_t.size()) / s.n;
    s.sample_time_per_init_s = sample_total / s.n;
  }
  s.feasible_time = time_stats(feas_t);
  s.optimal_time = time_stats(opt_t);
  s.objective_histogram = histogram(objectives, histogram_bins);
  s.runs = std::move(runs);
  return s;
}

Comparison compare_methods(const MethodStats& u, const MethodStats& d, int n_boot, std::uint64_t seed) {
  Comparison c;
  c.available = true;
  std::vector<double> fu, fd, ou, od, tu, td;
  for (const auto& r : u.runs) {
    fu.push_back(r.status != SolveStatus::kFailed);
    ou.push_back(r.status == SolveStatus::kOptimal);
    if (r.status != SolveStatus::kFailed) tu.push_back(r.total_time_s);
  }
  for (const auto& r : d.runs) {
    fd.push_back(r.status != SolveStatus::kFailed);
    od.push_back(r.status == SolveStatus::kOptimal);
    if (r.status != SolveStatus::kFailed) td.push_back(r.total_time_s);
  }
  c.feasibility_diff = d.feasibility_ratio - u.feasibility_ratio;
  c.optimality_diff = d.optimality_ratio - u.optimality_ratio;
  c.p_feasibility = bootstrap_p_greater(fd, fu, n_boot, derive_seed(seed, 1));
  c.p_optimality = bootstrap_p_greater(od, ou, n_boot, derive_seed(seed, 2));
  if (!tu.empty() && !td.empty()) {
    c.median_available = true;
    c.median_time_diff = median_of(td) - median_of(tu);
    c.p_median_time = bootstrap_p_median_less(td, tu, n_boot, derive_seed(seed, 3));
  }
  return c;
}

// ------------------------------------------------------------------- study

StudyResult warmstart_study(const ProblemSpec& spec, const Denoiser* model, const NoiseSchedule* schedule,
                            const StudyConfig& cfg, const StudyHooks& hooks) {
  spec.validate();
  cfg.validate();
  const bool wants_diffusion =
      std::find(cfg.methods.begin(), cfg.methods.end(), InitMethod::kDiffusion) != cfg.methods.end();
  require(!wants_diffusion || hooks.sample || (model && schedule), ErrorCode::kInvalidArgument,
          "the diffusion method needs a model and schedule");
  if (wants_diffusion && !hooks.sample) {
    require(model->topology().dim == spec.dim(), ErrorCode::kHeaderMismatch,
            "model dimension does not match the problem");
    require(schedule->steps() >= 1, ErrorCode::kInvalidArgument, "empty schedule");
  }

  auto family = std::make_shared<HaloFamily>(spec.params);
  const int n = cfg.n_init;
  const auto na = cfg.alphas.size();
  StudyResult res;

  // Initial guesses; method order and alpha order are fixed so the job list is seed-ordered.
  struct Job {
    std::size_t method_slot;
    std::size_t alpha_slot;
    int index;
    std::uint64_t seed;
    VectorXd x0;
    bool clipped;
    double sample_time;
  };
  std::vector<Job> jobs;
  std::vector<ProblemSpec> specs;
  for (double a : cfg.alphas) {
    ProblemSpec s = spec;
    s.alpha = a;
    specs.push_back(s);
  }
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    for (std::size_t ai = 0; ai < na; ++ai) {
      const Problem pr(specs[ai], family);
      const Box& box = pr.bounds();
      if (cfg.methods[mi] == InitMethod::kUniform) {
        for (int k = 0; k < n; ++k) {
          const std::uint64_t sd = derive_seed(derive_seed(cfg.seed, ai), static_cast<std::uint64_t>(k));
          jobs.push_back({mi, ai, k, sd, sample_uniform(box, sd), false, 0.0});
        }
        continue;
      }
      const std::uint64_t root = derive_seed(derive_seed(cfg.seed, 1'000'000 + ai), 0);
      const auto t0 = std::chrono::steady_clock::now();
      MatrixXd xs;
      std::vector<char> clipped(static_cast<std::size_t>(n), 0);
      if (hooks.sample) {
        xs = hooks.sample(cfg.alphas[ai], n, root);
        require(xs.rows() == pr.dim() && xs.cols() == n, ErrorCode::kInvalidArgument, "sample hook returned the wrong shape");
        for (int k = 0; k < n; ++k)
          for (int i = 0; i < pr.dim(); ++i)
            if (xs(i, k) < box.lower[i] || xs(i, k) > box.upper[i]) {
              clipped[static_cast<std::size_t>(k)] = 1;
              xs(i, k) = std::clamp(xs(i, k), box.lower[i], box.upper[i]);
            }
      } else {
        const SampleResult raw = sample_ddpm(*model, *schedule, cfg.alphas[ai], cfg.guidance, n, root, nullptr);
        xs = raw.samples;
        for (int k = 0; k < n; ++k)
          for (int i = 0; i < pr.dim(); ++i)
            if (xs(i, k) < box.lower[i] || xs(i, k) > box.upper[i]) {
              clipped[static_cast<std::size_t>(k)] = 1;
              xs(i, k) = std::clamp(xs(i, k), box.lower[i], box.upper[i]);
            }
      }
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.sampling_wall_time_s += dt;
      for (int k = 0; k < n; ++k)
        jobs.push_back({mi, ai, k, derive_seed(root, static_cast<std::uint64_t>(k)), xs.col(k),
                        clipped[static_cast<std::size_t>(k)] != 0, dt / n});
    }
  }

  std::vector<StudyRun> runs(jobs.size());
  std::atomic<int> done{0};
  std::mutex progress_mutex;
  parallel_for(jobs.size(), cfg.workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    StudyRun r;
    r.method = cfg.methods[job.method_slot];
    r.alpha = cfg.alphas[job.alpha_slot];
    r.index = job.index;
    r.seed = job.seed;
    r.x0 = job.x0;
    r.init_clipped = job.clipped;
    r.sample_time_s = job.sample_time;
    try {
      const Problem pr(specs[job.alpha_slot], family);
      const SolveOutcome o = hooks.solve ? hooks.solve(pr, job.x0, cfg.solver) : solve(pr, job.x0, cfg.solver);
      r.status = o.status;
      r.objective = o.objective;
      r.solve_time_s = o.wall_time_s;
      r.iterations = o.iterations;
      r.feas_residual = o.feas_residual;
      r.kkt_residual = o.kkt_residual;
      r.reason = o.reason;
      r.x = o.x_final;
    } catch (const Error& e) {
      r.status = SolveStatus::kFailed;
      r.reason = e.what();
    }
    r.total_time_s = r.solve_time_s + r.sample_time_s;
    runs[j] = std::move(r);
    const int k = ++done;
    if (hooks.progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      hooks.progress(k, static_cast<int>(jobs.size()));
    }
  });

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    std::vector<StudyRun> mine;
    for (std::size_t j = 0; j < jobs.size(); ++j)
      if (jobs[j].method_slot == mi) mine.push_back(runs[j]);
    res.methods.push_back(method_stats(cfg.methods[mi], std::move(mine), cfg.histogram_bins));
  }
  const MethodStats* u = nullptr;
  const MethodStats* d = nullptr;
  for (const auto& m : res.methods) (m.method == InitMethod::kUniform ? u : d) = &m;
  if (u && d) res.comparison = compare_methods(*u, *d, cfg.n_bootstrap, derive_seed(cfg.seed, 77));
  return res;
}

Json study_to_json(const StudyResult& r) {
  Json j;
  Json methods = Json::array();
  for (const auto& m : r.methods) {
    Json o;
    o["method"] = to_string(m.method);
    o["n"] = m.n;
    o["feasibility_ratio"] = m.feasibility_ratio;
    o["optimality_ratio"] = m.optimality_ratio;
    o["feasible_time_s"] = opt_stats(m.feasible_time);
    o["optimal_time_s"] = opt_stats(m.optimal_time);
    o["sample_time_per_init_s"] = m.sample_time_per_init_s;
    o["clipped_inits"] = m.clipped_inits;
    o["objective_histogram"] = Json{{"edges", m.objective_histogram.edges}, {"counts", m.objective_histogram.counts}};
    std::map<double, std::array<int, 3>> per_alpha;  // n, feasible, optimal
    for (const auto& run : m.runs) {
      auto& c = per_alpha[run.alpha];
      ++c[0];
      if (run.status != SolveStatus::kFailed) ++c[1];
      if (run.status == SolveStatus::kOptimal) ++c[2];
    }
    Json pa = Json::array();
    for (const auto& [a, c] : per_alpha)
      pa.push_back({{"alpha", a}, {"n", c[0]}, {"feasible", c[1]}, {"optimal", c[2]}});
    o["per_alpha"] = pa;
    methods.push_back(o);
  }
  j["methods"] = methods;
  const auto& c = r.comparison;
  if (c.available) {
    j["comparison"] = Json{{"feasibility_diff", c.feasibility_diff},
                           {"p_feasibility", c.p_feasibility},
                           {"optimality_diff", c.optimality_diff},
                           {"p_optimality", c.p_optimality},
                           {"median_time_diff_s", c.median_available ? Json(c.median_time_diff) : Json(nullptr)},
                           {"p_median_time", c.p_median_time}};
  } else {
    j["comparison"] = nullptr;
  }
  j["sampling_wall_time_s"] = r.sampling_wall_time_s;
  Json runs = Json::array();
  for (const auto& m : r.methods)
    for (const auto& run : m.runs)
      runs.push_back({{"method", to_string(run.method)},
                      {"alpha", run.alpha},
                      {"index", run.index},
                      {"status", to_string(run.status)},
                      {"x0", as_vector(run.x0)},
                      {"x", as_vector(run.x)}});
  j["runs"] = runs;
  return j;
}

void write_study(const StudyResult& r, const std::string& dir, const Json& config) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
  Json j;
  j["format"] = "amgs-study";
  j["code_version"] = kCodeVersion;
  j["config"] = config;
  const Json body = study_to_json(r);
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = it.value();
  write_text_atomic(dir + "/study.json", j.dump(1) + "\n");

  std::ostringstream o;
  o << config_line(config);
  o << "method,alpha,index,seed,status,objective,solve_time_s,sample_time_s,total_time_s,iterations,feas_residual,"
       "kkt_residual,init_clipped,reason\n";
  for (const auto& m : r.methods)
    for (const auto& run : m.runs)
      o << to_string(run.method) << ',' << num(run.alpha) << ',' << run.index << ',' << run.seed << ','
        << to_string(run.status) << ',' << num(run.objective) << ',' << num(run.solve_time_s) << ','
        << num(run.sample_time_s) << ',' << num(run.total_time_s) << ',' << run.iterations << ','
        << num(run.feas_residual) << ',' << num(run.kkt_residual) << ',' << (run.init_clipped ? 1 : 0) << ','
        << csv_quote(run.reason) << '\n';
  write_text_atomic(dir + "/study.csv", o.str());
}

// ---------------------------------------------------------------- throttle

std::vector<double> throttles(const VectorXd& x, const Layout& layout, double t_max) {
  require(x.size() == layout.dim(), ErrorCode::kInvalidArgument, "decision vector has the wrong dimension");
  require(t_max > 0.0, ErrorCode::kInvalidArgument, "thrust bound must be positive");
  std::vector<double> out;
  for (int k = 0; k < layout.n; ++k)
    out.push_back(Vec3(x[layout.u(k, 0)], x[layout.u(k, 1)], x[layout.u(k, 2)]).norm() / t_max);
  return out;
}

MatrixXd throttle_density(const std::vector<VectorXd>& xs, const Layout& layout, double t_max, int n_bins) {
  require(!xs.empty(), ErrorCode::kInvalidArgument, "throttle density of no records");
  require(n_bins > 0, ErrorCode::kInvalidArgument, "throttle density needs a positive bin count");
  MatrixXd counts = MatrixXd::Zero(layout.n, n_bins);
  for (const auto& x : xs) {
    const auto th = throttles(x, layout, t_max);
    for (int k = 0; k < layout.n; ++k) {
      const int b = std::clamp(static_cast<int>(th[static_cast<std::size_t>(k)] * n_bins), 0, n_bins - 1);
      counts(k, b) += 1.0;
    }
  }
  return counts * (100.0 / static_cast<double>(xs.size()));
}

ThrottleSummary summarize_throttles(const std::vector<VectorXd>& xs, const Layout& layout, double t_max) {
  require(!xs.empty(), ErrorCode::kInvalidArgument, "throttle summary of no records");
  ThrottleSummary s;
  double sum = 0.0;
  int extreme = 0;
  for (const auto& x : xs)
    for (double t : throttles(x, layout, t_max)) {
      sum += t;
      if (t < 0.1 || t >= 0.9) ++extreme;
      ++s.count;
    }
  s.mean = sum / s.count;
  s.extreme_fraction = static_cast<double>(extreme) / s.count;
  return s;
}

// --------------------------------------------------------------- endpoints

std::vector<EndpointRow> endpoint_map(const Dataset& ds, HaloFamily& family, double tol) {
  require(ds.header.spec.variant == Variant::kVariableTerminal, ErrorCode::kInvalidArgument,
          "endpoint map needs variable-terminal records");
  const Layout L{Variant::kVariableTerminal, ds.header.spec.n_segments};
  std::vector<EndpointRow> rows;
  for (const auto& r : ds.records) {
    require(r.x.size() == L.dim(), ErrorCode::kHeaderMismatch, "record has the wrong dimension");
    const ProblemSpec s = record_spec(ds.header, r);
    const auto halo = family.at_alpha(r.alpha);
    ManifoldArcSpec arc;
    arc.t1 = std::fmod(r.x[Layout::kT1], halo->period);
    if (arc.t1 < 0.0) arc.t1 += halo->period;
    arc.t2 = r.x[Layout::kT2];
    arc.eps_mag = s.eps_mag;
    arc.branch_sign = s.branch_sign;
    arc.t2_min = s.t2_min;
    arc.t2_max = s.t2_max;
    EndpointRow e;
    e.run = r.run;
    e.alpha = r.alpha;
    e.t1 = arc.t1;
    e.period = halo->period;
    e.t2 = arc.t2;
    e.terminal = manifold_terminal_state(*halo, arc, family.params(), tol, false);
    rows.push_back(e);
  }
  return rows;
}

double endpoint_occupancy(const std::vector<EndpointRow>& rows, double t2_min, double t2_max, int n1, int n2) {
  require(n1 > 0 && n2 > 0 && t2_max > t2_min, ErrorCode::kInvalidArgument, "invalid occupancy grid");
  require(!rows.empty(), ErrorCode::kInvalidArgument, "occupancy of no endpoints");
  std::vector<char> hit(static_cast<std::size_t>(n1 * n2), 0);
  for (const auto& r : rows) {
    const int i = std::clamp(static_cast<int>(r.t1 / r.period * n1), 0, n1 - 1);
    const int j = std::clamp(static_cast<int>((r.t2 - t2_min) / (t2_max - t2_min) * n2), 0, n2 - 1);
    hit[static_cast<std::size_t>(i * n2 + j)] = 1;
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / (n1 * n2);
}

std::vector<Polyline> manifold_backdrop(const std::vector<double>& alphas, HaloFamily& family, const ProblemSpec& spec,
                                        int n_arcs, int n_points) {
  require(n_arcs > 0 && n_points > 1, ErrorCode::kInvalidArgument, "backdrop needs arcs and points");
  std::vector<Polyline> out;
  for (double a : alphas) {
    const auto halo = family.at_alpha(a);
    for (int k = 0; k < n_arcs; ++k) {
      ManifoldArcSpec arc;
      arc.t1 = halo->period * k / n_arcs;
      arc.t2 = spec.t2_max;
      arc.eps_mag = spec.eps_mag;
      arc.branch_sign = spec.branch_sign;
      arc.t2_min = spec.t2_min;
      arc.t2_max = spec.t2_max;
      Polyline p;
      p.alpha = a;
      p.t1 = arc.t1;
      const auto states = manifold_arc(*halo, arc, static_cast<std::size_t>(n_points), family.params(), 1e-10);
      for (std::size_t i = 0; i < states.size(); ++i) {
        p.t2.push_back(spec.t2_max * static_cast<double>(i) / static_cast<double>(states.size() - 1));
        p.points.push_back(states[i].head<3>());
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ------------------------------------------------------------------ basins

int count_basins(const MatrixXd& v, double band) {
  const Eigen::Index n1 = v.rows(), n2 = v.cols();
  const auto id = [&](Eigen::Index i, Eigen::Index j) { return static_cast<std::size_t>(i * n2 + j); };
  std::vector<std::size_t> parent(static_cast<std::size_t>(n1 * n2));
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  const auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
  std::vector<std::size_t> minima;
  for (Eigen::Index i = 0; i < n1; ++i)
    for (Eigen::Index j = 0; j < n2; ++j) {
      if (!std::isfinite(v(i, j))) continue;
      bool is_min = true;
      for (int k = 0; k < 4; ++k) {
        const Eigen::Index a = i + di[k], b = j + dj[k];
        if (a < 0 || b < 0 || a >= n1 || b >= n2 || !std::isfinite(v(a, b))) continue;
        if (v(a, b) < v(i, j)) is_min = false;
      }
      if (is_min) minima.push_back(id(i, j));
    }
  for (std::size_t m : minima) {
    const Eigen::Index mi = static_cast<Eigen::Index>(m) / n2, mj = static_cast<Eigen::Index>(m) % n2;
    const double limit = v(mi, mj) + band * std::max(std::abs(v(mi, mj)), 1e-300);
    std::vector<std::size_t> stack{m};
    std::vector<char> seen(parent.size(), 0);
    seen[m] = 1;
    while (!stack.empty()) {
      const std::size_t c = stack.back();
      stack.pop_back();
      parent[find(c)] = find(m);
      const Eigen::Index ci = static_cast<Eigen::Index>(c) / n2, cj = static_cast<Eigen::Index>(c) % n2;
      for (int k = 0; k < 4; ++k) {
        const Eigen::Index a = ci + di[k], b = cj + dj[k];
        if (a < 0 || b < 0 || a >= n1 || b >= n2) continue;
        const std::size_t nb = id(a, b);
        if (seen[nb] || !std::isfinite(v(a, b)) || v(a, b) > limit) continue;
        seen[nb] = 1;
        stack.push_back(nb);
      }
    }
  }
  std::vector<std::size_t> roots;
  for (std::size_t m : minima) roots.push_back(find(m));
  std::sort(roots.begin(), roots.end());
  return static_cast<int>(std::unique(roots.begin(), roots.end()) - roots.begin());
}

BasinScan basin_grid_scan(const ProblemSpec& spec, const BasinConfig& cfg, std::shared_ptr<HaloFamily> family,
                          const StudyHooks& hooks) {
  spec.validate();
  require(spec.variant == Variant::kVariableTerminal, ErrorCode::kInvalidArgument,
          "basin scans need the variable-terminal problem");
  require(cfg.n1 > 0 && cfg.n2 > 0 && cfg.starts_per_node > 0 && cfg.workers > 0, ErrorCode::kInvalidArgument,
          "basin grid sizes, starts and workers must be positive");
  cfg.solver.validate();
  if (!family) family = std::make_shared<HaloFamily>(spec.params);
  ProblemSpec s = spec;
  s.alpha = cfg.alpha;
  const Problem pr(s, family);
  const double period = pr.halo().period;

  BasinScan scan;
  for (int i = 0; i < cfg.n1; ++i) scan.t1.push_back(period * i / cfg.n1);
  for (int j = 0; j < cfg.n2; ++j) scan.t2.push_back(s.t2_min + (s.t2_max - s.t2_min) * j / cfg.n2);
  scan.objective = MatrixXd::Constant(cfg.n1, cfg.n2, kNaN);

  const auto nodes = static_cast<std::size_t>(cfg.n1) * static_cast<std::size_t>(cfg.n2);
  std::atomic<int> done{0};
  std::mutex progress_mutex;
  parallel_for(nodes, cfg.workers, [&](std::size_t node) {
    const int i = static_cast<int>(node) / cfg.n2, j = static_cast<int>(node) % cfg.n2;
    const double t1 = scan.t1[static_cast<std::size_t>(i)], t2 = scan.t2[static_cast<std::size_t>(j)];
    const std::uint64_t node_seed =
        derive_seed(derive_seed(cfg.seed, std::bit_cast<std::uint64_t>(t1)), std::bit_cast<std::uint64_t>(t2));
    NlpFunctions nlp = make_nlp(pr, cfg.solver.integrator_tol);
    nlp.lower[Layout::kT1] = nlp.upper[Layout::kT1] = t1;
    nlp.lower[Layout::kT2] = nlp.upper[Layout::kT2] = t2;
    const Box box{nlp.lower, nlp.upper};
    double best = kNaN;
    for (int k = 0; k < cfg.starts_per_node; ++k) {
      const VectorXd x0 = sample_uniform(box, derive_seed(node_seed, static_cast<std::uint64_t>(k)));
      try {
        const SolveOutcome o = hooks.solve ? hooks.solve(pr, x0, cfg.solver) : solve(nlp, x0, cfg.solver);
        if (o.status != SolveStatus::kFailed && (!std::isfinite(best) || o.objective < best)) best = o.objective;
      } catch (const Error&) {
      }
    }
    scan.objective(i, j) = best;
    const int c = ++done;
    if (hooks.progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      hooks.progress(c, static_cast<int>(nodes));
    }
  });
  scan.basins = count_basins(scan.objective, 0.01);
  return scan;
}

// ---------------------------------------------------------------- clusters

std::vector<ClusterStats> cluster_stats(const std::vector<DatasetRecord>& records, const Layout& layout) {
  std::map<double, std::vector<Eigen::Vector2d>> groups;
  for (const auto& r : records) {
    require(r.x.size() == layout.dim(), ErrorCode::kInvalidArgument, "record has the wrong dimension");
    groups[r.alpha].emplace_back(r.x[Layout::kTauS] + r.x[Layout::kTauI] + r.x[Layout::kTauF], r.x[layout.m_f()]);
  }
  std::vector<ClusterStats> out;
  for (const auto& [a, pts] : groups) {
    require(pts.size() >= 2, ErrorCode::kInvalidArgument,
            "cluster statistics need two records per alpha (alpha " + num(a) + ")");
    ClusterStats c;
    c.alpha = a;
    c.count = static_cast<int>(pts.size());
    for (const auto& p : pts) c.mean += p;
    c.mean /= c.count;
    for (const auto& p : pts) c.covariance += (p - c.mean) * (p - c.mean).transpose();
    c.covariance /= c.count - 1;
    out.push_back(c);
  }
  return out;
}

// --------------------------------------------------------------------- CSV

void write_throttle_csv(const MatrixXd& d, const std::string& path, const Json& config) {
  std::ostringstream o;
  o << config_line(config) << "segment";
  for (Eigen::Index b = 0; b < d.cols(); ++b)
    o << ",bin_" << num(static_cast<double>(b) / d.cols()) << "_" << num(static_cast<double>(b + 1) / d.cols());
  o << '\n';
  for (Eigen::Index k = 0; k < d.rows(); ++k) {
    o << k;
    for (Eigen::Index b = 0; b < d.cols(); ++b) o << ',' << num(d(k, b));
    o << '\n';
  }
  ensure_parent(path);
  write_text_atomic(path, o.str());
}

void write_endpoints_csv(const std::vector<EndpointRow>& rows, const std::vector<Polyline>& backdrop,
                         const std::string& path, const Json& config) {
  std::ostringstream o;
  o << config_line(config) << "kind,id,alpha,t1,period,t2,q1,q2,q3,v1,v2,v3\n";
  for (const auto& r : rows) {
    o << "endpoint," << r.run << ',' << num(r.alpha) << ',' << num(r.t1) << ',' << num(r.period) << ',' << num(r.t2);
    for (int i = 0; i < 6; ++i) o << ',' << num(r.terminal[i]);
    o << '\n';
  }
  for (std::size_t k = 0; k < backdrop.size(); ++k) {
    const auto& p = backdrop[k];
    for (std::size_t i = 0; i < p.points.size(); ++i) {
      o << "backdrop," << k << ',' << num(p.alpha) << ',' << num(p.t1) << ",," << num(p.t2[i]);
      for (int c = 0; c < 3; ++c) o << ',' << num(p.points[i][c]);
      o << ",,,\n";
    }
  }
  ensure_parent(path);
  write_text_atomic(path, o.str());
}

void write_basin_csv(const BasinScan& scan, const std::string& path, const Json& config) {
  std::ostringstream o;
  o << config_line(config) << "i,j,t1,t2,objective\n";
  for (std::size_t i = 0; i < scan.t1.size(); ++i)
    for (std::size_t j = 0; j < scan.t2.size(); ++j)
      o << i << ',' << j << ',' << num(scan.t1[i]) << ',' << num(scan.t2[j]) << ','
        << num(scan.objective(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
  ensure_parent(path);
  write_text_atomic(path, o.str());
}

void write_cluster_csv(const std::vector<ClusterStats>& stats, const std::string& path, const Json& config) {
  std::ostringstream o;
  o << config_line(config) << "alpha,count,mean_tof,mean_mf,cov_tof_tof,cov_tof_mf,cov_mf_mf\n";
  for (const auto& c : stats)
    o << num(c.alpha) << ',' << c.count << ',' << num(c.mean[0]) << ',' << num(c.mean[1]) << ','
      << num(c.covariance(0, 0)) << ',' << num(c.covariance(0, 1)) << ',' << num(c.covariance(1, 1)) << '\n';
  ensure_parent(path);
  write_text_atomic(path, o.str());
}

// --------------------------------------------------------------------- SVG

namespace {

std::string color_ramp(double t) {
  if (!std::isfinite(t)) return "#dddddd";
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(68 + t * (253 - 68)), g = static_cast<int>(1 + t * (231 - 1)),
            b = static_cast<int>(84 + t * (37 - 84));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string svg_frame(const std::string& body, const std::string& title, const std::string& xl,
                      const std::string& yl) {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"400\" font-family=\"sans-serif\" "
       "font-size=\"12\">\n"
    << "<text x=\"240\" y=\"20\" text-anchor=\"middle\">" << xml_escape(title) << "</text>\n"
    << "<text x=\"240\" y=\"392\" text-anchor=\"middle\">" << xml_escape(xl) << "</text>\n"
    << "<text x=\"14\" y=\"200\" text-anchor=\"middle\" transform=\"rotate(-90 14 200)\">" << xml_escape(yl)
    << "</text>\n"
    << "<rect x=\"40\" y=\"30\" width=\"420\" height=\"340\" fill=\"none\" stroke=\"#444\"/>\n"
    << body << "</svg>\n";
  return o.str();
}

}  // namespace

std::string svg_heatmap(const MatrixXd& v, const std::string& title, const std::string& xl, const std::string& yl) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::isfinite(v.data()[i])) {
      lo = std::min(lo, v.data()[i]);
      hi = std::max(hi, v.data()[i]);
    }
  std::ostringstream o;
  const double w = 420.0 / std::max<Eigen::Index>(v.cols(), 1), h = 340.0 / std::max<Eigen::Index>(v.rows(), 1);
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      const double t = hi > lo ? (v(i, j) - lo) / (hi - lo) : 0.5;
      o << "<rect x=\"" << 40 + j * w << "\" y=\"" << 30 + (v.rows() - 1 - i) * h << "\" width=\"" << w
        << "\" height=\"" << h << "\" fill=\"" << color_ramp(t) << "\"/>\n";
    }
  return svg_frame(o.str(), title, xl, yl);
}

std::string svg_scatter(const std::vector<Eigen::Vector2d>& pts, const std::vector<double>& color,
                        const std::string& title, const std::string& xl, const std::string& yl) {
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  for (int k = 0; k < 2; ++k)
    if (!(hi[k] > lo[k])) {
      lo[k] = (pts.empty() ? 0.0 : lo[k]) - 0.5;
      hi[k] = lo[k] + 1.0;
    }
  double clo = std::numeric_limits<double>::infinity(), chi = -clo;
  for (double c : color) {
    clo = std::min(clo, c);
    chi = std::max(chi, c);
  }
  std::ostringstream o;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double x = 40 + 420 * (pts[k][0] - lo[0]) / (hi[0] - lo[0]);
    const double y = 370 - 340 * (pts[k][1] - lo[1]) / (hi[1] - lo[1]);
    const double t = k < color.size() && chi > clo ? (color[k] - clo) / (chi - clo) : 0.5;
    o << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2.5\" fill=\"" << color_ramp(t) << "\"/>\n";
  }
  return svg_frame(o.str(), title, xl, yl);
}

}  // namespace amgs
