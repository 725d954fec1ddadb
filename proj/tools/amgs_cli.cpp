// Command-line front end over the C API. Config precedence: workflow
// defaults, then --config file, then flags, then --set overrides.
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "amgs/amgs.h"

namespace {

using Json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Owned {
  char* p = nullptr;
  ~Owned() { amgs_free_string(p); }
};

void set_path(Json& j, const std::string& dotted, const Json& value) {
  Json* at = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*at)[key] = value;
      return;
    }
    if (!at->contains(key) || !(*at)[key].is_object()) (*at)[key] = Json::object();
    at = &(*at)[key];
    start = dot + 1;
  }
}

void deep_merge(Json& base, const Json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      deep_merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

Json parse_value(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error&) {
    return text;
  }
}

void print_error(const char* kind, const std::string& message) {
  std::cerr << Json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

void log_line(const char* line, void*) { std::cerr << line << std::endl; }

// A subcommand flag that writes one or more config paths.
struct Binding {
  std::vector<std::string> paths;
  std::string help;
  std::string text;
  bool is_switch = false;
  bool on = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized global search for low-thrust cislunar transfers"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  std::string config_file, result_file;
  std::vector<std::string> sets;
  bool dry_run = false, print_defaults = false;

  std::map<std::string, std::vector<std::pair<std::string, Binding>>> bindings;  // subcommand -> flags
  std::map<std::string, CLI::App*> subs;

  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("-c,--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    s->add_option("--set", sets, "Override key.path=value (value parsed as JSON when possible)");
    s->add_flag("--dry-run", dry_run, "Validate the config and exit without side effects");
    s->add_flag("--print-defaults", print_defaults, "Print the default config and exit");
    s->add_option("--result", result_file, "Write the result JSON here instead of stdout");
    subs[name] = s;
    return s;
  };
  auto bind = [&](const std::string& sub, const std::string& flag, std::vector<std::string> paths,
                  const std::string& help, bool is_switch = false) {
    bindings[sub].push_back({flag, Binding{std::move(paths), help, "", is_switch, false}});
  };

  add("halo", "Correct an L1 halo orbit and write it as CSV");
  bind("halo", "--alpha", {"alpha"}, "Energy parameter in [0, 1]");
  bind("halo", "--e-pert", {"e_pert"}, "Energy above L1 (overrides --alpha)");
  bind("halo", "--samples", {"samples"}, "Points along the orbit");
  bind("halo", "--out", {"output"}, "CSV path");

  add("manifold", "Sample stable-manifold arcs of a halo orbit");
  bind("manifold", "--alpha", {"alpha"}, "Energy parameter in [0, 1]");
  bind("manifold", "--arcs", {"n_arcs"}, "Arcs over one period");
  bind("manifold", "--points", {"n_points"}, "Points per arc");
  bind("manifold", "--out", {"output"}, "CSV path");

  add("scan", "Solve fixed-arc problems over a (t1, t2) grid");
  bind("scan", "--alpha", {"alpha"}, "Energy parameter in [0, 1]");
  bind("scan", "--n1", {"n1"}, "Grid nodes in t1");
  bind("scan", "--n2", {"n2"}, "Grid nodes in t2");
  bind("scan", "--starts", {"starts_per_node"}, "Uniform starts per node");
  bind("scan", "--seed", {"seed"}, "Root seed");
  bind("scan", "--workers", {"workers"}, "Worker threads");
  bind("scan", "--out", {"output_dir"}, "Output directory");

  add("datagen", "Solve from uniform starts and store the solutions");
  bind("datagen", "--variant", {"problem.variant"}, "hybrid_cost or variable_terminal");
  bind("datagen", "--segments", {"problem.n_segments"}, "Thrust segments");
  bind("datagen", "--runs", {"generation.n_runs"}, "Solver runs");
  bind("datagen", "--alphas", {"generation.grid_alphas"}, "JSON array of grid alphas");
  bind("datagen", "--alpha-mode", {"generation.alpha_mode"}, "fixed_grid or uniform");
  bind("datagen", "--max-time", {"generation.solver.max_wall_time_s"}, "Solver cap in seconds");
  bind("datagen", "--seed", {"generation.seed"}, "Root seed");
  bind("datagen", "--workers", {"generation.workers"}, "Worker threads");
  bind("datagen", "--out", {"output"}, "Dataset path (.jsonl)");
  bind("datagen", "--resume", {"resume"}, "Continue an interrupted run", true);

  add("train", "Train the conditional diffusion model on a dataset");
  bind("train", "--dataset", {"dataset"}, "Dataset path");
  bind("train", "--keep", {"keep_fraction"}, "Fraction of best records kept per alpha");
  bind("train", "--epochs", {"train.epochs"}, "Training epochs");
  bind("train", "--seed", {"train.seed"}, "Root seed");
  bind("train", "--out", {"output"}, "Checkpoint path");
  bind("train", "--curve", {"curve"}, "Training-curve CSV path");

  add("sample", "Draw decision vectors from a trained model");
  bind("sample", "--model", {"model"}, "Checkpoint path");
  bind("sample", "--alpha", {"alpha"}, "Condition value");
  bind("sample", "--guidance", {"guidance"}, "Guidance weight w");
  bind("sample", "--n", {"n"}, "Number of samples");
  bind("sample", "--seed", {"seed"}, "Root seed");
  bind("sample", "--out", {"output"}, "CSV path");

  add("bench", "Warm-start study and structure diagnostics");
  bind("bench", "--model", {"model"}, "Checkpoint path");
  bind("bench", "--dataset", {"dataset"}, "Dataset for throttle, cluster and endpoint diagnostics");
  bind("bench", "--alphas", {"study.alphas"}, "JSON array of held-out alphas");
  bind("bench", "--n-init", {"study.n_init"}, "Initializations per method and alpha");
  bind("bench", "--max-time", {"study.solver.max_wall_time_s"}, "Solver cap in seconds");
  bind("bench", "--seed", {"study.seed"}, "Root seed");
  bind("bench", "--workers", {"study.workers"}, "Worker threads");
  bind("bench", "--segments", {"problem.n_segments"}, "Thrust segments");
  bind("bench", "--out", {"output_dir"}, "Output directory");
  bind("bench", "--no-study", {"run_study"}, "Only run dataset diagnostics", true);

  add("export", "Write a dataset as CSV");
  bind("export", "--dataset", {"dataset"}, "Dataset path");
  bind("export", "--keep", {"keep_fraction"}, "Fraction of best records kept per alpha");
  bind("export", "--out", {"output"}, "CSV path");

  add("e2e", "Data generation, training, warm-start study and diagnostics");
  bind("e2e", "--out", {"output_dir"}, "Output directory");
  bind("e2e", "--workers", {"generation.workers", "study.workers", "structure_generation.workers"}, "Worker threads");
  bind("e2e", "--runs", {"generation.n_runs"}, "Training-data solver runs");
  bind("e2e", "--n-init", {"study.n_init"}, "Initializations per method and alpha");
  bind("e2e", "--epochs", {"train.epochs"}, "Training epochs");

  for (auto& [sub, list] : bindings)
    for (auto& [flag, b] : list) {
      if (b.is_switch)
        subs[sub]->add_flag(flag, b.on, b.help);
      else
        subs[sub]->add_option(flag, b.text, b.help);
    }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help() << std::flush;
    print_error("usage", e.what());
    return kExitConfig;
  }

  std::string name;
  for (auto& [n, s] : subs)
    if (s->parsed()) name = n;

  if (print_defaults) {
    Owned d;
    if (amgs_workflow_defaults(name.c_str(), &d.p) != AMGS_OK) {
      print_error("internal", amgs_last_error());
      return kExitRuntime;
    }
    std::cout << d.p << std::endl;
    return kExitOk;
  }

  Json cfg = Json::object();
  try {
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg = Json::parse(ss.str());
      if (!cfg.is_object()) throw std::runtime_error(config_file + " must hold a JSON object");
    }
    Json flags = Json::object();
    for (auto& [flag, b] : bindings[name]) {
      if (b.is_switch) {
        if (!b.on) continue;
        // --no-study clears run_study; other switches set true.
        for (const auto& p : b.paths) set_path(flags, p, flag.rfind("--no-", 0) == 0 ? Json(false) : Json(true));
      } else if (subs[name]->count(flag) > 0) {
        for (const auto& p : b.paths) set_path(flags, p, parse_value(b.text));
      }
    }
    deep_merge(cfg, flags);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw std::runtime_error("--set expects key.path=value, got '" + s + "'");
      Json one = Json::object();
      set_path(one, s.substr(0, eq), parse_value(s.substr(eq + 1)));
      deep_merge(cfg, one);
    }
  } catch (const std::exception& e) {
    print_error("parse", e.what());
    return kExitConfig;
  }

  Owned result;
  const amgs_status st = amgs_workflow_run(name.c_str(), cfg.dump().c_str(), dry_run ? 1 : 0, log_line, nullptr,
                                           &result.p);
  if (st != AMGS_OK) {
    print_error(amgs_status_name(st), amgs_last_error());
    const bool config_error =
        st == AMGS_ERR_PARSE || st == AMGS_ERR_INVALID_ARGUMENT || st == AMGS_ERR_HEADER_MISMATCH;
    return config_error ? kExitConfig : kExitRuntime;
  }
  if (result_file.empty()) {
    std::cout << result.p << std::endl;
  } else {
    std::ofstream out(result_file);
    out << result.p << '\n';
    if (!out) {
      print_error("io", "cannot write " + result_file);
      return kExitRuntime;
    }
  }
  return kExitOk;
}
