#include "amgs/amgs.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "amgs/bench.hpp"
#include "amgs/config.hpp"
#include "amgs/cr3bp.hpp"
#include "amgs/datagen.hpp"
#include "amgs/ddpm.hpp"
#include "amgs/error.hpp"
#include "amgs/halo.hpp"
#include "amgs/nlp.hpp"
#include "amgs/transcribe.hpp"
#include "amgs/workflow.hpp"

struct amgs_halo {
  amgs::SystemParams params;
  amgs::HaloOrbit orbit;
};

struct amgs_problem {
  std::unique_ptr<amgs::Problem> problem;
};

struct amgs_dataset {
  amgs::Dataset data;
};

struct amgs_model {
  amgs::Checkpoint ck;
};

namespace {

using amgs::ErrorCode;
using amgs::Json;
using amgs::require;

thread_local std::string g_last_error;

template <class F>
amgs_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return AMGS_OK;
  } catch (const amgs::Error& e) {
    g_last_error = e.what();
    return static_cast<amgs_status>(static_cast<int>(e.code()));
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return AMGS_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return AMGS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return AMGS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return AMGS_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  require(p != nullptr, ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

Json parse(const char* text, const char* what) {
  need(text, what);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    amgs::fail(ErrorCode::kParse, std::string(what) + ": " + e.what());
  }
}

amgs::SystemParams params_from(const char* json) {
  amgs::SystemParams p;
  if (json) amgs::apply_json(parse(json, "params_json"), p, "params");
  return p;
}

Eigen::Map<const Eigen::VectorXd> vec(const double* x, int n) { return {x, n}; }

}  // namespace

extern "C" {

const char* amgs_version(void) { return amgs::kCodeVersion; }

const char* amgs_status_name(amgs_status s) {
  if (s == AMGS_OK) return "ok";
  if (s == AMGS_ERR_INTERNAL) return "internal";
  if (s >= AMGS_ERR_INVALID_ARGUMENT && s <= AMGS_ERR_NON_FINITE) return amgs::to_string(static_cast<ErrorCode>(s));
  return "unknown";
}

const char* amgs_last_error(void) { return g_last_error.c_str(); }

void amgs_free_string(char* s) { std::free(s); }

amgs_status amgs_workflow_names(char** out) {
  return guarded([&] {
    need(out, "names_out");
    std::string s;
    for (const auto& n : amgs::workflow_names()) s += (s.empty() ? "" : " ") + n;
    *out = dup(s);
  });
}

amgs_status amgs_workflow_defaults(const char* name, char** out) {
  return guarded([&] {
    need(name, "name");
    need(out, "json_out");
    *out = dup(amgs::workflow_defaults(name).dump(2));
  });
}

amgs_status amgs_config_merge(const char* base, const char* over, char** out) {
  return guarded([&] {
    need(out, "json_out");
    *out = dup(amgs::merge_config(parse(base, "base_json"), parse(over, "overrides_json")).dump(2));
  });
}

amgs_status amgs_workflow_run(const char* name, const char* config, int dry_run, amgs_log_fn log, void* user,
                              char** result) {
  return guarded([&] {
    need(name, "name");
    const Json cfg = config ? parse(config, "config_json") : Json::object();
    amgs::WorkflowLog sink;
    if (log) sink = [log, user](const std::string& line) { log(line.c_str(), user); };
    const Json r = amgs::run_workflow(name, cfg, dry_run != 0, sink);
    if (result) *result = dup(r.dump(2));
  });
}

amgs_status amgs_default_params(char** out) {
  return guarded([&] {
    need(out, "json_out");
    *out = dup(amgs::to_json(amgs::SystemParams{}).dump(2));
  });
}

amgs_status amgs_energy(const char* params, const double state[6], double* e) {
  return guarded([&] {
    need(state, "state");
    need(e, "energy");
    *e = amgs::energy(amgs::Vec6(Eigen::Map<const amgs::Vec6>(state)), params_from(params));
  });
}

amgs_status amgs_lagrange_point(const char* params, int which, double q[3]) {
  return guarded([&] {
    need(q, "position");
    require(which >= 1 && which <= 5, ErrorCode::kInvalidArgument, "Lagrange point index must lie in 1..5");
    const auto pts = amgs::lagrange_points(params_from(params));
    Eigen::Map<amgs::Vec3>{q} = pts[static_cast<std::size_t>(which - 1)];
  });
}

amgs_status amgs_propagate(const char* params, const double state[6], double t, double tol, double out[6],
                           double* stm) {
  return guarded([&] {
    need(state, "state");
    need(out, "out");
    const amgs::Vec6 s0 = Eigen::Map<const amgs::Vec6>(state);
    const auto p = params_from(params);
    if (stm) {
      const auto [s, phi] = amgs::propagate_stm(s0, t, p, tol);
      Eigen::Map<amgs::Vec6>{out} = s;
      Eigen::Map<amgs::Mat6>{stm} = phi;
    } else {
      Eigen::Map<amgs::Vec6>{out} = amgs::flow(s0, t, p, tol);
    }
  });
}

double amgs_energy_from_alpha(double alpha) { return amgs::energy_from_alpha(alpha); }

amgs_status amgs_halo_create(const char* params, double energy, amgs_halo** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    auto h = std::make_unique<amgs_halo>();
    h->params = params_from(params);
    h->orbit = amgs::solve_halo(energy, h->params);
    *out = h.release();
  });
}

void amgs_halo_free(amgs_halo* h) { delete h; }

amgs_status amgs_halo_period(const amgs_halo* h, double* v) {
  return guarded([&] {
    need(h, "halo");
    need(v, "period");
    *v = h->orbit.period;
  });
}

amgs_status amgs_halo_energy(const amgs_halo* h, double* v) {
  return guarded([&] {
    need(h, "halo");
    need(v, "energy");
    *v = h->orbit.energy;
  });
}

amgs_status amgs_halo_crossing_state(const amgs_halo* h, double s[6]) {
  return guarded([&] {
    need(h, "halo");
    need(s, "state");
    Eigen::Map<amgs::Vec6>{s} = h->orbit.crossing_state;
  });
}

amgs_status amgs_halo_manifold_state(const amgs_halo* h, double t1, double t2, double eps, int branch, double s[6]) {
  return guarded([&] {
    need(h, "halo");
    need(s, "state");
    amgs::ManifoldArcSpec arc;
    arc.t1 = t1;
    arc.t2 = t2;
    arc.eps_mag = eps;
    arc.branch_sign = branch;
    Eigen::Map<amgs::Vec6>{s} = amgs::manifold_terminal_state(h->orbit, arc, h->params, 1e-12, false);
  });
}

amgs_status amgs_problem_create(const char* spec_json, amgs_problem** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    amgs::ProblemSpec s;
    if (spec_json) amgs::apply_json(parse(spec_json, "spec_json"), s, "problem");
    s.validate();
    auto p = std::make_unique<amgs_problem>();
    p->problem = std::make_unique<amgs::Problem>(s);
    *out = p.release();
  });
}

void amgs_problem_free(amgs_problem* p) { delete p; }

amgs_status amgs_problem_dim(const amgs_problem* p, int* dim) {
  return guarded([&] {
    need(p, "problem");
    need(dim, "dim");
    *dim = p->problem->dim();
  });
}

amgs_status amgs_problem_bounds(const amgs_problem* p, double* lower, double* upper) {
  return guarded([&] {
    need(p, "problem");
    const auto& b = p->problem->bounds();
    const int n = p->problem->dim();
    if (lower) Eigen::Map<Eigen::VectorXd>(lower, n) = b.lower;
    if (upper) Eigen::Map<Eigen::VectorXd>(upper, n) = b.upper;
  });
}

amgs_status amgs_problem_evaluate(const amgs_problem* p, const double* x, double* cost, double residual[7]) {
  return guarded([&] {
    need(p, "problem");
    need(x, "x");
    const auto r = p->problem->evaluate(vec(x, p->problem->dim()));
    if (cost) *cost = r.cost;
    if (residual) Eigen::Map<amgs::Residual>{residual} = r.c;
  });
}

amgs_status amgs_problem_derivatives(const amgs_problem* p, const double* x, double* grad, double* jac) {
  return guarded([&] {
    need(p, "problem");
    need(x, "x");
    const int n = p->problem->dim();
    const auto d = p->problem->derivatives(vec(x, n));
    if (grad) Eigen::Map<Eigen::VectorXd>(grad, n) = d.cost_gradient;
    if (jac) Eigen::Map<Eigen::Matrix<double, 7, Eigen::Dynamic>>(jac, 7, n) = d.jc;
  });
}

amgs_status amgs_problem_solve(const amgs_problem* p, const double* x0, const char* solver_json, char** out) {
  return guarded([&] {
    need(p, "problem");
    need(x0, "x0");
    need(out, "result_json");
    amgs::SolverConfig cfg;
    if (solver_json) amgs::apply_json(parse(solver_json, "solver_json"), cfg, "solver");
    cfg.validate();
    const auto o = amgs::solve(*p->problem, vec(x0, p->problem->dim()), cfg);
    *out = dup(amgs::outcome_to_json(o, 0, "capi"));
  });
}

amgs_status amgs_sample_uniform(const amgs_problem* p, uint64_t seed, double* x) {
  return guarded([&] {
    need(p, "problem");
    need(x, "x");
    Eigen::Map<Eigen::VectorXd>(x, p->problem->dim()) = amgs::sample_uniform(p->problem->bounds(), seed);
  });
}

amgs_status amgs_dataset_read(const char* path, int permissive, amgs_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto d = std::make_unique<amgs_dataset>();
    d->data = amgs::read_dataset(path, permissive != 0);
    *out = d.release();
  });
}

void amgs_dataset_free(amgs_dataset* d) { delete d; }

amgs_status amgs_dataset_size(const amgs_dataset* d, size_t* n) {
  return guarded([&] {
    need(d, "dataset");
    need(n, "n");
    *n = d->data.records.size();
  });
}

amgs_status amgs_dataset_dim(const amgs_dataset* d, int* dim) {
  return guarded([&] {
    need(d, "dataset");
    need(dim, "dim");
    *dim = d->data.header.dim;
  });
}

amgs_status amgs_dataset_header(const amgs_dataset* d, char** out) {
  return guarded([&] {
    need(d, "dataset");
    need(out, "json_out");
    *out = dup(amgs::header_to_json(d->data.header).dump(2));
  });
}

amgs_status amgs_dataset_record(const amgs_dataset* d, size_t i, double* alpha, double* x, double* objective,
                                int* status) {
  return guarded([&] {
    need(d, "dataset");
    require(i < d->data.records.size(), ErrorCode::kInvalidArgument, "record index out of range");
    const auto& r = d->data.records[i];
    if (alpha) *alpha = r.alpha;
    if (x) Eigen::Map<Eigen::VectorXd>(x, r.x.size()) = r.x;
    if (objective) *objective = r.objective;
    if (status) *status = static_cast<int>(r.status);
  });
}

amgs_status amgs_dataset_filter(const amgs_dataset* d, double keep, amgs_dataset** out) {
  return guarded([&] {
    need(d, "dataset");
    need(out, "out");
    *out = nullptr;
    auto f = std::make_unique<amgs_dataset>();
    f->data = amgs::filter_top(d->data, keep);
    *out = f.release();
  });
}

amgs_status amgs_dataset_write(const amgs_dataset* d, const char* path) {
  return guarded([&] {
    need(d, "dataset");
    need(path, "path");
    amgs::write_dataset(d->data, path);
  });
}

amgs_status amgs_dataset_throttle_density(const amgs_dataset* d, int n_bins, double* out) {
  return guarded([&] {
    need(d, "dataset");
    need(out, "out");
    const auto& s = d->data.header.spec;
    std::vector<Eigen::VectorXd> xs;
    for (const auto& r : d->data.records) xs.push_back(r.x);
    const Eigen::MatrixXd m =
        amgs::throttle_density(xs, amgs::Layout{s.variant, s.n_segments}, s.params.thrust_max_newtons, n_bins);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out, m.rows(), m.cols()) = m;
  });
}

amgs_status amgs_model_train(const amgs_dataset* d, const char* train_json, const char* curve, amgs_model** out) {
  return guarded([&] {
    need(d, "dataset");
    need(out, "out");
    *out = nullptr;
    amgs::TrainConfig tc;
    if (train_json) amgs::apply_json(parse(train_json, "train_json"), tc, "train");
    tc.validate();
    const auto& recs = d->data.records;
    require(!recs.empty(), ErrorCode::kInvalidArgument, "dataset holds no records");
    Eigen::MatrixXd x(d->data.header.dim, static_cast<Eigen::Index>(recs.size()));
    Eigen::VectorXd y(x.cols());
    for (std::size_t k = 0; k < recs.size(); ++k) {
      x.col(static_cast<Eigen::Index>(k)) = recs[k].x;
      y[static_cast<Eigen::Index>(k)] = recs[k].alpha;
    }
    auto r = amgs::train(x, y, tc, curve ? curve : "");
    require(!r.diverged, ErrorCode::kNonFinite, r.message);
    auto m = std::make_unique<amgs_model>();
    m->ck.model = std::move(r.model);
    m->ck.train = tc;
    m->ck.extra = Json{{"problem", amgs::to_json(d->data.header.spec)}};
    *out = m.release();
  });
}

amgs_status amgs_model_load(const char* path, amgs_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto m = std::make_unique<amgs_model>();
    m->ck = amgs::load_checkpoint(path);
    *out = m.release();
  });
}

amgs_status amgs_model_save(const amgs_model* m, const char* path) {
  return guarded([&] {
    need(m, "model");
    need(path, "path");
    amgs::save_checkpoint(m->ck, path);
  });
}

void amgs_model_free(amgs_model* m) { delete m; }

amgs_status amgs_model_dim(const amgs_model* m, int* dim) {
  return guarded([&] {
    need(m, "model");
    need(dim, "dim");
    *dim = m->ck.model.topology().dim;
  });
}

amgs_status amgs_model_sample(const amgs_model* m, double alpha, double w, int n, uint64_t seed, const double* lower,
                              const double* upper, double* out, int* out_of_box) {
  return guarded([&] {
    need(m, "model");
    require((lower == nullptr) == (upper == nullptr), ErrorCode::kInvalidArgument,
            "lower and upper must both be given or both be null");
    require(n >= 0, ErrorCode::kInvalidArgument, "sample count must be non-negative");
    if (n > 0) need(out, "out");
    const int dim = m->ck.model.topology().dim;
    amgs::Box box;
    if (lower) box = {vec(lower, dim), vec(upper, dim)};
    const auto r = amgs::sample_ddpm(m->ck.model, m->ck.train.schedule(), alpha, w, n, seed, lower ? &box : nullptr);
    if (n > 0) Eigen::Map<Eigen::MatrixXd>(out, dim, n) = r.samples;
    if (out_of_box) *out_of_box = r.out_of_box;
  });
}

amgs_status amgs_model_guided_noise(const amgs_model* m, const double* x_t, int n, int t, double alpha, double w,
                                    double* out) {
  return guarded([&] {
    need(m, "model");
    need(x_t, "x_t");
    need(out, "out");
    require(n > 0, ErrorCode::kInvalidArgument, "batch must be nonempty");
    const int dim = m->ck.model.topology().dim;
    require(t >= 1 && t <= m->ck.train.T, ErrorCode::kDomain, "diffusion step out of range");
    const Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(x_t, dim, n);
    Eigen::Map<Eigen::MatrixXd>(out, dim, n) = amgs::guided_noise(m->ck.model, x, t, alpha, w);
  });
}

}  // extern "C"
