#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "amgs/amgs.h"

using Json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  amgs_free_string(s);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("amgs_capi_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kSpec = R"({"variant": "variable_terminal", "alpha": 0.4, "n_segments": 4})";

}  // namespace

TEST_CASE("library identity and status names") {
  CHECK(std::strlen(amgs_version()) > 0);
  CHECK(std::string(amgs_status_name(AMGS_OK)) == "ok");
  CHECK(std::string(amgs_status_name(AMGS_ERR_PARSE)) == "parse");
  char* names = nullptr;
  REQUIRE(amgs_workflow_names(&names) == AMGS_OK);
  CHECK(take(names).find("e2e") != std::string::npos);
}

TEST_CASE("errors carry a code and a message") {
  double e = 0.0;
  const double s[6] = {0.8, 0, 0, 0, 0.1, 0};
  CHECK(amgs_energy("{not json", s, &e) == AMGS_ERR_PARSE);
  CHECK(std::strlen(amgs_last_error()) > 0);
  CHECK(amgs_energy(nullptr, s, nullptr) == AMGS_ERR_INVALID_ARGUMENT);
  char* out = nullptr;
  CHECK(amgs_config_merge(R"({"a": 1})", R"({"b": 2})", &out) == AMGS_ERR_PARSE);
  CHECK(std::string(amgs_last_error()).find("b") != std::string::npos);
  amgs_halo* h = nullptr;
  CHECK(amgs_halo_create(nullptr, 5.0, &h) != AMGS_OK);
  CHECK(h == nullptr);
  double origin[6] = {-0.0121505856, 0, 0, 0, 0, 0};
  CHECK(amgs_energy(nullptr, origin, &e) == AMGS_ERR_SINGULARITY);
}

TEST_CASE("dynamics") {
  double l1[3];
  REQUIRE(amgs_lagrange_point(nullptr, 1, l1) == AMGS_OK);
  CHECK(l1[0] == doctest::Approx(0.8369).epsilon(1e-3));
  CHECK(amgs_lagrange_point(nullptr, 6, l1) == AMGS_ERR_INVALID_ARGUMENT);

  const double s[6] = {0.82, 0.0, 0.05, 0.0, 0.15, 0.0};
  double out[6], stm[36], e0 = 0.0, e1 = 0.0;
  REQUIRE(amgs_propagate(nullptr, s, 1.5, 1e-12, out, stm) == AMGS_OK);
  amgs_energy(nullptr, s, &e0);
  amgs_energy(nullptr, out, &e1);
  CHECK(std::abs(e1 - e0) < 1e-9);
  // STM column 0 against a central difference.
  double p[6], m[6], xp[6], xm[6];
  std::memcpy(p, s, sizeof p);
  std::memcpy(m, s, sizeof m);
  p[0] += 1e-7;
  m[0] -= 1e-7;
  amgs_propagate(nullptr, p, 1.5, 1e-13, xp, nullptr);
  amgs_propagate(nullptr, m, 1.5, 1e-13, xm, nullptr);
  for (int i = 0; i < 6; ++i) CHECK(std::abs((xp[i] - xm[i]) / 2e-7 - stm[i]) < 1e-4 * (1 + std::abs(stm[i])));
}

TEST_CASE("halo handles") {
  amgs_halo* h = nullptr;
  REQUIRE(amgs_halo_create(nullptr, amgs_energy_from_alpha(0.0) + 0.0, &h) == AMGS_OK);
  double period = 0.0, energy = 0.0, x[6], term[6];
  CHECK(amgs_halo_period(h, &period) == AMGS_OK);
  CHECK(period > 2.0);
  CHECK(period < 4.0);
  CHECK(amgs_halo_energy(h, &energy) == AMGS_OK);
  CHECK(energy == doctest::Approx(-1.586));
  CHECK(amgs_halo_crossing_state(h, x) == AMGS_OK);
  CHECK(x[1] == 0.0);
  CHECK(amgs_halo_manifold_state(h, 0.3 * period, 8.0, 1e-6, 1, term) == AMGS_OK);
  double et = 0.0;
  amgs_energy(nullptr, term, &et);
  CHECK(std::abs(et - energy) < 1e-6);
  CHECK(amgs_halo_manifold_state(h, -0.5, 8.0, 1e-6, 1, term) != AMGS_OK);
  amgs_halo_free(h);
  CHECK(amgs_halo_period(nullptr, &period) == AMGS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("problem evaluation and derivatives") {
  amgs_problem* p = nullptr;
  REQUIRE(amgs_problem_create(kSpec, &p) == AMGS_OK);
  int dim = 0;
  amgs_problem_dim(p, &dim);
  CHECK(dim == 6 + 3 * 4);
  std::vector<double> lo(dim), hi(dim), x(dim), g(dim), jac(7 * dim);
  REQUIRE(amgs_problem_bounds(p, lo.data(), hi.data()) == AMGS_OK);
  REQUIRE(amgs_sample_uniform(p, 3, x.data()) == AMGS_OK);
  for (int i = 0; i < dim; ++i) {
    CHECK(x[i] >= lo[i]);
    CHECK(x[i] <= hi[i]);
  }
  double cost = 0.0, c[7];
  REQUIRE(amgs_problem_evaluate(p, x.data(), &cost, c) == AMGS_OK);
  CHECK(cost == doctest::Approx(-x[5] / 1000.0).epsilon(1e-12));
  REQUIRE(amgs_problem_derivatives(p, x.data(), g.data(), jac.data()) == AMGS_OK);
  // Column of tau_s against a central difference.
  const double h = 1e-5;
  std::vector<double> xp = x, xm = x;
  xp[0] += h;
  xm[0] -= h;
  double cp[7], cm[7], f;
  amgs_problem_evaluate(p, xp.data(), &f, cp);
  amgs_problem_evaluate(p, xm.data(), &f, cm);
  for (int r = 0; r < 7; ++r) {
    const double fd = (cp[r] - cm[r]) / (2 * h);
    CHECK(std::abs(fd - jac[r]) < 1e-4 * (1 + std::abs(fd)));
  }

  char* res = nullptr;
  REQUIRE(amgs_problem_solve(p, x.data(), R"({"max_total_iterations": 5, "max_wall_time_s": 100})", &res) ==
          AMGS_OK);
  const Json j = Json::parse(take(res));
  CHECK(j.at("x_final").size() == static_cast<std::size_t>(dim));
  CHECK(j.contains("status"));

  x[0] = std::nan("");
  CHECK(amgs_problem_evaluate(p, x.data(), &cost, c) != AMGS_OK);
  amgs_problem_free(p);
  CHECK(amgs_problem_create(R"({"n_segments": 3})", &p) != AMGS_OK);
}

TEST_CASE("datasets and models through the workflow entry point") {
  const fs::path dir = scratch("pipeline");
  const std::string data = (dir / "d.jsonl").string();
  Json cfg = {{"problem", {{"n_segments", 4}}},
              {"generation", {{"n_runs", 4}, {"grid_alphas", {0.0, 1.0}}, {"solver", {{"max_total_iterations", 10}}}}},
              {"output", data}};
  char* res = nullptr;
  REQUIRE(amgs_workflow_run("datagen", cfg.dump().c_str(), 0, nullptr, nullptr, &res) == AMGS_OK);
  take(res);

  // The tiny farm rarely converges, so synthetic records are appended under
  // its header.
  {
    std::ofstream app(data, std::ios::app);
    for (int k = 0; k < 6; ++k) {
      Json r = {{"run", 100 + k}, {"alpha", k % 2 == 0 ? 0.0 : 1.0}, {"objective", 0.1 * k},
                {"status", "optimal"}, {"solve_time_s", 1.0}, {"rng_seed", k}, {"variant", "hybrid_cost"},
                {"iterations", 10}, {"feas_residual", 0.0}, {"kkt_residual", 0.0}};
      std::vector<double> x(16, 0.0);
      x[0] = 2.0 + 0.1 * k;
      x[3] = 600.0 + k;
      x[5] = 0.5;
      x[9] = -0.2 * k;
      r["x"] = x;
      app << r.dump() << "\n";
    }
  }
  amgs_dataset* d = nullptr;
  REQUIRE(amgs_dataset_read(data.c_str(), 0, &d) == AMGS_OK);
  int dim = 0;
  std::size_t n = 0;
  amgs_dataset_dim(d, &dim);
  amgs_dataset_size(d, &n);
  CHECK(dim == 4 + 3 * 4);
  CHECK(n >= 6);
  char* header = nullptr;
  amgs_dataset_header(d, &header);
  CHECK(Json::parse(take(header)).at("dim") == dim);

  double alpha = -1.0;
  int status = -1;
  std::vector<double> x(dim);
  CHECK(amgs_dataset_record(d, 0, &alpha, x.data(), nullptr, &status) == AMGS_OK);
  CHECK((alpha == 0.0 || alpha == 1.0));
  CHECK(status >= 1);
  CHECK(amgs_dataset_record(d, n, nullptr, nullptr, nullptr, nullptr) == AMGS_ERR_INVALID_ARGUMENT);

  amgs_dataset* f = nullptr;
  REQUIRE(amgs_dataset_filter(d, 1.0, &f) == AMGS_OK);
  std::size_t nf = 0;
  amgs_dataset_size(f, &nf);
  CHECK(nf == n);
  std::vector<double> density(4 * 5);
  CHECK(amgs_dataset_throttle_density(f, 5, density.data()) == AMGS_OK);
  double row = 0.0;
  for (int b = 0; b < 5; ++b) row += density[b];
  CHECK(row == doctest::Approx(100.0));
  const std::string copy = (dir / "copy.jsonl").string();
  CHECK(amgs_dataset_write(f, copy.c_str()) == AMGS_OK);
  amgs_dataset_free(f);

  amgs_model* m = nullptr;
  const char* train = R"({"epochs": 3, "width": 16, "n_hidden": 1, "time_embedding": 4, "cond_embedding": 4, "T": 20})";
  REQUIRE(amgs_model_train(d, train, nullptr, &m) == AMGS_OK);
  int mdim = 0;
  amgs_model_dim(m, &mdim);
  CHECK(mdim == dim);
  std::vector<double> lo(dim, -1e9), hi(dim, 1e9), s1(dim * 3), s2(dim * 3);
  int oob = -1;
  REQUIRE(amgs_model_sample(m, 0.5, 1.3, 3, 7, lo.data(), hi.data(), s1.data(), &oob) == AMGS_OK);
  CHECK(oob == 0);
  const std::string path = (dir / "m.json").string();
  REQUIRE(amgs_model_save(m, path.c_str()) == AMGS_OK);
  amgs_model* back = nullptr;
  REQUIRE(amgs_model_load(path.c_str(), &back) == AMGS_OK);
  REQUIRE(amgs_model_sample(back, 0.5, 1.3, 3, 7, nullptr, nullptr, s2.data(), nullptr) == AMGS_OK);
  CHECK(s1 == s2);

  std::vector<double> xt(dim * 2, 0.1), e0(dim * 2), e1(dim * 2), eh(dim * 2);
  amgs_model_guided_noise(m, xt.data(), 2, 5, 0.5, 0.0, e0.data());
  amgs_model_guided_noise(m, xt.data(), 2, 5, 0.5, 1.0, e1.data());
  amgs_model_guided_noise(m, xt.data(), 2, 5, 0.5, 0.5, eh.data());
  for (int i = 0; i < dim * 2; ++i) CHECK(std::abs(eh[i] - 0.5 * (e0[i] + e1[i])) < 1e-12);
  CHECK(amgs_model_guided_noise(m, xt.data(), 2, 0, 0.5, 1.0, eh.data()) != AMGS_OK);

  amgs_model_free(back);
  amgs_model_free(m);
  amgs_dataset_free(d);
  CHECK(amgs_model_load((dir / "missing.json").string().c_str(), &m) == AMGS_ERR_IO);
}

TEST_CASE("workflow dry run through the C interface") {
  char* out = nullptr;
  std::vector<std::string> lines;
  const auto log = [](const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); };
  REQUIRE(amgs_workflow_run("datagen", R"({"generation": {"n_runs": 3}})", 1, log, &lines, &out) == AMGS_OK);
  const Json j = Json::parse(take(out));
  CHECK(j.at("dry_run") == true);
  CHECK(j.at("config").at("generation").at("n_runs") == 3);
  CHECK(amgs_workflow_run("nope", "{}", 1, nullptr, nullptr, &out) != AMGS_OK);
  CHECK(amgs_workflow_run("datagen", R"({"generation": {"bogus": 1}})", 1, nullptr, nullptr, &out) == AMGS_ERR_PARSE);
}
