#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include "amgs/error.hpp"
#include "amgs/workflow.hpp"

using namespace amgs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("amgs_workflow_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("every workflow has complete defaults") {
  const auto names = workflow_names();
  CHECK(names.size() == 9);
  for (const auto& n : names) {
    const Json d = workflow_defaults(n);
    CHECK(d.is_object());
    CHECK(merge_config(d, d) == d);
  }
  CHECK_THROWS_AS(workflow_defaults("nope"), Error);
}

TEST_CASE("merging configs") {
  const Json base = workflow_defaults("datagen");
  const Json m = merge_config(base, Json{{"generation", {{"n_runs", 7}, {"solver", {{"tol_feas", 1e-8}}}}}});
  CHECK(m["generation"]["n_runs"] == 7);
  CHECK(m["generation"]["solver"]["tol_feas"] == 1e-8);
  CHECK(m["generation"]["solver"]["tol_opt"] == base["generation"]["solver"]["tol_opt"]);
  CHECK(m["problem"] == base["problem"]);

  try {
    merge_config(base, Json{{"generation", {{"n_run", 7}}}}, "datagen");
    FAIL("expected an unknown key");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find("datagen.generation.n_run") != std::string::npos);
  }
}

TEST_CASE("dry runs validate and write nothing") {
  const fs::path dir = scratch("dry");
  const auto out = [&](const char* f) { return (dir / f).string(); };
  Json r = run_workflow("halo", Json{{"output", out("halo.csv")}}, true);
  CHECK(r.at("dry_run") == true);
  CHECK(r.at("outputs").empty());
  r = run_workflow("datagen", Json{{"output", out("d.jsonl")}}, true);
  CHECK(r.at("dim") == 34);
  r = run_workflow("e2e", Json{{"output_dir", out("e2e")}}, true);
  CHECK(r.at("config").at("output_dir") == out("e2e"));
  run_workflow("manifold", Json{{"output", out("m.csv")}}, true);
  run_workflow("scan", Json{{"output_dir", out("scan")}}, true);
  CHECK(fs::is_empty(dir));

  CHECK_THROWS_AS(run_workflow("train", Json::object(), true), Error);
  CHECK_THROWS_AS(run_workflow("halo", Json{{"alpha", 2.0}}, true), Error);
  CHECK_THROWS_AS(run_workflow("halo", Json{{"alpah", 0.5}}, true), Error);
}

TEST_CASE("halo workflow writes its config into the output") {
  const fs::path dir = scratch("halo");
  const std::string path = (dir / "halo.csv").string();
  std::vector<std::string> log;
  const Json r = run_workflow("halo", Json{{"alpha", 0.25}, {"samples", 20}, {"output", path}}, false,
                              [&](const std::string& l) { log.push_back(l); });
  CHECK(r.at("outputs").size() == 1);
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  REQUIRE(first.rfind("# ", 0) == 0);
  const Json echoed = Json::parse(first.substr(2));
  CHECK(echoed.at("alpha") == 0.25);
  CHECK(echoed.at("samples") == 20);
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 21);  // column header plus samples
}
