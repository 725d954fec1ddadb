#include "amgs/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "amgs/error.hpp"

namespace amgs {

namespace {

// Name -> setter table for one struct.
class Binder {
 public:
  explicit Binder(std::string where) : where_(std::move(where)) {}

  void num(const char* key, double& ref) {
    set_[key] = [this, key, &ref](const Json& v) {
      require(v.is_number(), ErrorCode::kParse, where_ + "." + key + " must be a number");
      ref = v.get<double>();
    };
  }
  void integer(const char* key, int& ref) {
    set_[key] = [this, key, &ref](const Json& v) {
      require(v.is_number_integer(), ErrorCode::kParse, where_ + "." + key + " must be an integer");
      ref = v.get<int>();
    };
  }
  void flag(const char* key, bool& ref) {
    set_[key] = [this, key, &ref](const Json& v) {
      require(v.is_boolean(), ErrorCode::kParse, where_ + "." + key + " must be a boolean");
      ref = v.get<bool>();
    };
  }
  void custom(const char* key, std::function<void(const Json&)> f) { set_[key] = std::move(f); }

  void apply(const Json& j) const {
    require(j.is_object(), ErrorCode::kParse, where_ + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto f = set_.find(it.key());
      require(f != set_.end(), ErrorCode::kParse, "unknown key " + where_ + "." + it.key());
      f->second(it.value());
    }
  }

 private:
  std::string where_;
  std::map<std::string, std::function<void(const Json&)>> set_;
};

}  // namespace

Json to_json(const SystemParams& p) {
  Json j;
  j["mu"] = p.mu;
  j["isp_seconds"] = p.isp_seconds;
  j["g0"] = p.g0;
  j["thrust_max_newtons"] = p.thrust_max_newtons;
  j["length_unit_km"] = p.length_unit_km;
  j["time_unit_s"] = p.time_unit_s;
  j["mass_unit_kg"] = p.mass_unit_kg;
  j["mass_floor_kg"] = p.mass_floor_kg;
  j["rho_min"] = p.rho_min;
  j["flow_smoothing_newtons"] = p.flow_smoothing_newtons;
  return j;
}

void apply_json(const Json& j, SystemParams& p, const std::string& where) {
  Binder b(where);
  b.num("mu", p.mu);
  b.num("isp_seconds", p.isp_seconds);
  b.num("g0", p.g0);
  b.num("thrust_max_newtons", p.thrust_max_newtons);
  b.num("length_unit_km", p.length_unit_km);
  b.num("time_unit_s", p.time_unit_s);
  b.num("mass_unit_kg", p.mass_unit_kg);
  b.num("mass_floor_kg", p.mass_floor_kg);
  b.num("rho_min", p.rho_min);
  b.num("flow_smoothing_newtons", p.flow_smoothing_newtons);
  b.apply(j);
}

Json to_json(const SpiralConfig& s) {
  Json j;
  j["earth_radius_km"] = s.earth_radius_km;
  j["perigee_altitude_km"] = s.perigee_altitude_km;
  j["apogee_radius_km"] = s.apogee_radius_km;
  j["duration_days"] = s.duration_days;
  j["thrust_newtons"] = s.thrust_newtons;
  j["tol"] = s.tol;
  return j;
}

void apply_json(const Json& j, SpiralConfig& s, const std::string& where) {
  Binder b(where);
  b.num("earth_radius_km", s.earth_radius_km);
  b.num("perigee_altitude_km", s.perigee_altitude_km);
  b.num("apogee_radius_km", s.apogee_radius_km);
  b.num("duration_days", s.duration_days);
  b.num("thrust_newtons", s.thrust_newtons);
  b.num("tol", s.tol);
  b.apply(j);
}

Json to_json(const ProblemSpec& s) {
  Json j;
  j["variant"] = to_string(s.variant);
  j["alpha"] = s.alpha;
  j["n_segments"] = s.n_segments;
  j["tau_s_min"] = s.tau_s_min;
  j["tau_s_max"] = s.tau_s_max;
  j["tau_i_max"] = s.tau_i_max;
  j["tau_f_max"] = s.tau_f_max;
  j["t2_min"] = s.t2_min;
  j["t2_max"] = s.t2_max;
  j["fixed_t1_fraction"] = s.fixed_t1_fraction;
  j["fixed_t2"] = s.fixed_t2;
  j["fixed_e_pert"] = s.fixed_e_pert;
  j["initial_mass_kg"] = s.initial_mass_kg;
  j["eps_mag"] = s.eps_mag;
  j["branch_sign"] = s.branch_sign;
  j["flow_smoothing_newtons"] = s.flow_smoothing_newtons;
  j["spiral"] = to_json(s.spiral);
  j["params"] = to_json(s.params);
  return j;
}

void apply_json(const Json& j, ProblemSpec& s, const std::string& where) {
  Binder b(where);
  b.custom("variant", [&](const Json& v) {
    require(v.is_string(), ErrorCode::kParse, where + ".variant must be a string");
    try {
      s.variant = variant_from_string(v.get<std::string>());
    } catch (const Error& e) {
      fail(ErrorCode::kParse, where + ".variant: " + e.what());
    }
  });
  b.num("alpha", s.alpha);
  b.integer("n_segments", s.n_segments);
  b.num("tau_s_min", s.tau_s_min);
  b.num("tau_s_max", s.tau_s_max);
  b.num("tau_i_max", s.tau_i_max);
  b.num("tau_f_max", s.tau_f_max);
  b.num("t2_min", s.t2_min);
  b.num("t2_max", s.t2_max);
  b.num("fixed_t1_fraction", s.fixed_t1_fraction);
  b.num("fixed_t2", s.fixed_t2);
  b.num("fixed_e_pert", s.fixed_e_pert);
  b.num("initial_mass_kg", s.initial_mass_kg);
  b.num("eps_mag", s.eps_mag);
  b.integer("branch_sign", s.branch_sign);
  b.num("flow_smoothing_newtons", s.flow_smoothing_newtons);
  b.custom("spiral", [&](const Json& v) { apply_json(v, s.spiral, where + ".spiral"); });
  b.custom("params", [&](const Json& v) { apply_json(v, s.params, where + ".params"); });
  b.apply(j);
}

Json to_json(const SolverConfig& c) {
  Json j;
  j["max_wall_time_s"] = c.max_wall_time_s;
  j["max_outer_iterations"] = c.max_outer_iterations;
  j["max_inner_iterations"] = c.max_inner_iterations;
  j["max_total_iterations"] = c.max_total_iterations;
  j["tol_feas"] = c.tol_feas;
  j["tol_opt"] = c.tol_opt;
  j["rho_initial"] = c.rho_initial;
  j["rho_factor"] = c.rho_factor;
  j["rho_max"] = c.rho_max;
  j["feas_reduction"] = c.feas_reduction;
  j["inner_tol_initial"] = c.inner_tol_initial;
  j["integrator_tol"] = c.integrator_tol;
  j["secant_update"] = c.secant_update;
  return j;
}

void apply_json(const Json& j, SolverConfig& c, const std::string& where) {
  Binder b(where);
  b.num("max_wall_time_s", c.max_wall_time_s);
  b.integer("max_outer_iterations", c.max_outer_iterations);
  b.integer("max_inner_iterations", c.max_inner_iterations);
  b.integer("max_total_iterations", c.max_total_iterations);
  b.num("tol_feas", c.tol_feas);
  b.num("tol_opt", c.tol_opt);
  b.num("rho_initial", c.rho_initial);
  b.num("rho_factor", c.rho_factor);
  b.num("rho_max", c.rho_max);
  b.num("feas_reduction", c.feas_reduction);
  b.num("inner_tol_initial", c.inner_tol_initial);
  b.num("integrator_tol", c.integrator_tol);
  b.flag("secant_update", c.secant_update);
  b.apply(j);
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path + ": " + e.what());
  }
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::kIo, "cannot write " + tmp);
    out << text;
    out.flush();
    require(out.good(), ErrorCode::kIo, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::kIo, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string fingerprint(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return fingerprint(ss.str());
}

}  // namespace amgs
