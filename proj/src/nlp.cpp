#include "amgs/nlp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "amgs/error.hpp"

namespace amgs {

namespace {

using Clock = std::chrono::steady_clock;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Affine map x = o + s .* z onto a unit-scaled box.
struct Scaling {
  VectorXd o, s, lo, hi;

  explicit Scaling(const NlpFunctions& nlp) {
    const int n = nlp.n;
    o = VectorXd::Zero(n);
    s = VectorXd::Ones(n);
    lo = VectorXd::Constant(n, -kInf);
    hi = VectorXd::Constant(n, kInf);
    for (int i = 0; i < n; ++i) {
      const double l = nlp.lower[i], u = nlp.upper[i];
      if (std::isfinite(l) && std::isfinite(u) && u > l) s[i] = u - l;
      if (std::isfinite(l)) o[i] = l;
      lo[i] = std::isfinite(l) ? (l - o[i]) / s[i] : -kInf;
      hi[i] = std::isfinite(u) ? (u - o[i]) / s[i] : kInf;
    }
  }

  VectorXd x(const VectorXd& z) const { return o + s.cwiseProduct(z); }
  VectorXd z(const VectorXd& x) const { return (x - o).cwiseQuotient(s); }
  VectorXd project(const VectorXd& z) const { return z.cwiseMax(lo).cwiseMin(hi); }
};

struct Multipliers {
  VectorXd lam, mu;
  double rho;
};

double augmented_value(const NlpValues& v, const Multipliers& m) {
  double val = v.f + m.lam.dot(v.c) + 0.5 * m.rho * v.c.squaredNorm();
  for (int k = 0; k < v.g.size(); ++k) {
    const double t = std::max(0.0, m.mu[k] + m.rho * v.g[k]);
    val += (t * t - m.mu[k] * m.mu[k]) / (2.0 * m.rho);
  }
  return val;
}

// Derivatives in z coordinates.
NlpDerivatives to_z(NlpDerivatives d, const Scaling& sc) {
  d.grad = d.grad.cwiseProduct(sc.s);
  d.jc = d.jc * sc.s.asDiagonal();
  d.jg = d.jg * sc.s.asDiagonal();
  if (d.g_hess_diag.size() > 0) d.g_hess_diag = d.g_hess_diag * sc.s.cwiseAbs2().asDiagonal();
  return d;
}

VectorXd augmented_gradient(const NlpDerivatives& d, const Multipliers& m) {
  VectorXd grad = d.grad;
  if (d.v.c.size() > 0) grad += d.jc.transpose() * (m.lam + m.rho * d.v.c);
  if (d.v.g.size() > 0) {
    const VectorXd t = (m.mu + m.rho * d.v.g).cwiseMax(0.0);
    grad += d.jg.transpose() * t;
  }
  return grad;
}

double projected_gradient_norm(const VectorXd& z, const VectorXd& grad, const Scaling& sc) {
  if (z.size() == 0) return 0.0;
  return (sc.project(z - grad) - z).cwiseAbs().maxCoeff();
}

double box_violation(const NlpFunctions& nlp, const VectorXd& x) {
  double v = 0.0;
  for (int i = 0; i < nlp.n; ++i) v = std::max({v, nlp.lower[i] - x[i], x[i] - nlp.upper[i]});
  return v;
}

bool finite_values(const NlpValues& v) { return std::isfinite(v.f) && v.c.allFinite() && v.g.allFinite(); }

}  // namespace

void SolverConfig::validate() const {
  require(max_wall_time_s > 0.0, ErrorCode::kInvalidArgument, "max_wall_time_s must be positive");
  require(tol_feas > 0.0 && tol_opt > 0.0, ErrorCode::kInvalidArgument, "tolerances must be positive");
  require(max_outer_iterations > 0 && max_inner_iterations > 0 && max_total_iterations > 0,
          ErrorCode::kInvalidArgument, "iteration caps must be positive");
  require(rho_initial > 0.0 && rho_factor > 1.0 && rho_max >= rho_initial, ErrorCode::kInvalidArgument,
          "bad penalty schedule");
  require(feas_reduction > 0.0 && feas_reduction < 1.0, ErrorCode::kInvalidArgument,
          "feas_reduction must lie in (0, 1)");
  require(inner_tol_initial > 0.0, ErrorCode::kInvalidArgument, "inner_tol_initial must be positive");
  require(integrator_tol >= 1e-13 && integrator_tol <= 1e-6, ErrorCode::kInvalidArgument,
          "integrator_tol must lie in [1e-13, 1e-6]");
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kFailed: return "failed";
    case SolveStatus::kFeasible: return "feasible";
    case SolveStatus::kOptimal: return "optimal";
  }
  return "failed";
}

SolveStatus status_from_string(const std::string& s) {
  if (s == "failed") return SolveStatus::kFailed;
  if (s == "feasible") return SolveStatus::kFeasible;
  if (s == "optimal") return SolveStatus::kOptimal;
  fail(ErrorCode::kParse, "unknown solve status '" + s + "'");
}

double feasibility(const NlpFunctions& nlp, const VectorXd& x, const NlpValues& v) {
  double feas = box_violation(nlp, x);
  if (v.c.size() > 0) feas = std::max(feas, v.c.cwiseAbs().maxCoeff());
  if (v.g.size() > 0) feas = std::max(feas, v.g.maxCoeff());
  return feas;
}

SolveStatus classify(const SolveOutcome& o, const SolverConfig& cfg) {
  if (!(o.feas_residual <= cfg.tol_feas)) return SolveStatus::kFailed;
  if (o.kkt_residual <= cfg.tol_opt) return SolveStatus::kOptimal;
  return SolveStatus::kFeasible;
}

SolveOutcome solve(const NlpFunctions& nlp, const VectorXd& x0, const SolverConfig& cfg) {
  cfg.validate();
  require(x0.size() == nlp.n, ErrorCode::kInvalidArgument, "x0 has the wrong dimension");
  const auto t_start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - t_start).count(); };

  SolveOutcome out;
  out.x_final = x0;
  if (!x0.allFinite()) {
    out.reason = "non-finite initial guess";
    out.feas_residual = kInf;
    out.kkt_residual = kInf;
    out.wall_time_s = elapsed();
    return out;
  }

  const Scaling sc(nlp);
  VectorXd z = sc.project(sc.z(x0));
  const int n = nlp.n;

  Multipliers m{VectorXd::Zero(nlp.n_eq), VectorXd::Zero(nlp.n_ineq), cfg.rho_initial};

  NlpDerivatives d;
  auto derivs_at = [&](const VectorXd& zz) {
    NlpDerivatives r = to_z(nlp.derivatives(sc.x(zz)), sc);
    require(finite_values(r.v) && r.grad.allFinite() && r.jc.allFinite() && r.jg.allFinite(), ErrorCode::kNonFinite,
            "non-finite derivatives");
    return r;
  };

  try {
    d = derivs_at(z);
  } catch (const Error& e) {
    out.x_final = sc.x(z);
    out.reason = std::string("evaluation failure at x0: ") + e.what();
    out.feas_residual = kInf;
    out.kkt_residual = kInf;
    out.wall_time_s = elapsed();
    return out;
  }

  MatrixXd B = MatrixXd::Identity(n, n) * 1e-2;
  double damping = 1e-4;
  // A feasible start gives no reference to shrink from; the first outer step
  // then keeps the penalty and updates the multipliers.
  double prev_feas = feasibility(nlp, sc.x(z), d.v);
  if (prev_feas <= cfg.tol_feas) prev_feas = kInf;
  double inner_tol = cfg.inner_tol_initial;
  double pg = kInf;
  int total_iters = 0;
  bool stop = false;

  for (int outer = 1; outer <= cfg.max_outer_iterations && !stop; ++outer) {
    int inner_iters = 0;
    damping = std::min(damping, 1e-4);
    double la = augmented_value(d.v, m);
    VectorXd grad = augmented_gradient(d, m);

    while (true) {
      pg = projected_gradient_norm(z, grad, sc);
      if (pg <= inner_tol) break;
      if (inner_iters >= cfg.max_inner_iterations) break;
      if (total_iters >= cfg.max_total_iterations) {
        out.reason = "iteration cap";
        stop = true;
        break;
      }
      if (elapsed() > cfg.max_wall_time_s) {
        out.reason = "wall-time cap";
        stop = true;
        break;
      }

      // Model Hessian: secant part plus Gauss-Newton penalty terms.
      MatrixXd H = B;
      if (nlp.n_eq > 0) H.noalias() += m.rho * d.jc.transpose() * d.jc;
      for (int k = 0; k < nlp.n_ineq; ++k) {
        const double t = m.mu[k] + m.rho * d.v.g[k];
        if (t <= 0.0) continue;
        H.noalias() += m.rho * d.jg.row(k).transpose() * d.jg.row(k);
        if (d.g_hess_diag.size() > 0) H.diagonal() += t * d.g_hess_diag.row(k).transpose();
      }

      const double eps_active = std::min(1e-3, pg);
      std::vector<int> free_idx;
      std::vector<char> active(n, 0);
      for (int i = 0; i < n; ++i) {
        if ((z[i] <= sc.lo[i] + eps_active && grad[i] > 0.0) || (z[i] >= sc.hi[i] - eps_active && grad[i] < 0.0))
          active[i] = 1;
        else
          free_idx.push_back(i);
      }

      bool accepted = false;
      VectorXd z_new;
      NlpValues v_new;
      double la_new = la;
      for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
        VectorXd dir = -grad;
        const int nf = static_cast<int>(free_idx.size());
        if (nf > 0) {
          MatrixXd Hf(nf, nf);
          VectorXd gf(nf);
          for (int a = 0; a < nf; ++a) {
            gf[a] = grad[free_idx[a]];
            for (int b = 0; b < nf; ++b) Hf(a, b) = H(free_idx[a], free_idx[b]);
          }
          Hf.diagonal().array() += damping;
          Eigen::LDLT<MatrixXd> ldlt(Hf);
          VectorXd df = ldlt.solve(-gf);
          if (ldlt.info() != Eigen::Success || !df.allFinite() || df.dot(gf) >= 0.0) {
            damping = std::min(damping * 10.0, 1e12);
            continue;
          }
          for (int a = 0; a < nf; ++a) dir[free_idx[a]] = df[a];
        }
        double step = 1.0;
        for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
          const VectorXd zt = sc.project(z + step * dir);
          const double decrease = grad.dot(zt - z);
          if ((zt - z).cwiseAbs().maxCoeff() < 1e-16) break;
          NlpValues vt;
          try {
            vt = nlp.values(sc.x(zt));
          } catch (const Error&) {
            continue;
          }
          if (!finite_values(vt)) continue;
          const double lt = augmented_value(vt, m);
          // Adaptive propagation makes the merit noisy at the integrator tolerance.
          const double noise = 100.0 * cfg.integrator_tol * (1.0 + std::abs(la));
          if (lt <= la + 1e-4 * std::min(decrease, 0.0) + noise && (decrease < 0.0 || lt < la)) {
            z_new = zt;
            v_new = vt;
            la_new = lt;
            accepted = true;
            break;
          }
        }
        if (accepted) {
          damping = step == 1.0 ? std::max(damping * 0.3, 1e-12) : std::min(damping * 3.0, 1e12);
        } else {
          damping = std::min(damping * 10.0, 1e12);
        }
      }
      if (!accepted) break;  // inner stall; let the outer loop adjust the penalty

      ++inner_iters;
      ++total_iters;
      NlpDerivatives d_new;
      try {
        d_new = derivs_at(z_new);
      } catch (const Error& e) {
        out.reason = std::string("derivative failure: ") + e.what();
        stop = true;
        break;
      }

      if (cfg.secant_update) {
        // Damped BFGS on the curvature of f + lam_hat' c.
        const VectorXd lam_hat = m.lam + m.rho * d_new.v.c;
        const VectorXd s = z_new - z;
        VectorXd y = d_new.grad - d.grad;
        if (nlp.n_eq > 0) y += (d_new.jc - d.jc).transpose() * lam_hat;
        const VectorXd Bs = B * s;
        const double sBs = s.dot(Bs);
        double sy = s.dot(y);
        if (sBs > 1e-16) {
          if (sy < 0.2 * sBs) {
            const double theta = 0.8 * sBs / (sBs - sy);
            y = theta * y + (1.0 - theta) * Bs;
            sy = s.dot(y);
          }
          if (sy > 1e-16) B += y * y.transpose() / sy - Bs * Bs.transpose() / sBs;
        } else if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
          B += y * y.transpose() / sy;
        }
      }
      z = z_new;
      d = std::move(d_new);
      la = augmented_value(d.v, m);
      (void)la_new;
      grad = augmented_gradient(d, m);
    }

    const double feas = feasibility(nlp, sc.x(z), d.v);
    const VectorXd lam_hat = m.lam + m.rho * d.v.c;
    const VectorXd mu_hat = (m.mu + m.rho * d.v.g).cwiseMax(0.0);
    double comp = 0.0;
    for (int k = 0; k < nlp.n_ineq; ++k) comp = std::max(comp, std::min(-d.v.g[k], mu_hat[k]));
    const double kkt = std::max(projected_gradient_norm(z, augmented_gradient(d, m), sc), comp);

    OuterRecord rec;
    rec.outer = outer;
    rec.inner_iterations = inner_iters;
    rec.feas = feas;
    rec.kkt = kkt;
    rec.objective = d.v.f;

    out.feas_residual = feas;
    out.kkt_residual = kkt;

    if (feas <= cfg.tol_feas && kkt <= cfg.tol_opt) {
      rec.rho = m.rho;
      out.trace.push_back(rec);
      out.reason = "converged";
      break;
    }
    const bool keep = feas <= cfg.feas_reduction * prev_feas || (feas <= cfg.tol_feas && feas <= prev_feas);
    if (keep) {
      m.lam = lam_hat;
      m.mu = mu_hat;
      prev_feas = feas;
      inner_tol = std::max(inner_tol * 0.1, cfg.tol_opt);
    } else {
      m.rho *= cfg.rho_factor;
      rec.rho_increased = true;
      prev_feas = std::min(prev_feas, feas);
    }
    rec.rho = m.rho;
    out.trace.push_back(rec);
    if (m.rho > cfg.rho_max) {
      out.reason = "penalty cap";
      break;
    }
    if (outer == cfg.max_outer_iterations && !stop) out.reason = "outer iteration cap";
  }

  out.x_final = sc.x(z);
  out.objective = d.v.f;
  out.iterations = total_iters;
  out.status = classify(out, cfg);
  out.wall_time_s = elapsed();
  return out;
}

NlpFunctions make_nlp(const Problem& problem, double tol) {
  NlpFunctions nlp;
  nlp.n = problem.dim();
  nlp.n_eq = 7;
  nlp.n_ineq = problem.spec().n_segments;
  nlp.lower = problem.bounds().lower;
  nlp.upper = problem.bounds().upper;
  const double mi = problem.spec().initial_mass_kg;
  const double tmax2 = std::pow(problem.spec().params.thrust_max_newtons, 2);
  const Layout L = problem.layout();

  auto ineq = [=](const VectorXd& x) {
    VectorXd g(L.n);
    for (int k = 0; k < L.n; ++k)
      g[k] = (x[L.u(k, 0)] * x[L.u(k, 0)] + x[L.u(k, 1)] * x[L.u(k, 1)] + x[L.u(k, 2)] * x[L.u(k, 2)]) / tmax2 - 1.0;
    return g;
  };
  const Problem* pr = &problem;
  nlp.values = [=](const VectorXd& x) {
    const EvalReport r = pr->evaluate(x, tol);
    NlpValues v;
    v.f = r.cost;
    v.c = r.c;
    v.c[6] /= mi;
    v.g = ineq(x);
    return v;
  };
  nlp.derivatives = [=](const VectorXd& x) {
    const Derivatives dd = pr->derivatives(x, tol);
    NlpDerivatives d;
    d.v.f = dd.cost;
    d.v.c = dd.c;
    d.v.c[6] /= mi;
    d.v.g = ineq(x);
    d.grad = dd.cost_gradient;
    d.jc = dd.jc;
    d.jc.row(6) /= mi;
    d.jg = MatrixXd::Zero(L.n, nlp.n);
    d.g_hess_diag = MatrixXd::Zero(L.n, nlp.n);
    for (int k = 0; k < L.n; ++k)
      for (int a = 0; a < 3; ++a) {
        d.jg(k, L.u(k, a)) = 2.0 * x[L.u(k, a)] / tmax2;
        d.g_hess_diag(k, L.u(k, a)) = 2.0 / tmax2;
      }
    return d;
  };
  return nlp;
}

SolveOutcome solve(const Problem& problem, const VectorXd& x0, const SolverConfig& cfg) {
  return solve(make_nlp(problem, cfg.integrator_tol), x0, cfg);
}

double transcription_feasibility(const Problem& problem, const VectorXd& x, double tol) {
  const NlpFunctions nlp = make_nlp(problem, tol);
  return feasibility(nlp, x, nlp.values(x));
}

std::string outcome_to_json(const SolveOutcome& o, std::uint64_t seed, const std::string& method) {
  nlohmann::json j;
  j["status"] = to_string(o.status);
  j["x_final"] = std::vector<double>(o.x_final.data(), o.x_final.data() + o.x_final.size());
  j["objective"] = o.objective;
  j["kkt_residual"] = o.kkt_residual;
  j["feas_residual"] = o.feas_residual;
  j["iterations"] = o.iterations;
  j["wall_time_s"] = o.wall_time_s;
  j["reason"] = o.reason;
  j["seed"] = seed;
  j["method"] = method;
  return j.dump();
}

}  // namespace amgs
