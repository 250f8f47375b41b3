#include "fairsyn/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace fairsyn {

namespace {

// Minimizer of the cubic through (x1, f1, g1), (x2, f2, g2), clamped to
// [bound_lo, bound_hi]; falls back to bisection when the cubic has no
// interior minimum.
double cubic_interpolate(double x1, double f1, double g1, double x2, double f2, double g2,
                         double bound_lo, double bound_hi) {
  const double d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
  const double d2_sq = d1 * d1 - g1 * g2;
  if (d2_sq >= 0.0) {
    const double d2 = std::sqrt(d2_sq);
    double min_pos;
    if (x1 <= x2) {
      min_pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2));
    } else {
      min_pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2));
    }
    if (std::isfinite(min_pos)) return std::clamp(min_pos, bound_lo, bound_hi);
  }
  return 0.5 * (bound_lo + bound_hi);
}

struct LineSearchResult {
  bool ok = false;
  double step = 0.0;
  double value = 0.0;
  Eigen::VectorXd point;
  Eigen::VectorXd gradient;
  int evals = 0;
};

// Strong Wolfe line search (bracket + zoom). phi(t) = f(x + t d).
LineSearchResult strong_wolfe(const Objective& f, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& d, double f0, double dphi0, double t,
                              double c1, double c2) {
  constexpr int kMaxEvals = 30;
  constexpr double kStepTiny = 1e-20;
  // Near the minimum the required Armijo decrease (~c1 t |dphi0|) falls below
  // the resolution of double at |f0|; comparisons there are noise. Steps whose
  // value change is inside this band are judged by the curvature condition
  // alone, which lives in gradient space and stays meaningful.
  const double f_noise = 1e-13 * std::abs(f0) + 1e-300;

  LineSearchResult res;
  Eigen::VectorXd g_new(x.size());

  auto eval = [&](double step, double& val, double& dphi) {
    res.point = x + step * d;
    val = f(res.point, g_new);
    dphi = g_new.dot(d);
    ++res.evals;
  };

  auto sufficient_decrease = [&](double step, double val) {
    return val <= f0 + c1 * step * dphi0 + f_noise;
  };
  auto wolfe_ok = [&](double step, double val, double dphi) {
    return sufficient_decrease(step, val) && std::abs(dphi) <= -c2 * dphi0;
  };

  double f_new = 0.0, dphi_new = 0.0;
  eval(t, f_new, dphi_new);

  // Bracketing phase: grow t until the minimum is straddled or Wolfe holds.
  double t_prev = 0.0, f_prev = f0, dphi_prev = dphi0;
  double lo_t = 0.0, lo_f = 0.0, lo_g = 0.0, hi_t = 0.0, hi_f = 0.0, hi_g = 0.0;
  bool bracketed = false;
  while (res.evals < kMaxEvals) {
    if (!sufficient_decrease(t, f_new) || (res.evals > 1 && f_new >= f_prev)) {
      lo_t = t_prev; lo_f = f_prev; lo_g = dphi_prev;
      hi_t = t; hi_f = f_new; hi_g = dphi_new;
      bracketed = true;
      break;
    }
    if (std::abs(dphi_new) <= -c2 * dphi0) {
      res.ok = true;
      res.step = t;
      res.value = f_new;
      res.gradient = g_new;
      return res;
    }
    if (dphi_new >= 0.0) {
      lo_t = t; lo_f = f_new; lo_g = dphi_new;
      hi_t = t_prev; hi_f = f_prev; hi_g = dphi_prev;
      bracketed = true;
      break;
    }
    const double t_next =
        cubic_interpolate(t_prev, f_prev, dphi_prev, t, f_new, dphi_new,
                          t + 0.01 * (t - t_prev), 10.0 * t);
    t_prev = t; f_prev = f_new; dphi_prev = dphi_new;
    t = t_next;
    eval(t, f_new, dphi_new);
  }
  if (!bracketed) return res;

  // Zoom phase: shrink [lo, hi] around a Wolfe point. lo always holds the
  // lower function value.
  if (hi_f < lo_f) {
    std::swap(lo_t, hi_t); std::swap(lo_f, hi_f); std::swap(lo_g, hi_g);
  }
  bool progress = true;
  while (res.evals < kMaxEvals) {
    const double width = std::abs(hi_t - lo_t);
    if (width < kStepTiny * std::max(1.0, std::abs(lo_t))) break;
    double t_mid = cubic_interpolate(lo_t, lo_f, lo_g, hi_t, hi_f, hi_g, std::min(lo_t, hi_t),
                                     std::max(lo_t, hi_t));
    // Guard against stalling at the bracket edge.
    const double margin = 0.1 * width;
    if (std::min(std::abs(t_mid - lo_t), std::abs(t_mid - hi_t)) < margin) {
      if (!progress) {
        t_mid = 0.5 * (lo_t + hi_t);
        progress = true;
      } else {
        progress = false;
        t_mid = std::clamp(t_mid, std::min(lo_t, hi_t) + margin, std::max(lo_t, hi_t) - margin);
      }
    } else {
      progress = true;
    }

    eval(t_mid, f_new, dphi_new);
    if (wolfe_ok(t_mid, f_new, dphi_new)) {
      res.ok = true;
      res.step = t_mid;
      res.value = f_new;
      res.gradient = g_new;
      return res;
    }
    if (!sufficient_decrease(t_mid, f_new) || f_new >= lo_f) {
      hi_t = t_mid; hi_f = f_new; hi_g = dphi_new;
    } else {
      if (dphi_new * (hi_t - lo_t) >= 0.0) {
        hi_t = lo_t; hi_f = lo_f; hi_g = lo_g;
      }
      lo_t = t_mid; lo_f = f_new; lo_g = dphi_new;
    }
  }
  return res;
}

}  // namespace

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::IterationLimit: return "iteration_limit";
    case SolveStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

std::pair<Eigen::VectorXd, SolveRecord> lbfgs_minimize(const Objective& f, Eigen::VectorXd start,
                                                       const InnerSolveConfig& cfg) {
  if (!(cfg.wolfe_c1 > 0.0 && cfg.wolfe_c1 < cfg.wolfe_c2 && cfg.wolfe_c2 < 1.0)) {
    throw std::invalid_argument("lbfgs: need 0 < c1 < c2 < 1");
  }
  if (cfg.gradient_tolerance <= 0.0 || cfg.max_iterations < 1 || cfg.lbfgs_memory < 1) {
    throw std::invalid_argument("lbfgs: invalid config");
  }

  SolveRecord rec;
  Eigen::VectorXd x = std::move(start);
  Eigen::VectorXd g(x.size());
  double fx = f(x, g);
  ++rec.function_evals;
  if (!std::isfinite(fx)) throw std::runtime_error("lbfgs: objective not finite at start");

  Eigen::VectorXd best_x = x;
  double best_f = fx;

  rec.final_gradient_norm = g.norm();
  if (rec.final_gradient_norm <= cfg.gradient_tolerance) {
    return {x, rec};  // already optimal, zero iterations
  }

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd d(x.size()), q(x.size());
  std::vector<double> alpha(cfg.lbfgs_memory);

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    // Two-loop recursion for d = -H_approx * g.
    q = g;
    const int m = static_cast<int>(s_hist.size());
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) {
      const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    d = -q;

    double dphi0 = d.dot(g);
    bool steepest = false;
    if (dphi0 >= 0.0) {
      // Not a descent direction; drop the memory and fall back to steepest descent.
      s_hist.clear(); y_hist.clear(); rho_hist.clear();
      d = -g;
      dphi0 = -g.squaredNorm();
      steepest = true;
    }

    const double t0 = iter == 1 ? std::min(1.0, 1.0 / g.lpNorm<1>()) : 1.0;
    LineSearchResult ls = strong_wolfe(f, x, d, fx, dphi0, t0, cfg.wolfe_c1, cfg.wolfe_c2);
    rec.function_evals += ls.evals;
    if (!ls.ok) {
      ++rec.wolfe_failures;
      if (!steepest) {
        // One retry from the same point along steepest descent.
        s_hist.clear(); y_hist.clear(); rho_hist.clear();
        d = -g;
        dphi0 = -g.squaredNorm();
        ls = strong_wolfe(f, x, d, fx, dphi0, std::min(1.0, 1.0 / g.lpNorm<1>()), cfg.wolfe_c1,
                          cfg.wolfe_c2);
        rec.function_evals += ls.evals;
      }
      if (!ls.ok) {
        rec.status = SolveStatus::LineSearchFailed;
        rec.iterations = iter;
        rec.final_gradient_norm = g.norm();
        return {best_x, rec};
      }
    }

    const Eigen::VectorXd step = ls.point - x;
    const Eigen::VectorXd ygrad = ls.gradient - g;
    const double sy = step.dot(ygrad);
    if (sy > 1e-10 * step.norm() * ygrad.norm()) {
      if (static_cast<int>(s_hist.size()) == cfg.lbfgs_memory) {
        s_hist.pop_front(); y_hist.pop_front(); rho_hist.pop_front();
      }
      s_hist.push_back(step);
      y_hist.push_back(ygrad);
      rho_hist.push_back(1.0 / sy);
    }

    x = ls.point;
    fx = ls.value;
    g = ls.gradient;
    rec.iterations = iter;
    if (fx < best_f) {
      best_f = fx;
      best_x = x;
    }

    rec.final_gradient_norm = g.norm();
    if (rec.final_gradient_norm <= cfg.gradient_tolerance) {
      rec.status = SolveStatus::Converged;
      return {x, rec};
    }
  }

  rec.status = SolveStatus::IterationLimit;
  return {fx <= best_f ? x : best_x, rec};
}

}  // namespace fairsyn
