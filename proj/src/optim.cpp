#include "ccvm/optim.hpp"

#include <cmath>
#include <limits>

#include "ccvm/errors.hpp"

namespace ccvm::optim {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double step_for(double x, double rel) { return rel * (1.0 + std::abs(x)); }

}  // namespace

double safe_eval(const Objective& f, const Vec& x) {
  try {
    const double v = f(x);
    return std::isfinite(v) ? v : kInf;
  } catch (const NumericalError&) {
    return kInf;
  }
}

Vec central_gradient(const Objective& f, const Vec& x, double fx, double rel_step) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step_for(x[i], rel_step);
    Vec xp = x;
    Vec xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fp = safe_eval(f, xp);
    const double fm = safe_eval(f, xm);
    if (std::isfinite(fp) && std::isfinite(fm)) {
      g[i] = (fp - fm) / (2.0 * h);
    } else if (std::isfinite(fp)) {
      g[i] = (fp - fx) / h;
    } else if (std::isfinite(fm)) {
      g[i] = (fx - fm) / h;
    } else {
      throw NumericalError("objective undefined on both sides of coordinate " + std::to_string(i));
    }
  }
  return g;
}

Mat central_hessian(const Objective& f, const Vec& x, double fx, double rel_step) {
  const Eigen::Index n = x.size();
  Mat h(n, n);
  Vec steps(n);
  for (Eigen::Index i = 0; i < n; ++i) steps[i] = step_for(x[i], rel_step);
  auto at = [&](Eigen::Index i, double si, Eigen::Index j, double sj) {
    Vec y = x;
    y[i] += si * steps[i];
    if (j >= 0) y[j] += sj * steps[j];
    const double v = safe_eval(f, y);
    if (!std::isfinite(v)) throw NumericalError("objective undefined near the optimum");
    return v;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    h(i, i) = (at(i, 1, -1, 0) - 2.0 * fx + at(i, -1, -1, 0)) / (steps[i] * steps[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = (at(i, 1, j, 1) - at(i, 1, j, -1) - at(i, -1, j, 1) + at(i, -1, j, -1)) /
                       (4.0 * steps[i] * steps[j]);
      h(i, j) = h(j, i) = v;
    }
  }
  return h;
}

std::string to_string(Status s) {
  switch (s) {
    case Status::converged: return "converged";
    case Status::stalled: return "stalled";
    case Status::max_iterations: return "max_iterations";
    case Status::line_search_failed: return "line_search_failed";
  }
  return "unknown";
}

BfgsResult minimize_bfgs(const Objective& f, const Vec& x0, const BfgsOptions& opts) {
  const Eigen::Index n = x0.size();
  int evals = 0;
  auto eval = [&](const Vec& x) {
    ++evals;
    return safe_eval(f, x);
  };
  auto grad = [&](const Vec& x, double fx) {
    evals += static_cast<int>(2 * n);
    return central_gradient(f, x, fx, opts.rel_step);
  };

  BfgsResult res;
  res.x = x0;
  res.f = eval(x0);
  if (!std::isfinite(res.f)) throw NumericalError("objective is not finite at the initial point");
  res.gradient = grad(res.x, res.f);
  res.history.push_back(res.f);

  Mat hinv = Mat::Identity(n, n);
  bool scaled = false;
  int small_steps = 0;
  res.status = Status::max_iterations;

  for (int it = 0; it < opts.max_iter; ++it) {
    if (res.gradient.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      res.status = Status::converged;
      break;
    }
    bool accepted = false;
    Vec x_new;
    double f_new = kInf;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Vec p = -hinv * res.gradient;
      double slope = res.gradient.dot(p);
      if (!(slope < 0.0)) {
        hinv.setIdentity();
        p = -res.gradient;
        slope = res.gradient.dot(p);
      }
      const double pmax = p.lpNorm<Eigen::Infinity>();
      if (pmax > opts.max_step) {
        p *= opts.max_step / pmax;
        slope = res.gradient.dot(p);
      }
      double alpha = 1.0;
      for (int bt = 0; bt < opts.max_backtracks; ++bt) {
        x_new = res.x + alpha * p;
        f_new = eval(x_new);
        if (std::isfinite(f_new) && f_new <= res.f + opts.armijo * alpha * slope) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        if (hinv.isIdentity(0.0) && attempt == 0) break;
        hinv.setIdentity();
        scaled = false;
      }
    }
    if (!accepted) {
      res.status = Status::line_search_failed;
      break;
    }

    const Vec g_new = grad(x_new, f_new);
    const Vec s = x_new - res.x;
    const Vec y = g_new - res.gradient;
    const double ys = y.dot(s);
    const double decrease = res.f - f_new;
    res.x = x_new;
    res.f = f_new;
    res.gradient = g_new;
    res.iterations = it + 1;
    res.history.push_back(f_new);
    if (opts.on_iteration) opts.on_iteration(res.iterations, res.x, res.f, res.gradient.lpNorm<Eigen::Infinity>());

    if (ys > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        hinv = (ys / y.dot(y)) * Mat::Identity(n, n);
        scaled = true;
      }
      const double rho = 1.0 / ys;
      const Mat i_n = Mat::Identity(n, n);
      hinv = (i_n - rho * s * y.transpose()) * hinv * (i_n - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }

    small_steps = decrease <= opts.stall_tol * (1.0 + std::abs(res.f)) ? small_steps + 1 : 0;
    if (small_steps >= 3) {
      res.status = res.gradient.lpNorm<Eigen::Infinity>() < opts.grad_tol ? Status::converged
                                                                          : Status::stalled;
      break;
    }
  }
  if (res.status == Status::max_iterations && res.gradient.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
    res.status = Status::converged;
  }
  res.evaluations = evals;
  return res;
}

}  // namespace ccvm::optim
