#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

namespace ccvm::optim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Objective = std::function<double(const Vec&)>;

/// Evaluates f, mapping NumericalError and non-finite values to +inf.
double safe_eval(const Objective& f, const Vec& x);

/// Central differences with step h_i = rel_step * (1 + |x_i|); falls back to
/// a one-sided difference when one side is infinite.
Vec central_gradient(const Objective& f, const Vec& x, double fx, double rel_step);

/// Second differences of f with step h_i = rel_step * (1 + |x_i|).
Mat central_hessian(const Objective& f, const Vec& x, double fx, double rel_step);

struct BfgsOptions {
  double grad_tol = 1e-6;     // infinity norm
  int max_iter = 500;
  double rel_step = 1e-5;     // finite-difference gradient step
  double max_step = 1.0;      // infinity-norm cap on a trial step
  double armijo = 1e-4;
  int max_backtracks = 30;
  /// Stop when the relative decrease stays below this for 3 iterations.
  double stall_tol = 1e-12;
  std::function<void(int, const Vec&, double, double)> on_iteration;
};

enum class Status { converged, stalled, max_iterations, line_search_failed };

std::string to_string(Status s);

struct BfgsResult {
  Vec x;
  double f = 0.0;
  Vec gradient;
  int iterations = 0;
  int evaluations = 0;
  Status status = Status::max_iterations;
  std::vector<double> history;  // accepted objective values, starting at x0
};

/// Quasi-Newton minimization with finite-difference gradients and Armijo
/// backtracking. Accepted objective values never increase.
BfgsResult minimize_bfgs(const Objective& f, const Vec& x0, const BfgsOptions& opts = {});

}  // namespace ccvm::optim
