#pragma once

// Derivative-free minimizers for noisy-but-smooth objectives. Non-finite
// objective values are treated as rejected points, never as minima.

#include "epglmm/types.hpp"

#include <functional>
#include <string>

namespace epglmm {

using Objective = std::function<double(const Vector&)>;

struct OptimResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

struct NelderMeadOptions {
  double initial_edge = 0.1;
  int evals_per_param = 200;
  double reltol = 1e-8;
};

OptimResult nelder_mead(const Objective& f, const Vector& x0, const NelderMeadOptions& opts = {});

struct BfgsOptions {
  double reltol = 1e-8;
  double gtol = 1e-5;
  int max_iter = 500;
};

/// Quasi-Newton descent with central-difference gradients and a
/// backtracking line search.
OptimResult bfgs(const Objective& f, const Vector& x0, const BfgsOptions& opts = {});

/// Per-coordinate step cbrt(eps) * (1 + |x_k|).
Vector central_gradient(const Objective& f, const Vector& x, int* evaluations = nullptr);

/// Symmetric second-difference Hessian with step eps^(1/4) * (1 + |x_k|).
Matrix central_hessian(const Objective& f, const Vector& x);

}  // namespace epglmm
