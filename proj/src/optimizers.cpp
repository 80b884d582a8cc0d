#include "epglmm/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace epglmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Non-finite values rank as +inf so that rejected points are never kept.
double guarded(const Objective& f, const Vector& x, int& evals) {
  ++evals;
  const double v = f(x);
  return std::isfinite(v) ? v : kInf;
}

bool small_change(double prev, double next, double reltol) {
  return std::abs(prev - next) <= reltol * (std::abs(prev) + reltol);
}

}  // namespace

OptimResult nelder_mead(const Objective& f, const Vector& x0, const NelderMeadOptions& opts) {
  const int p = static_cast<int>(x0.size());
  const int budget = opts.evals_per_param * std::max(p, 1);
  OptimResult res;
  std::vector<Vector> simplex(p + 1, x0);
  std::vector<double> values(p + 1);
  for (int k = 0; k < p; ++k) simplex[k + 1][k] += opts.initial_edge;
  for (int k = 0; k <= p; ++k) values[k] = guarded(f, simplex[k], res.evaluations);

  std::vector<int> order(p + 1);
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    const int best = order.front();
    const int worst = order.back();
    const int second = order[p - 1 >= 0 ? p - 1 : 0];
    if (std::isfinite(values[worst]) && small_change(values[best], values[worst], opts.reltol)) {
      res.converged = true;
      res.message = "simplex collapsed";
      break;
    }
    if (res.evaluations >= budget) {
      res.message = "evaluation budget exhausted";
      break;
    }
    ++res.iterations;

    Vector centroid = Vector::Zero(p);
    for (int k = 0; k <= p; ++k)
      if (k != worst) centroid += simplex[k];
    centroid /= p;

    const Vector reflected = centroid + (centroid - simplex[worst]);
    const double f_r = guarded(f, reflected, res.evaluations);
    if (f_r < values[best]) {
      const Vector expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double f_e = guarded(f, expanded, res.evaluations);
      if (f_e < f_r) {
        simplex[worst] = expanded;
        values[worst] = f_e;
      } else {
        simplex[worst] = reflected;
        values[worst] = f_r;
      }
      continue;
    }
    if (f_r < values[second]) {
      simplex[worst] = reflected;
      values[worst] = f_r;
      continue;
    }
    // Contraction, outside or inside depending on whether reflection helped.
    const bool outside = f_r < values[worst];
    const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                      : Vector(centroid + 0.5 * (simplex[worst] - centroid));
    const double f_c = guarded(f, contracted, res.evaluations);
    if (f_c < std::min(f_r, values[worst])) {
      simplex[worst] = contracted;
      values[worst] = f_c;
      continue;
    }
    for (int k = 0; k <= p; ++k) {
      if (k == best) continue;
      simplex[k] = simplex[best] + 0.5 * (simplex[k] - simplex[best]);
      values[k] = guarded(f, simplex[k], res.evaluations);
    }
  }
  const auto it = std::min_element(values.begin(), values.end());
  res.x = simplex[static_cast<std::size_t>(it - values.begin())];
  res.value = *it;
  return res;
}

Vector central_gradient(const Objective& f, const Vector& x, int* evaluations) {
  static const double kStep = std::cbrt(std::numeric_limits<double>::epsilon());
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = kStep * (1.0 + std::abs(x[k]));
    probe[k] = x[k] + h;
    const double up = f(probe);
    probe[k] = x[k] - h;
    const double down = f(probe);
    probe[k] = x[k];
    g[k] = (up - down) / ((x[k] + h) - (x[k] - h));
  }
  if (evaluations != nullptr) *evaluations += static_cast<int>(2 * x.size());
  return g;
}

Matrix central_hessian(const Objective& f, const Vector& x) {
  static const double kStep = std::pow(std::numeric_limits<double>::epsilon(), 0.25);
  const Eigen::Index p = x.size();
  Vector h(p);
  for (Eigen::Index k = 0; k < p; ++k) h[k] = kStep * (1.0 + std::abs(x[k]));
  const double f0 = f(x);
  Matrix hess(p, p);
  Vector probe = x;
  for (Eigen::Index i = 0; i < p; ++i) {
    probe[i] = x[i] + h[i];
    const double up = f(probe);
    probe[i] = x[i] - h[i];
    const double down = f(probe);
    probe[i] = x[i];
    hess(i, i) = (up - 2.0 * f0 + down) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      double acc = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          probe[i] = x[i] + si * h[i];
          probe[j] = x[j] + sj * h[j];
          acc += si * sj * f(probe);
        }
      }
      probe[i] = x[i];
      probe[j] = x[j];
      hess(i, j) = hess(j, i) = acc / (4.0 * h[i] * h[j]);
    }
  }
  return hess;
}

OptimResult bfgs(const Objective& f, const Vector& x0, const BfgsOptions& opts) {
  const Eigen::Index p = x0.size();
  OptimResult res;
  res.x = x0;
  res.value = guarded(f, x0, res.evaluations);
  if (!std::isfinite(res.value)) {
    res.message = "objective not finite at the initial point";
    return res;
  }
  Vector g = central_gradient(f, res.x, &res.evaluations);
  Matrix inv_h = Matrix::Identity(p, p);
  bool fresh_metric = true;

  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    if (!g.allFinite()) {
      res.message = "gradient not finite";
      return res;
    }
    if (g.cwiseAbs().maxCoeff() < opts.gtol) {
      res.converged = true;
      res.message = "gradient below tolerance";
      return res;
    }
    Vector dir = -inv_h * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      inv_h.setIdentity();
      fresh_metric = true;
      dir = -g;
      slope = -g.squaredNorm();
    }
    // Backtracking (Armijo) along dir.
    double step = 1.0;
    Vector next;
    double f_next = kInf;
    bool accepted = false;
    for (int k = 0; k < 40; ++k) {
      next = res.x + step * dir;
      f_next = guarded(f, next, res.evaluations);
      if (f_next <= res.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.2;
    }
    if (!accepted) {
      if (!fresh_metric) {
        inv_h.setIdentity();
        fresh_metric = true;
        continue;
      }
      // No descent from a fresh metric: the objective's noise floor has been
      // reached. Accept only if the gradient is already near tolerance.
      res.converged = g.cwiseAbs().maxCoeff() < 10.0 * opts.gtol;
      res.message = "line search failed";
      return res;
    }
    const Vector g_next = central_gradient(f, next, &res.evaluations);
    const Vector s = next - res.x;
    const Vector y = g_next - g;
    const double prev_value = res.value;
    res.x = next;
    res.value = f_next;
    g = g_next;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_metric) {
        // Scale the initial metric to the observed curvature.
        inv_h *= sy / y.squaredNorm();
      }
      const Vector hy = inv_h * y;
      const double yhy = y.dot(hy);
      inv_h += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) - (hy * s.transpose() + s * hy.transpose()) / sy;
      fresh_metric = false;
    }
    if (small_change(prev_value, res.value, opts.reltol) && g.cwiseAbs().maxCoeff() < opts.gtol) {
      res.converged = true;
      res.message = "converged";
      ++res.iterations;
      return res;
    }
  }
  res.message = "iteration limit reached";
  return res;
}

}  // namespace epglmm
