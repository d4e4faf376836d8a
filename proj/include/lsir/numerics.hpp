#pragma once

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lsir/errors.hpp"
#include "lsir/types.hpp"

namespace lsir {

// (gram + lambda I) factorized once so many right-hand sides can be solved
// cheaply.  Every solve is verified against the residual bound
// ||A v - rhs|| <= 1e-8 (||rhs|| + 1); SingularSystem otherwise.
template <typename Scalar>
class FactorizedSystem {
 public:
  FactorizedSystem(const MatrixX<Scalar>& gram, Scalar lambda)
      : regularized_(gram) {
    if (gram.rows() != gram.cols()) {
      throw SingularSystem("regularized solve needs a square matrix");
    }
    regularized_.diagonal().array() += lambda;
    if (!regularized_.allFinite()) {
      throw SingularSystem("regularized system has non-finite entries");
    }
    ldlt_.compute(regularized_);
    if (ldlt_.info() != Eigen::Success) {
      throw SingularSystem("LDLT factorization failed");
    }
  }

  VectorX<Scalar> solve(const VectorX<Scalar>& rhs) const {
    VectorX<Scalar> solution = ldlt_.solve(rhs);
    const Scalar residual = (regularized_ * solution - rhs).norm();
    if (!std::isfinite(residual) ||
        residual > Scalar(1e-8) * (rhs.norm() + Scalar(1))) {
      throw SingularSystem("regularized solve exceeded residual tolerance");
    }
    return solution;
  }

  const MatrixX<Scalar>& regularized() const { return regularized_; }

 private:
  MatrixX<Scalar> regularized_;
  Eigen::LDLT<MatrixX<Scalar>> ldlt_;
};

// Solves (gram + lambda I) v = rhs.
template <typename Scalar>
VectorX<Scalar> solve_regularized(const MatrixX<Scalar>& gram,
                                  const VectorX<Scalar>& rhs, Scalar lambda) {
  return FactorizedSystem<Scalar>(gram, lambda).solve(rhs);
}

// Backtracking line-search knobs shared by the gradient-descent fitters:
// try initial_step, shrink geometrically until the sufficient-decrease test
// f(x - s g) <= f(x) - sufficient_decrease * s * ||g||^2 holds, give up
// below min_step.
struct ArmijoParams {
  double initial_step = 1.0;
  double shrink = 0.5;
  double sufficient_decrease = 1e-4;
  double min_step = 1e-10;
};

// Whether self-distances (the zero diagonal) participate in the median.
enum class DiagonalPolicy { include, exclude };

namespace detail {

// Median with the lower-middle convention: sorted element at index
// (count - 1) / 2, so an even count picks the lower of the two middles.
inline double lower_median(std::vector<double>& values) {
  if (values.empty()) {
    throw InsufficientData("median of an empty distance set");
  }
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                   values.end());
  return values[mid];
}

}  // namespace detail

// Median of pairwise distances |p_i - p_j| of scalar points.  With
// DiagonalPolicy::include all n^2 ordered pairs count (so the n zero
// self-distances are in the pool); with exclude only the i < j pairs do.
inline double median_pairwise_distance(
    const Vector& points, DiagonalPolicy policy = DiagonalPolicy::include) {
  const Index n = points.size();
  if (n < 1 || (policy == DiagonalPolicy::exclude && n < 2)) {
    throw InsufficientData("median distance needs at least one pair");
  }
  std::vector<double> distances;
  if (policy == DiagonalPolicy::include) {
    distances.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        distances.push_back(std::abs(points[i] - points[j]));
      }
    }
  } else {
    distances.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        distances.push_back(std::abs(points[i] - points[j]));
      }
    }
  }
  return detail::lower_median(distances);
}

// Same, for 2-D points (first[i], second[i]) under the Euclidean norm.
inline double median_pairwise_distance(
    const Vector& first, const Vector& second,
    DiagonalPolicy policy = DiagonalPolicy::include) {
  const Index n = first.size();
  if (second.size() != n) {
    throw InsufficientData("coordinate vectors differ in length");
  }
  if (n < 1 || (policy == DiagonalPolicy::exclude && n < 2)) {
    throw InsufficientData("median distance needs at least one pair");
  }
  std::vector<double> distances;
  const auto push = [&](Index i, Index j) {
    distances.push_back(std::hypot(first[i] - first[j], second[i] - second[j]));
  };
  if (policy == DiagonalPolicy::include) {
    distances.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) push(i, j);
    }
  } else {
    distances.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) push(i, j);
    }
  }
  return detail::lower_median(distances);
}

// Central-difference gradient of f at `at`; reference for gradient checks.
inline Vector finite_difference_gradient(
    const std::function<double(const Vector&)>& f, const Vector& at,
    double step = 1e-6) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw DegenerateWidth("finite-difference step must be positive");
  }
  Vector gradient(at.size());
  Vector probe = at;
  for (Index i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + step;
    const double up = f(probe);
    probe[i] = at[i] - step;
    const double down = f(probe);
    probe[i] = at[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteEvaluation("objective not finite near evaluation point");
    }
    gradient[i] = (up - down) / (2.0 * step);
  }
  return gradient;
}

}  // namespace lsir
