#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "lsir/numerics.hpp"
#include "lsir/rng.hpp"

using lsir::DiagonalPolicy;
using lsir::FactorizedSystem;
using lsir::Index;
using lsir::Matrix;
using lsir::RngStream;
using lsir::Vector;

TEST_CASE("solve_regularized on the identity returns the right-hand side") {
  Matrix gram = Matrix::Identity(3, 3);
  Vector rhs(3);
  rhs << 1.0, -2.0, 0.5;
  const Vector v = lsir::solve_regularized<double>(gram, rhs, 0.0);
  CHECK((v - rhs).norm() == doctest::Approx(0.0).epsilon(1e-14));

  // With lambda = 1 the system is 2I, halving the answer.
  const Vector half = lsir::solve_regularized<double>(gram, rhs, 1.0);
  CHECK((half - rhs / 2.0).norm() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("solve_regularized matches Gaussian elimination on a 2x2 system") {
  Matrix gram(2, 2);
  gram << 4.0, 1.0, 1.0, 3.0;
  Vector rhs(2);
  rhs << 1.0, 2.0;
  const double lambda = 0.5;
  // Eliminate by hand: A = [[4.5, 1], [1, 3.5]],
  // det = 4.5 * 3.5 - 1 = 14.75, v = (1/det) [3.5 - 2, -1 + 9] = (1.5, 8) / 14.75.
  Vector expected(2);
  expected << 1.5 / 14.75, 8.0 / 14.75;
  const Vector v = lsir::solve_regularized<double>(gram, rhs, lambda);
  CHECK((v - expected).norm() < 1e-12);
}

TEST_CASE("solve_regularized meets the residual bound on random SPD systems") {
  RngStream rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.uniform_below(30));
    Matrix a(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) a(i, j) = rng.normal();
    }
    Matrix gram = a.transpose() * a / static_cast<double>(n);
    Vector rhs(n);
    for (Index i = 0; i < n; ++i) rhs[i] = rng.normal();
    const double lambda = std::pow(10.0, rng.uniform(-3.0, 0.0));
    const Vector v = lsir::solve_regularized<double>(gram, rhs, lambda);
    Matrix reg = gram;
    reg.diagonal().array() += lambda;
    CHECK((reg * v - rhs).norm() <= 1e-8 * (rhs.norm() + 1.0));
  }
}

TEST_CASE("solve_regularized rejects unsolvable and non-finite systems") {
  Matrix singular = Matrix::Ones(2, 2);
  Vector incompatible(2);
  incompatible << 1.0, -1.0;
  CHECK_THROWS_AS(lsir::solve_regularized<double>(singular, incompatible, 0.0),
                  lsir::SingularSystem);

  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 1) = std::nan("");
  Vector rhs = Vector::Ones(2);
  CHECK_THROWS_AS(lsir::solve_regularized<double>(bad, rhs, 0.1),
                  lsir::SingularSystem);
}

TEST_CASE("FactorizedSystem agrees with solve_regularized over many right-hand sides") {
  RngStream rng(3);
  Matrix a(6, 6);
  for (Index i = 0; i < 6; ++i) {
    for (Index j = 0; j < 6; ++j) a(i, j) = rng.normal();
  }
  const Matrix gram = a.transpose() * a;
  const double lambda = 0.01;
  const FactorizedSystem<double> factorized(gram, lambda);
  for (int k = 0; k < 20; ++k) {
    Vector rhs(6);
    for (Index i = 0; i < 6; ++i) rhs[i] = rng.normal();
    const Vector direct = lsir::solve_regularized<double>(gram, rhs, lambda);
    const Vector reused = factorized.solve(rhs);
    CHECK((direct - reused).norm() == 0.0);
  }
}

TEST_CASE("median pairwise distance follows the lower-middle rule") {
  Vector two(2);
  two << 0.0, 1.0;
  // Ordered pairs: {0, 1, 1, 0}; lower middle of the sorted pool is 0.
  CHECK(lsir::median_pairwise_distance(two) == 0.0);
  CHECK(lsir::median_pairwise_distance(two, DiagonalPolicy::exclude) == 1.0);

  Vector three(3);
  three << 0.0, 1.0, 2.0;
  CHECK(lsir::median_pairwise_distance(three) == 1.0);
  CHECK(lsir::median_pairwise_distance(three, DiagonalPolicy::exclude) == 1.0);

  Vector constant = Vector::Zero(3);
  CHECK(lsir::median_pairwise_distance(constant) == 0.0);
  CHECK(lsir::median_pairwise_distance(constant, DiagonalPolicy::exclude) == 0.0);
}

TEST_CASE("median pairwise distance in two dimensions uses the Euclidean norm") {
  Vector x(2);
  Vector y(2);
  x << 0.0, 3.0;
  y << 0.0, 4.0;
  CHECK(lsir::median_pairwise_distance(x, y, DiagonalPolicy::exclude) == 5.0);
  // Including the two zero self-distances, the pool {0, 5, 5, 0} has
  // lower-middle 0.
  CHECK(lsir::median_pairwise_distance(x, y) == 0.0);
}

TEST_CASE("median pairwise distance is permutation and translation invariant") {
  RngStream rng(11);
  Vector pts(40);
  for (Index i = 0; i < pts.size(); ++i) pts[i] = rng.normal();
  const double base = lsir::median_pairwise_distance(pts, DiagonalPolicy::exclude);

  const auto order = rng.permutation(pts.size());
  Vector shuffled(pts.size());
  for (Index i = 0; i < pts.size(); ++i) shuffled[i] = pts[order[static_cast<std::size_t>(i)]];
  CHECK(lsir::median_pairwise_distance(shuffled, DiagonalPolicy::exclude) == base);

  const Vector shifted = pts.array() + 42.0;
  CHECK(lsir::median_pairwise_distance(shifted, DiagonalPolicy::exclude) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("finite differences recover analytic gradients") {
  const auto quadratic = [](const Vector& v) { return v.squaredNorm(); };
  Vector at(2);
  at << 1.0, 2.0;
  const Vector g = lsir::finite_difference_gradient(quadratic, at, 1e-6);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

  const auto wavy = [](const Vector& v) {
    double total = 0.0;
    for (Index i = 0; i < v.size(); ++i) total += std::sin(v[i]);
    return total;
  };
  Vector point(4);
  point << -1.0, 0.3, 2.0, 5.0;
  const Vector grad = lsir::finite_difference_gradient(wavy, point, 1e-6);
  for (Index i = 0; i < point.size(); ++i) {
    CHECK(grad[i] == doctest::Approx(std::cos(point[i])).epsilon(1e-8));
  }
}

TEST_CASE("finite differences flag non-finite objectives") {
  const auto partial = [](const Vector& v) { return std::sqrt(v[0]); };
  Vector edge(1);
  edge << 1e-9;
  CHECK_THROWS_AS(lsir::finite_difference_gradient(partial, edge, 1e-6),
                  lsir::NonFiniteEvaluation);
}
