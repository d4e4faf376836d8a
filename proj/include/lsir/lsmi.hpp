#pragma once

// Least-squares mutual information (LSMI).
//
// The dependence between paired scalars (x_i, e_i) is measured through the
// density ratio r(x, e) = p(x, e) / (p(x) p(e)), modeled linearly as
// r_alpha(x, e) = alpha' phi(x, e) with Gaussian kernels phi centered on a
// random subset of the sample pairs.  Matching r_alpha to the true ratio in
// squared loss needs only two empirical moments,
//
//   H = (1/n^2) sum_{i,j} phi(x_i, e_j) phi(x_i, e_j)'   (product pairing)
//   h = (1/n)   sum_i     phi(x_i, e_i)                  (joint pairing)
//
// giving the ridge solution alpha = (H + lambda I)^{-1} h and the plug-in
// estimate  SMI = h'alpha - alpha'H alpha / 2 - 1/2,  which is zero exactly
// when the data look independent to the basis.  (sigma, lambda) are chosen
// by K-fold cross-validation of the same squared-loss criterion.

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "lsir/data.hpp"
#include "lsir/errors.hpp"
#include "lsir/numerics.hpp"
#include "lsir/rng.hpp"
#include "lsir/types.hpp"

namespace lsir {

// Gaussian kernel bump evaluations: entry (i, l) = exp(-(p_i - c_l)^2 / (2 w^2)).
template <typename Scalar>
MatrixX<Scalar> gaussian_design(const VectorX<Scalar>& points,
                                const VectorX<Scalar>& centers, Scalar width) {
  if (!(width > Scalar(0)) || !std::isfinite(width)) {
    throw DegenerateWidth("kernel width must be positive and finite");
  }
  const Scalar inv = Scalar(-1) / (Scalar(2) * width * width);
  MatrixX<Scalar> design(points.size(), centers.size());
  for (Index l = 0; l < centers.size(); ++l) {
    design.col(l) = ((points.array() - centers[l]).square() * inv).exp();
  }
  return design;
}

// Two-dimensional Gaussian basis for the ratio model: centers are sample
// pairs (u_l, v_l), one shared width.
struct RatioBasis {
  Vector centers_x;
  Vector centers_e;
  double sigma = 1.0;

  Index size() const { return centers_x.size(); }
};

// Entry (i, l) = exp(-((x_i - u_l)^2 + (e_i - v_l)^2) / (2 sigma^2)).
inline Matrix build_ratio_design(const Vector& x, const Vector& e,
                                 const RatioBasis& basis) {
  if (!(basis.sigma > 0.0) || !std::isfinite(basis.sigma)) {
    throw DegenerateWidth("ratio basis width must be positive and finite");
  }
  const double inv = -1.0 / (2.0 * basis.sigma * basis.sigma);
  Matrix design(x.size(), basis.size());
  for (Index l = 0; l < basis.size(); ++l) {
    design.col(l) = (((x.array() - basis.centers_x[l]).square() +
                      (e.array() - basis.centers_e[l]).square()) *
                     inv)
                        .exp();
  }
  return design;
}

struct RatioModel {
  RatioBasis basis;
  Vector alpha;

  // r_alpha(x, e); linear in the kernels, so it may go negative.
  double evaluate(double x, double e) const {
    const double inv = -1.0 / (2.0 * basis.sigma * basis.sigma);
    double total = 0.0;
    for (Index l = 0; l < basis.size(); ++l) {
      const double dx = x - basis.centers_x[l];
      const double de = e - basis.centers_e[l];
      total += alpha[l] * std::exp((dx * dx + de * de) * inv);
    }
    return total;
  }
};

// The two empirical moments of the basis; H pairs every x with every e
// (product distribution), h pairs them as observed (joint distribution).
struct RatioMoments {
  Matrix H;
  Vector h;
};

// Factorized evaluation.  The 2-D kernel splits into per-coordinate parts,
// phi_l(x_i, e_j) = gx(i, l) * ge(j, l), which collapses the n^2 cross
// pairing into two rank-n Gram accumulations:
//   H = (1/n^2) (gx'gx) .* (ge'ge)      (elementwise product)
//   h = (1/n)   (gx .* ge)' 1
// This equals the explicit double sum to rounding error in O(n b^2) work.
inline RatioMoments compute_H_h(const Matrix& gx, const Matrix& ge) {
  const Index n = gx.rows();
  const Index b = gx.cols();
  Matrix a = Matrix::Zero(b, b);
  a.selfadjointView<Eigen::Lower>().rankUpdate(gx.transpose());
  a.triangularView<Eigen::StrictlyUpper>() = a.transpose();
  Matrix c = Matrix::Zero(b, b);
  c.selfadjointView<Eigen::Lower>().rankUpdate(ge.transpose());
  c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
  RatioMoments m;
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
  m.H = (a.array() * c.array()).matrix() * scale;
  m.h = (gx.array() * ge.array()).matrix().colwise().sum().transpose() /
        static_cast<double>(n);
  return m;
}

inline RatioMoments compute_H_h(const Vector& x, const Vector& e,
                                const RatioBasis& basis) {
  return compute_H_h(gaussian_design<double>(x, basis.centers_x, basis.sigma),
                     gaussian_design<double>(e, basis.centers_e, basis.sigma));
}

// Ridge solution alpha = (H + lambda I)^{-1} h.
inline Vector fit_alpha(const Matrix& H, const Vector& h, double lambda) {
  if (lambda < 0.0) throw InvalidConfig("lambda must be nonnegative");
  return solve_regularized<double>(H, h, lambda);
}

// SMI = h'alpha - alpha'H alpha / 2 - 1/2.
inline double estimate_smi(const Matrix& H, const Vector& h,
                           const Vector& alpha) {
  return h.dot(alpha) - 0.5 * alpha.dot(H * alpha) - 0.5;
}

struct LsmiConfig {
  // Basis size is min(basis_cap, n).
  Index basis_cap = 200;
  // Absolute widths; when empty, sigma_multipliers scale the median
  // pairwise distance of the joint points (zero diagonal excluded,
  // floored at 1e-3).
  std::vector<double> sigma_grid;
  std::vector<double> sigma_multipliers = {0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0};
  std::vector<double> lambda_grid = {1e-3, 1e-2, 1e-1, 1.0};
  int folds = 2;
  // Center-and-scale each coordinate before estimation so one default grid
  // serves all inputs; independence is unaffected.
  bool standardize = true;
};

inline void validate(const LsmiConfig& config) {
  if (config.basis_cap < 1) throw InvalidConfig("basis_cap must be positive");
  if (config.folds < 2) throw InvalidConfig("need at least two folds");
  if (config.sigma_grid.empty() && config.sigma_multipliers.empty()) {
    throw InvalidConfig("sigma grid is empty");
  }
  if (config.lambda_grid.empty()) throw InvalidConfig("lambda grid is empty");
}

struct SmiEstimate {
  double value = 0.0;
  double sigma = 0.0;
  double lambda = 0.0;
  double cv_score = 0.0;
};

// Everything random about a cross-validated fit, drawn once so that grid
// points can be scored in any order (or concurrently) with the same answer.
struct CvPlan {
  std::vector<Index> center_indices;
  std::vector<std::vector<Index>> folds;
};

// Derivation protocol (part of the reproducibility contract): centers come
// from rng.child(0) without replacement; folds from a rng.child(1) shuffle
// cut into near-equal contiguous chunks.
inline CvPlan make_cv_plan(Index n, Index basis_count, int folds,
                           const RngStream& rng) {
  if (n < 2 * folds) {
    throw InsufficientData("need at least two samples per fold");
  }
  CvPlan plan;
  plan.center_indices = rng.child(0).sample_without_replacement(n, basis_count);
  const std::vector<Index> order = rng.child(1).permutation(n);
  plan.folds.resize(static_cast<std::size_t>(folds));
  for (int k = 0; k < folds; ++k) {
    const Index begin = n * k / folds;
    const Index end = n * (k + 1) / folds;
    plan.folds[static_cast<std::size_t>(k)].assign(order.begin() + begin,
                                                   order.begin() + end);
  }
  return plan;
}

namespace detail {

inline Vector gather(const Vector& values, const std::vector<Index>& indices) {
  Vector out(static_cast<Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) out[static_cast<Index>(i)] = values[indices[i]];
  return out;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<Index>& indices) {
  Matrix out(static_cast<Index>(indices.size()), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Index>(i)) = m.row(indices[i]);
  return out;
}

// Unnormalized per-fold accumulators: A = sum gx_i gx_i', B likewise for
// ge, hsum = sum of paired products.  Fold and complement moments both
// fall out of these by subtraction from the totals.
struct FoldMoments {
  Matrix A;
  Matrix B;
  Vector hsum;
  Index count = 0;
};

inline FoldMoments accumulate_fold(const Matrix& gx, const Matrix& ge,
                                   const std::vector<Index>& rows) {
  const Index b = gx.cols();
  const Matrix gx_rows = gather_rows(gx, rows);
  const Matrix ge_rows = gather_rows(ge, rows);
  FoldMoments m;
  m.A = Matrix::Zero(b, b);
  m.A.selfadjointView<Eigen::Lower>().rankUpdate(gx_rows.transpose());
  m.A.triangularView<Eigen::StrictlyUpper>() = m.A.transpose();
  m.B = Matrix::Zero(b, b);
  m.B.selfadjointView<Eigen::Lower>().rankUpdate(ge_rows.transpose());
  m.B.triangularView<Eigen::StrictlyUpper>() = m.B.transpose();
  m.hsum = (gx_rows.array() * ge_rows.array()).matrix().colwise().sum().transpose();
  m.count = static_cast<Index>(rows.size());
  return m;
}

}  // namespace detail

// Cross-validated squared-loss score of one (sigma, lambda) grid point:
// for each fold, alpha is fitted on the complement and scored on the
// held-out fold as  J_k = alpha'H_k alpha / 2 - h_k'alpha  with the fold's
// own normalization; the average over folds is returned (lower is better).
inline double lsmi_cv_score(const Vector& x, const Vector& e,
                            const CvPlan& plan, double sigma, double lambda) {
  const RatioBasis basis{detail::gather(x, plan.center_indices),
                         detail::gather(e, plan.center_indices), sigma};
  const Matrix gx = gaussian_design<double>(x, basis.centers_x, sigma);
  const Matrix ge = gaussian_design<double>(e, basis.centers_e, sigma);

  std::vector<detail::FoldMoments> fold_moments;
  fold_moments.reserve(plan.folds.size());
  for (const auto& fold : plan.folds) {
    if (fold.empty()) throw InsufficientData("empty cross-validation fold");
    fold_moments.push_back(detail::accumulate_fold(gx, ge, fold));
  }
  detail::FoldMoments total;
  const Index b = gx.cols();
  total.A = Matrix::Zero(b, b);
  total.B = Matrix::Zero(b, b);
  total.hsum = Vector::Zero(b);
  for (const auto& m : fold_moments) {
    total.A += m.A;
    total.B += m.B;
    total.hsum += m.hsum;
    total.count += m.count;
  }

  double score_sum = 0.0;
  for (const auto& m : fold_moments) {
    const Index held = m.count;
    const Index rest = total.count - held;
    if (rest < 1) throw InsufficientData("empty training complement");
    const double rest_sq = static_cast<double>(rest) * static_cast<double>(rest);
    const Matrix H_train =
        ((total.A - m.A).array() * (total.B - m.B).array()).matrix() / rest_sq;
    const Vector h_train = (total.hsum - m.hsum) / static_cast<double>(rest);
    const Vector alpha = fit_alpha(H_train, h_train, lambda);

    const double held_sq = static_cast<double>(held) * static_cast<double>(held);
    const Matrix H_held = (m.A.array() * m.B.array()).matrix() / held_sq;
    const Vector h_held = m.hsum / static_cast<double>(held);
    score_sum += 0.5 * alpha.dot(H_held * alpha) - h_held.dot(alpha);
  }
  return score_sum / static_cast<double>(plan.folds.size());
}

// Convenience overload drawing the plan from rng (centers via child(0),
// folds via child(1)).
inline double lsmi_cv_score(const Vector& x, const Vector& e, double sigma,
                            double lambda, int folds, const RngStream& rng,
                            Index basis_cap = 200) {
  const Index n = x.size();
  const Index b = std::min(basis_cap, n);
  return lsmi_cv_score(x, e, make_cv_plan(n, b, folds, rng), sigma, lambda);
}

// Width grid resolution: explicit grid wins; otherwise multiples of the
// median pairwise distance of the joint points (diagonal excluded,
// floored at 1e-3).
inline std::vector<double> resolve_sigma_grid(const LsmiConfig& config,
                                              const Vector& x, const Vector& e) {
  if (!config.sigma_grid.empty()) return config.sigma_grid;
  const double scale = std::max(
      median_pairwise_distance(x, e, DiagonalPolicy::exclude), 1e-3);
  std::vector<double> grid;
  grid.reserve(config.sigma_multipliers.size());
  for (const double m : config.sigma_multipliers) grid.push_back(m * scale);
  return grid;
}

struct GridSelection {
  double sigma = 0.0;
  double lambda = 0.0;
  double cv_score = 0.0;
};

// Exhaustive (sigma, lambda) search by CV score; ties break toward the
// smaller sigma, then the smaller lambda, so grid order never matters.
inline GridSelection select_ratio_model(const Vector& x, const Vector& e,
                                        const CvPlan& plan,
                                        const std::vector<double>& sigma_grid,
                                        const std::vector<double>& lambda_grid) {
  bool have_best = false;
  GridSelection best;
  for (const double sigma : sigma_grid) {
    for (const double lambda : lambda_grid) {
      const double score = lsmi_cv_score(x, e, plan, sigma, lambda);
      if (!std::isfinite(score)) {
        throw NonFiniteEvaluation("cross-validation score is not finite");
      }
      const bool better =
          !have_best || score < best.cv_score ||
          (score == best.cv_score &&
           (sigma < best.sigma ||
            (sigma == best.sigma && lambda < best.lambda)));
      if (better) {
        best = GridSelection{sigma, lambda, score};
        have_best = true;
      }
    }
  }
  return best;
}

// A fitted ratio model plus its SMI estimate.  The model lives on the
// standardized scale when config.standardize is set; the affine maps
// translate raw coordinates into that scale.  The selection apparatus --
// the resolved width grid and the CV plan (center indices and fold
// split) -- is kept so a permutation statistic can repeat the selection
// on re-pairings under the exact frozen structures.
struct LsmiFit {
  RatioModel model;
  SmiEstimate smi;
  AffineMap x_map;
  AffineMap e_map;
  CvPlan plan;
  std::vector<double> sigma_grid;
};

// Full LSMI pipeline: standardize, resolve grids, draw one CV plan,
// grid-search (sigma, lambda), refit on all samples with the winner.
inline LsmiFit fit_lsmi(const Vector& x, const Vector& e,
                        const LsmiConfig& config, const RngStream& rng) {
  validate(config);
  const Index n = x.size();
  if (e.size() != n) throw InsufficientData("coordinate vectors differ in length");
  if (n < 2 * config.folds) {
    throw InsufficientData("need at least two samples per fold");
  }

  LsmiFit fit;
  Vector xs = x;
  Vector es = e;
  if (config.standardize) {
    fit.x_map = detail::standardizing_map(x);
    fit.e_map = detail::standardizing_map(e);
    xs = (x.array() - fit.x_map.shift) / fit.x_map.scale;
    es = (e.array() - fit.e_map.shift) / fit.e_map.scale;
  }

  const std::vector<double> sigma_grid = resolve_sigma_grid(config, xs, es);
  const Index b = std::min(config.basis_cap, n);
  const CvPlan plan = make_cv_plan(n, b, config.folds, rng);
  const GridSelection pick =
      select_ratio_model(xs, es, plan, sigma_grid, config.lambda_grid);

  fit.plan = plan;
  fit.sigma_grid = sigma_grid;
  fit.model.basis = RatioBasis{detail::gather(xs, plan.center_indices),
                               detail::gather(es, plan.center_indices),
                               pick.sigma};
  const RatioMoments m = compute_H_h(xs, es, fit.model.basis);
  fit.model.alpha = fit_alpha(m.H, m.h, pick.lambda);
  fit.smi = SmiEstimate{estimate_smi(m.H, m.h, fit.model.alpha), pick.sigma,
                        pick.lambda, pick.cv_score};
  if (!std::isfinite(fit.smi.value)) {
    throw NonFiniteEvaluation("SMI estimate is not finite");
  }
  return fit;
}

// A fitted ratio instrument frozen for repeated evaluation on re-pairings
// of one residual vector: the basis (centers, width), the coordinate maps,
// the ridge factorization and the product moment H all come from the fit,
// so an evaluation only rebuilds the residual-side design and backsolves
// for alpha -- O(n b) plus O(b^2) instead of a fresh cross-validated fit.
// Freezing H is exact, not an approximation: H sums its two sides
// separately, so re-pairing them cannot change it.
class FrozenSmiStatistic {
 public:
  // x and e must be the vectors the fit measured; the statistic then
  // reproduces fit.smi.value bit-for-bit on the unpermuted pair.
  FrozenSmiStatistic(const Vector& x, const Vector& e, const LsmiFit& fit)
      : basis_(fit.model.basis), e_map_(fit.e_map), n_(x.size()) {
    const Vector xs = (x.array() - fit.x_map.shift) / fit.x_map.scale;
    const Vector es = (e.array() - e_map_.shift) / e_map_.scale;
    gx_ = gaussian_design<double>(xs, basis_.centers_x, basis_.sigma);
    const Matrix ge = gaussian_design<double>(es, basis_.centers_e, basis_.sigma);
    const RatioMoments moments = compute_H_h(gx_, ge);
    H_ = moments.H;
    system_.emplace(H_, fit.smi.lambda);
  }

  double operator()(const Vector& e) const {
    const Vector es = (e.array() - e_map_.shift) / e_map_.scale;
    const Matrix ge = gaussian_design<double>(es, basis_.centers_e, basis_.sigma);
    const Vector h =
        (gx_.array() * ge.array()).matrix().colwise().sum().transpose() /
        static_cast<double>(n_);
    const Vector alpha = system_->solve(h);
    return estimate_smi(H_, h, alpha);
  }

 private:
  RatioBasis basis_;
  AffineMap e_map_;
  Index n_;
  Matrix gx_;
  Matrix H_;
  std::optional<FactorizedSystem<double>> system_;
};

// Repeats the whole (sigma, lambda) grid selection per re-pairing, on
// structures frozen from one fit: the center values, the coordinate maps,
// the resolved width grid and the CV fold split.  A fresh selection
// optimizes its instrument for whatever pairing it is shown, so its
// reading on the true pairing carries selection optimism; a null that
// freezes the winning instrument lacks that optimism and ranks the
// observed reading too high.  Here every re-pairing gets the same
// selection procedure the observed value got, so the two are exchangeable
// under independence.
//
// Re-pairings permute the residuals within each CV fold (a subgroup of
// the full permutations, equally valid under exchangeability).  That
// choice freezes every Gram factorization: the x-side designs never
// change, and a within-fold shuffle of the e-side rows leaves each fold's
// Gram matrix untouched.  An evaluation therefore only recombines paired
// products and backsolves -- the grid search costs O(S L F b^2) per
// re-pairing instead of refactorizing.
class FrozenSelectionStatistic {
 public:
  // x and e must be the vectors the fit measured; observed() then
  // reproduces fit.smi.value bit-for-bit.
  FrozenSelectionStatistic(const Vector& x, const Vector& e,
                           const LsmiFit& fit,
                           std::vector<double> lambda_grid)
      : lambda_grid_(std::move(lambda_grid)),
        sigma_grid_(fit.sigma_grid),
        folds_(fit.plan.folds),
        n_(x.size()) {
    if (sigma_grid_.empty()) {
      throw InvalidConfig("fit carries no resolved width grid");
    }
    if (lambda_grid_.empty()) throw InvalidConfig("empty lambda grid");
    if (folds_.empty()) throw InvalidConfig("fit carries no fold plan");
    const Vector xs = (x.array() - fit.x_map.shift) / fit.x_map.scale;
    const Vector es = (e.array() - fit.e_map.shift) / fit.e_map.scale;
    const Vector centers_x = detail::gather(xs, fit.plan.center_indices);
    const Vector centers_e = detail::gather(es, fit.plan.center_indices);

    const std::size_t S = sigma_grid_.size();
    const std::size_t F = folds_.size();
    const std::size_t L = lambda_grid_.size();
    gx_fold_.resize(S * F);
    ge_fold_.resize(S * F);
    held_count_.resize(F);
    rest_count_.resize(F);
    h_observed_.resize(S * F);
    train_systems_.reserve(S * F * L);
    held_H_.resize(S * F);
    full_H_.resize(S);
    full_h_observed_.resize(S);
    full_systems_.reserve(S * L);
    for (std::size_t s = 0; s < S; ++s) {
      const double sigma = sigma_grid_[s];
      const Matrix gx = gaussian_design<double>(xs, centers_x, sigma);
      const Matrix ge = gaussian_design<double>(es, centers_e, sigma);

      // Fold moments along the same arithmetic path as the CV scorer, so
      // the identity evaluation reproduces the fit's selection exactly.
      std::vector<detail::FoldMoments> moments;
      moments.reserve(F);
      for (const auto& fold : folds_) {
        if (fold.empty()) throw InsufficientData("empty cross-validation fold");
        moments.push_back(detail::accumulate_fold(gx, ge, fold));
      }
      const Index b = gx.cols();
      detail::FoldMoments total;
      total.A = Matrix::Zero(b, b);
      total.B = Matrix::Zero(b, b);
      total.hsum = Vector::Zero(b);
      for (const auto& m : moments) {
        total.A += m.A;
        total.B += m.B;
        total.hsum += m.hsum;
        total.count += m.count;
      }
      for (std::size_t f = 0; f < F; ++f) {
        const auto& m = moments[f];
        const Index held = m.count;
        const Index rest = total.count - held;
        if (rest < 1) throw InsufficientData("empty training complement");
        held_count_[f] = held;
        rest_count_[f] = rest;
        const double rest_sq =
            static_cast<double>(rest) * static_cast<double>(rest);
        const Matrix H_train =
            ((total.A - m.A).array() * (total.B - m.B).array()).matrix() /
            rest_sq;
        for (const double lambda : lambda_grid_) {
          train_systems_.emplace_back(H_train, lambda);
        }
        const double held_sq =
            static_cast<double>(held) * static_cast<double>(held);
        held_H_[s * F + f] = (m.A.array() * m.B.array()).matrix() / held_sq;
        h_observed_[s * F + f] = m.hsum;
        gx_fold_[s * F + f] = detail::gather_rows(gx, folds_[f]);
        ge_fold_[s * F + f] = detail::gather_rows(ge, folds_[f]);
      }

      // The full-sample moments along fit_lsmi's own path, so the final
      // backsolve of the identity evaluation matches it bit-for-bit.
      const RatioMoments full = compute_H_h(gx, ge);
      full_H_[s] = full.H;
      full_h_observed_[s] = full.h;
      for (const double lambda : lambda_grid_) {
        full_systems_.emplace_back(full.H, lambda);
      }
    }
  }

  // The selection's reading of the true pairing.
  double observed() const { return evaluate(nullptr); }

  // The selection's reading of a fresh within-fold re-pairing drawn from
  // the stream (fold k shuffles via stream.child(k)).
  double operator()(const RngStream& stream) const { return evaluate(&stream); }

 private:
  double evaluate(const RngStream* stream) const {
    const std::size_t S = sigma_grid_.size();
    const std::size_t F = folds_.size();
    const std::size_t L = lambda_grid_.size();

    // Paired products per (sigma, fold) for this re-pairing.
    std::vector<Vector> hsum(S * F);
    if (stream == nullptr) {
      for (std::size_t i = 0; i < S * F; ++i) hsum[i] = h_observed_[i];
    } else {
      for (std::size_t f = 0; f < F; ++f) {
        const Index rows = static_cast<Index>(folds_[f].size());
        const std::vector<Index> kappa =
            stream->child(f).permutation(rows);
        for (std::size_t s = 0; s < S; ++s) {
          const Matrix& gx = gx_fold_[s * F + f];
          const Matrix& ge = ge_fold_[s * F + f];
          Matrix repaired(rows, ge.cols());
          for (Index i = 0; i < rows; ++i) {
            repaired.row(i) = ge.row(kappa[static_cast<std::size_t>(i)]);
          }
          hsum[s * F + f] = (gx.array() * repaired.array())
                                .matrix()
                                .colwise()
                                .sum()
                                .transpose();
        }
      }
    }

    // Grid search with the CV scorer's arithmetic and tie-breaking.
    bool have_best = false;
    std::size_t best_s = 0;
    std::size_t best_l = 0;
    double best_score = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      Vector h_total = Vector::Zero(hsum[s * F].size());
      for (std::size_t f = 0; f < F; ++f) h_total += hsum[s * F + f];
      for (std::size_t l = 0; l < L; ++l) {
        double score_sum = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
          const Vector h_train =
              (h_total - hsum[s * F + f]) / static_cast<double>(rest_count_[f]);
          const Vector alpha =
              train_systems_[(s * F + f) * L + l].solve(h_train);
          const Vector h_held =
              hsum[s * F + f] / static_cast<double>(held_count_[f]);
          score_sum += 0.5 * alpha.dot(held_H_[s * F + f] * alpha) -
                       h_held.dot(alpha);
        }
        const double score = score_sum / static_cast<double>(F);
        if (!std::isfinite(score)) {
          throw NonFiniteEvaluation("cross-validation score is not finite");
        }
        const bool better =
            !have_best || score < best_score ||
            (score == best_score &&
             (sigma_grid_[s] < sigma_grid_[best_s] ||
              (sigma_grid_[s] == sigma_grid_[best_s] &&
               lambda_grid_[l] < lambda_grid_[best_l])));
        if (better) {
          best_s = s;
          best_l = l;
          best_score = score;
          have_best = true;
        }
      }
    }

    Vector h_full;
    if (stream == nullptr) {
      h_full = full_h_observed_[best_s];
    } else {
      h_full = Vector::Zero(hsum[best_s * F].size());
      for (std::size_t f = 0; f < F; ++f) h_full += hsum[best_s * F + f];
      h_full /= static_cast<double>(n_);
    }
    const Vector alpha = full_systems_[best_s * L + best_l].solve(h_full);
    const double value = estimate_smi(full_H_[best_s], h_full, alpha);
    if (!std::isfinite(value)) {
      throw NonFiniteEvaluation("SMI estimate is not finite");
    }
    return value;
  }

  std::vector<double> lambda_grid_;
  std::vector<double> sigma_grid_;
  std::vector<std::vector<Index>> folds_;
  Index n_;
  std::vector<Index> rest_count_;
  std::vector<Index> held_count_;
  std::vector<Matrix> gx_fold_;
  std::vector<Matrix> ge_fold_;
  std::vector<Vector> h_observed_;
  std::vector<FactorizedSystem<double>> train_systems_;
  std::vector<Matrix> held_H_;
  std::vector<Matrix> full_H_;
  std::vector<Vector> full_h_observed_;
  std::vector<FactorizedSystem<double>> full_systems_;
};

}  // namespace lsir
