#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "mclab/model.hpp"
#include "mclab/nonconvex.hpp"
#include "mclab/operators.hpp"
#include "mclab/types.hpp"

namespace mclab {

// Relative errors against M* in the matching norms; for factor pairs also the
// 2,inf factor error after Procrustes alignment of the stacked factors.
struct ErrorBundle {
  double rel_fro = 0.0;
  double rel_spec = 0.0;
  double rel_inf = 0.0;
  std::optional<double> factor_2inf;
  std::optional<Matrix> align_rotation;
};

namespace detail {

// ||A|| <= ||A||_F <= n ||A||_inf must hold for every bundle we emit; a
// violation means one of the norm backends is broken.
inline void assert_norm_ordering(double spec, double fro, double inf, int n) {
  const double slack = 1e-8;
  if (spec > fro * (1.0 + slack) + 1e-300 ||
      fro > n * inf * (1.0 + slack) + 1e-300)
    throw NumericError("error_bundle: norm ordering violated");
}

}  // namespace detail

inline ErrorBundle error_bundle(const Matrix& z, const LowRankTruth& truth) {
  if (z.rows() != truth.n || z.cols() != truth.n)
    throw ParameterError("error_bundle: dimension mismatch");
  const Matrix& m = truth.m_star();
  const Matrix diff = z - m;

  const double diff_fro = diff.norm();
  const double diff_spec = spectral_norm(diff);
  const double diff_inf = diff.cwiseAbs().maxCoeff();
  detail::assert_norm_ordering(diff_spec, diff_fro, diff_inf, truth.n);

  ErrorBundle b;
  b.rel_fro = diff_fro / m.norm();
  b.rel_spec = diff_spec / truth.sigma_max();
  b.rel_inf = diff_inf / m.cwiseAbs().maxCoeff();
  return b;
}

inline ErrorBundle error_bundle(const FactorPair& pair,
                                const LowRankTruth& truth) {
  ErrorBundle b = error_bundle(pair.product(), truth);

  Matrix f(2 * truth.n, pair.rank());
  f << pair.x, pair.y;
  Matrix f_ref(2 * truth.n, truth.r);
  f_ref << truth.x_star, truth.y_star;
  const Matrix h = procrustes_align(f, f_ref);

  const double ex = (pair.x * h - truth.x_star).rowwise().norm().maxCoeff();
  const double ey = (pair.y * h - truth.y_star).rowwise().norm().maxCoeff();
  b.factor_2inf = std::max(ex, ey);
  b.align_rotation = h;
  return b;
}

}  // namespace mclab
