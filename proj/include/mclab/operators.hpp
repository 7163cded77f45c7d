#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cmath>
#include <cstdint>
#include <string>

#include "mclab/rng.hpp"
#include "mclab/types.hpp"

namespace mclab {

// Tangent space of a rank-r matrix Z = U Sigma V^T:
// T = { U A^T + B V^T : A, B in R^{n x r} }.
struct TangentSpace {
  Matrix u;  // n x r, orthonormal columns
  Matrix v;  // n x r, orthonormal columns

  int n() const { return static_cast<int>(u.rows()); }
  int rank() const { return static_cast<int>(u.cols()); }
};

inline void validate_tangent_space(const TangentSpace& t, double tol = 1e-10) {
  const int r = t.rank();
  const double du =
      (t.u.transpose() * t.u - Matrix::Identity(r, r)).cwiseAbs().maxCoeff();
  const double dv =
      (t.v.transpose() * t.v - Matrix::Identity(r, r)).cwiseAbs().maxCoeff();
  if (du > tol || dv > tol)
    throw ParameterError("TangentSpace: bases are not orthonormal");
}

inline SparseMatrix project_omega(const Matrix& z, const IndexSet& omega) {
  const int n = static_cast<int>(z.rows());
  if (z.cols() != z.rows())
    throw ParameterError("project_omega: matrix must be square");
  SparseMatrix s(n, n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(omega.size());
  for (const auto& [i, j] : omega) {
    if (i < 0 || i >= n || j < 0 || j >= n)
      throw ParameterError("project_omega: index out of range");
    trips.emplace_back(i, j, z(i, j));
  }
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

// P_Omega(Z) - p Z, the zero-mean fluctuation of the sampling operator.
inline Matrix project_omega_debias(const Matrix& z, const IndexSet& omega,
                                   double p) {
  const int n = static_cast<int>(z.rows());
  if (z.cols() != z.rows())
    throw ParameterError("project_omega_debias: matrix must be square");
  Matrix out = -p * z;
  for (const auto& [i, j] : omega) {
    if (i < 0 || i >= n || j < 0 || j >= n)
      throw ParameterError("project_omega_debias: index out of range");
    out(i, j) += z(i, j);
  }
  return out;
}

// P_T(Z) = U U^T Z + Z V V^T - U U^T Z V V^T.
inline Matrix tangent_project(const TangentSpace& t, const Matrix& z) {
  if (z.rows() != t.u.rows() || z.cols() != t.v.rows())
    throw ParameterError("tangent_project: dimension mismatch");
  const Matrix utz = t.u.transpose() * z;  // r x n
  const Matrix zv = z * t.v;               // n x r
  return t.u * utz + zv * t.v.transpose() -
         t.u * (utz * t.v) * t.v.transpose();
}

inline Matrix tangent_project_complement(const TangentSpace& t,
                                         const Matrix& z) {
  return z - tangent_project(t, z);
}

inline double nuclear_norm(const Matrix& z) {
  Eigen::BDCSVD<Matrix> svd(z);
  return svd.singularValues().sum();
}

struct SvtResult {
  Matrix z;
  int rank = 0;  // number of singular values strictly above the threshold
};

// prox of tau * ||.||_*: soft-threshold the singular values by tau.
inline SvtResult svt(const Matrix& z, double tau) {
  if (tau < 0.0) throw ParameterError("svt: tau must be nonnegative");
  if (!z.allFinite()) throw NumericError("svt: non-finite input");
  Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector s = svd.singularValues();
  SvtResult out;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > tau) ++out.rank;
    s(i) = std::max(s(i) - tau, 0.0);
  }
  out.z = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  return out;
}

namespace detail {

// Deterministic start vector for the power iteration, seeded from the shape.
inline Vector power_start(Eigen::Index n, std::uint64_t salt) {
  Rng rng(derive_seed(0x9e3779b9ULL + static_cast<std::uint64_t>(n), "power") ^
          salt);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  v.normalize();
  return v;
}

// Power iteration on Z^T Z. Stops once the Ritz residual of the symmetric
// problem drops below tol * theta, which bounds the eigenvalue error.
template <typename Op>
double power_iteration_sym(const Op& apply, Eigen::Index dim, double tol,
                           int max_iters) {
  Vector v = power_start(dim, 0);
  double theta = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector w = apply(v);
    theta = v.dot(w);
    const double res = (w - theta * v).norm();
    if (res <= tol * std::max(theta, 1e-300)) return theta;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;  // start vector annihilated: norm is zero
    v = w / norm;
  }
  throw NumericError("spectral_norm: power iteration did not converge (theta=" +
                     std::to_string(theta) + ")");
}

}  // namespace detail

// Largest singular value. Dense SVD for n <= 64, otherwise power iteration on
// Z^T Z with a deterministic seeded start.
inline double spectral_norm(const Matrix& z, double tol = 1e-10,
                            int max_iters = 100000) {
  if (!z.allFinite()) throw NumericError("spectral_norm: non-finite input");
  if (z.rows() == 0 || z.cols() == 0) return 0.0;
  if (std::max(z.rows(), z.cols()) <= 64) {
    Eigen::BDCSVD<Matrix> svd(z);
    return svd.singularValues()(0);
  }
  auto apply = [&](const Vector& v) -> Vector {
    return z.transpose() * (z * v);
  };
  const double lam = detail::power_iteration_sym(apply, z.cols(), tol, max_iters);
  return std::sqrt(std::max(lam, 0.0));
}

inline double spectral_norm(const SparseMatrix& z, double tol = 1e-10,
                            int max_iters = 100000) {
  if (std::max(z.rows(), z.cols()) <= 64) {
    return spectral_norm(Matrix(z), tol, max_iters);
  }
  auto apply = [&](const Vector& v) -> Vector {
    return z.transpose() * (z * v);
  };
  const double lam = detail::power_iteration_sym(apply, z.cols(), tol, max_iters);
  return std::sqrt(std::max(lam, 0.0));
}

// Always-iterative variant, exposed so tests can pit it against the dense SVD
// below the dispatch threshold.
inline double spectral_norm_power(const Matrix& z, double tol = 1e-10,
                                  int max_iters = 100000) {
  auto apply = [&](const Vector& v) -> Vector {
    return z.transpose() * (z * v);
  };
  const double lam = detail::power_iteration_sym(apply, z.cols(), tol, max_iters);
  return std::sqrt(std::max(lam, 0.0));
}

// Matrix sign function: sgn(A) = U V^T for the SVD A = U Sigma V^T.
inline Matrix sign_matrix(const Matrix& a) {
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

// H = sgn(F^T F_ref), the orthonormal minimizer of ||F R - F_ref||_F.
inline Matrix procrustes_align(const Matrix& f, const Matrix& f_ref) {
  if (f.rows() != f_ref.rows() || f.cols() != f_ref.cols())
    throw ParameterError("procrustes_align: shape mismatch");
  const Matrix cross = f.transpose() * f_ref;
  Eigen::BDCSVD<Matrix> svd(cross, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector s = svd.singularValues();
  if (s.size() == 0 || s(s.size() - 1) <= 1e-14 * std::max(s(0), 1e-300))
    throw AlignmentError("procrustes_align: singular cross-Gram");
  return svd.matrixU() * svd.matrixV().transpose();
}

// Balanced split of Z = P Sigma Q^T into X = P Sigma^{1/2}, Y = Q Sigma^{1/2};
// 0.5 (||X||_F^2 + ||Y||_F^2) equals ||Z||_*.
inline std::pair<Matrix, Matrix> balanced_svd_factors(const Matrix& z, int r) {
  Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector root = svd.singularValues().head(r).cwiseSqrt();
  return {svd.matrixU().leftCols(r) * root.asDiagonal(),
          svd.matrixV().leftCols(r) * root.asDiagonal()};
}

}  // namespace mclab
