#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mclab/model.hpp"
#include "mclab/operators.hpp"
#include "mclab/types.hpp"

namespace mclab {

struct FactorPair {
  Matrix x;  // n x r
  Matrix y;  // n x r

  Matrix product() const { return x * y.transpose(); }
  int n() const { return static_cast<int>(x.rows()); }
  int rank() const { return static_cast<int>(x.cols()); }
};

struct GdOptions {
  double eta = 0.0;      // step size
  int t_max = 10000;     // iteration budget
  double tol_grad = 1e-8;
  double lambda = 0.0;
  double p = 0.0;

  void validate() const {
    if (!(eta > 0.0)) throw ParameterError("GdOptions: eta > 0");
    if (t_max < 1) throw ParameterError("GdOptions: t_max >= 1");
    if (!(p > 0.0)) throw ParameterError("GdOptions: p > 0");
    if (lambda < 0.0) throw ParameterError("GdOptions: lambda >= 0");
    if (tol_grad < 0.0) throw ParameterError("GdOptions: tol_grad >= 0");
  }
};

namespace detail {

// Residual P_Omega(X Y^T - M) held in a row-major sparse matrix whose storage
// order matches the sorted index list, so updates overwrite values in place.
class ResidualWorkspace {
 public:
  explicit ResidualWorkspace(const Observation& obs) : obs_(&obs) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(obs.omega.size());
    for (const auto& [i, j] : obs.omega) trips.emplace_back(i, j, 0.0);
    s_.resize(obs.n, obs.n);
    s_.setFromTriplets(trips.begin(), trips.end());
    s_.makeCompressed();
  }

  // Returns 1/2 ||P_Omega(X Y^T - M)||_F^2 as a byproduct.
  double update(const FactorPair& pair) {
    double* vals = s_.valuePtr();
    double fit = 0.0;
    for (std::size_t k = 0; k < obs_->omega.size(); ++k) {
      const auto& [i, j] = obs_->omega[k];
      const double r = pair.x.row(i).dot(pair.y.row(j)) -
                       obs_->values(static_cast<Eigen::Index>(k));
      vals[k] = r;
      fit += r * r;
    }
    return 0.5 * fit;
  }

  const Eigen::SparseMatrix<double, Eigen::RowMajor>& matrix() const {
    return s_;
  }

 private:
  const Observation* obs_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> s_;
};

}  // namespace detail

// f(X, Y) = (1/2p) ||P_Omega(X Y^T - M)||_F^2
//         + (lambda/2p) (||X||_F^2 + ||Y||_F^2).
inline double objective_f(const FactorPair& pair, const Observation& obs,
                          double lambda, double p) {
  if (!(p > 0.0)) throw ParameterError("objective_f: p > 0 required");
  if (pair.x.rows() != obs.n || pair.y.rows() != obs.n ||
      pair.x.cols() != pair.y.cols())
    throw ParameterError("objective_f: dimension mismatch");
  detail::ResidualWorkspace ws(obs);
  const double fit = ws.update(pair);
  return fit / p +
         0.5 * lambda / p * (pair.x.squaredNorm() + pair.y.squaredNorm());
}

// G_X = (1/p) [P_Omega(X Y^T - M) Y + lambda X],
// G_Y = (1/p) [P_Omega(X Y^T - M)^T X + lambda Y].
inline std::pair<Matrix, Matrix> gradient_f(const FactorPair& pair,
                                            const Observation& obs,
                                            double lambda, double p) {
  if (!(p > 0.0)) throw ParameterError("gradient_f: p > 0 required");
  detail::ResidualWorkspace ws(obs);
  ws.update(pair);
  const auto& s = ws.matrix();
  Matrix gx = (s * pair.y + lambda * pair.x) / p;
  Matrix gy = (s.transpose() * pair.x + lambda * pair.y) / p;
  return {std::move(gx), std::move(gy)};
}

// Symmetric split of the top-r SVD of p^{-1} P_Omega(M):
// X0 = U0 Sigma0^{1/2}, Y0 = V0 Sigma0^{1/2}. Fewer than r numerically
// nonzero singular values pad the factors with zero columns;
// *effective_rank reports how many were usable.
inline FactorPair spectral_init(const Observation& obs, int r,
                                int* effective_rank = nullptr) {
  if (r < 1 || r > obs.n) throw ParameterError("spectral_init: 1 <= r <= n");
  Matrix a = Matrix::Zero(obs.n, obs.n);
  for (std::size_t k = 0; k < obs.omega.size(); ++k) {
    const auto& [i, j] = obs.omega[k];
    a(i, j) = obs.values(static_cast<Eigen::Index>(k)) / obs.p;
  }
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  int usable = 0;
  for (int i = 0; i < r; ++i) {
    if (s(i) > 1e-12 * std::max(s(0), 1e-300)) ++usable;
  }
  if (effective_rank) *effective_rank = usable;

  FactorPair pair;
  pair.x = Matrix::Zero(obs.n, r);
  pair.y = Matrix::Zero(obs.n, r);
  const Vector root = s.head(usable).cwiseSqrt();
  pair.x.leftCols(usable) = svd.matrixU().leftCols(usable) * root.asDiagonal();
  pair.y.leftCols(usable) = svd.matrixV().leftCols(usable) * root.asDiagonal();
  return pair;
}

// Simulation-only oracle start at the planted factors.
inline FactorPair oracle_init(const LowRankTruth& truth) {
  return {truth.x_star, truth.y_star};
}

inline double balance_gap(const FactorPair& pair) {
  return (pair.x.transpose() * pair.x - pair.y.transpose() * pair.y).norm();
}

// Practical default step: 0.5 / sigma_max estimated from the rescaled data.
inline double default_gd_step(const Observation& obs) {
  SparseMatrix a(obs.n, obs.n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(obs.omega.size());
  for (std::size_t k = 0; k < obs.omega.size(); ++k) {
    const auto& [i, j] = obs.omega[k];
    trips.emplace_back(i, j, obs.values(static_cast<Eigen::Index>(k)) / obs.p);
  }
  a.setFromTriplets(trips.begin(), trips.end());
  const double top = spectral_norm(a, 1e-6, 100000);
  if (!(top > 0.0)) throw NumericError("default_gd_step: zero data matrix");
  return 0.5 / top;
}

struct GdReport {
  int iterations = 0;  // gradient steps taken
  std::vector<double> f_trace;
  std::vector<double> grad_trace;
  std::vector<double> balance_trace;
  double best_grad_norm = 0.0;
  int best_iter = 0;
  std::string stopping_reason;
  double wall_seconds = 0.0;
};

// Vanilla gradient descent on f. Returns the iterate with the smallest
// gradient norm seen along the trajectory (the argmin-over-t selection);
// rotation alignment is left to the metrics layer.
inline std::pair<FactorPair, GdReport> gd_solve(const FactorPair& init,
                                                const Observation& obs,
                                                const GdOptions& opts) {
  opts.validate();
  const auto t0 = std::chrono::steady_clock::now();

  detail::ResidualWorkspace ws(obs);
  FactorPair cur = init;
  FactorPair best = init;
  GdReport report;
  report.best_grad_norm = std::numeric_limits<double>::infinity();
  report.stopping_reason = "t_max";

  double f0 = 0.0;
  for (int t = 0;; ++t) {
    const double fit = ws.update(cur);
    const double f = fit / opts.p + 0.5 * opts.lambda / opts.p *
                                        (cur.x.squaredNorm() + cur.y.squaredNorm());
    const auto& s = ws.matrix();
    Matrix gx = (s * cur.y + opts.lambda * cur.x) / opts.p;
    Matrix gy = (s.transpose() * cur.x + opts.lambda * cur.y) / opts.p;
    const double grad_norm =
        std::sqrt(gx.squaredNorm() + gy.squaredNorm());

    report.f_trace.push_back(f);
    report.grad_trace.push_back(grad_norm);
    report.balance_trace.push_back(balance_gap(cur));

    if (t == 0) f0 = f;
    if (!std::isfinite(f) || (t > 0 && f > 10.0 * f0 + 1e-12)) {
      throw DivergenceError("gd_solve: objective diverged", report.f_trace);
    }
    if (grad_norm < report.best_grad_norm) {
      report.best_grad_norm = grad_norm;
      report.best_iter = t;
      best = cur;
    }
    if (grad_norm <= opts.tol_grad) {
      report.stopping_reason = "tol";
      break;
    }
    if (t == opts.t_max) break;

    cur.x.noalias() -= opts.eta * gx;
    cur.y.noalias() -= opts.eta * gy;
    report.iterations = t + 1;
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {std::move(best), std::move(report)};
}

// Balanced factorization of a numerically rank-r matrix (the Q = I branch):
// Z = U Sigma V^T gives X = U Sigma^{1/2}, Y = V Sigma^{1/2}.
inline FactorPair balanced_factorization(const Matrix& z, int r) {
  const int n = static_cast<int>(std::min(z.rows(), z.cols()));
  if (r < 1 || r > n)
    throw ParameterError("balanced_factorization: 1 <= r <= n");
  Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  if (s(r - 1) <= 1e-12 * std::max(s(0), 1e-300))
    throw NumericError("balanced_factorization: rank deficient input");
  const Vector root = s.head(r).cwiseSqrt();
  return {svd.matrixU().leftCols(r) * root.asDiagonal(),
          svd.matrixV().leftCols(r) * root.asDiagonal()};
}

struct BalanceDiagnostic {
  double sigma_q_gap = 0.0;   // ||Sigma_Q - Sigma_Q^{-1}||_F
  double lemma_bound = 0.0;   // ||X~^T X~ - Y~^T Y~||_F / sigma_min(Sigma)
};

// For an external factorization Z = X~ Y~^T, recovers the invertible Q with
// X~ = U Sigma^{1/2} Q, Y~ = V Sigma^{1/2} Q^{-T} and reports how far Q sits
// from a rotation, together with the imbalance bound it must satisfy.
inline BalanceDiagnostic balance_diagnostic(const Matrix& z, int r,
                                            const FactorPair& external) {
  Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  if (s(r - 1) <= 1e-12 * std::max(s(0), 1e-300))
    throw NumericError("balance_diagnostic: rank deficient input");
  const Matrix q = s.head(r).cwiseSqrt().cwiseInverse().asDiagonal() *
                   (svd.matrixU().leftCols(r).transpose() * external.x);
  Eigen::BDCSVD<Matrix> qsvd(q);
  const Vector& sq = qsvd.singularValues();
  if (sq(r - 1) <= 1e-14 * std::max(sq(0), 1e-300))
    throw NumericError("balance_diagnostic: Q is singular");

  BalanceDiagnostic diag;
  diag.sigma_q_gap = (sq - sq.cwiseInverse()).norm();
  diag.lemma_bound = (external.x.transpose() * external.x -
                      external.y.transpose() * external.y)
                         .norm() /
                     s(r - 1);
  return diag;
}

}  // namespace mclab
