#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mclab/model.hpp"
#include "mclab/operators.hpp"
#include "mclab/types.hpp"

namespace mclab {

enum class Accel { plain, accelerated };

struct ConvexOptions {
  double lambda = 0.0;
  int max_iters = 20000;
  double step = 1.0;  // P_Omega(Z - M) has Lipschitz constant exactly 1
  Accel accel = Accel::plain;
  double tol_grad_map = 1e-8;
  std::optional<double> inf_cap;  // alpha for the constrained variant

  void validate() const {
    if (!(lambda > 0.0)) throw ParameterError("ConvexOptions: lambda > 0");
    if (!(tol_grad_map > 0.0))
      throw ParameterError("ConvexOptions: tol_grad_map > 0");
    if (!(step > 0.0) || step >= 2.0)
      throw ParameterError("ConvexOptions: step in (0, 2)");
    if (max_iters < 1) throw ParameterError("ConvexOptions: max_iters >= 1");
    if (inf_cap && !(*inf_cap > 0.0))
      throw ParameterError("ConvexOptions: inf_cap > 0");
  }
};

struct SolveReport {
  int iterations = 0;
  std::vector<double> objective_trace;
  double grad_map_norm = 0.0;
  std::string stopping_reason;
  double wall_seconds = 0.0;
  Vector singular_values;  // spectrum of the returned iterate
};

// g(Z) = 1/2 sum_{(i,j) in Omega} (Z_ij - M_ij)^2 + lambda ||Z||_*.
inline double objective_g(const Matrix& z, const Observation& obs,
                          double lambda) {
  if (z.rows() != obs.n || z.cols() != obs.n)
    throw ParameterError("objective_g: dimension mismatch");
  double fit = 0.0;
  for (std::size_t k = 0; k < obs.omega.size(); ++k) {
    const auto& [i, j] = obs.omega[k];
    const double d = z(i, j) - obs.values(static_cast<Eigen::Index>(k));
    fit += d * d;
  }
  return 0.5 * fit + lambda * nuclear_norm(z);
}

// Top-r truncation of the SVD.
inline Matrix best_rank_r(const Matrix& z, int r) {
  const int n = static_cast<int>(std::min(z.rows(), z.cols()));
  if (r < 1 || r > n) throw ParameterError("best_rank_r: need 1 <= r <= n");
  if (!z.allFinite()) throw NumericError("best_rank_r: non-finite input");
  Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU().leftCols(r) *
         svd.singularValues().head(r).asDiagonal() *
         svd.matrixV().leftCols(r).transpose();
}

namespace detail {

// One proximal step from `base`: svt(base - step * P_Omega(base - M), step*lambda).
// Reports the thresholded spectrum so the caller gets g() without another SVD.
struct ProxStep {
  Matrix z;
  Vector sv;          // singular values of z (soft-thresholded)
  double fit = 0.0;   // 1/2 ||P_Omega(z - M)||_F^2
  double nuc = 0.0;   // ||z||_*
};

inline ProxStep prox_grad_step(const Matrix& base, const Observation& obs,
                               double step, double lambda,
                               const std::optional<double>& clip) {
  Matrix w = base;
  for (std::size_t k = 0; k < obs.omega.size(); ++k) {
    const auto& [i, j] = obs.omega[k];
    w(i, j) -= step * (base(i, j) - obs.values(static_cast<Eigen::Index>(k)));
  }
  if (!w.allFinite()) throw NumericError("solve_convex: iterate diverged");
  Eigen::BDCSVD<Matrix> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector s = svd.singularValues();
  const double tau = step * lambda;
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = std::max(s(i) - tau, 0.0);

  ProxStep out;
  out.z = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  if (clip && out.z.cwiseAbs().maxCoeff() > *clip) {
    out.z = out.z.cwiseMax(-*clip).cwiseMin(*clip);
    Eigen::BDCSVD<Matrix> clipped(out.z);
    out.sv = clipped.singularValues();
  } else {
    out.sv = s;
  }
  out.nuc = out.sv.sum();
  for (std::size_t k = 0; k < obs.omega.size(); ++k) {
    const auto& [i, j] = obs.omega[k];
    const double d = out.z(i, j) - obs.values(static_cast<Eigen::Index>(k));
    out.fit += 0.5 * d * d;
  }
  return out;
}

inline std::pair<Matrix, SolveReport> prox_grad_loop(
    const Observation& obs, const ConvexOptions& opts,
    const std::optional<double>& clip) {
  opts.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const int n = obs.n;

  Matrix z = Matrix::Zero(n, n);
  Matrix z_prev = z;
  double t_momentum = 1.0;
  double g_prev = std::numeric_limits<double>::infinity();

  SolveReport report;
  report.stopping_reason = "max_iters";
  Vector last_sv = Vector::Zero(n);

  for (int it = 0; it < opts.max_iters; ++it) {
    Matrix base;
    if (opts.accel == Accel::accelerated && it > 0) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_momentum * t_momentum));
      const double beta = (t_momentum - 1.0) / t_next;
      base = z + beta * (z - z_prev);
      t_momentum = t_next;
    } else {
      base = z;
    }

    ProxStep step = prox_grad_step(base, obs, opts.step, opts.lambda, clip);
    const double g = step.fit + opts.lambda * step.nuc;

    if (opts.accel == Accel::accelerated && g > g_prev) {
      // restart momentum from the last non-increasing point
      t_momentum = 1.0;
      step = prox_grad_step(z, obs, opts.step, opts.lambda, clip);
    }
    g_prev = step.fit + opts.lambda * step.nuc;
    report.objective_trace.push_back(g_prev);

    const double grad_map = (step.z - z).norm() / opts.step;
    z_prev = std::move(z);
    z = std::move(step.z);
    last_sv = std::move(step.sv);
    report.iterations = it + 1;
    report.grad_map_norm = grad_map;
    if (grad_map <= opts.tol_grad_map) {
      report.stopping_reason = "tol";
      break;
    }
  }

  report.singular_values = std::move(last_sv);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {std::move(z), std::move(report)};
}

}  // namespace detail

// Proximal gradient on g: Z^{k+1} = svt(Z^k - step * P_Omega(Z^k - M), step*lambda).
// Accelerated mode adds momentum with restart-on-increase; monotone objective
// is guaranteed only in plain mode with step <= 1. Non-convergence is
// reported through stopping_reason, not thrown.
inline std::pair<Matrix, SolveReport> solve_convex(const Observation& obs,
                                                   const ConvexOptions& opts) {
  if (opts.inf_cap)
    throw ParameterError("solve_convex: inf_cap set; use solve_constrained");
  return detail::prox_grad_loop(obs, opts, std::nullopt);
}

// Constrained variant of the program: same iteration with an entrywise clip
// to [-alpha, alpha] after each svt step (inexact alternating splitting).
inline std::pair<Matrix, SolveReport> solve_constrained(
    const Observation& obs, const ConvexOptions& opts) {
  if (!opts.inf_cap)
    throw ParameterError("solve_constrained: inf_cap (alpha) required");
  return detail::prox_grad_loop(obs, opts, opts.inf_cap);
}

// One round of soft singular value thresholding on the rescaled zero-padded
// data matrix p^{-1} P_Omega(M).
inline Matrix solve_usvt(const Observation& obs, double tau) {
  if (tau < 0.0) throw ParameterError("solve_usvt: tau must be nonnegative");
  const int n = obs.n;
  Matrix a = Matrix::Zero(n, n);
  for (std::size_t k = 0; k < obs.omega.size(); ++k) {
    const auto& [i, j] = obs.omega[k];
    a(i, j) = obs.values(static_cast<Eigen::Index>(k)) / obs.p;
  }
  return svt(a, tau).z;
}

// Threshold rule for solve_usvt mapped onto the p^{-1} P_Omega(M) scaling:
// tau = c * max(sigma, ||M*||_inf) * sqrt(n/p). The constant c is a
// configuration knob (default 0.75).
inline double usvt_threshold(double sigma, double m_inf, int n, double p,
                             double c = 0.75) {
  if (!(p > 0.0)) throw ParameterError("usvt_threshold: p > 0 required");
  return c * std::max(sigma, m_inf) * std::sqrt(static_cast<double>(n) / p);
}

}  // namespace mclab
