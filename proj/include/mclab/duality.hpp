#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mclab/model.hpp"
#include "mclab/nonconvex.hpp"
#include "mclab/operators.hpp"
#include "mclab/rng.hpp"
#include "mclab/types.hpp"

namespace mclab {

namespace detail {

// Rank from the first 10x gap in the descending spectrum; throws when no
// decisive gap exists and no override was supplied.
inline int detect_rank(const Vector& s) {
  const double floor = 1e-300;
  for (Eigen::Index i = 0; i + 1 < s.size(); ++i) {
    if (s(i) <= floor) break;  // dust-to-dust ratios carry no information
    if (s(i) / std::max(s(i + 1), floor) >= 10.0) return static_cast<int>(i) + 1;
  }
  throw RankAmbiguityError(
      "detect_rank: no 10x singular value gap; supply the rank explicitly");
}

}  // namespace detail

struct KktDecomposition {
  double pt_residual_fro = 0.0;  // ||P_T(lambda^{-1} P_Omega(M - Z)) - U V^T||_F
  double w_spectral = 0.0;       // ||P_{T_perp}(lambda^{-1} P_Omega(M - Z))||
  TangentSpace t;
  int rank = 0;
};

// Splits the scaled residual D = lambda^{-1} P_Omega(M - Z) against the
// subgradient structure of ||.||_* at Z: the T-part should be U V^T and the
// T-perp part is the dual certificate W.
inline KktDecomposition kkt_decompose(const Matrix& z, const Observation& obs,
                                      double lambda,
                                      std::optional<int> rank = std::nullopt) {
  if (!(lambda > 0.0)) throw ParameterError("kkt_decompose: lambda > 0");
  if (z.rows() != obs.n || z.cols() != obs.n)
    throw ParameterError("kkt_decompose: dimension mismatch");

  Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const int r = rank ? *rank : detail::detect_rank(s);
  if (r < 1 || r > obs.n) throw ParameterError("kkt_decompose: bad rank");

  KktDecomposition out;
  out.rank = r;
  out.t.u = svd.matrixU().leftCols(r);
  out.t.v = svd.matrixV().leftCols(r);

  Matrix d = Matrix::Zero(obs.n, obs.n);
  for (std::size_t k = 0; k < obs.omega.size(); ++k) {
    const auto& [i, j] = obs.omega[k];
    d(i, j) = (obs.values(static_cast<Eigen::Index>(k)) - z(i, j)) / lambda;
  }
  const Matrix pt = tangent_project(out.t, d);
  out.pt_residual_fro = (pt - out.t.u * out.t.v.transpose()).norm();
  out.w_spectral = spectral_norm(d - pt);
  return out;
}

inline KktDecomposition kkt_decompose(const FactorPair& pair,
                                      const Observation& obs, double lambda) {
  return kkt_decompose(pair.product(), obs, lambda, pair.rank());
}

struct ConditionChecks {
  double noise_norm = 0.0;   // ||P_Omega(E)||
  double debias_norm = 0.0;  // ||P_Omega^debias(X Y^T - M*)||
  bool cond_noise = false;   // noise_norm < lambda / 8
  bool cond_debias = false;  // debias_norm < lambda / 8
};

// Oracle-side evaluation of the regularization conditions; needs the retained
// noise matrix and the planted truth.
inline ConditionChecks check_conditions(const FactorPair& pair,
                                        const Observation& obs,
                                        const LowRankTruth& truth,
                                        double lambda) {
  if (!obs.noise_oracle)
    throw OracleRequiredError("check_conditions: noise oracle not retained");
  ConditionChecks out;
  out.noise_norm = spectral_norm(project_omega(*obs.noise_oracle, obs.omega));
  const Matrix deviation = pair.product() - truth.m_star();
  out.debias_norm =
      spectral_norm(project_omega_debias(deviation, obs.omega, obs.p));
  out.cond_noise = out.noise_norm < lambda / 8.0;
  out.cond_debias = out.debias_norm < lambda / 8.0;
  return out;
}

namespace detail {

// Orthonormal coordinates on the tangent space. A matrix H in T is encoded by
// the blocks (U^T H V, U^T H V_perp, U_perp^T H V), which is an isometry, so
// the quadratic form H -> p^{-1} ||P_Omega(H)||_F^2 becomes a symmetric
// operator on R^{2nr - r^2}.
class TangentInjectivityOp {
 public:
  TangentInjectivityOp(const TangentSpace& t, const IndexSet& omega, double p)
      : u_(t.u), v_(t.v), omega_(&omega), p_(p) {
    const int n = t.n();
    const int r = t.rank();
    Eigen::HouseholderQR<Matrix> qu(u_);
    u_perp_ = (qu.householderQ() * Matrix::Identity(n, n)).rightCols(n - r);
    Eigen::HouseholderQR<Matrix> qv(v_);
    v_perp_ = (qv.householderQ() * Matrix::Identity(n, n)).rightCols(n - r);
    dim_ = 2 * n * r - r * r;
  }

  Eigen::Index dim() const { return dim_; }

  Matrix to_matrix(const Vector& c) const {
    const int n = static_cast<int>(u_.rows());
    const int r = static_cast<int>(u_.cols());
    const auto c1 = Eigen::Map<const Matrix>(c.data(), r, r);
    const auto c2 = Eigen::Map<const Matrix>(c.data() + r * r, r, n - r);
    const auto c3 =
        Eigen::Map<const Matrix>(c.data() + r * r + r * (n - r), n - r, r);
    Matrix row_block = c1 * v_.transpose() + c2 * v_perp_.transpose();
    return u_ * row_block + (u_perp_ * c3) * v_.transpose();
  }

  Vector to_coords(const Matrix& h) const {
    const int n = static_cast<int>(u_.rows());
    const int r = static_cast<int>(u_.cols());
    Vector c(dim_);
    const Matrix uth = u_.transpose() * h;
    Eigen::Map<Matrix>(c.data(), r, r) = uth * v_;
    Eigen::Map<Matrix>(c.data() + r * r, r, n - r) = uth * v_perp_;
    Eigen::Map<Matrix>(c.data() + r * r + r * (n - r), n - r, r) =
        u_perp_.transpose() * (h * v_);
    return c;
  }

  // coords of p^{-1} P_T(P_Omega(H(c))).
  Vector apply(const Vector& c) const {
    const Matrix h = to_matrix(c);
    Matrix masked = Matrix::Zero(h.rows(), h.cols());
    for (const auto& [i, j] : *omega_) masked(i, j) = h(i, j);
    return to_coords(masked) / p_;
  }

 private:
  Matrix u_, v_, u_perp_, v_perp_;
  const IndexSet* omega_;
  double p_;
  Eigen::Index dim_;
};

struct LanczosResult {
  double value = 0.0;
  double residual = 0.0;
  bool converged = false;
};

// Lanczos with full reorthogonalization; returns the smallest Ritz value of a
// symmetric PSD operator. Breakdown means an exact invariant subspace, which
// is treated as converged.
template <typename Op>
LanczosResult lanczos_min_eig(const Op& apply, Eigen::Index dim, int max_steps,
                              double tol, std::uint64_t seed) {
  Rng rng(seed);
  Vector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
  v.normalize();

  std::vector<Vector> basis;
  std::vector<double> alpha, beta;
  basis.push_back(v);

  LanczosResult out;
  const int steps = static_cast<int>(std::min<Eigen::Index>(max_steps, dim));
  for (int k = 0; k < steps; ++k) {
    Vector w = apply(basis[k]);
    const double a = basis[k].dot(w);
    alpha.push_back(a);
    w -= a * basis[k];
    if (k > 0) w -= beta[k - 1] * basis[k - 1];
    for (const Vector& q : basis) w -= q.dot(w) * q;  // full reorthogonalization

    const Eigen::Index m = static_cast<Eigen::Index>(alpha.size());
    Matrix tri = Matrix::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      tri(i, i) = alpha[i];
      if (i + 1 < m) tri(i, i + 1) = tri(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(tri);
    const Eigen::Index which = 0;  // ascending order: smallest first
    out.value = eig.eigenvalues()(which);

    const double b = w.norm();
    out.residual = b * std::abs(eig.eigenvectors()(m - 1, which));
    if (out.residual <= tol * std::max(std::abs(out.value), 1.0)) {
      out.converged = true;
      return out;
    }
    if (b <= 1e-14) {  // breakdown: Krylov space is invariant
      out.converged = true;
      return out;
    }
    if (k + 1 < steps) {
      beta.push_back(b);
      basis.push_back(w / b);
    }
  }
  return out;
}

}  // namespace detail

struct InjectivityOptions {
  int probes = 2;
  int iters = 400;
  double tol = 1e-10;
  Eigen::Index dense_cap = 600;  // build the explicit form below this dim
};

// Smallest Rayleigh quotient of H -> p^{-1} ||P_Omega(H)||_F^2 / ||H||_F^2
// over the tangent space. Small problems are solved by a dense
// eigendecomposition of the explicit quadratic form; larger ones by Krylov
// probes on the same operator.
inline double injectivity_constant(const TangentSpace& t, const IndexSet& omega,
                                   double p,
                                   const InjectivityOptions& opts = {}) {
  if (!(p > 0.0)) throw ParameterError("injectivity_constant: p > 0");
  validate_tangent_space(t);
  if (omega.empty()) return 0.0;
  detail::TangentInjectivityOp op(t, omega, p);
  const Eigen::Index dim = op.dim();

  if (dim <= opts.dense_cap) {
    Matrix k(dim, dim);
    Vector e = Vector::Zero(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      e(i) = 1.0;
      k.col(i) = op.apply(e);
      e(i) = 0.0;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (k + k.transpose()));
    return std::max(eig.eigenvalues()(0), 0.0);
  }

  double best = std::numeric_limits<double>::infinity();
  double worst_residual = 0.0;
  bool any_converged = false;
  for (int probe = 0; probe < std::max(opts.probes, 1); ++probe) {
    auto res = detail::lanczos_min_eig(
        [&](const Vector& c) { return op.apply(c); }, dim, opts.iters,
        opts.tol, derive_seed(0xabcdefULL + probe, "injectivity"));
    best = std::min(best, res.value);
    worst_residual = std::max(worst_residual, res.residual);
    any_converged = any_converged || res.converged;
  }
  if (!any_converged)
    throw NumericError("injectivity_constant: probes did not converge "
                       "(residual " +
                       std::to_string(worst_residual) + ")");
  return std::max(best, 0.0);
}

struct GapBound {
  double envelope = 0.0;    // (kappa / c_inj) sigma_min^{-1/2} ||grad f||_F
  double grad_norm = 0.0;   // ||grad f(X, Y)||_F
  bool sv_range_ok = false; // singular values within [sqrt(s_min/2), sqrt(2 s_max)]
  bool small_grad_ok = false;  // grad test with the unspecified constant c = 1
  std::optional<bool> cond_noise;
  std::optional<bool> cond_debias;
  bool valid = false;
};

// Certified envelope for ||X Y^T - Z_cvx||_F without the absolute constant.
// Hypothesis failures are reported through the flags, never silently.
inline GapBound gap_bound(const FactorPair& pair, const Observation& obs,
                          double lambda, double p, double c_inj,
                          double kappa_est, double sigma_min_est,
                          const LowRankTruth* truth = nullptr) {
  if (!(p > 0.0) || !(lambda > 0.0) || !(kappa_est >= 1.0) ||
      !(sigma_min_est > 0.0))
    throw ParameterError("gap_bound: bad parameters");

  GapBound out;
  const auto [gx, gy] = gradient_f(pair, obs, lambda, p);
  out.grad_norm = std::sqrt(gx.squaredNorm() + gy.squaredNorm());

  const double sigma_max_est = kappa_est * sigma_min_est;
  const double lo = std::sqrt(sigma_min_est / 2.0);
  const double hi = std::sqrt(2.0 * sigma_max_est);
  Eigen::BDCSVD<Matrix> sx(pair.x), sy(pair.y);
  const auto in_range = [&](const Vector& s) {
    return s(s.size() - 1) >= lo && s(0) <= hi;
  };
  out.sv_range_ok = in_range(sx.singularValues()) && in_range(sy.singularValues());

  out.small_grad_ok =
      out.grad_norm <= std::sqrt(std::max(c_inj, 0.0) * p) / kappa_est *
                           (lambda / p) * std::sqrt(sigma_min_est);

  if (truth && obs.noise_oracle) {
    const auto checks = check_conditions(pair, obs, *truth, lambda);
    out.cond_noise = checks.cond_noise;
    out.cond_debias = checks.cond_debias;
  }

  out.envelope = c_inj > 0.0 ? kappa_est / c_inj * out.grad_norm /
                                   std::sqrt(sigma_min_est)
                             : std::numeric_limits<double>::infinity();
  out.valid = out.sv_range_ok && out.small_grad_ok && c_inj > 0.0 &&
              out.cond_noise.value_or(true) && out.cond_debias.value_or(true);
  return out;
}

// Executable rendering of the exact primal-dual lemma: subgradient inclusion
// up to tol, strict dual certificate, injective sampling on T.
inline bool verify_unique_optimum(const FactorPair& pair,
                                  const Observation& obs, double lambda,
                                  double tol,
                                  const InjectivityOptions& inj_opts = {}) {
  if (!(tol > 0.0)) throw ParameterError("verify_unique_optimum: tol > 0");
  const auto kkt = kkt_decompose(pair, obs, lambda);
  if (kkt.pt_residual_fro > tol * lambda) return false;
  if (kkt.w_spectral > 1.0 - tol) return false;
  const double c_inj = injectivity_constant(kkt.t, obs.omega, obs.p, inj_opts);
  return c_inj > 10.0 * inj_opts.tol;
}

// Bundle produced per certified solution; serializes to a flat key-value
// record for the harness and the CLI.
struct CertificateReport {
  double pt_residual_fro = 0.0;
  double w_spectral = 0.0;
  double c_inj = 0.0;
  double grad_norm = 0.0;
  double gap_envelope = 0.0;
  int rank = 0;
  bool sv_range_ok = false;
  bool small_grad_ok = false;
  std::optional<bool> cond_noise;
  std::optional<bool> cond_debias;
  std::optional<double> noise_norm;
  std::optional<double> debias_norm;
  bool hypotheses_ok = false;
  bool verify_unique = false;

  std::string to_kv() const {
    std::ostringstream os;
    os.precision(17);
    os << "pt_residual_fro " << pt_residual_fro << '\n'
       << "w_spectral " << w_spectral << '\n'
       << "c_inj " << c_inj << '\n'
       << "grad_norm " << grad_norm << '\n'
       << "gap_envelope " << gap_envelope << '\n'
       << "rank " << rank << '\n'
       << "sv_range_ok " << sv_range_ok << '\n'
       << "small_grad_ok " << small_grad_ok << '\n';
    if (cond_noise) os << "cond_noise " << *cond_noise << '\n';
    if (cond_debias) os << "cond_debias " << *cond_debias << '\n';
    if (noise_norm) os << "noise_norm " << *noise_norm << '\n';
    if (debias_norm) os << "debias_norm " << *debias_norm << '\n';
    os << "hypotheses_ok " << hypotheses_ok << '\n'
       << "verify_unique " << verify_unique << '\n';
    return os.str();
  }
};

// Full certificate for a factored candidate: KKT split, injectivity probe,
// gap envelope, and (when the simulation oracles are present) the noise and
// debias condition checks.
inline CertificateReport certify(const FactorPair& pair, const Observation& obs,
                                 double lambda, double kappa_est,
                                 double sigma_min_est,
                                 const LowRankTruth* truth = nullptr,
                                 double verify_tol = 1e-4,
                                 const InjectivityOptions& inj_opts = {}) {
  CertificateReport rep;
  const auto kkt = kkt_decompose(pair, obs, lambda);
  rep.pt_residual_fro = kkt.pt_residual_fro;
  rep.w_spectral = kkt.w_spectral;
  rep.rank = kkt.rank;
  rep.c_inj = injectivity_constant(kkt.t, obs.omega, obs.p, inj_opts);

  const auto bound =
      gap_bound(pair, obs, lambda, obs.p, rep.c_inj, kappa_est, sigma_min_est);
  rep.grad_norm = bound.grad_norm;
  rep.gap_envelope = bound.envelope;
  rep.sv_range_ok = bound.sv_range_ok;
  rep.small_grad_ok = bound.small_grad_ok;
  rep.hypotheses_ok = bound.valid;

  if (truth && obs.noise_oracle) {
    const auto checks = check_conditions(pair, obs, *truth, lambda);
    rep.noise_norm = checks.noise_norm;
    rep.debias_norm = checks.debias_norm;
    rep.cond_noise = checks.cond_noise;
    rep.cond_debias = checks.cond_debias;
    rep.hypotheses_ok =
        rep.hypotheses_ok && checks.cond_noise && checks.cond_debias;
  }

  rep.verify_unique = rep.pt_residual_fro <= verify_tol * lambda &&
                      rep.w_spectral <= 1.0 - verify_tol &&
                      rep.c_inj > 10.0 * inj_opts.tol;
  return rep;
}

}  // namespace mclab
