#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "mclab/rng.hpp"
#include "mclab/types.hpp"

namespace mclab {

// Planted rank-r ground truth M* = U* diag(sigma*) V*^T with the balanced
// factors X* = U* sqrt(Sigma*), Y* = V* sqrt(Sigma*).
struct LowRankTruth {
  int n = 0;
  int r = 0;
  Matrix u_star;      // n x r, orthonormal columns
  Matrix v_star;      // n x r, orthonormal columns
  Vector sigma_star;  // r, descending, positive
  Matrix x_star;      // n x r
  Matrix y_star;      // n x r

  // Dense product, materialized on first use. Each trial owns its truth, so
  // the lazy cache is not guarded against concurrent first access.
  const Matrix& m_star() const {
    if (!m_cache_) {
      m_cache_ = std::make_shared<Matrix>(u_star * sigma_star.asDiagonal() *
                                          v_star.transpose());
    }
    return *m_cache_;
  }

  double sigma_max() const { return sigma_star(0); }
  double sigma_min() const { return sigma_star(r - 1); }

 private:
  mutable std::shared_ptr<Matrix> m_cache_;
};

struct ModelConstants {
  double mu = 0.0;
  double kappa = 0.0;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
};

// Observed entries on Omega, values aligned with the index list. The full
// noise matrix may be retained for oracle-side condition checks.
struct Observation {
  int n = 0;
  IndexSet omega;
  Vector values;
  double p = 0.0;
  double sigma = 0.0;
  std::optional<Matrix> noise_oracle;
};

namespace detail {

// QR orthonormalization with the R diagonal forced nonnegative, so the basis
// is a deterministic function of the Gaussian draw.
inline Matrix orthonormalize_sign_fixed(const Matrix& g) {
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
  Matrix r = q.transpose() * g;
  for (int j = 0; j < g.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace detail

inline LowRankTruth gen_truth(int n, int r, const std::vector<double>& spectrum,
                              std::uint64_t seed) {
  if (n <= 0) throw ParameterError("gen_truth: n must be positive");
  if (r < 1 || r > n) throw ParameterError("gen_truth: need 1 <= r <= n");

  Vector sigma(r);
  if (spectrum.empty()) {
    sigma.setOnes();  // flat spectrum, kappa = 1
  } else {
    if (static_cast<int>(spectrum.size()) != r)
      throw ParameterError("gen_truth: spectrum length must equal r");
    for (int i = 0; i < r; ++i) {
      if (!(spectrum[i] > 0.0))
        throw ParameterError("gen_truth: spectrum must be positive");
      if (i > 0 && spectrum[i] > spectrum[i - 1])
        throw ParameterError("gen_truth: spectrum must be non-increasing");
      sigma(i) = spectrum[i];
    }
  }

  Rng rng_u(derive_seed(seed, "truth-u"));
  Rng rng_v(derive_seed(seed, "truth-v"));
  Matrix gu(n, r), gv(n, r);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j) gu(i, j) = rng_u.normal();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j) gv(i, j) = rng_v.normal();

  LowRankTruth truth;
  truth.n = n;
  truth.r = r;
  truth.u_star = detail::orthonormalize_sign_fixed(gu);
  truth.v_star = detail::orthonormalize_sign_fixed(gv);
  truth.sigma_star = sigma;
  const Vector root = sigma.cwiseSqrt();
  truth.x_star = truth.u_star * root.asDiagonal();
  truth.y_star = truth.v_star * root.asDiagonal();
  return truth;
}

// Independent Bernoulli(p) draw per cell, row-major scan, so the set is
// sorted and deduplicated by construction.
inline IndexSet sample_mask(int n, double p, std::uint64_t seed) {
  if (n <= 0) throw ParameterError("sample_mask: n must be positive");
  if (!(p > 0.0) || p > 1.0)
    throw ParameterError("sample_mask: p must lie in (0, 1]");
  IndexSet omega;
  omega.reserve(static_cast<std::size_t>(p * n * n * 1.1) + 16);
  Rng rng(derive_seed(seed, "mask"));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (p >= 1.0 || rng.bernoulli(p)) omega.emplace_back(i, j);
    }
  }
  return omega;
}

// Gaussian N(0, sigma^2) noise as the sub-Gaussian instance. The full noise
// matrix is always drawn (row-major) so the observed values do not depend on
// whether the oracle is retained. p_nominal records the sampling probability
// omega was drawn with; when omitted the empirical rate |Omega|/n^2 is stored.
inline Observation observe(const LowRankTruth& truth, const IndexSet& omega,
                           double sigma, std::uint64_t seed, bool keep_noise,
                           double p_nominal = -1.0) {
  if (sigma < 0.0) throw ParameterError("observe: sigma must be nonnegative");
  const int n = truth.n;
  for (const auto& [i, j] : omega) {
    if (i < 0 || i >= n || j < 0 || j >= n)
      throw ParameterError("observe: omega index out of range");
  }

  Observation obs;
  obs.n = n;
  obs.omega = omega;
  obs.p = p_nominal > 0.0
              ? p_nominal
              : static_cast<double>(omega.size()) / (static_cast<double>(n) * n);
  obs.sigma = sigma;
  obs.values.resize(static_cast<Eigen::Index>(omega.size()));

  Matrix noise = Matrix::Zero(n, n);
  if (sigma > 0.0) {
    Rng rng(derive_seed(seed, "noise"));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) noise(i, j) = sigma * rng.normal();
  }

  const Matrix& m = truth.m_star();
  for (std::size_t k = 0; k < omega.size(); ++k) {
    const auto& [i, j] = omega[k];
    obs.values(static_cast<Eigen::Index>(k)) = m(i, j) + noise(i, j);
  }
  if (keep_noise) obs.noise_oracle = std::move(noise);
  return obs;
}

// mu = (n/r) * max(||U*||_{2,inf}^2, ||V*||_{2,inf}^2), the largest row
// l2 norm squared of the singular subspaces.
inline double incoherence(const LowRankTruth& truth) {
  const double row_u = truth.u_star.rowwise().squaredNorm().maxCoeff();
  const double row_v = truth.v_star.rowwise().squaredNorm().maxCoeff();
  return static_cast<double>(truth.n) / truth.r * std::max(row_u, row_v);
}

inline ModelConstants model_constants(const LowRankTruth& truth) {
  ModelConstants c;
  c.mu = incoherence(truth);
  c.sigma_max = truth.sigma_max();
  c.sigma_min = truth.sigma_min();
  c.kappa = c.sigma_max / c.sigma_min;
  return c;
}

// --- plain-text serialization -----------------------------------------------
//
// Header line "n p sigma", then one "i j value" line per observed entry
// (0-based indices, 17 significant digits). The noise oracle, when kept, goes
// to a sibling file of identical layout listing every cell.

namespace detail {

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace detail

inline void save_observation(const Observation& obs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParameterError("save_observation: cannot open " + path);
  out << obs.n << ' ' << detail::format_double(obs.p) << ' '
      << detail::format_double(obs.sigma) << '\n';
  for (std::size_t k = 0; k < obs.omega.size(); ++k) {
    out << obs.omega[k].first << ' ' << obs.omega[k].second << ' '
        << detail::format_double(obs.values(static_cast<Eigen::Index>(k)))
        << '\n';
  }
  if (obs.noise_oracle) {
    std::ofstream nout(path + ".noise");
    if (!nout)
      throw ParameterError("save_observation: cannot open " + path + ".noise");
    nout << obs.n << ' ' << detail::format_double(obs.p) << ' '
         << detail::format_double(obs.sigma) << '\n';
    const Matrix& e = *obs.noise_oracle;
    for (int i = 0; i < obs.n; ++i)
      for (int j = 0; j < obs.n; ++j)
        nout << i << ' ' << j << ' ' << detail::format_double(e(i, j)) << '\n';
  }
}

inline Observation load_observation(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("load_observation: cannot open " + path);
  Observation obs;
  std::string line;
  if (!std::getline(in, line))
    throw ParameterError("load_observation: empty file " + path);
  {
    std::istringstream head(line);
    if (!(head >> obs.n >> obs.p >> obs.sigma) || obs.n <= 0)
      throw ParameterError("load_observation: malformed header in " + path);
  }
  std::vector<double> vals;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    int i = 0, j = 0;
    double v = 0.0;
    if (!(row >> i >> j >> v))
      throw ParameterError("load_observation: malformed entry in " + path);
    if (i < 0 || i >= obs.n || j < 0 || j >= obs.n)
      throw ParameterError("load_observation: index out of range in " + path);
    obs.omega.emplace_back(i, j);
    vals.push_back(v);
  }
  if (!std::is_sorted(obs.omega.begin(), obs.omega.end()))
    throw ParameterError("load_observation: entries must be sorted row-major");
  if (std::adjacent_find(obs.omega.begin(), obs.omega.end()) !=
      obs.omega.end())
    throw ParameterError("load_observation: duplicate index");
  obs.values = Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));

  std::ifstream nin(path + ".noise");
  if (nin) {
    std::getline(nin, line);  // header, same shape as the main file
    Matrix e = Matrix::Zero(obs.n, obs.n);
    while (std::getline(nin, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      int i = 0, j = 0;
      double v = 0.0;
      if (!(row >> i >> j >> v))
        throw ParameterError("load_observation: malformed noise entry");
      e(i, j) = v;
    }
    obs.noise_oracle = std::move(e);
  }
  return obs;
}

}  // namespace mclab
