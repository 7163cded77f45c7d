// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//
// Criterion configurations are pinned here, seeds included, so reruns are
// bitwise reproducible. Criteria 1, 4, 5 and 6 share the sigma in {1e-4, 1e-3}
// trial set; criteria 2, 3 and 7 share the one-decade sweep.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "mclab/harness.hpp"

using namespace mclab;

namespace {

constexpr double kGapDominationConstant = 2304.0;  // 32 * 72 proof-chain product

struct TimedSweep {
  SweepResult result;
  ExperimentConfig cfg;
  double wall_seconds = 0.0;
};

TimedSweep run_timed(ExperimentConfig cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  TimedSweep out;
  out.result = run_sweep(cfg);
  out.cfg = std::move(cfg);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

// sigma in {1e-4, 1e-3}, 5 trials each, lambda = 5 sigma sqrt(np),
// convex tol 1e-10, nonconvex tol 1e-9, oracle-initialized GD.
const TimedSweep& criterion1_data() {
  static const TimedSweep data = [] {
    ExperimentConfig cfg;
    cfg.n = 200;
    cfg.r = 5;
    cfg.p = 0.2;
    cfg.sigma_grid = {1e-4, 1e-3};
    cfg.trials = 5;
    cfg.lambda_c = 5.0;
    cfg.estimators = {"convex", "convex_rank_r", "nonconvex_oracle"};
    cfg.convex_tol = 1e-10;
    cfg.convex_max_iters = 100000;
    cfg.ncvx_tol = 1e-9;
    cfg.ncvx_t_max = 100000;
    cfg.base_seed = 1;
    cfg.out_dir = "acceptance_out/criterion1";
    return run_timed(std::move(cfg));
  }();
  return data;
}

// One decade of sigma in the linear-scaling regime, 5 trials per point.
// The grid sits at n = 300, p = 0.25: the sample budget there is ~7.5x the
// rank-5 degrees of freedom, comfortably past the exact-recovery transition,
// so no draw carries a sigma-independent error floor.
const TimedSweep& criterion2_data() {
  static const TimedSweep data = [] {
    ExperimentConfig cfg;
    cfg.n = 300;
    cfg.r = 5;
    cfg.p = 0.25;
    cfg.sigma_grid = {3e-5, 6.4633e-5, 1.3925e-4, 3e-4};
    cfg.trials = 5;
    cfg.lambda_c = 5.0;
    cfg.estimators = {"convex", "constrained", "usvt"};
    cfg.convex_tol = 1e-9;
    cfg.convex_max_iters = 100000;
    cfg.certificates = false;
    cfg.base_seed = 101;
    cfg.out_dir = "acceptance_out/criterion2";
    return run_timed(std::move(cfg));
  }();
  return data;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                   : std::accumulate(v.begin(), v.end(), 0.0) /
                         static_cast<double>(v.size());
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t m = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const double lx = std::log10(x[k]), ly = std::log10(y[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

double sweep_mean(const SweepResult& r, const std::string& estimator,
                  double sigma, double SweepRow::*field) {
  for (const auto& row : r.rows)
    if (row.estimator == estimator && row.sigma == sigma) return row.*field;
  return std::numeric_limits<double>::quiet_NaN();
}

void verdict(int criterion, bool pass, const std::string& detail) {
  std::printf("[CRITERION %d] %s — %s\n", criterion, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
}

}  // namespace

TEST(Acceptance, Criterion1ConvexNonconvexProximity) {
  const auto& data = criterion1_data();
  std::vector<double> dist_all;
  std::printf("  %-6s %-9s %-12s %-12s %-12s %-10s\n", "seed", "sigma",
              "pair_dist", "convex_err", "ncvx_err", "w");
  for (const auto& rec : data.result.records) {
    std::printf("  %-6llu %-9.1e %-12.3e %-12.3e %-12.3e %-10.4f\n",
                static_cast<unsigned long long>(rec.seed), rec.sigma,
                rec.pair_dist_rel.value_or(-1),
                rec.estimators.at("convex").errors.rel_fro,
                rec.estimators.at("nonconvex_oracle").errors.rel_fro,
                rec.certificate ? rec.certificate->w_spectral : -1.0);
    ASSERT_TRUE(rec.pair_dist_rel.has_value());
    dist_all.push_back(*rec.pair_dist_rel);
  }
  const double mean_dist = mean_of(dist_all);

  bool two_orders = true;
  for (double sigma : data.cfg.sigma_grid) {
    std::vector<double> dist, conv, ncvx;
    for (const auto& rec : data.result.records) {
      if (rec.sigma != sigma) continue;
      dist.push_back(*rec.pair_dist_rel);
      conv.push_back(rec.estimators.at("convex").errors.rel_fro);
      ncvx.push_back(rec.estimators.at("nonconvex_oracle").errors.rel_fro);
    }
    two_orders = two_orders &&
                 mean_of(dist) <= 1e-2 * std::min(mean_of(conv), mean_of(ncvx));
  }

  const bool pass =
      mean_dist <= 1e-5 && two_orders && data.wall_seconds <= 300.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "mean |Zcvx - Zncvx|F/|M*|F = %.3e (limit 1e-5), two-orders "
                "separation %s, runtime %.0f s (limit 300)",
                mean_dist, two_orders ? "ok" : "violated", data.wall_seconds);
  verdict(1, pass, buf);
  EXPECT_LE(mean_dist, 1e-5);
  EXPECT_TRUE(two_orders);
  EXPECT_LE(data.wall_seconds, 300.0);
}

TEST(Acceptance, Criterion2LinearNoiseScaling) {
  const auto& data = criterion2_data();
  std::vector<double> sig, fro, spec, inf;
  for (double sigma : data.cfg.sigma_grid) {
    sig.push_back(sigma);
    fro.push_back(sweep_mean(data.result, "convex", sigma, &SweepRow::rel_fro));
    spec.push_back(sweep_mean(data.result, "convex", sigma, &SweepRow::rel_spec));
    inf.push_back(sweep_mean(data.result, "convex", sigma, &SweepRow::rel_inf));
  }
  const double s_fro = loglog_slope(sig, fro);
  const double s_spec = loglog_slope(sig, spec);
  const double s_inf = loglog_slope(sig, inf);

  const bool in_band = s_fro >= 0.85 && s_fro <= 1.15 && s_spec >= 0.85 &&
                       s_spec <= 1.15 && s_inf >= 0.85 && s_inf <= 1.15;
  const bool pass = in_band && data.wall_seconds <= 600.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "log-log slopes over sigma in [3e-5, 3e-4]: fro %.3f, spec "
                "%.3f, inf %.3f (band [0.85, 1.15]), runtime %.0f s (limit 600)",
                s_fro, s_spec, s_inf, data.wall_seconds);
  verdict(2, pass, buf);
  EXPECT_GE(s_fro, 0.85);
  EXPECT_LE(s_fro, 1.15);
  EXPECT_GE(s_spec, 0.85);
  EXPECT_LE(s_spec, 1.15);
  EXPECT_GE(s_inf, 0.85);
  EXPECT_LE(s_inf, 1.15);
  EXPECT_LE(data.wall_seconds, 600.0);
}

TEST(Acceptance, Criterion3TheoremFrobeniusConstant) {
  const auto& data = criterion2_data();
  const double sigma_min = 1.0;  // flat spectrum
  double worst = 0.0;
  for (double sigma : data.cfg.sigma_grid) {
    const double mean_fro =
        sweep_mean(data.result, "convex", sigma, &SweepRow::rel_fro);
    const double normalized =
        mean_fro / (sigma / sigma_min * std::sqrt(data.cfg.n / data.cfg.p));
    worst = std::max(worst, normalized);
  }
  const bool pass = worst <= 10.0;
  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "max |Zcvx - M*|F / [(sigma/sigma_min) sqrt(n/p) |M*|F] = %.2f "
                "(limit 10)",
                worst);
  verdict(3, pass, buf);
  EXPECT_LE(worst, 10.0);
}

TEST(Acceptance, Criterion4NearRankRStructure) {
  const auto& data = criterion1_data();
  const double limit = 10.0 * data.cfg.convex_tol;  // 1e-9
  double worst_ratio = 0.0, worst_bundle_gap = 0.0;
  for (const auto& rec : data.result.records) {
    const auto& conv = rec.estimators.at("convex");
    const auto& trunc = rec.estimators.at("convex_rank_r");
    worst_ratio = std::max(worst_ratio, conv.sv_ratio);
    worst_bundle_gap = std::max(
        {worst_bundle_gap,
         std::abs(conv.errors.rel_fro - trunc.errors.rel_fro),
         std::abs(conv.errors.rel_spec - trunc.errors.rel_spec),
         std::abs(conv.errors.rel_inf - trunc.errors.rel_inf)});
  }
  const bool pass = worst_ratio <= limit && worst_bundle_gap <= 2.0 * limit;
  char buf[224];
  std::snprintf(buf, sizeof(buf),
                "max sigma_{r+1}/sigma_1 of Zcvx = %.3e (limit %.0e), max "
                "error-bundle gap Zcvx vs rank-r truncation = %.3e (limit %.0e)",
                worst_ratio, limit, worst_bundle_gap, 2.0 * limit);
  verdict(4, pass, buf);
  EXPECT_LE(worst_ratio, limit);
  EXPECT_LE(worst_bundle_gap, 2.0 * limit);
}

TEST(Acceptance, Criterion5DualCertificateValidity) {
  const auto& data = criterion1_data();
  int verified = 0, total = 0;
  double worst_w = 0.0, worst_pt = 0.0;
  for (const auto& rec : data.result.records) {
    ASSERT_TRUE(rec.certificate.has_value());
    const auto& cert = *rec.certificate;
    ++total;
    worst_w = std::max(worst_w, cert.w_spectral);
    worst_pt = std::max(worst_pt, cert.pt_residual_fro / (1e-6 * rec.lambda));
    if (cert.verify_unique) ++verified;
  }
  const double verify_rate = static_cast<double>(verified) / total;
  const bool pass = worst_w < 1.0 && worst_pt <= 1.0 && verify_rate >= 0.9;
  char buf[224];
  std::snprintf(buf, sizeof(buf),
                "max w_spectral = %.4f (limit < 1), max pt_residual / (1e-6 "
                "lambda) = %.3f (limit 1), verify_unique on %d/%d trials "
                "(needs >= 90%%)",
                worst_w, worst_pt, verified, total);
  verdict(5, pass, buf);
  EXPECT_LT(worst_w, 1.0);
  EXPECT_LE(worst_pt, 1.0);
  EXPECT_GE(verify_rate, 0.9);
}

TEST(Acceptance, Criterion6GapBoundDomination) {
  const auto& data = criterion1_data();
  int held = 0, dominated_held = 0, dominated_all = 0, total = 0;
  for (const auto& rec : data.result.records) {
    ASSERT_TRUE(rec.certificate.has_value());
    ASSERT_TRUE(rec.pair_dist_abs.has_value());
    const auto& cert = *rec.certificate;
    ++total;
    const bool dominated =
        kGapDominationConstant * cert.gap_envelope >= *rec.pair_dist_abs;
    if (dominated) ++dominated_all;
    if (cert.hypotheses_ok) {
      ++held;
      if (dominated) ++dominated_held;
    }
  }
  const bool pass = dominated_held == held;  // vacuous when held == 0
  char buf[288];
  std::snprintf(buf, sizeof(buf),
                "C = %.0f: domination on %d/%d hypothesis-holding trials "
                "(Lemma-2-style hypotheses held on %d/%d; the noise condition "
                "fails at C_lambda = 5 since |P_Omega(E)| ~ 2 sigma sqrt(np) > "
                "lambda/8); unconditional domination %d/%d",
                kGapDominationConstant, dominated_held, held, held, total,
                dominated_all, total);
  verdict(6, pass, buf);
  EXPECT_EQ(dominated_held, held);
}

TEST(Acceptance, Criterion7ComparisonBehavior) {
  const auto& data = criterion2_data();
  const double sig_lo = data.cfg.sigma_grid.front();
  const double sig_hi = data.cfg.sigma_grid.back();

  const double usvt_lo = sweep_mean(data.result, "usvt", sig_lo, &SweepRow::rel_fro);
  const double usvt_hi = sweep_mean(data.result, "usvt", sig_hi, &SweepRow::rel_fro);
  // non-decreasing toward sigma -> 0, up to trial noise at 5 trials
  const bool usvt_flat = usvt_lo >= usvt_hi - 0.02 * usvt_hi;

  const double conv_lo = sweep_mean(data.result, "convex", sig_lo, &SweepRow::rel_fro);
  const double conv_hi = sweep_mean(data.result, "convex", sig_hi, &SweepRow::rel_fro);
  const bool conv_drops = conv_hi >= 5.0 * conv_lo;

  bool constrained_close = true;
  double worst_gap = 0.0;
  for (double sigma : data.cfg.sigma_grid) {
    const double a = sweep_mean(data.result, "convex", sigma, &SweepRow::rel_fro);
    const double b =
        sweep_mean(data.result, "constrained", sigma, &SweepRow::rel_fro);
    const double gap = std::abs(a - b) / a;
    worst_gap = std::max(worst_gap, gap);
    constrained_close = constrained_close && gap <= 0.05;
  }

  const bool pass = usvt_flat && conv_drops && constrained_close;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "usvt err %.3f @sigma_min vs %.3f @sigma_max (flat), convex "
                "decreases %.1fx over the decade (needs >= 5), constrained vs "
                "vanilla max gap %.2f%% (limit 5%%)",
                usvt_lo, usvt_hi, conv_hi / conv_lo, 100.0 * worst_gap);
  verdict(7, pass, buf);
  EXPECT_TRUE(usvt_flat);
  EXPECT_TRUE(conv_drops);
  EXPECT_TRUE(constrained_close);
}

TEST(Acceptance, Criterion8OraclePropertySuite) {
  const auto t0 = std::chrono::steady_clock::now();
  bool all_ok = true;

  // gradient vs central finite differences
  {
    const auto truth = gen_truth(6, 2, {}, 81);
    const auto omega = sample_mask(6, 0.8, 81);
    const auto obs = observe(truth, omega, 0.3, 81, true, 0.8);
    Rng rng(82);
    FactorPair pair{Matrix(6, 2), Matrix(6, 2)};
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 2; ++j) {
        pair.x(i, j) = rng.normal();
        pair.y(i, j) = rng.normal();
      }
    const auto [gx, gy] = gradient_f(pair, obs, 0.4, 0.8);
    const double h = 1e-6;
    double worst = 0.0;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 2; ++j) {
        FactorPair up = pair, dn = pair;
        up.x(i, j) += h;
        dn.x(i, j) -= h;
        const double fd =
            (objective_f(up, obs, 0.4, 0.8) - objective_f(dn, obs, 0.4, 0.8)) /
            (2 * h);
        worst = std::max(worst, std::abs(fd - gx(i, j)) /
                                    std::max(1.0, std::abs(gx(i, j))));
      }
    EXPECT_LT(worst, 1e-5);
    all_ok = all_ok && worst < 1e-5;
  }

  // svt local-optimality sampling oracle
  {
    Rng rng(83);
    Matrix z(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) z(i, j) = rng.normal();
    const double tau = 0.3;
    const Matrix w = svt(z, tau).z;
    const double base = 0.5 * (w - z).squaredNorm() + tau * nuclear_norm(w);
    bool beats = true;
    for (int trial = 0; trial < 1000; ++trial) {
      Matrix pert(5, 5);
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) pert(i, j) = 1e-3 * (2 * rng.uniform() - 1);
      const Matrix cand = w + pert;
      beats = beats && 0.5 * (cand - z).squaredNorm() +
                               tau * nuclear_norm(cand) >=
                           base - 1e-12;
    }
    EXPECT_TRUE(beats);
    all_ok = all_ok && beats;
  }

  // P_T idempotence and orthogonality
  {
    const auto truth = gen_truth(12, 3, {}, 84);
    const TangentSpace t{truth.u_star, truth.v_star};
    Rng rng(85);
    Matrix a(12, 12);
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j) a(i, j) = rng.normal();
    const Matrix pa = tangent_project(t, a);
    const double idem = (tangent_project(t, pa) - pa).cwiseAbs().maxCoeff();
    const double ortho = std::abs((pa.array() * (a - pa).array()).sum());
    EXPECT_LT(idem, 1e-10);
    EXPECT_LT(ortho, 1e-10);
    all_ok = all_ok && idem < 1e-10 && ortho < 1e-10;
  }

  // balanced-factorization inequality on 50 random instances
  {
    bool holds = true;
    for (std::uint64_t seed = 200; seed < 250; ++seed) {
      Rng rng(seed);
      Matrix a(8, 2), b(2, 8), g(2, 2);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 2; ++j) a(i, j) = rng.normal();
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 8; ++j) b(i, j) = rng.normal();
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) g(i, j) = rng.normal();
      g += 3.0 * Matrix::Identity(2, 2);
      const Matrix z = a * b;
      const FactorPair balanced = balanced_factorization(z, 2);
      const FactorPair external{balanced.x * g,
                                balanced.y * g.inverse().transpose()};
      const auto diag = balance_diagnostic(z, 2, external);
      holds = holds && diag.sigma_q_gap <= diag.lemma_bound + 1e-10;
    }
    EXPECT_TRUE(holds);
    all_ok = all_ok && holds;
  }

  // injectivity: iterative vs dense eigensolve at n = 12
  {
    const auto truth = gen_truth(12, 2, {}, 86);
    const auto omega = sample_mask(12, 0.6, 86);
    const TangentSpace t{truth.u_star, truth.v_star};
    const double dense = injectivity_constant(t, omega, 0.6);
    InjectivityOptions iter_opts;
    iter_opts.dense_cap = 0;
    iter_opts.iters = 60;
    const double iter = injectivity_constant(t, omega, 0.6, iter_opts);
    EXPECT_NEAR(iter, dense, 1e-6);
    all_ok = all_ok && std::abs(iter - dense) <= 1e-6;
  }

  // Procrustes optimality against 32 random rotations
  {
    Rng rng(87);
    Matrix f(20, 3), f_ref(20, 3);
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 3; ++j) {
        f(i, j) = rng.normal();
        f_ref(i, j) = rng.normal();
      }
    const Matrix h = procrustes_align(f, f_ref);
    const double aligned = (f * h - f_ref).norm();
    bool optimal = true;
    for (int trial = 0; trial < 32; ++trial) {
      Matrix g(3, 3);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) g(i, j) = rng.normal();
      Eigen::HouseholderQR<Matrix> qr(g);
      const Matrix rot = qr.householderQ() * Matrix::Identity(3, 3);
      optimal = optimal && aligned <= (f * rot - f_ref).norm() + 1e-12;
    }
    EXPECT_TRUE(optimal);
    all_ok = all_ok && optimal;
  }

  // monotone descent of both solvers
  {
    const auto truth = gen_truth(20, 2, {}, 88);
    const auto omega = sample_mask(20, 0.5, 88);
    const auto obs = observe(truth, omega, 0.05, 88, true, 0.5);
    const double lambda = 5 * 0.05 * std::sqrt(20 * 0.5);

    ConvexOptions copts;
    copts.lambda = lambda;
    copts.accel = Accel::plain;
    copts.tol_grad_map = 1e-9;
    copts.max_iters = 2000;
    const auto [z, crep] = solve_convex(obs, copts);
    bool mono = true;
    for (std::size_t k = 1; k < crep.objective_trace.size(); ++k)
      mono = mono &&
             crep.objective_trace[k] <= crep.objective_trace[k - 1] + 1e-12;

    GdOptions gopts;
    gopts.lambda = lambda;
    gopts.p = 0.5;
    gopts.eta = default_gd_step(obs);
    gopts.tol_grad = 1e-8;
    gopts.t_max = 20000;
    const auto [pair, grep] = gd_solve(oracle_init(truth), obs, gopts);
    for (std::size_t k = 1; k < grep.f_trace.size(); ++k)
      mono = mono && grep.f_trace[k] <= grep.f_trace[k - 1] + 1e-12;
    EXPECT_TRUE(mono);
    all_ok = all_ok && mono;
  }

  // nuclear-norm / factor identity
  {
    Rng rng(89);
    Matrix z(7, 7);
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) z(i, j) = rng.normal();
    const auto [x, y] = balanced_svd_factors(z, 7);
    const double gap =
        std::abs(0.5 * (x.squaredNorm() + y.squaredNorm()) - nuclear_norm(z));
    EXPECT_LT(gap, 1e-10);
    all_ok = all_ok && gap < 1e-10;
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  const bool pass = all_ok && wall < 30.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "gradient, svt, P_T, balance lemma, injectivity, Procrustes, "
                "descent, nuclear identity all checked in %.1f s (limit 30)",
                wall);
  verdict(8, pass, buf);
  EXPECT_LT(wall, 30.0);
}
