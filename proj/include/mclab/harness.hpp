#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mclab/convex.hpp"
#include "mclab/duality.hpp"
#include "mclab/metrics.hpp"
#include "mclab/model.hpp"
#include "mclab/nonconvex.hpp"
#include "mclab/plot.hpp"
#include "mclab/types.hpp"

namespace mclab {

inline const std::vector<std::string>& known_estimators() {
  static const std::vector<std::string> names = {
      "convex",           "convex_rank_r", "nonconvex_spectral",
      "nonconvex_oracle", "constrained",   "usvt"};
  return names;
}

struct ExperimentConfig {
  int n = 200;
  int r = 5;
  double p = 0.2;
  std::vector<double> spectrum;  // empty = flat
  std::vector<double> sigma_grid;
  int trials = 5;
  double lambda_c = 5.0;  // lambda = lambda_c * sigma * sqrt(n p)
  std::optional<double> lambda_override;
  std::vector<std::string> estimators = {"convex", "nonconvex_spectral"};

  double convex_tol = 1e-8;
  int convex_max_iters = 50000;
  bool convex_accel = true;
  double convex_step = 1.0;

  double ncvx_tol = 1e-8;
  int ncvx_t_max = 100000;
  std::optional<double> ncvx_eta;  // default 0.5 / sigma_max estimate

  double usvt_c = 0.75;
  std::optional<double> usvt_tau_override;
  std::optional<double> alpha;  // constrained cap; default ||M*||_inf

  bool certificates = true;
  int inj_probes = 2;
  int inj_iters = 400;
  double verify_tol = 1e-4;

  std::uint64_t base_seed = 1;
  std::string out_dir = ".";

  double lambda_for(double sigma) const {
    if (lambda_override) return *lambda_override;
    if (!(sigma > 0.0))
      throw ParameterError(
          "lambda rule degenerates at sigma = 0; supply lambda explicitly");
    return lambda_c * sigma * std::sqrt(static_cast<double>(n) * p);
  }

  void validate() const {
    if (n <= 0 || r < 1 || r > n) throw ParameterError("config: bad n or r");
    if (!(p > 0.0) || p > 1.0) throw ParameterError("config: p in (0, 1]");
    if (trials < 1) throw ParameterError("config: trials >= 1");
    if (sigma_grid.empty()) throw ParameterError("config: empty sigma_grid");
    for (double s : sigma_grid) {
      if (s < 0.0) throw ParameterError("config: sigma must be nonnegative");
      if (s == 0.0 && !lambda_override)
        throw ParameterError(
            "config: sigma = 0 requires an explicit lambda override");
    }
    if (estimators.empty()) throw ParameterError("config: no estimators");
    for (const auto& e : estimators) {
      const auto& known = known_estimators();
      if (std::find(known.begin(), known.end(), e) == known.end())
        throw ParameterError("config: unknown estimator '" + e + "'");
    }
  }
};

struct EstimatorResult {
  ErrorBundle errors;
  double seconds = 0.0;
  int iterations = 0;
  std::string stopping_reason;
  bool failed = false;
  std::string failure_what;
  double sv_ratio = std::numeric_limits<double>::quiet_NaN();  // convex only
};

struct TrialRecord {
  std::uint64_t seed = 0;
  double sigma = 0.0;
  double lambda = 0.0;
  int n = 0, r = 0;
  double p = 0.0;
  double mu = 0.0, kappa = 0.0;
  double m_star_fro = 0.0;
  std::map<std::string, EstimatorResult> estimators;
  std::optional<double> pair_dist_rel;
  std::optional<double> pair_dist_abs;
  std::optional<CertificateReport> certificate;
  double seconds = 0.0;

  std::string to_kv() const {
    std::ostringstream os;
    os.precision(17);
    os << "seed " << seed << "\nsigma " << sigma << "\nlambda " << lambda
       << "\nn " << n << "\nr " << r << "\np " << p << "\nmu " << mu
       << "\nkappa " << kappa << '\n';
    for (const auto& [name, res] : estimators) {
      if (res.failed) {
        os << name << ".failed 1\n" << name << ".what " << res.failure_what
           << '\n';
        continue;
      }
      os << name << ".rel_fro " << res.errors.rel_fro << '\n'
         << name << ".rel_spec " << res.errors.rel_spec << '\n'
         << name << ".rel_inf " << res.errors.rel_inf << '\n';
      if (res.errors.factor_2inf)
        os << name << ".factor_2inf " << *res.errors.factor_2inf << '\n';
      if (std::isfinite(res.sv_ratio))
        os << name << ".sv_ratio " << res.sv_ratio << '\n';
      os << name << ".iterations " << res.iterations << '\n';
    }
    if (pair_dist_rel) os << "pair_dist_rel " << *pair_dist_rel << '\n';
    if (pair_dist_abs) os << "pair_dist_abs " << *pair_dist_abs << '\n';
    if (certificate) os << certificate->to_kv();
    return os.str();
  }
};

namespace detail {

inline bool wants(const ExperimentConfig& cfg, const std::string& name) {
  return std::find(cfg.estimators.begin(), cfg.estimators.end(), name) !=
         cfg.estimators.end();
}

}  // namespace detail

// One ground truth + mask + noise draw with every requested estimator solved
// and measured. Deterministic given (config, sigma, seed). Solver divergence
// is recorded on the estimator entry; it never aborts the sweep.
inline TrialRecord run_trial(const ExperimentConfig& cfg, double sigma,
                             std::uint64_t seed) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  TrialRecord rec;
  rec.seed = seed;
  rec.sigma = sigma;
  rec.n = cfg.n;
  rec.r = cfg.r;
  rec.p = cfg.p;
  rec.lambda = cfg.lambda_for(sigma);

  const LowRankTruth truth = gen_truth(cfg.n, cfg.r, cfg.spectrum, seed);
  const IndexSet omega = sample_mask(cfg.n, cfg.p, seed);
  Observation obs = observe(truth, omega, sigma, seed, /*keep_noise=*/true,
                            /*p_nominal=*/cfg.p);

  const ModelConstants consts = model_constants(truth);
  rec.mu = consts.mu;
  rec.kappa = consts.kappa;
  rec.m_star_fro = truth.m_star().norm();

  std::optional<Matrix> z_cvx;
  std::optional<FactorPair> ncvx_pair;

  const auto run_estimator = [&](const std::string& name, auto&& body) {
    if (!detail::wants(cfg, name)) return;
    EstimatorResult res;
    const auto start = std::chrono::steady_clock::now();
    try {
      body(res);
    } catch (const std::exception& ex) {
      res.failed = true;
      res.failure_what = ex.what();
    }
    res.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    rec.estimators[name] = std::move(res);
  };

  const bool need_convex =
      detail::wants(cfg, "convex") || detail::wants(cfg, "convex_rank_r");
  if (need_convex) {
    ConvexOptions opts;
    opts.lambda = rec.lambda;
    opts.max_iters = cfg.convex_max_iters;
    opts.step = cfg.convex_step;
    opts.accel = cfg.convex_accel ? Accel::accelerated : Accel::plain;
    opts.tol_grad_map = cfg.convex_tol;
    try {
      auto [z, rep] = solve_convex(obs, opts);
      z_cvx = std::move(z);
      run_estimator("convex", [&](EstimatorResult& res) {
        res.errors = error_bundle(*z_cvx, truth);
        res.iterations = rep.iterations;
        res.stopping_reason = rep.stopping_reason;
        if (rep.singular_values.size() > cfg.r)
          res.sv_ratio = rep.singular_values(cfg.r) /
                         std::max(rep.singular_values(0), 1e-300);
      });
      run_estimator("convex_rank_r", [&](EstimatorResult& res) {
        res.errors = error_bundle(best_rank_r(*z_cvx, cfg.r), truth);
        res.iterations = rep.iterations;
      });
    } catch (const std::exception& ex) {
      for (const char* name : {"convex", "convex_rank_r"}) {
        if (!detail::wants(cfg, name)) continue;
        EstimatorResult res;
        res.failed = true;
        res.failure_what = ex.what();
        rec.estimators[name] = std::move(res);
      }
    }
  }

  run_estimator("constrained", [&](EstimatorResult& res) {
    ConvexOptions opts;
    opts.lambda = rec.lambda;
    opts.max_iters = cfg.convex_max_iters;
    opts.step = cfg.convex_step;
    opts.accel = cfg.convex_accel ? Accel::accelerated : Accel::plain;
    opts.tol_grad_map = cfg.convex_tol;
    opts.inf_cap = cfg.alpha ? *cfg.alpha : truth.m_star().cwiseAbs().maxCoeff();
    auto [z, rep] = solve_constrained(obs, opts);
    res.errors = error_bundle(z, truth);
    res.iterations = rep.iterations;
    res.stopping_reason = rep.stopping_reason;
  });

  const auto run_gd = [&](const std::string& name, const FactorPair& init) {
    run_estimator(name, [&](EstimatorResult& res) {
      GdOptions opts;
      opts.lambda = rec.lambda;
      opts.p = cfg.p;
      opts.tol_grad = cfg.ncvx_tol;
      opts.t_max = cfg.ncvx_t_max;
      opts.eta = cfg.ncvx_eta ? *cfg.ncvx_eta : default_gd_step(obs);
      auto [pair, rep] = gd_solve(init, obs, opts);
      res.errors = error_bundle(pair, truth);
      res.iterations = rep.iterations;
      res.stopping_reason = rep.stopping_reason;
      // oracle-initialized run takes precedence as the certified candidate
      if (!ncvx_pair || name == "nonconvex_oracle") ncvx_pair = pair;
    });
  };
  if (detail::wants(cfg, "nonconvex_spectral"))
    run_gd("nonconvex_spectral", spectral_init(obs, cfg.r));
  if (detail::wants(cfg, "nonconvex_oracle"))
    run_gd("nonconvex_oracle", oracle_init(truth));

  run_estimator("usvt", [&](EstimatorResult& res) {
    const double tau =
        cfg.usvt_tau_override
            ? *cfg.usvt_tau_override
            : usvt_threshold(sigma, truth.m_star().cwiseAbs().maxCoeff(),
                             cfg.n, cfg.p, cfg.usvt_c);
    res.errors = error_bundle(solve_usvt(obs, tau), truth);
  });

  if (z_cvx && ncvx_pair) {
    const double d = (*z_cvx - ncvx_pair->product()).norm();
    rec.pair_dist_abs = d;
    rec.pair_dist_rel = d / rec.m_star_fro;
  }

  if (ncvx_pair && cfg.certificates) {
    InjectivityOptions inj;
    inj.probes = cfg.inj_probes;
    inj.iters = cfg.inj_iters;
    try {
      rec.certificate =
          certify(*ncvx_pair, obs, rec.lambda, consts.kappa, consts.sigma_min,
                  &truth, cfg.verify_tol, inj);
    } catch (const std::exception&) {
      // certificate failure is recorded as absence; estimator results stand
    }
  }

  rec.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return rec;
}

struct SweepRow {
  std::string estimator;
  double sigma = 0.0;
  double rel_fro = std::numeric_limits<double>::quiet_NaN();
  double rel_spec = std::numeric_limits<double>::quiet_NaN();
  double rel_inf = std::numeric_limits<double>::quiet_NaN();
  double pair_dist = std::numeric_limits<double>::quiet_NaN();
  double w_spectral = std::numeric_limits<double>::quiet_NaN();
  double c_inj = std::numeric_limits<double>::quiet_NaN();
  int trials = 0;
  int failures = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<TrialRecord> records;  // indexed by sigma-major task order
  std::string csv_path;
};

namespace detail {

inline int thread_budget() {
  if (const char* env = std::getenv("MCLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

inline std::string csv_num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace detail

// Seeded trial grid: task index k covers (sigma_grid[k / trials], trial
// k % trials) with seed = base_seed + k. Trials run concurrently; records are
// deterministic per task independent of scheduling.
inline SweepResult run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const int total =
      static_cast<int>(cfg.sigma_grid.size()) * cfg.trials;
  SweepResult result;
  result.records.resize(total);
  std::vector<char> task_failed(total, 0);
  std::vector<std::string> task_what(total);

  std::atomic<int> next{0};
  const int workers = std::min(detail::thread_budget(), total);
  auto worker = [&]() {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= total) return;
      const double sigma = cfg.sigma_grid[k / cfg.trials];
      const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(k);
      try {
        result.records[k] = run_trial(cfg, sigma, seed);
      } catch (const std::exception& ex) {
        task_failed[k] = 1;
        task_what[k] = ex.what();
        result.records[k].seed = seed;
        result.records[k].sigma = sigma;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  // aggregate means per (estimator, sigma); failures leave NaN sentinels
  for (const auto& name : cfg.estimators) {
    for (std::size_t si = 0; si < cfg.sigma_grid.size(); ++si) {
      SweepRow row;
      row.estimator = name;
      row.sigma = cfg.sigma_grid[si];
      row.trials = cfg.trials;
      double fro = 0, spec = 0, inf = 0, pd = 0, w = 0, ci = 0;
      int ok = 0, pd_n = 0, cert_n = 0;
      for (int t = 0; t < cfg.trials; ++t) {
        const int k = static_cast<int>(si) * cfg.trials + t;
        if (task_failed[k]) {
          ++row.failures;
          continue;
        }
        const TrialRecord& rec = result.records[k];
        const auto it = rec.estimators.find(name);
        if (it == rec.estimators.end() || it->second.failed) {
          ++row.failures;
          continue;
        }
        fro += it->second.errors.rel_fro;
        spec += it->second.errors.rel_spec;
        inf += it->second.errors.rel_inf;
        ++ok;
        if (rec.pair_dist_rel) {
          pd += *rec.pair_dist_rel;
          ++pd_n;
        }
        if (rec.certificate) {
          w += rec.certificate->w_spectral;
          ci += rec.certificate->c_inj;
          ++cert_n;
        }
      }
      if (ok > 0) {
        row.rel_fro = fro / ok;
        row.rel_spec = spec / ok;
        row.rel_inf = inf / ok;
      }
      if (pd_n > 0) row.pair_dist = pd / pd_n;
      if (cert_n > 0) {
        row.w_spectral = w / cert_n;
        row.c_inj = ci / cert_n;
      }
      result.rows.push_back(std::move(row));
    }
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  // aggregate csv
  result.csv_path = (fs::path(cfg.out_dir) / "sweep.csv").string();
  {
    std::ofstream out(result.csv_path);
    if (!out) throw ParameterError("run_sweep: cannot write " + result.csv_path);
    out << "estimator,sigma,rel_fro,rel_spec,rel_inf,pair_dist,w_spectral,"
           "c_inj,trials,failures\n";
    for (const auto& row : result.rows) {
      out << row.estimator << ',' << detail::csv_num(row.sigma) << ','
          << detail::csv_num(row.rel_fro) << ','
          << detail::csv_num(row.rel_spec) << ','
          << detail::csv_num(row.rel_inf) << ','
          << detail::csv_num(row.pair_dist) << ','
          << detail::csv_num(row.w_spectral) << ','
          << detail::csv_num(row.c_inj) << ',' << row.trials << ','
          << row.failures << '\n';
    }
  }

  // per-trial seed ledger: every trial reconstructible from its seed column
  {
    std::ofstream out(fs::path(cfg.out_dir) / "trials.csv");
    out << "seed,sigma,estimator,rel_fro,rel_spec,rel_inf,factor_2inf,"
           "pair_dist,w_spectral,c_inj,gap_envelope,failed\n";
    for (int k = 0; k < total; ++k) {
      const TrialRecord& rec = result.records[k];
      for (const auto& name : cfg.estimators) {
        const auto it = rec.estimators.find(name);
        const bool failed =
            task_failed[k] || it == rec.estimators.end() || it->second.failed;
        out << rec.seed << ',' << detail::csv_num(rec.sigma) << ',' << name
            << ',';
        if (failed) {
          out << "nan,nan,nan,nan,";
        } else {
          const auto& e = it->second.errors;
          out << detail::csv_num(e.rel_fro) << ',' << detail::csv_num(e.rel_spec)
              << ',' << detail::csv_num(e.rel_inf) << ','
              << detail::csv_num(e.factor_2inf.value_or(
                     std::numeric_limits<double>::quiet_NaN()))
              << ',';
        }
        out << detail::csv_num(rec.pair_dist_rel.value_or(
               std::numeric_limits<double>::quiet_NaN()))
            << ',';
        if (rec.certificate) {
          out << detail::csv_num(rec.certificate->w_spectral) << ','
              << detail::csv_num(rec.certificate->c_inj) << ','
              << detail::csv_num(rec.certificate->gap_envelope) << ',';
        } else {
          out << "nan,nan,nan,";
        }
        out << (failed ? 1 : 0) << '\n';
      }
    }
  }

  // figure families
  const auto series_for = [&](const std::string& name,
                              double SweepRow::*field) {
    PlotSeries s;
    s.name = name;
    for (const auto& row : result.rows) {
      if (row.estimator != name) continue;
      s.x.push_back(row.sigma);
      s.y.push_back(row.*field);
    }
    return s;
  };

  const bool has_cvx = detail::wants(cfg, "convex");
  const bool has_ncvx = detail::wants(cfg, "nonconvex_spectral") ||
                        detail::wants(cfg, "nonconvex_oracle");
  const std::string ncvx_name = detail::wants(cfg, "nonconvex_oracle")
                                    ? "nonconvex_oracle"
                                    : "nonconvex_spectral";
  if (has_cvx && has_ncvx) {
    auto dist = series_for("convex", &SweepRow::pair_dist);
    dist.name = "|Zcvx - Zncvx|F / |M*|F";
    std::vector<PlotSeries> series{series_for("convex", &SweepRow::rel_fro),
                                   series_for(ncvx_name, &SweepRow::rel_fro),
                                   dist};
    series[0].name = "convex rel. error";
    series[1].name = "nonconvex rel. error";
    write_svg_loglog((fs::path(cfg.out_dir) / "fig1.svg").string(),
                     "Convex vs nonconvex estimates", "noise sigma",
                     "relative Frobenius error", series);
  }
  if (has_cvx) {
    auto inf_s = series_for("convex", &SweepRow::rel_inf);
    auto spec_s = series_for("convex", &SweepRow::rel_spec);
    inf_s.name = "relative linf error";
    spec_s.name = "relative spectral error";
    write_svg_loglog((fs::path(cfg.out_dir) / "fig2.svg").string(),
                     "Entrywise and spectral errors of the convex estimate",
                     "noise sigma", "relative error", {inf_s, spec_s});
  }
  {
    std::vector<PlotSeries> series;
    for (const char* name : {"convex", "constrained", "usvt"}) {
      if (!detail::wants(cfg, name)) continue;
      series.push_back(series_for(name, &SweepRow::rel_fro));
    }
    if (series.size() >= 2) {
      write_svg_loglog((fs::path(cfg.out_dir) / "fig3.svg").string(),
                       "Estimator comparison", "noise sigma",
                       "relative Frobenius error", series);
    }
  }

  return result;
}

// Flat key=value config file, one key per line, '#' starts a comment.
inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("parse_config_file: cannot open " + path);
  ExperimentConfig cfg;
  cfg.sigma_grid.clear();

  const auto parse_list = [](const std::string& text) {
    std::vector<double> out;
    std::string token;
    std::istringstream stream(text);
    while (std::getline(stream, token, ','))
      if (!token.empty()) out.push_back(std::stod(token));
    return out;
  };

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw ParameterError("config line " + std::to_string(lineno) +
                           ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r\n");
      const auto e = s.find_last_not_of(" \t\r\n");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "n") cfg.n = std::stoi(value);
    else if (key == "r") cfg.r = std::stoi(value);
    else if (key == "p") cfg.p = std::stod(value);
    else if (key == "spectrum") {
      if (value != "flat") cfg.spectrum = parse_list(value);
    } else if (key == "sigma_grid") cfg.sigma_grid = parse_list(value);
    else if (key == "trials") cfg.trials = std::stoi(value);
    else if (key == "lambda_c") cfg.lambda_c = std::stod(value);
    else if (key == "lambda") cfg.lambda_override = std::stod(value);
    else if (key == "estimators") {
      cfg.estimators.clear();
      std::istringstream stream(value);
      std::string token;
      while (std::getline(stream, token, ','))
        if (!token.empty()) cfg.estimators.push_back(token);
    } else if (key == "convex_tol") cfg.convex_tol = std::stod(value);
    else if (key == "convex_max_iters") cfg.convex_max_iters = std::stoi(value);
    else if (key == "convex_accel") cfg.convex_accel = value == "1" || value == "true";
    else if (key == "convex_step") cfg.convex_step = std::stod(value);
    else if (key == "ncvx_tol") cfg.ncvx_tol = std::stod(value);
    else if (key == "ncvx_t_max") cfg.ncvx_t_max = std::stoi(value);
    else if (key == "ncvx_eta") cfg.ncvx_eta = std::stod(value);
    else if (key == "usvt_c") cfg.usvt_c = std::stod(value);
    else if (key == "usvt_tau") cfg.usvt_tau_override = std::stod(value);
    else if (key == "alpha") cfg.alpha = std::stod(value);
    else if (key == "certificates") cfg.certificates = value == "1" || value == "true";
    else if (key == "inj_probes") cfg.inj_probes = std::stoi(value);
    else if (key == "inj_iters") cfg.inj_iters = std::stoi(value);
    else if (key == "verify_tol") cfg.verify_tol = std::stod(value);
    else if (key == "base_seed") cfg.base_seed = std::stoull(value);
    else if (key == "out_dir") cfg.out_dir = value;
    else throw ParameterError("config line " + std::to_string(lineno) +
                              ": unknown key '" + key + "'");
  }
  return cfg;
}

}  // namespace mclab
