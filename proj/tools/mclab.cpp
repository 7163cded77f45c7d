// mclab: matrix-completion laboratory CLI.
//
//   mclab sweep   --config <path>          run a seeded sigma-sweep
//   mclab trial   --n --r --p --sigma ...  run a single trial, print record
//   mclab certify --input <obs> --lambda   certify a solution of an
//                                          observation file

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <string>

#include "mclab/harness.hpp"

namespace {

int run_sweep_cmd(const std::string& config_path) {
  const mclab::ExperimentConfig cfg = mclab::parse_config_file(config_path);
  const mclab::SweepResult result = mclab::run_sweep(cfg);
  std::cout << "wrote " << result.csv_path << '\n';
  std::printf("%-20s %-12s %-12s %-12s %-12s\n", "estimator", "sigma",
              "rel_fro", "rel_inf", "pair_dist");
  for (const auto& row : result.rows) {
    std::printf("%-20s %-12.4g %-12.4g %-12.4g %-12.4g\n",
                row.estimator.c_str(), row.sigma, row.rel_fro, row.rel_inf,
                row.pair_dist);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mclab: noisy matrix completion laboratory"};
  app.require_subcommand(1);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "run a sigma-sweep from a config");
  std::string config_path;
  sweep->add_option("--config", config_path, "flat key=value config file")
      ->required();

  // trial
  auto* trial = app.add_subcommand("trial", "run one seeded trial");
  mclab::ExperimentConfig tcfg;
  double sigma = 0.0;
  std::uint64_t seed = 1;
  std::string estimators = "convex,nonconvex_spectral";
  std::string dump_obs;
  double lambda_flag = 0.0;
  trial->add_option("--n", tcfg.n, "matrix dimension");
  trial->add_option("--r", tcfg.r, "rank");
  trial->add_option("--p", tcfg.p, "sampling probability");
  trial->add_option("--sigma", sigma, "noise level")->required();
  trial->add_option("--seed", seed, "trial seed");
  trial->add_option("--estimators", estimators, "comma separated estimators");
  trial->add_option("--lambda-c", tcfg.lambda_c, "lambda rule constant");
  trial->add_option("--lambda", lambda_flag, "explicit lambda override");
  trial->add_option("--convex-tol", tcfg.convex_tol, "grad-map stop");
  trial->add_option("--ncvx-tol", tcfg.ncvx_tol, "gradient-norm stop");
  trial->add_option("--dump-obs", dump_obs, "write the observation file here");

  // certify
  auto* certify = app.add_subcommand(
      "certify", "solve the factored program on an observation file and "
                 "print its optimality certificate");
  std::string input_path;
  double lambda = 0.0;
  int rank = 0;
  double tol = 1e-9;
  int t_max = 100000;
  certify->add_option("--input", input_path, "observation file")->required();
  certify->add_option("--lambda", lambda, "regularization weight")->required();
  certify->add_option("--r", rank, "rank (default: detect by spectral gap)");
  certify->add_option("--tol", tol, "gradient-norm stop");
  certify->add_option("--t-max", t_max, "iteration budget");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sweep->parsed()) return run_sweep_cmd(config_path);

    if (trial->parsed()) {
      tcfg.sigma_grid = {sigma};
      if (lambda_flag > 0.0) tcfg.lambda_override = lambda_flag;
      tcfg.estimators.clear();
      std::istringstream stream(estimators);
      std::string token;
      while (std::getline(stream, token, ','))
        if (!token.empty()) tcfg.estimators.push_back(token);
      const mclab::TrialRecord rec = mclab::run_trial(tcfg, sigma, seed);
      std::cout << rec.to_kv();
      if (!dump_obs.empty()) {
        const auto truth =
            mclab::gen_truth(tcfg.n, tcfg.r, tcfg.spectrum, seed);
        const auto omega = mclab::sample_mask(tcfg.n, tcfg.p, seed);
        const auto obs =
            mclab::observe(truth, omega, sigma, seed, true, tcfg.p);
        mclab::save_observation(obs, dump_obs);
        std::cout << "obs_file " << dump_obs << '\n';
      }
      return 0;
    }

    if (certify->parsed()) {
      const mclab::Observation obs = mclab::load_observation(input_path);
      int r = rank;
      if (r <= 0) {
        mclab::Matrix a = mclab::Matrix::Zero(obs.n, obs.n);
        for (std::size_t k = 0; k < obs.omega.size(); ++k)
          a(obs.omega[k].first, obs.omega[k].second) =
              obs.values(static_cast<Eigen::Index>(k)) / obs.p;
        Eigen::BDCSVD<mclab::Matrix> svd(a);
        // look for the signal/noise gap in the macroscopic top half only;
        // deeper ratios are noise-bulk structure
        const Eigen::Index scan = obs.n / 2 + 1;
        try {
          r = mclab::detail::detect_rank(svd.singularValues().head(scan));
        } catch (const mclab::RankAmbiguityError&) {
          throw mclab::RankAmbiguityError(
              "no decisive spectral gap in the data matrix; pass --r");
        }
        std::cout << "detected_rank " << r << '\n';
      }
      mclab::GdOptions opts;
      opts.lambda = lambda;
      opts.p = obs.p;
      opts.tol_grad = tol;
      opts.t_max = t_max;
      opts.eta = mclab::default_gd_step(obs);
      auto [pair, rep] = mclab::gd_solve(mclab::spectral_init(obs, r), obs, opts);
      std::cout << "gd_iterations " << rep.iterations << '\n'
                << "gd_grad_norm " << rep.best_grad_norm << '\n';

      // kappa and sigma_min estimated from the candidate's own spectrum
      Eigen::BDCSVD<mclab::Matrix> zsvd(pair.product());
      const double smax = zsvd.singularValues()(0);
      const double smin = zsvd.singularValues()(r - 1);
      const auto report =
          mclab::certify(pair, obs, lambda, smax / smin, smin);
      std::cout << report.to_kv();
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
