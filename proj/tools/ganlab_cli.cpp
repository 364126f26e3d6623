// Command-line front end for the numerical experiments: rate fits, scaling
// checks, transport certification, covering oracles, and the closed-form
// sizing tables.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ganlab/bounds.hpp"
#include "ganlab/harness.hpp"

namespace {

using ganlab::harness::ExperimentConfig;
using ganlab::harness::Report;

void apply_common_flags(CLI::App* cmd, ExperimentConfig& cfg, std::string& config_path,
                        std::string& constants_mode) {
  cmd->add_option("--config", config_path, "JSON experiment config");
  cmd->add_option("--seed", cfg.seed, "base seed");
  cmd->add_option("--out-dir", cfg.out_dir, "output directory for CSV/SVG");
  cmd->add_option("--constants-mode", constants_mode, "unit|recorded")
      ->check(CLI::IsMember({"unit", "recorded"}));
  cmd->add_option("--seeds", cfg.seeds, "replicates per grid point");
  cmd->add_option("--alpha", cfg.alpha, "density smoothness index");
  cmd->add_option("--beta", cfg.beta, "evaluation class index");
  cmd->add_option("--tau", cfg.tau, "density lower bound");
  cmd->add_option("--k-max", cfg.k_max, "fixture modes per axis");
  cmd->add_option("--fixture-seed", cfg.fixture_seed, "fixture seed");
  cmd->add_option("--fixture", cfg.fixture_path, "density fixture file");
  cmd->add_option("--n-grid", cfg.n_grid, "sample sizes")->delimiter(',');
  cmd->add_option("--epochs", cfg.train.epochs, "training epochs");
  cmd->add_option("--gen-lr", cfg.train.gen_lr, "generator step size");
  cmd->add_option("--disc-lr", cfg.train.disc_lr, "discriminator step size");
  cmd->add_option("--slope-tol", cfg.slope_tol, "slope tolerance");
}

int report_outcome(const Report& rep) {
  for (const auto& s : rep.series) {
    if (s.has_fit)
      std::printf("  %-24s slope=%.4f  (theory %.4f)  %s\n", s.metric.c_str(), s.fit.slope,
                  s.has_exponent ? s.exponent_theory : 0.0, s.verdict ? "ok" : "FAIL");
    else
      std::printf("  %-24s %s\n", s.metric.c_str(), s.verdict ? "ok" : "FAIL");
  }
  std::printf("%s: %s\n", rep.experiment.c_str(), rep.verdict ? "PASS" : "FAIL");
  return rep.verdict ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for adversarial distribution estimation"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path, constants_mode;
  double m_exponent = 0.0;

  auto* rate = app.add_subcommand("rate", "convergence-rate experiment (trained, warm-started)");
  apply_common_flags(rate, cfg, config_path, constants_mode);
  rate->add_option("--m-exponent", m_exponent,
                   "latent pool size m = n^e (0 = fresh draws each step)");

  auto* approx = app.add_subcommand("approx-scaling", "constructive approximation scaling");
  apply_common_flags(approx, cfg, config_path, constants_mode);
  approx->add_option("--delta-grid", cfg.delta_grid, "accuracies")->delimiter(',');

  auto* trans = app.add_subcommand("transport-check", "coupling pushforward certification");
  apply_common_flags(trans, cfg, config_path, constants_mode);

  auto* cover = app.add_subcommand("cover-oracle", "brute-force covering vs the bound");
  apply_common_flags(cover, cfg, config_path, constants_mode);

  auto* stat = app.add_subcommand("stat-error", "empirical-measure W1 decay");
  apply_common_flags(stat, cfg, config_path, constants_mode);

  auto* bnd = app.add_subcommand("bounds", "sizing formulas and the error budget");
  double bnd_n = 1000, bnd_eps = 0.1, bnd_B = 1.0, bnd_m = 0.0;
  bnd->add_option("--n", bnd_n, "sample size");
  bnd->add_option("--eps", bnd_eps, "generator accuracy");
  bnd->add_option("--alpha", cfg.alpha, "density smoothness");
  bnd->add_option("--beta", cfg.beta, "evaluation class index");
  bnd->add_option("--d", cfg.d, "dimension");
  bnd->add_option("--B", bnd_B, "box bound");
  bnd->add_option("--m", bnd_m, "latent sample count (0 = skip)");
  bnd->add_option("--constants-mode", constants_mode, "unit|recorded")
      ->check(CLI::IsMember({"unit", "recorded"}));
  bnd->add_option("--out-dir", cfg.out_dir, "output directory for CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      auto loaded = ganlab::harness::load_config(config_path);
      loaded.out_dir = cfg.out_dir.empty() ? loaded.out_dir : cfg.out_dir;
      cfg = loaded;
    }
    if (constants_mode == "unit") cfg.constants_mode = ganlab::bounds::ConstantsMode::unit;
    if (constants_mode == "recorded")
      cfg.constants_mode = ganlab::bounds::ConstantsMode::recorded;

    if (bnd->parsed()) {
      using namespace ganlab::bounds;
      const auto mode = cfg.constants_mode;
      const auto gen = size_generator(bnd_eps, cfg.alpha, cfg.d, bnd_B, mode);
      const auto disc = size_discriminator(bnd_n, cfg.beta, cfg.d, bnd_B, mode);
      const double rate_e = rate_exponent(cfg.beta, cfg.d);
      const double eps2 = std::pow(bnd_n, -rate_e);
      const auto logN = [&](double e) { return net_covering_bound(disc, e, bnd_B); };
      std::vector<double> dgrid;
      for (int i = 1; i <= 64; ++i) dgrid.push_back(i * bnd_B * cfg.d / 64.0 * 0.5);
      const double stat_f = dudley_bound(logN, bnd_B * cfg.d, bnd_n, dgrid);
      const double stat_h =
          dudley_bound([&](double e) { return holder_covering_bound(std::min(e, 0.999), cfg.beta,
                                                                    cfg.d, 1.0); },
                       bnd_B * cfg.d, bnd_n, dgrid);
      const auto budget = oracle_budget(bnd_eps, eps2, stat_h, stat_f);

      std::printf("constants mode: %s (every entry scales the displayed formula)\n",
                  to_string(mode));
      std::printf("%-28s %10s %10s %6s %6s %8s\n", "spec", "R", "kappa", "L", "p", "K");
      auto show = [](const char* name, const ArchitectureSpec& s) {
        std::printf("%-28s %10.3f %10.3f %6lld %6lld %8lld\n", name, s.R, s.kappa, s.L, s.p,
                    s.K);
      };
      show("generator(eps)", gen);
      show("discriminator(n)", disc);
      if (bnd_m >= 2.0) show("generator_finite_m(m)", size_generator_finite_m(bnd_m, cfg.alpha, cfg.d, bnd_B, mode));
      std::printf("\nerror budget (eps1 + 4 eps2 + stat_h + stat_f):\n");
      std::printf("  eps1=%.6g eps2=%.6g stat_h=%.6g stat_f=%.6g total=%.6g\n", budget.eps1,
                  budget.eps2, budget.stat_h, budget.stat_f, budget.total);
      std::printf("  rate exponent beta/(2beta+d) = %.6g ; budget curve at n: %.6g\n", rate_e,
                  rate_curve(bnd_n, cfg.beta, cfg.d, 1.0));
      if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream csv(cfg.out_dir + "/bounds.csv", std::ios::binary);
        csv << "experiment,n,seed,metric,value,slope,exponent_theory,verdict\n";
        auto row = [&](const std::string& metric, double value) {
          csv << "bounds," << static_cast<long long>(bnd_n) << ",0," << metric << ","
              << ganlab::harness::fmt_double(value) << ",,,\n";
        };
        row("gen_L", static_cast<double>(gen.L));
        row("gen_p", static_cast<double>(gen.p));
        row("gen_K", static_cast<double>(gen.K));
        row("disc_L", static_cast<double>(disc.L));
        row("disc_p", static_cast<double>(disc.p));
        row("disc_K", static_cast<double>(disc.K));
        row("eps1", budget.eps1);
        row("eps2", budget.eps2);
        row("stat_h", budget.stat_h);
        row("stat_f", budget.stat_f);
        row("total", budget.total);
      }
      return 0;
    }

    if (rate->parsed()) {
      cfg.kind = "rate";
      cfg.m_exponent = m_exponent;
      auto rr = ganlab::harness::run_rate_experiment(cfg);
      std::printf("rate experiment: slope=%.4f  [%.4f, %.4f]  theory exponent=%.4f\n", rr.slope,
                  rr.slope_lo, rr.slope_hi, rr.exponent_theory);
      std::printf("  slope criterion: %s   budget criterion: %s\n",
                  rr.slope_ok ? "ok" : "FAIL", rr.budget_ok ? "ok" : "FAIL");
      std::printf("%s: %s\n", rr.report.experiment.c_str(), rr.verdict ? "PASS" : "FAIL");
      return rr.verdict ? 0 : 1;
    }
    if (approx->parsed()) {
      cfg.kind = "approx_scaling";
      return report_outcome(ganlab::harness::run_approx_scaling(cfg));
    }
    if (trans->parsed()) {
      cfg.kind = "transport_check";
      return report_outcome(ganlab::harness::run_transport_check(cfg));
    }
    if (cover->parsed()) {
      cfg.kind = "covering_oracle";
      return report_outcome(ganlab::harness::run_covering_oracle(cfg));
    }
    if (stat->parsed()) {
      cfg.kind = "stat_error";
      return report_outcome(ganlab::harness::run_stat_error(cfg));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
