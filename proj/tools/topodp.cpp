// Command-line front end for allocation, sweeps, simulation and the attack.
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "topodp/bench.hpp"
#include "topodp/common.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

}  // namespace

int main(int argc, char** argv) {
  using namespace topodp;

  CLI::App app{"topodp: topology-aware DP noise allocation, federated simulation and channel attack"};
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::string setting;
  app.add_option("--config", config_path, "Experiment config (.json or .toml)");
  app.add_option("--setting", setting, "Preset used when no config is given")
      ->check(CLI::IsMember({"synthetic-A-analogue", "synthetic-B-analogue", "setting-C"}));
  app.add_option("--out", out_dir, "Run directory");
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  app.require_subcommand(1);

  auto* allocate = app.add_subcommand("allocate", "Analytic allocation per (topology, eta, U, t_max) cell");
  auto* sweep_eta = app.add_subcommand("sweep-eta", "Gap heatmap over topologies and eta");
  auto* sweep_pareto = app.add_subcommand("sweep-pareto", "Bound/accuracy sweep with paired equivalence tests");
  auto* simulate = app.add_subcommand("simulate", "Train one federation per seed and store traces");
  auto* tadi_cmd = app.add_subcommand("tadi", "Channel ablation over the eta grid");
  auto* report = app.add_subcommand("report", "Summarise records in the run directory");
  for (auto* sub : {allocate, sweep_eta, sweep_pareto, simulate, tadi_cmd, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    bench::RunContext ctx{out_dir, seed, workers, false};
    if (report->parsed()) {
      const auto s = bench::cmd_report(ctx.out);
      std::cout << s.text;
      for (const auto& p : s.plot_files) std::cout << "wrote " << p.string() << '\n';
      return kOk;
    }

    bench::ExperimentConfig cfg;
    if (!config_path.empty())
      cfg = bench::load_config(config_path);
    else
      cfg = bench::config_from_json({{"setting", setting.empty() ? "setting-C" : setting}});
    std::cerr << "config " << bench::config_hash(cfg) << " (" << cfg.setting << ")\n";

    if (allocate->parsed()) {
      const auto cells = bench::cmd_allocate(cfg, ctx);
      int bad = 0;
      for (const auto& c : cells) bad += c.kkt_pass ? 0 : 1;
      std::cout << cells.size() << " allocation cells, " << bad << " failing KKT verification\n";
    } else if (sweep_eta->parsed()) {
      for (const auto& r : bench::cmd_sweep_eta(cfg, ctx))
        std::cout << r.topology << "\teta=" << r.eta << "\tgap=" << r.gap_mean << " (+-" << r.gap_std << ", "
                  << r.graphs << " graphs)\n";
    } else if (sweep_pareto->parsed()) {
      const auto o = bench::cmd_sweep_pareto(cfg, ctx);
      std::cout << o.cells.size() << " cells; fulcrum strictly below uniform everywhere: "
                << (o.strictly_dominates ? "yes" : "no") << '\n';
      for (const auto& e : o.equivalence)
        std::cout << "T=" << e.t_max << "\tmean|diff|=" << e.result.mean_abs_diff << "\tTOST p=" << e.result.tost_p
                  << "\tt p=" << e.result.t_p << '\n';
    } else if (simulate->parsed()) {
      const auto o = bench::cmd_simulate(cfg, ctx);
      for (std::size_t k = 0; k < o.traces.size(); ++k)
        std::cout << o.traces[k].string() << "\taccuracy=" << o.accuracy[k] << '\n';
    } else if (tadi_cmd->parsed()) {
      for (const auto& r : bench::cmd_tadi(cfg, ctx).pooled)
        std::cout << "eta=" << r.eta << "\t" << tadi::to_string(r.channel) << "\tlift=" << r.lift
                  << "\tauroc=" << (r.auroc ? std::to_string(*r.auroc) : "n/a") << "\tboot_p=" << r.boot_p << '\n';
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
