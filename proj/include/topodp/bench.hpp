#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topodp/allocator.hpp"
#include "topodp/scenario.hpp"
#include "topodp/stats.hpp"
#include "topodp/tadi.hpp"

// Experiment orchestration: configuration, sweeps, result store, report.
namespace topodp::bench {

struct TopologyEntry {
  std::string label;
  nlohmann::json overrides = nlohmann::json::object();  // federation fields
  scenario::FederationSpec spec;                         // resolved against the base
};

struct TadiConfig {
  tadi::Backend backend = tadi::Backend::Ridge;
  int shadows = 40;
  tadi::PriorMode prior = tadi::PriorMode::Matched;
  scenario::Allocation allocation = scenario::Allocation::Uniform;
  double lambda = 1.0;
  int bootstrap_reps = 2000;
  double alpha = 0.05;  // significance level
  double budget = 0.5;
  int t_max = 100;
  nlohmann::json overrides = nlohmann::json::object();
  scenario::FederationSpec spec;  // resolved
};

struct ExperimentConfig {
  std::string setting = "setting-C";
  nlohmann::json federation_json = nlohmann::json::object();
  scenario::FederationSpec federation;
  std::vector<TopologyEntry> topologies;
  std::vector<double> eta;
  std::vector<double> budgets;  // U grid
  std::vector<int> t_max;
  std::vector<scenario::Allocation> allocations;
  std::vector<std::uint64_t> seeds;
  int graph_seeds = 20;  // graphs averaged per random-family cell
  double heatmap_budget = 0.5;
  int heatmap_t_max = 100;
  double equivalence_margin = 0.5;  // percentage points
  double sigma_floor = 1e-6;
  bool save_traces = false;
  TadiConfig tadi;
};

inline constexpr const char* kSettings[] = {"synthetic-A-analogue", "synthetic-B-analogue", "setting-C"};

/// Default configuration object (JSON) for a setting tag.
nlohmann::json preset(const std::string& setting);

/// Preset for `j["setting"]` overlaid with `j`; validates every field.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// JSON or TOML by extension.
ExperimentConfig load_config(const std::filesystem::path& path);
/// TOML document to JSON.
nlohmann::json toml_to_json(const std::string& text, const std::string& source = "config");

/// Canonical, fully resolved form; key order does not matter.
nlohmann::json to_json(const ExperimentConfig& c);
/// FNV-1a over the canonical form, 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

struct RunContext {
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  unsigned workers = 1;
  bool quiet = false;
};

std::uint64_t run_seed(const RunContext& ctx, std::uint64_t config_seed);

struct AllocationCell {
  std::string topology;
  int graph_seed = 0;
  double eta = 0.0;
  double budget = 0.0;
  int t_max = 0;
  allocator::AllocationResult result;
  bool kkt_pass = false;
  std::vector<int> below_floor;
};

std::vector<AllocationCell> cmd_allocate(const ExperimentConfig& c, const RunContext& ctx);

struct HeatmapRow {
  std::string topology;
  double eta = 0.0;
  double gap_mean = 0.0;
  double gap_std = 0.0;
  int graphs = 0;
};

/// Rows grouped by topology, topologies ordered by descending max gap.
std::vector<HeatmapRow> cmd_sweep_eta(const ExperimentConfig& c, const RunContext& ctx);

struct ParetoCell {
  double budget = 0.0;
  int t_max = 0;
  std::uint64_t seed = 0;
  double k_star = 0.0;
  double k_uniform = 0.0;
  double acc_fulcrum = 0.0;
  double acc_uniform = 0.0;
};

struct EquivalenceRow {
  int t_max = 0;
  stats::EquivalenceResult result;
};

struct ParetoOutput {
  std::vector<ParetoCell> cells;
  std::vector<EquivalenceRow> equivalence;
  bool strictly_dominates = false;
};

ParetoOutput cmd_sweep_pareto(const ExperimentConfig& c, const RunContext& ctx);

struct SimulateOutput {
  std::vector<std::filesystem::path> traces;
  std::vector<double> accuracy;
};

/// One federation per seed at the first grid point of each axis.
SimulateOutput cmd_simulate(const ExperimentConfig& c, const RunContext& ctx);

struct ChannelRow {
  double eta = 0.0;
  tadi::Channel channel = tadi::Channel::A1;
  int seed = -1;  // -1 = pooled over seeds
  double l_cal = 0.0;
  double lift = 0.0;
  double top_k = 0.0;
  std::optional<double> auroc;
  double boot_p = 1.0;  // one-sided (lift > 0), Holm-adjusted across channels
};

struct TadiOutput {
  std::vector<ChannelRow> per_seed;
  std::vector<ChannelRow> pooled;
};

TadiOutput cmd_tadi(const ExperimentConfig& c, const RunContext& ctx);

/// Evaluates all channels on target federations for one eta; exposed for tests.
TadiOutput evaluate_channels(const ExperimentConfig& c, const RunContext& ctx, double eta);

struct ReportSummary {
  int records = 0;
  int dominance_cells = 0;
  int dominance_violations = 0;
  int equivalence_rows = 0;
  int equivalence_passes = 0;
  std::vector<std::filesystem::path> plot_files;
  std::string text;
};

/// Reads <run_dir>/records.jsonl and writes plot-data CSVs next to it.
ReportSummary cmd_report(const std::filesystem::path& run_dir);

}  // namespace topodp::bench
