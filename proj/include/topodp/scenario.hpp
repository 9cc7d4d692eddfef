#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "topodp/allocator.hpp"
#include "topodp/datagen.hpp"
#include "topodp/fedsim.hpp"
#include "topodp/graphs.hpp"
#include "topodp/leverage.hpp"

// Glue that turns a declarative federation description into a concrete
// graph + partition + leverage profile, shared by the attack harvester and
// the sweep commands.
namespace topodp::scenario {

enum class AnchorMode { Identity, Org };
enum class Allocation { Fulcrum, Uniform };

std::string to_string(Allocation a);
Allocation allocation_from_string(const std::string& s);

struct FederationSpec {
  graphs::TopologyKind topology = graphs::TopologyKind::Ring;
  int n = 50;
  graphs::TopologyParams topo_params;

  int classes = 10;
  datagen::FeatureModel features;
  double alpha = 0.5;
  double eta = 0.0;
  AnchorMode anchor = AnchorMode::Identity;
  std::vector<int> sensitive_set{0};

  std::string size_profile = "uniform";
  int base_size = 200;
  std::vector<int> custom_sizes;
  int test_size = 2000;

  leverage::Proxy proxy = leverage::Proxy::Degree;
  std::vector<leverage::Proxy> blend_of;  // used when proxy == Blend; equal weights
  bool leverage_scale_is_eta = true;      // ell = eta * raw; otherwise ell = leverage_scale * raw
  double leverage_scale = 1.0;

  fedsim::FedConfig fed;  // seed and t_max overwritten per run
};

struct Federation {
  graphs::FederationGraph graph;
  std::vector<int> anchor;
  std::vector<datagen::ClassDistribution> dists;
  datagen::ConcentrationVector conc;
  std::vector<int> sizes;
  std::vector<datagen::ClientDataset> datasets;
  datagen::ClientDataset test_set;
  leverage::LeverageProfile leverage;
};

/// Deterministic in (spec, seed). `with_data` = false skips record sampling.
Federation build_federation(const FederationSpec& spec, std::uint64_t seed, bool with_data = true);

leverage::LeverageProfile leverage_for(const FederationSpec& spec, const graphs::FederationGraph& g,
                                       const std::vector<int>& sizes);

/// Noise multipliers sigma_i = sqrt(sigma_i^2) for the requested allocation.
fedsim::SigmaSchedule schedule_for(const leverage::LeverageProfile& lp, Allocation alloc,
                                   const allocator::MechanismParams& mech, double budget);

struct SimulationResult {
  Federation federation;
  fedsim::RunOutput run;
};

SimulationResult simulate(const FederationSpec& spec, std::uint64_t seed, Allocation alloc,
                          double budget, int t_max);

nlohmann::json to_json(const FederationSpec& spec);
FederationSpec spec_from_json(const nlohmann::json& j, const FederationSpec& defaults = {});

}  // namespace topodp::scenario
