#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "topodp/graphs.hpp"

namespace topodp::leverage {

enum class Proxy { GroupSize, Degree, DatasetSize, Blend };

std::string_view to_string(Proxy p);
Proxy proxy_from_string(std::string_view name);

/// Per-client leverage in nats: ell = eta_scale * raw, raw has unit mean.
struct LeverageProfile {
  std::vector<double> ell;
  Proxy proxy = Proxy::Degree;
  std::vector<double> raw;
  double eta_scale = 1.0;

  int size() const noexcept { return static_cast<int>(ell.size()); }
};

/// |G_i| / mean_j |G_j| over org groups.
std::vector<double> proxy_group_size(const graphs::FederationGraph& g);
/// deg(i) / mean degree.
std::vector<double> proxy_degree(const graphs::FederationGraph& g);
/// |D_i| / mean |D_j|.
std::vector<double> proxy_dataset_size(const std::vector<int>& sizes);

/// Convex combination of unit-mean proxies, renormalised to unit mean.
std::vector<double> blend(const std::vector<std::vector<double>>& proxies,
                          const std::vector<double>& weights);

LeverageProfile to_leverage(std::vector<double> raw, double eta_scale, Proxy proxy);

nlohmann::json to_json(const LeverageProfile& lp);

}  // namespace topodp::leverage
