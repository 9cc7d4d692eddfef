#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace topodp::graphs {

enum class TopologyKind { Ring, Line, Star, Hierarchy, ErdosRenyi, BarabasiAlbert };

std::string_view to_string(TopologyKind kind);
TopologyKind topology_from_string(std::string_view name);

/// Family parameters. Fields irrelevant to a family are ignored.
struct TopologyParams {
  double er_p = 0.5;               // ER edge probability
  int ba_m = 2;                    // BA edges per attached vertex
  std::vector<int> group_sizes;    // hierarchy: contiguous org groups
  std::vector<int> org;            // non-hierarchy org labels; empty = single group

  bool operator==(const TopologyParams&) const = default;
};

using Edge = std::pair<int, int>;

/// Simple undirected connected communication graph with an organisational
/// labelling. Immutable once built; share freely across threads.
class FederationGraph {
 public:
  FederationGraph(int n, std::vector<Edge> edges, TopologyKind kind, std::optional<int> root,
                  std::vector<int> org, TopologyParams params = {}, std::uint64_t seed = 0);

  int n() const noexcept { return n_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  TopologyKind kind() const noexcept { return kind_; }
  const std::optional<int>& root() const noexcept { return root_; }
  const std::vector<int>& org() const noexcept { return org_; }
  int org_count() const noexcept { return org_count_; }
  const TopologyParams& params() const noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }

  const std::vector<int>& neighbours(int i) const { return adj_.at(i); }
  int degree(int i) const { return static_cast<int>(adj_.at(i).size()); }
  bool has_edge(int i, int j) const;
  bool connected() const;

  bool operator==(const FederationGraph& o) const {
    return n_ == o.n_ && edges_ == o.edges_ && kind_ == o.kind_ && root_ == o.root_ && org_ == o.org_;
  }

 private:
  int n_;
  std::vector<Edge> edges_;  // (i, j) with i < j, sorted
  TopologyKind kind_;
  std::optional<int> root_;
  std::vector<int> org_;
  int org_count_ = 1;
  TopologyParams params_;
  std::uint64_t seed_;
  std::vector<std::vector<int>> adj_;
};

struct StructuralFeatures {
  std::vector<int> degree;
  std::vector<int> depth;           // hops to root; all zero when rootless
  std::vector<double> betweenness;  // unnormalised, undirected pair counting
};

/// Maximum connectivity resampling attempts for ER graphs.
inline constexpr int kErResampleCap = 1000;

/// Builds a topology. Deterministic in (kind, n, params) and, for ER/BA, seed.
/// Hierarchy: each group is a star around its first member (the aggregator);
/// aggregators form a star around the aggregator of group 0, which is the root.
/// Star: client 0 is the hub and the root.
FederationGraph make_topology(TopologyKind kind, int n, const TopologyParams& params = {},
                              std::uint64_t seed = 0);

StructuralFeatures structural_features(const FederationGraph& g);

/// Exact Brandes accumulation; each unordered pair counted once.
std::vector<double> betweenness(const FederationGraph& g);

nlohmann::json to_json(const FederationGraph& g);
FederationGraph graph_from_json(const nlohmann::json& j);

}  // namespace topodp::graphs
