#include "topodp/graphs.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <stack>

#include <nlohmann/json.hpp>

#include "topodp/common.hpp"

namespace topodp::graphs {

namespace {

constexpr std::pair<TopologyKind, std::string_view> kKindNames[] = {
    {TopologyKind::Ring, "ring"},
    {TopologyKind::Line, "line"},
    {TopologyKind::Star, "star"},
    {TopologyKind::Hierarchy, "hierarchy"},
    {TopologyKind::ErdosRenyi, "er"},
    {TopologyKind::BarabasiAlbert, "ba"},
};

std::vector<int> default_org(int n, const TopologyParams& params) {
  if (params.org.empty()) return std::vector<int>(n, 0);
  if (static_cast<int>(params.org.size()) != n)
    throw InvalidParameter("org labelling has " + std::to_string(params.org.size()) +
                           " entries for " + std::to_string(n) + " clients");
  return params.org;
}

std::vector<Edge> er_sample(int n, double p, Rng& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng)) edges.emplace_back(i, j);
  return edges;
}

std::vector<Edge> barabasi_albert(int n, int m, Rng& rng) {
  std::vector<Edge> edges;
  // Seed clique on m vertices; m == 1 starts from a single vertex.
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) edges.emplace_back(i, j);
  // Endpoint list: each vertex appears once per incident edge, so a uniform
  // draw from it is degree-proportional.
  std::vector<int> endpoints;
  for (const auto& [u, v] : edges) {
    endpoints.push_back(u);
    endpoints.push_back(v);
  }
  for (int v = m; v < n; ++v) {
    std::set<int> targets;
    if (endpoints.empty()) {
      // m == 1 and v == 1: the only candidate is vertex 0.
      targets.insert(0);
    }
    while (static_cast<int>(targets.size()) < m) {
      std::uniform_int_distribution<std::size_t> pick(0, endpoints.size() - 1);
      targets.insert(endpoints[pick(rng)]);
    }
    for (int t : targets) {
      edges.emplace_back(t, v);
      endpoints.push_back(t);
      endpoints.push_back(v);
    }
  }
  return edges;
}

}  // namespace

std::string_view to_string(TopologyKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

TopologyKind topology_from_string(std::string_view name) {
  for (const auto& [k, s] : kKindNames)
    if (s == name) return k;
  throw InvalidParameter("unknown topology kind '" + std::string(name) + "'");
}

FederationGraph::FederationGraph(int n, std::vector<Edge> edges, TopologyKind kind,
                                 std::optional<int> root, std::vector<int> org,
                                 TopologyParams params, std::uint64_t seed)
    : n_(n),
      kind_(kind),
      root_(root),
      org_(std::move(org)),
      params_(std::move(params)),
      seed_(seed),
      adj_(n) {
  if (n < 1) throw InvalidParameter("graph needs at least one client");
  for (auto [u, v] : edges) {
    if (u == v) throw InvalidParameter("self-loop at client " + std::to_string(u));
    if (u < 0 || v < 0 || u >= n || v >= n) throw InvalidParameter("edge endpoint out of range");
    edges_.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(edges_.begin(), edges_.end());
  if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end())
    throw InvalidParameter("duplicate edge");
  for (auto [u, v] : edges_) {
    adj_[u].push_back(v);
    adj_[v].push_back(u);
  }
  for (auto& a : adj_) std::sort(a.begin(), a.end());

  if (root_ && (*root_ < 0 || *root_ >= n)) throw InvalidParameter("root out of range");
  if (static_cast<int>(org_.size()) != n) throw InvalidParameter("org labelling size mismatch");
  std::set<int> ids(org_.begin(), org_.end());
  if (*ids.begin() != 0 || *ids.rbegin() != static_cast<int>(ids.size()) - 1)
    throw InvalidParameter("org group ids must be contiguous from 0");
  org_count_ = static_cast<int>(ids.size());
}

bool FederationGraph::has_edge(int i, int j) const {
  const auto& a = adj_.at(i);
  return std::binary_search(a.begin(), a.end(), j);
}

bool FederationGraph::connected() const {
  std::vector<char> seen(n_, 0);
  std::vector<int> frontier{0};
  seen[0] = 1;
  int count = 1;
  while (!frontier.empty()) {
    int u = frontier.back();
    frontier.pop_back();
    for (int v : adj_[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        frontier.push_back(v);
      }
  }
  return count == n_;
}

FederationGraph make_topology(TopologyKind kind, int n, const TopologyParams& params,
                              std::uint64_t seed) {
  if (n < 2) throw InvalidParameter("n must be at least 2, got " + std::to_string(n));

  std::vector<Edge> edges;
  std::optional<int> root;
  switch (kind) {
    case TopologyKind::Ring:
      for (int i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
      if (n == 2) edges.pop_back();  // a 2-ring is a single edge
      break;
    case TopologyKind::Line:
      for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
      break;
    case TopologyKind::Star:
      for (int i = 1; i < n; ++i) edges.emplace_back(0, i);
      root = 0;
      break;
    case TopologyKind::Hierarchy: {
      const auto& sizes = params.group_sizes;
      if (sizes.empty()) throw InvalidParameter("hierarchy needs at least one group");
      if (std::any_of(sizes.begin(), sizes.end(), [](int s) { return s < 1; }))
        throw InvalidParameter("hierarchy group sizes must be positive");
      if (std::accumulate(sizes.begin(), sizes.end(), 0) != n)
        throw InvalidParameter("hierarchy group sizes do not sum to n");
      std::vector<int> org;
      int start = 0;
      for (std::size_t gidx = 0; gidx < sizes.size(); ++gidx) {
        for (int k = 1; k < sizes[gidx]; ++k) edges.emplace_back(start, start + k);
        if (gidx > 0) edges.emplace_back(0, start);
        org.insert(org.end(), sizes[gidx], static_cast<int>(gidx));
        start += sizes[gidx];
      }
      return FederationGraph(n, std::move(edges), kind, 0, std::move(org), params, seed);
    }
    case TopologyKind::ErdosRenyi: {
      if (!(params.er_p > 0.0 && params.er_p <= 1.0))
        throw InvalidParameter("ER probability must lie in (0, 1]");
      auto org = default_org(n, params);
      for (int attempt = 0; attempt < kErResampleCap; ++attempt) {
        Rng rng(derive_seed(seed, kTopology, attempt));
        FederationGraph g(n, er_sample(n, params.er_p, rng), kind, std::nullopt, org, params, seed);
        if (g.connected()) return g;
      }
      throw GenerationFailure("ER graph not connected after " + std::to_string(kErResampleCap) +
                              " attempts");
    }
    case TopologyKind::BarabasiAlbert: {
      if (params.ba_m < 1 || params.ba_m > n - 1)
        throw InvalidParameter("BA attachment m must lie in [1, n-1]");
      Rng rng(derive_seed(seed, kTopology));
      edges = barabasi_albert(n, params.ba_m, rng);
      break;
    }
  }
  return FederationGraph(n, std::move(edges), kind, root, default_org(n, params), params, seed);
}

std::vector<double> betweenness(const FederationGraph& g) {
  const int n = g.n();
  std::vector<double> cb(n, 0.0);
  std::vector<int> dist(n);
  std::vector<double> sigma(n), delta(n);
  std::vector<std::vector<int>> preds(n);
  std::vector<int> order;
  order.reserve(n);
  for (int s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), -1);
    std::fill(sigma.begin(), sigma.end(), 0.0);
    std::fill(delta.begin(), delta.end(), 0.0);
    for (auto& p : preds) p.clear();
    order.clear();
    dist[s] = 0;
    sigma[s] = 1.0;
    std::queue<int> q;
    q.push(s);
    while (!q.empty()) {
      int v = q.front();
      q.pop();
      order.push_back(v);
      for (int w : g.neighbours(v)) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          q.push(w);
        }
        if (dist[w] == dist[v] + 1) {
          sigma[w] += sigma[v];
          preds[w].push_back(v);
        }
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      int w = *it;
      for (int v : preds[w]) delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
      if (w != s) cb[w] += delta[w];
    }
  }
  // Every unordered pair was visited from both endpoints.
  for (auto& c : cb) c /= 2.0;
  return cb;
}

StructuralFeatures structural_features(const FederationGraph& g) {
  StructuralFeatures sf;
  const int n = g.n();
  sf.degree.resize(n);
  for (int i = 0; i < n; ++i) sf.degree[i] = g.degree(i);
  sf.depth.assign(n, 0);
  if (g.root()) {
    std::vector<int> dist(n, -1);
    std::queue<int> q;
    dist[*g.root()] = 0;
    q.push(*g.root());
    while (!q.empty()) {
      int v = q.front();
      q.pop();
      for (int w : g.neighbours(v))
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          q.push(w);
        }
    }
    sf.depth = std::move(dist);
  }
  sf.betweenness = betweenness(g);
  return sf;
}

nlohmann::json to_json(const FederationGraph& g) {
  nlohmann::json j;
  j["n"] = g.n();
  j["kind"] = std::string(to_string(g.kind()));
  auto& edges = j["edges"] = nlohmann::json::array();
  for (auto [u, v] : g.edges()) edges.push_back({u, v});
  j["root"] = g.root() ? nlohmann::json(*g.root()) : nlohmann::json(nullptr);
  j["org"] = g.org();
  j["params"] = {{"er_p", g.params().er_p},
                 {"ba_m", g.params().ba_m},
                 {"group_sizes", g.params().group_sizes}};
  j["seed"] = g.seed();
  return j;
}

FederationGraph graph_from_json(const nlohmann::json& j) {
  std::vector<Edge> edges;
  for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  std::optional<int> root;
  if (!j.at("root").is_null()) root = j.at("root").get<int>();
  TopologyParams params;
  if (j.contains("params")) {
    const auto& p = j["params"];
    params.er_p = p.value("er_p", params.er_p);
    params.ba_m = p.value("ba_m", params.ba_m);
    params.group_sizes = p.value("group_sizes", std::vector<int>{});
  }
  params.org = j.at("org").get<std::vector<int>>();
  return FederationGraph(j.at("n").get<int>(), std::move(edges),
                         topology_from_string(j.at("kind").get<std::string>()), root,
                         j.at("org").get<std::vector<int>>(), params,
                         j.value("seed", std::uint64_t{0}));
}

}  // namespace topodp::graphs
