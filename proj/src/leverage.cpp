#include "topodp/leverage.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "topodp/common.hpp"

namespace topodp::leverage {

namespace {

constexpr std::pair<Proxy, std::string_view> kProxyNames[] = {
    {Proxy::GroupSize, "group_size"},
    {Proxy::Degree, "degree"},
    {Proxy::DatasetSize, "dataset_size"},
    {Proxy::Blend, "blend"},
};

template <typename T>
std::vector<double> unit_mean(const std::vector<T>& v) {
  if (v.empty()) return {};
  double mean = 0.0;
  for (const auto& x : v) mean += static_cast<double>(x);
  mean /= static_cast<double>(v.size());
  if (!(mean > 0.0)) throw InvalidParameter("proxy has non-positive mean");
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(),
                 [mean](const T& x) { return static_cast<double>(x) / mean; });
  return out;
}

}  // namespace

std::string_view to_string(Proxy p) {
  for (const auto& [k, name] : kProxyNames)
    if (k == p) return name;
  return "unknown";
}

Proxy proxy_from_string(std::string_view name) {
  for (const auto& [k, s] : kProxyNames)
    if (s == name) return k;
  throw InvalidParameter("unknown leverage proxy '" + std::string(name) + "'");
}

std::vector<double> proxy_group_size(const graphs::FederationGraph& g) {
  std::map<int, int> counts;
  for (int gid : g.org()) ++counts[gid];
  std::vector<int> sizes(g.n());
  for (int i = 0; i < g.n(); ++i) sizes[i] = counts[g.org()[i]];
  return unit_mean(sizes);
}

std::vector<double> proxy_degree(const graphs::FederationGraph& g) {
  std::vector<int> deg(g.n());
  for (int i = 0; i < g.n(); ++i) deg[i] = g.degree(i);
  return unit_mean(deg);
}

std::vector<double> proxy_dataset_size(const std::vector<int>& sizes) {
  if (std::any_of(sizes.begin(), sizes.end(), [](int s) { return s <= 0; }))
    throw InvalidParameter("dataset sizes must be positive");
  return unit_mean(sizes);
}

std::vector<double> blend(const std::vector<std::vector<double>>& proxies,
                          const std::vector<double>& weights) {
  if (proxies.empty() || proxies.size() != weights.size())
    throw InvalidParameter("blend needs one weight per proxy");
  const std::size_t n = proxies.front().size();
  for (const auto& p : proxies)
    if (p.size() != n) throw InvalidParameter("blend proxies differ in length");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidParameter("blend weights must be non-negative");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw InvalidParameter("blend weights must sum to 1");
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < proxies.size(); ++k)
    for (std::size_t i = 0; i < n; ++i) out[i] += weights[k] * proxies[k][i];
  return unit_mean(out);
}

LeverageProfile to_leverage(std::vector<double> raw, double eta_scale, Proxy proxy) {
  if (!(eta_scale >= 0.0)) throw InvalidParameter("eta_scale must be non-negative");
  LeverageProfile lp;
  lp.proxy = proxy;
  lp.eta_scale = eta_scale;
  lp.ell.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!(raw[i] >= 0.0)) throw InvalidParameter("proxy entries must be non-negative");
    lp.ell[i] = eta_scale * raw[i];
  }
  lp.raw = std::move(raw);
  return lp;
}

nlohmann::json to_json(const LeverageProfile& lp) {
  return {{"proxy", std::string(to_string(lp.proxy))},
          {"eta_scale", lp.eta_scale},
          {"raw", lp.raw},
          {"ell", lp.ell}};
}

}  // namespace topodp::leverage
