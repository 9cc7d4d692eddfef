#include "topodp/scenario.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "topodp/common.hpp"

namespace topodp::scenario {

std::string to_string(Allocation a) { return a == Allocation::Fulcrum ? "fulcrum" : "uniform"; }

Allocation allocation_from_string(const std::string& s) {
  if (s == "fulcrum") return Allocation::Fulcrum;
  if (s == "uniform") return Allocation::Uniform;
  throw InvalidParameter("unknown allocation mode '" + s + "'");
}

leverage::LeverageProfile leverage_for(const FederationSpec& spec, const graphs::FederationGraph& g,
                                       const std::vector<int>& sizes) {
  auto raw_of = [&](leverage::Proxy p) -> std::vector<double> {
    switch (p) {
      case leverage::Proxy::GroupSize: return leverage::proxy_group_size(g);
      case leverage::Proxy::Degree: return leverage::proxy_degree(g);
      case leverage::Proxy::DatasetSize: return leverage::proxy_dataset_size(sizes);
      case leverage::Proxy::Blend: break;
    }
    throw InvalidParameter("nested blend proxies are not supported");
  };
  std::vector<double> raw;
  if (spec.proxy == leverage::Proxy::Blend) {
    auto parts = spec.blend_of;
    if (parts.empty()) parts = {leverage::Proxy::GroupSize, leverage::Proxy::Degree};
    std::vector<std::vector<double>> proxies;
    for (auto p : parts) proxies.push_back(raw_of(p));
    raw = leverage::blend(proxies, std::vector<double>(parts.size(), 1.0 / parts.size()));
  } else {
    raw = raw_of(spec.proxy);
  }
  const double scale = spec.leverage_scale_is_eta ? spec.eta : spec.leverage_scale;
  return leverage::to_leverage(std::move(raw), scale, spec.proxy);
}

Federation build_federation(const FederationSpec& spec, std::uint64_t seed, bool with_data) {
  auto graph = graphs::make_topology(spec.topology, spec.n, spec.topo_params, derive_seed(seed, kTopology));
  std::vector<int> anchor =
      spec.anchor == AnchorMode::Org ? graph.org() : datagen::identity_anchor(spec.n);
  auto base = datagen::dirichlet_base(spec.n, spec.classes, spec.alpha, derive_seed(seed, kDirichlet));
  auto dists = datagen::eta_couple(base, spec.eta, anchor, spec.classes);
  auto conc = datagen::concentrations(dists, spec.sensitive_set);
  auto sizes = datagen::size_profile(spec.size_profile, spec.n, spec.base_size, spec.custom_sizes);
  auto lev = leverage_for(spec, graph, sizes);

  Federation f{std::move(graph), std::move(anchor), std::move(dists), std::move(conc),
               std::move(sizes), {}, {}, std::move(lev)};
  if (with_data) {
    f.datasets.reserve(spec.n);
    for (int i = 0; i < spec.n; ++i)
      f.datasets.push_back(datagen::sample_dataset(f.dists[i], f.sizes[i], spec.features,
                                                   derive_seed(seed, kSample, i)));
    f.test_set = datagen::sample_balanced(spec.classes, spec.test_size, spec.features,
                                          derive_seed(seed, kTestSet));
  }
  return f;
}

fedsim::SigmaSchedule schedule_for(const leverage::LeverageProfile& lp, Allocation alloc,
                                   const allocator::MechanismParams& mech, double budget) {
  fedsim::SigmaSchedule s;
  s.source = to_string(alloc);
  const std::size_t n = lp.ell.size();
  if (alloc == Allocation::Uniform) {
    if (!(budget > 0.0)) throw InvalidParameter("budget U must be > 0");
    s.sigma.assign(n, std::sqrt(budget / static_cast<double>(n)));
    return s;
  }
  const auto res = allocator::solve_balanced(mech, lp.ell, budget);
  s.sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.sigma[i] = std::sqrt(res.sigma_sq[i]);
  return s;
}

SimulationResult simulate(const FederationSpec& spec, std::uint64_t seed, Allocation alloc,
                          double budget, int t_max) {
  SimulationResult out{build_federation(spec, seed), {}};
  const auto& f = out.federation;
  fedsim::FedConfig cfg = spec.fed;
  cfg.t_max = t_max;
  cfg.seed = derive_seed(seed, kNoise);
  const allocator::MechanismParams mech(t_max, cfg.batch);
  auto schedule = schedule_for(f.leverage, alloc, mech, budget);
  fedsim::TraceMeta meta;
  meta.topology = std::string(graphs::to_string(spec.topology));
  meta.eta = spec.eta;
  meta.budget = budget;
  out.run = fedsim::run_federation(f.graph, f.datasets, schedule, cfg, f.test_set, meta);
  return out;
}

nlohmann::json to_json(const FederationSpec& s) {
  nlohmann::json blend = nlohmann::json::array();
  for (auto p : s.blend_of) blend.push_back(std::string(leverage::to_string(p)));
  return {
      {"topology", std::string(graphs::to_string(s.topology))},
      {"n", s.n},
      {"er_p", s.topo_params.er_p},
      {"ba_m", s.topo_params.ba_m},
      {"group_sizes", s.topo_params.group_sizes},
      {"classes", s.classes},
      {"feature_dim", s.features.dim},
      {"separation", s.features.separation},
      {"alpha", s.alpha},
      {"eta", s.eta},
      {"anchor", s.anchor == AnchorMode::Org ? "org" : "identity"},
      {"sensitive_set", s.sensitive_set},
      {"size_profile", s.size_profile},
      {"base_size", s.base_size},
      {"custom_sizes", s.custom_sizes},
      {"test_size", s.test_size},
      {"proxy", std::string(leverage::to_string(s.proxy))},
      {"blend_of", blend},
      {"leverage_scale", s.leverage_scale_is_eta ? nlohmann::json("eta") : nlohmann::json(s.leverage_scale)},
      {"fed",
       {{"clip_c", s.fed.clip_c},
        {"batch", s.fed.batch},
        {"lr", s.fed.lr},
        {"hidden", s.fed.hidden},
        {"mode", std::string(fedsim::to_string(s.fed.mode))},
        {"with_replacement", s.fed.with_replacement},
        {"noiseless", s.fed.noiseless}}},
  };
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const T& fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

}  // namespace

FederationSpec spec_from_json(const nlohmann::json& j, const FederationSpec& d) {
  const std::string path = "federation";
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  FederationSpec s = d;
  try {
    s.topology = graphs::topology_from_string(field<std::string>(j, "topology", std::string(graphs::to_string(d.topology)), path));
  } catch (const InvalidParameter& e) {
    throw ConfigError(path + ".topology", e.what());
  }
  s.n = field(j, "n", d.n, path);
  s.topo_params.er_p = field(j, "er_p", d.topo_params.er_p, path);
  s.topo_params.ba_m = field(j, "ba_m", d.topo_params.ba_m, path);
  s.topo_params.group_sizes = field(j, "group_sizes", d.topo_params.group_sizes, path);
  s.topo_params.org = field(j, "org", d.topo_params.org, path);
  s.classes = field(j, "classes", d.classes, path);
  s.features.dim = field(j, "feature_dim", d.features.dim, path);
  s.features.separation = field(j, "separation", d.features.separation, path);
  s.alpha = field(j, "alpha", d.alpha, path);
  s.eta = field(j, "eta", d.eta, path);
  const auto anchor = field<std::string>(j, "anchor", d.anchor == AnchorMode::Org ? "org" : "identity", path);
  if (anchor != "org" && anchor != "identity") throw ConfigError(path + ".anchor", "expected 'org' or 'identity'");
  s.anchor = anchor == "org" ? AnchorMode::Org : AnchorMode::Identity;
  s.sensitive_set = field(j, "sensitive_set", d.sensitive_set, path);
  s.size_profile = field(j, "size_profile", d.size_profile, path);
  s.base_size = field(j, "base_size", d.base_size, path);
  s.custom_sizes = field(j, "custom_sizes", d.custom_sizes, path);
  s.test_size = field(j, "test_size", d.test_size, path);
  try {
    s.proxy = leverage::proxy_from_string(field<std::string>(j, "proxy", std::string(leverage::to_string(d.proxy)), path));
    if (j.contains("blend_of")) {
      s.blend_of.clear();
      for (const auto& p : j.at("blend_of")) s.blend_of.push_back(leverage::proxy_from_string(p.get<std::string>()));
    }
  } catch (const InvalidParameter& e) {
    throw ConfigError(path + ".proxy", e.what());
  }
  if (j.contains("leverage_scale")) {
    const auto& ls = j.at("leverage_scale");
    if (ls.is_string() && ls.get<std::string>() == "eta") {
      s.leverage_scale_is_eta = true;
    } else if (ls.is_number()) {
      s.leverage_scale_is_eta = false;
      s.leverage_scale = ls.get<double>();
    } else {
      throw ConfigError(path + ".leverage_scale", "expected \"eta\" or a number");
    }
  }
  if (j.contains("fed")) {
    const auto& f = j.at("fed");
    const std::string fp = path + ".fed";
    s.fed.clip_c = field(f, "clip_c", d.fed.clip_c, fp);
    s.fed.batch = field(f, "batch", d.fed.batch, fp);
    s.fed.lr = field(f, "lr", d.fed.lr, fp);
    s.fed.hidden = field(f, "hidden", d.fed.hidden, fp);
    s.fed.with_replacement = field(f, "with_replacement", d.fed.with_replacement, fp);
    s.fed.noiseless = field(f, "noiseless", d.fed.noiseless, fp);
    try {
      s.fed.mode = fedsim::aggregation_from_string(field<std::string>(f, "mode", std::string(fedsim::to_string(d.fed.mode)), fp));
    } catch (const InvalidParameter& e) {
      throw ConfigError(fp + ".mode", e.what());
    }
  }

  // Validate by construction; surfaces parameter errors before any run starts.
  try {
    const auto f = build_federation(s, 0, false);
    if (s.fed.mode == fedsim::AggregationMode::Hierarchical && !f.graph.root())
      throw ConfigError(path + ".fed.mode", "hierarchical aggregation needs a rooted topology (star or hierarchy)");
  } catch (const InvalidParameter& e) {
    throw ConfigError(path, e.what());
  } catch (const GenerationFailure& e) {
    throw ConfigError(path, e.what());
  }
  if (s.fed.batch < 1) throw ConfigError(path + ".fed.batch", "must be >= 1");
  if (!(s.fed.clip_c > 0.0)) throw ConfigError(path + ".fed.clip_c", "must be > 0");
  if (!(s.fed.lr > 0.0)) throw ConfigError(path + ".fed.lr", "must be > 0");
  if (s.features.dim < 1) throw ConfigError(path + ".feature_dim", "must be >= 1");
  if (s.test_size < 1) throw ConfigError(path + ".test_size", "must be >= 1");
  return s;
}

}  // namespace topodp::scenario
