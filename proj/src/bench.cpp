#include "topodp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "topodp/common.hpp"
#include "topodp/io.hpp"
#include "topodp/parallel.hpp"

namespace topodp::bench {

using nlohmann::json;

namespace {

// ---- configuration helpers --------------------------------------------------

json topology_entry(const std::string& label, json fields) {
  fields["label"] = label;
  return fields;
}

void merge_into(json& base, const json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

// Re-roots a "federation.xxx" error path under `prefix`.
[[noreturn]] void rethrow_under(const ConfigError& e, const std::string& prefix) {
  std::string p = e.path();
  std::string msg = e.what();
  if (msg.rfind(p + ": ", 0) == 0) msg = msg.substr(p.size() + 2);
  const std::string root = "federation";
  if (p.rfind(root, 0) == 0) p = prefix + p.substr(root.size());
  throw ConfigError(p, msg);
}

scenario::FederationSpec resolve_spec(const json& overrides, const scenario::FederationSpec& base,
                                      const std::string& prefix) {
  try {
    return scenario::spec_from_json(overrides, base);
  } catch (const ConfigError& e) {
    rethrow_under(e, prefix);
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) throw ConfigError(path + key, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + key, e.what());
  }
}

template <typename T>
std::vector<T> nonempty_list(const json& j, const std::string& key) {
  auto v = get<std::vector<T>>(j, key, "");
  if (v.empty()) throw ConfigError(key, "grid must be nonempty");
  return v;
}

bool random_family(graphs::TopologyKind k) {
  return k == graphs::TopologyKind::ErdosRenyi || k == graphs::TopologyKind::BarabasiAlbert;
}

// ---- result store -------------------------------------------------------------

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class RecordWriter {
 public:
  RecordWriter(const ExperimentConfig& c, const RunContext& ctx, std::string command)
      : dir_(ctx.out), hash_(config_hash(c)), setting_(c.setting), command_(std::move(command)) {
    std::filesystem::create_directories(dir_);
    started_ = utc_timestamp();
    run_id_ = command_ + "-" + hash_ + "-" + std::to_string(ctx.seed) + "-" +
              std::to_string(std::chrono::system_clock::now().time_since_epoch().count());
    std::ofstream(dir_ / ("config-" + hash_ + ".json")) << to_json(c).dump(2) << '\n';
    base_seed_ = ctx.seed;
  }

  void add(json rec) {
    rec["setting"] = setting_;
    rec["config_hash"] = hash_;
    rec["run_id"] = run_id_;
    rec["command"] = command_;
    rec["base_seed"] = base_seed_;
    rec["started"] = started_;
    pending_.push_back(std::move(rec));
  }

  void flush() {
    const auto finished = utc_timestamp();
    std::ofstream out(dir_ / "records.jsonl", std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / "records.jsonl").string());
    for (auto& r : pending_) {
      r["finished"] = finished;
      out << r.dump() << '\n';
    }
    pending_.clear();
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::string hash_, setting_, command_, run_id_, started_;
  std::uint64_t base_seed_ = 0;
  std::vector<json> pending_;
};

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& cols,
               const std::vector<std::vector<std::string>>& rows) {
  std::filesystem::remove(path);
  io::append_csv(path, cols, rows);
}

std::string fmt(double v) { return io::fmt_double(v); }

json auroc_json(const std::optional<double>& a) { return a ? json(*a) : json(nullptr); }

}  // namespace

// ---- presets & parsing ------------------------------------------------------------

json preset(const std::string& setting) {
  const json grids = {{"U", {0.05, 0.1, 0.2, 0.4, 0.5, 1.0}},
                      {"t_max", {25, 50, 100}},
                      {"allocations", {"fulcrum", "uniform"}},
                      {"seeds", {0, 1, 2}},
                      {"graph_seeds", 20},
                      {"heatmap", {{"U", 0.5}, {"t_max", 100}}},
                      {"equivalence_margin", 0.5},
                      {"sigma_floor", 1e-6},
                      {"save_traces", false}};
  json tadi = {{"backend", "ridge"},   {"shadows", 40},        {"prior", "matched"},
               {"allocation", "uniform"}, {"lambda", 1.0},     {"bootstrap_reps", 2000},
               {"alpha", 0.05},        {"U", 0.5},             {"t_max", 100},
               {"federation", json::object()}};
  json c = grids;
  c["setting"] = setting;
  if (setting == "setting-C") {
    c["federation"] = {{"topology", "hierarchy"},
                       {"n", 50},
                       {"group_sizes", {20, 12, 8, 6, 4}},
                       {"classes", 10},
                       {"feature_dim", 16},
                       {"alpha", 0.5},
                       {"eta", 0.5},
                       {"anchor", "org"},
                       {"sensitive_set", {0}},
                       {"size_profile", "uniform"},
                       {"base_size", 200},
                       {"test_size", 2000},
                       {"proxy", "degree"},
                       {"leverage_scale", "eta"},
                       {"fed", {{"mode", "hierarchical"}, {"batch", 64}, {"clip_c", 1.0}, {"lr", 0.5}}}};
    c["topologies"] = {
        topology_entry("ring", {{"topology", "ring"}, {"fed", {{"mode", "gossip"}}}}),
        topology_entry("line", {{"topology", "line"}, {"fed", {{"mode", "gossip"}}}}),
        topology_entry("hierarchy", {{"topology", "hierarchy"}}),
        topology_entry("star", {{"topology", "star"}, {"fed", {{"mode", "fedavg"}}}}),
        topology_entry("er-0.3", {{"topology", "er"}, {"er_p", 0.3}, {"fed", {{"mode", "gossip"}}}}),
        topology_entry("er-0.5", {{"topology", "er"}, {"er_p", 0.5}, {"fed", {{"mode", "gossip"}}}}),
        topology_entry("er-0.7", {{"topology", "er"}, {"er_p", 0.7}, {"fed", {{"mode", "gossip"}}}}),
        topology_entry("ba-2", {{"topology", "ba"}, {"ba_m", 2}, {"fed", {{"mode", "gossip"}}}}),
        topology_entry("ba-4", {{"topology", "ba"}, {"ba_m", 4}, {"fed", {{"mode", "gossip"}}}}),
    };
    c["eta"] = {0.0, 0.25, 0.5, 0.75, 1.0};
    // Very large alpha stands in for the IID limit so that eta = 0 gives constant p.
    tadi["federation"] = {{"alpha", 1e6}};
  } else if (setting == "synthetic-A-analogue") {
    c["federation"] = {{"topology", "hierarchy"},
                       {"n", 6},
                       {"group_sizes", {2, 2, 2}},
                       {"classes", 8},
                       {"feature_dim", 16},
                       {"alpha", 0.5},
                       {"eta", 0.0},
                       {"anchor", "identity"},
                       {"sensitive_set", {0}},
                       {"size_profile", "ratio30"},
                       {"test_size", 2000},
                       {"proxy", "dataset_size"},
                       {"leverage_scale", 1.0},
                       {"fed", {{"mode", "hierarchical"}, {"batch", 64}, {"clip_c", 1.0}, {"lr", 0.5}}}};
    c["topologies"] = {topology_entry("hierarchy", json::object())};
    c["eta"] = {0.0};
  } else if (setting == "synthetic-B-analogue") {
    c["federation"] = {{"topology", "ring"},
                       {"n", 4},
                       {"classes", 2},
                       {"feature_dim", 13},
                       {"alpha", 0.5},
                       {"eta", 0.0},
                       {"anchor", "identity"},
                       {"sensitive_set", {1}},
                       {"size_profile", "ratio6p6"},
                       {"test_size", 2000},
                       {"proxy", "dataset_size"},
                       {"leverage_scale", 1.0},
                       {"fed", {{"mode", "fedavg"}, {"batch", 64}, {"clip_c", 1.0}, {"lr", 0.5}}}};
    c["topologies"] = {topology_entry("ring", json::object())};
    c["eta"] = {0.0};
    tadi["prior"] = "mismatched";
  } else {
    throw ConfigError("setting", "unknown setting '" + setting +
                                     "' (expected synthetic-A-analogue, synthetic-B-analogue or setting-C)");
  }
  c["tadi"] = tadi;
  return c;
}

ExperimentConfig config_from_json(const json& in) {
  if (!in.is_object()) throw ConfigError("config", "expected an object");
  const std::string setting = in.contains("setting") ? get<std::string>(in, "setting", "") : "setting-C";
  json j = preset(setting);
  // Lists replace wholesale; objects merge.
  merge_into(j, in);
  if (in.contains("federation")) {
    j["federation"] = preset(setting)["federation"];
    merge_into(j["federation"], in["federation"]);
  }

  ExperimentConfig c;
  c.setting = setting;
  c.federation_json = j["federation"];
  c.federation = resolve_spec(c.federation_json, scenario::FederationSpec{}, "federation");

  const auto& topo = j.at("topologies");
  if (!topo.is_array() || topo.empty()) throw ConfigError("topologies", "must be a nonempty list");
  std::set<std::string> labels;
  for (std::size_t k = 0; k < topo.size(); ++k) {
    const std::string path = "topologies[" + std::to_string(k) + "]";
    if (!topo[k].is_object()) throw ConfigError(path, "expected an object");
    TopologyEntry e;
    e.overrides = topo[k];
    e.label = e.overrides.value("label", e.overrides.value("topology", std::string(graphs::to_string(c.federation.topology))));
    e.overrides.erase("label");
    if (!labels.insert(e.label).second) throw ConfigError(path + ".label", "duplicate label '" + e.label + "'");
    e.spec = resolve_spec(e.overrides, c.federation, path);
    c.topologies.push_back(std::move(e));
  }

  c.eta = nonempty_list<double>(j, "eta");
  for (std::size_t k = 0; k < c.eta.size(); ++k)
    if (!(c.eta[k] >= 0.0 && c.eta[k] <= 1.0)) throw ConfigError("eta[" + std::to_string(k) + "]", "must lie in [0, 1]");
  c.budgets = nonempty_list<double>(j, "U");
  for (std::size_t k = 0; k < c.budgets.size(); ++k)
    if (!(c.budgets[k] > 0.0) || !std::isfinite(c.budgets[k])) throw ConfigError("U[" + std::to_string(k) + "]", "must be > 0");
  c.t_max = nonempty_list<int>(j, "t_max");
  for (std::size_t k = 0; k < c.t_max.size(); ++k)
    if (c.t_max[k] < 1) throw ConfigError("t_max[" + std::to_string(k) + "]", "must be >= 1");
  for (const auto& a : nonempty_list<std::string>(j, "allocations")) {
    try {
      c.allocations.push_back(scenario::allocation_from_string(a));
    } catch (const InvalidParameter& e) {
      throw ConfigError("allocations", e.what());
    }
  }
  c.seeds = nonempty_list<std::uint64_t>(j, "seeds");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    throw ConfigError("seeds", "seeds must be distinct");
  c.graph_seeds = get<int>(j, "graph_seeds", "");
  if (c.graph_seeds < 1) throw ConfigError("graph_seeds", "must be >= 1");
  const auto& hm = j.at("heatmap");
  c.heatmap_budget = get<double>(hm, "U", "heatmap.");
  c.heatmap_t_max = get<int>(hm, "t_max", "heatmap.");
  if (!(c.heatmap_budget > 0.0)) throw ConfigError("heatmap.U", "must be > 0");
  if (c.heatmap_t_max < 1) throw ConfigError("heatmap.t_max", "must be >= 1");
  c.equivalence_margin = get<double>(j, "equivalence_margin", "");
  if (!(c.equivalence_margin > 0.0)) throw ConfigError("equivalence_margin", "must be > 0");
  c.sigma_floor = get<double>(j, "sigma_floor", "");
  if (!(c.sigma_floor >= 0.0)) throw ConfigError("sigma_floor", "must be >= 0");
  c.save_traces = get<bool>(j, "save_traces", "");

  const auto& t = j.at("tadi");
  try {
    c.tadi.backend = tadi::backend_from_string(get<std::string>(t, "backend", "tadi."));
  } catch (const InvalidParameter& e) {
    throw ConfigError("tadi.backend", e.what());
  }
  c.tadi.shadows = get<int>(t, "shadows", "tadi.");
  if (c.tadi.shadows < 1) throw ConfigError("tadi.shadows", "must be >= 1");
  const auto prior = get<std::string>(t, "prior", "tadi.");
  if (prior != "matched" && prior != "mismatched") throw ConfigError("tadi.prior", "expected 'matched' or 'mismatched'");
  c.tadi.prior = prior == "matched" ? tadi::PriorMode::Matched : tadi::PriorMode::Mismatched;
  try {
    c.tadi.allocation = scenario::allocation_from_string(get<std::string>(t, "allocation", "tadi."));
  } catch (const InvalidParameter& e) {
    throw ConfigError("tadi.allocation", e.what());
  }
  c.tadi.lambda = get<double>(t, "lambda", "tadi.");
  if (!(c.tadi.lambda > 0.0)) throw ConfigError("tadi.lambda", "must be > 0");
  c.tadi.bootstrap_reps = get<int>(t, "bootstrap_reps", "tadi.");
  if (c.tadi.bootstrap_reps < 1) throw ConfigError("tadi.bootstrap_reps", "must be >= 1");
  c.tadi.alpha = get<double>(t, "alpha", "tadi.");
  if (!(c.tadi.alpha > 0.0 && c.tadi.alpha < 1.0)) throw ConfigError("tadi.alpha", "must lie in (0, 1)");
  c.tadi.budget = get<double>(t, "U", "tadi.");
  if (!(c.tadi.budget > 0.0)) throw ConfigError("tadi.U", "must be > 0");
  c.tadi.t_max = get<int>(t, "t_max", "tadi.");
  if (c.tadi.t_max < 1) throw ConfigError("tadi.t_max", "must be >= 1");
  c.tadi.overrides = t.value("federation", json::object());
  c.tadi.spec = resolve_spec(c.tadi.overrides, c.federation, "tadi.federation");

  // Mechanism constants for every grid point.
  for (int t_max : c.t_max) {
    try {
      (void)allocator::MechanismParams(t_max, c.federation.fed.batch);
    } catch (const InvalidParameter& e) {
      throw ConfigError("t_max", e.what());
    }
  }
  return c;
}

namespace {

json toml_node_to_json(const toml::node& node) {
  if (auto* t = node.as_table()) {
    json out = json::object();
    for (auto&& [k, v] : *t) out[std::string(k.str())] = toml_node_to_json(v);
    return out;
  }
  if (auto* a = node.as_array()) {
    json out = json::array();
    for (auto&& v : *a) out.push_back(toml_node_to_json(v));
    return out;
  }
  if (auto* s = node.as_string()) return s->get();
  if (auto* i = node.as_integer()) return i->get();
  if (auto* f = node.as_floating_point()) return f->get();
  if (auto* b = node.as_boolean()) return b->get();
  std::ostringstream os;
  if (auto* d = node.as_date()) os << d->get();
  else if (auto* t = node.as_time()) os << t->get();
  else if (auto* dt = node.as_date_time()) os << dt->get();
  return os.str();  // dates and times as text
}

}  // namespace

json toml_to_json(const std::string& text, const std::string& source) {
  try {
    return toml_node_to_json(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << e.description() << " (line " << e.source().begin.line << ")";
    throw ConfigError(source, os.str());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  if (path.extension() == ".toml") {
    j = toml_to_json(ss.str(), path.string());
  } else {
    try {
      j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string(), e.what());
    }
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  json topo = json::array();
  for (const auto& t : c.topologies) topo.push_back({{"label", t.label}, {"federation", scenario::to_json(t.spec)}});
  json allocs = json::array();
  for (auto a : c.allocations) allocs.push_back(scenario::to_string(a));
  return {
      {"setting", c.setting},
      {"federation", scenario::to_json(c.federation)},
      {"topologies", topo},
      {"eta", c.eta},
      {"U", c.budgets},
      {"t_max", c.t_max},
      {"allocations", allocs},
      {"seeds", c.seeds},
      {"graph_seeds", c.graph_seeds},
      {"heatmap", {{"U", c.heatmap_budget}, {"t_max", c.heatmap_t_max}}},
      {"equivalence_margin", c.equivalence_margin},
      {"sigma_floor", c.sigma_floor},
      {"save_traces", c.save_traces},
      {"tadi",
       {{"backend", std::string(tadi::to_string(c.tadi.backend))},
        {"shadows", c.tadi.shadows},
        {"prior", c.tadi.prior == tadi::PriorMode::Matched ? "matched" : "mismatched"},
        {"allocation", scenario::to_string(c.tadi.allocation)},
        {"lambda", c.tadi.lambda},
        {"bootstrap_reps", c.tadi.bootstrap_reps},
        {"alpha", c.tadi.alpha},
        {"U", c.tadi.budget},
        {"t_max", c.tadi.t_max},
        {"federation", scenario::to_json(c.tadi.spec)}}},
  };
}

std::string config_hash(const ExperimentConfig& c) {
  // nlohmann::json objects iterate keys in sorted order, so dump() is canonical.
  const std::string text = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t run_seed(const RunContext& ctx, std::uint64_t config_seed) {
  return derive_seed(ctx.seed, config_seed);
}

// ---- allocate / sweep-eta ---------------------------------------------------------

namespace {

struct GraphCase {
  std::size_t topo;
  int graph_seed;
};

std::vector<GraphCase> graph_cases(const ExperimentConfig& c) {
  std::vector<GraphCase> out;
  for (std::size_t k = 0; k < c.topologies.size(); ++k) {
    const int count = random_family(c.topologies[k].spec.topology) ? c.graph_seeds : 1;
    for (int g = 0; g < count; ++g) out.push_back({k, g});
  }
  return out;
}

// Raw (unit-mean) proxy for one graph; leverage is eta-scaled per cell.
std::vector<double> raw_proxy(const scenario::FederationSpec& spec, std::uint64_t seed) {
  const auto f = scenario::build_federation(spec, seed, false);
  return f.leverage.raw;
}

std::vector<double> scaled(const scenario::FederationSpec& spec, const std::vector<double>& raw, double eta) {
  const double s = spec.leverage_scale_is_eta ? eta : spec.leverage_scale;
  std::vector<double> ell(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) ell[i] = s * raw[i];
  return ell;
}

std::uint64_t graph_seed_value(const RunContext& ctx, int g) { return derive_seed(ctx.seed, kTopology, g); }

}  // namespace

std::vector<AllocationCell> cmd_allocate(const ExperimentConfig& c, const RunContext& ctx) {
  const auto cases = graph_cases(c);
  std::vector<std::vector<double>> raws(cases.size());
  parallel_for(cases.size(), ctx.workers, [&](std::size_t k) {
    raws[k] = raw_proxy(c.topologies[cases[k].topo].spec, graph_seed_value(ctx, cases[k].graph_seed));
  });

  std::vector<AllocationCell> cells;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& entry = c.topologies[cases[k].topo];
    for (double eta : c.eta)
      for (double u : c.budgets)
        for (int t : c.t_max) {
          const allocator::MechanismParams mech(t, entry.spec.fed.batch);
          const auto ell = scaled(entry.spec, raws[k], eta);
          AllocationCell cell{entry.label, cases[k].graph_seed, eta, u, t, allocator::solve_balanced(mech, ell, u), false, {}};
          const auto kkt = allocator::verify_kkt(cell.result, mech, ell, u, c.sigma_floor);
          cell.kkt_pass = kkt.pass();
          cell.below_floor = kkt.below_floor;
          cells.push_back(std::move(cell));
        }
  }

  RecordWriter rec(c, ctx, "allocate");
  std::vector<std::vector<std::string>> rows;
  json all = json::array();
  for (const auto& cell : cells) {
    rows.push_back({c.setting, cell.topology, fmt(cell.eta), fmt(cell.budget), std::to_string(cell.t_max),
                    fmt(cell.result.k_star), fmt(cell.result.k_uniform), fmt(cell.result.gap),
                    fmt(cell.result.residual), std::to_string(cell.graph_seed)});
    json r = {{"kind", "allocation"},   {"topology", cell.topology},   {"graph_seed", cell.graph_seed},
              {"eta", cell.eta},        {"U", cell.budget},            {"t_max", cell.t_max},
              {"k_star", cell.result.k_star}, {"k_uniform", cell.result.k_uniform},
              {"gap", cell.result.gap}, {"residual", cell.result.residual},
              {"sigma_sq", cell.result.sigma_sq}, {"kkt_pass", cell.kkt_pass},
              {"below_floor", cell.below_floor}};
    all.push_back(r);
    rec.add(std::move(r));
  }
  write_csv(rec.dir() / "allocation.csv",
            {"setting", "topology", "eta", "U", "t_max", "k_star", "k_uniform", "gap", "residual", "graph_seed"}, rows);
  std::ofstream(rec.dir() / "allocation.json") << all.dump(1) << '\n';
  rec.flush();
  return cells;
}

std::vector<HeatmapRow> cmd_sweep_eta(const ExperimentConfig& c, const RunContext& ctx) {
  if (c.topologies.size() < 2) throw ConfigError("topologies", "sweep-eta needs at least two topologies");
  const auto cases = graph_cases(c);
  std::vector<std::vector<double>> gaps(cases.size(), std::vector<double>(c.eta.size()));
  parallel_for(cases.size(), ctx.workers, [&](std::size_t k) {
    const auto& spec = c.topologies[cases[k].topo].spec;
    const auto raw = raw_proxy(spec, graph_seed_value(ctx, cases[k].graph_seed));
    const allocator::MechanismParams mech(c.heatmap_t_max, spec.fed.batch);
    for (std::size_t e = 0; e < c.eta.size(); ++e)
      gaps[k][e] = allocator::solve_balanced(mech, scaled(spec, raw, c.eta[e]), c.heatmap_budget).gap;
  });

  std::vector<std::vector<HeatmapRow>> per_topo(c.topologies.size());
  for (std::size_t t = 0; t < c.topologies.size(); ++t) {
    for (std::size_t e = 0; e < c.eta.size(); ++e) {
      std::vector<double> v;
      for (std::size_t k = 0; k < cases.size(); ++k)
        if (cases[k].topo == t) v.push_back(gaps[k][e]);
      HeatmapRow row{c.topologies[t].label, c.eta[e], stats::mean(v), std::sqrt(stats::population_variance(v)),
                     static_cast<int>(v.size())};
      per_topo[t].push_back(row);
    }
  }
  auto max_gap = [](const std::vector<HeatmapRow>& rows) {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.gap_mean);
    return m;
  };
  std::stable_sort(per_topo.begin(), per_topo.end(),
                   [&](const auto& a, const auto& b) { return max_gap(a) > max_gap(b); });

  std::vector<HeatmapRow> out;
  for (auto& rows : per_topo) out.insert(out.end(), rows.begin(), rows.end());

  RecordWriter rec(c, ctx, "sweep-eta");
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : out) {
    rows.push_back({c.setting, r.topology, fmt(r.eta), fmt(r.gap_mean), fmt(r.gap_std), std::to_string(r.graphs)});
    rec.add({{"kind", "heatmap"},
             {"topology", r.topology},
             {"eta", r.eta},
             {"gap_mean", r.gap_mean},
             {"gap_std", r.gap_std},
             {"graphs", r.graphs},
             {"U", c.heatmap_budget},
             {"t_max", c.heatmap_t_max}});
  }
  write_csv(rec.dir() / "heatmap.csv", {"setting", "topology", "eta", "gap_mean", "gap_std", "graphs"}, rows);
  rec.flush();
  return out;
}

// ---- sweep-pareto / simulate ------------------------------------------------------

ParetoOutput cmd_sweep_pareto(const ExperimentConfig& c, const RunContext& ctx) {
  const auto has = [&](scenario::Allocation a) {
    return std::find(c.allocations.begin(), c.allocations.end(), a) != c.allocations.end();
  };
  if (!has(scenario::Allocation::Fulcrum) || !has(scenario::Allocation::Uniform))
    throw ConfigError("allocations", "sweep-pareto needs both fulcrum and uniform");

  struct Job {
    double u;
    int t;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double u : c.budgets)
    for (int t : c.t_max)
      for (auto s : c.seeds) jobs.push_back({u, t, s});

  ParetoOutput out;
  out.cells.resize(jobs.size());
  std::vector<std::array<std::string, 2>> trace_paths(jobs.size());
  if (c.save_traces) std::filesystem::create_directories(ctx.out / "traces");
  parallel_for(jobs.size(), ctx.workers, [&](std::size_t k) {
    const auto& job = jobs[k];
    const auto seed = run_seed(ctx, job.seed);
    auto& cell = out.cells[k];
    cell.budget = job.u;
    cell.t_max = job.t;
    cell.seed = job.seed;
    int slot = 0;
    for (auto alloc : {scenario::Allocation::Fulcrum, scenario::Allocation::Uniform}) {
      // Identical seed => identical data, batches and standard-normal noise draws.
      auto sim = scenario::simulate(c.federation, seed, alloc, job.u, job.t);
      const allocator::MechanismParams mech(job.t, c.federation.fed.batch);
      if (alloc == scenario::Allocation::Fulcrum) {
        const auto r = allocator::solve_balanced(mech, sim.federation.leverage.ell, job.u);
        cell.k_star = r.k_star;
        cell.k_uniform = r.k_uniform;
        cell.acc_fulcrum = sim.run.accuracy;
      } else {
        cell.acc_uniform = sim.run.accuracy;
      }
      if (c.save_traces) {
        char name[128];
        std::snprintf(name, sizeof name, "pareto_U%g_T%d_s%llu_%s.bin", job.u, job.t,
                      static_cast<unsigned long long>(job.seed), scenario::to_string(alloc).c_str());
        const auto path = ctx.out / "traces" / name;
        fedsim::save_trace(path, sim.run.trace);
        trace_paths[k][slot] = std::filesystem::relative(path, ctx.out).string();
      }
      ++slot;
    }
  });

  out.strictly_dominates = std::all_of(out.cells.begin(), out.cells.end(),
                                       [](const ParetoCell& p) { return p.k_star < p.k_uniform; });
  for (int t : c.t_max) {
    std::vector<double> diffs;
    for (const auto& p : out.cells)
      if (p.t_max == t) diffs.push_back(100.0 * (p.acc_fulcrum - p.acc_uniform));  // percentage points
    if (diffs.size() >= 2) out.equivalence.push_back({t, stats::tost_equivalence(diffs, c.equivalence_margin)});
  }

  RecordWriter rec(c, ctx, "sweep-pareto");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < out.cells.size(); ++k) {
    const auto& p = out.cells[k];
    for (int m = 0; m < 2; ++m)
      rows.push_back({c.setting, fmt(p.budget), std::to_string(p.t_max), m == 0 ? "fulcrum" : "uniform",
                      std::to_string(p.seed), fmt(m == 0 ? p.k_star : p.k_uniform),
                      fmt(m == 0 ? p.acc_fulcrum : p.acc_uniform)});
    json r = {{"kind", "pareto"},         {"U", p.budget},           {"t_max", p.t_max},
              {"seed", p.seed},           {"k_star", p.k_star},      {"k_uniform", p.k_uniform},
              {"acc_fulcrum", p.acc_fulcrum}, {"acc_uniform", p.acc_uniform}};
    r["trace_fulcrum"] = c.save_traces ? json(trace_paths[k][0]) : json(nullptr);
    r["trace_uniform"] = c.save_traces ? json(trace_paths[k][1]) : json(nullptr);
    rec.add(std::move(r));
  }
  write_csv(rec.dir() / "pareto.csv", {"setting", "U", "t_max", "mode", "seed", "bound", "accuracy"}, rows);
  rows.clear();
  for (const auto& e : out.equivalence) {
    const auto& r = e.result;
    rows.push_back({c.setting, std::to_string(e.t_max), fmt(r.mean_abs_diff), fmt(r.ci_lo), fmt(r.ci_hi),
                    fmt(r.t_p), fmt(r.tost_p), std::to_string(r.n_pairs)});
    rec.add({{"kind", "equivalence"},
             {"t_max", e.t_max},
             {"mean_diff", r.mean_diff},
             {"mean_abs_diff", r.mean_abs_diff},
             {"ci_lo", r.ci_lo},
             {"ci_hi", r.ci_hi},
             {"t_p", r.t_p},
             {"tost_p", r.tost_p},
             {"n", r.n_pairs},
             {"margin", c.equivalence_margin}});
  }
  write_csv(rec.dir() / "equivalence.csv",
            {"setting", "t_max", "mean_abs_diff", "ci_lo", "ci_hi", "t_p", "tost_p", "n"}, rows);
  rec.flush();
  return out;
}

SimulateOutput cmd_simulate(const ExperimentConfig& c, const RunContext& ctx) {
  auto spec = c.federation;
  spec.eta = c.eta.front();
  const double u = c.budgets.front();
  const int t = c.t_max.front();
  const auto alloc = c.allocations.front();
  SimulateOutput out;
  out.traces.resize(c.seeds.size());
  out.accuracy.resize(c.seeds.size());
  std::vector<json> manifests(c.seeds.size());
  std::filesystem::create_directories(ctx.out / "traces");
  parallel_for(c.seeds.size(), ctx.workers, [&](std::size_t k) {
    auto sim = scenario::simulate(spec, run_seed(ctx, c.seeds[k]), alloc, u, t);
    const auto& f = sim.federation;
    const auto stem = "sim_s" + std::to_string(c.seeds[k]);
    out.traces[k] = ctx.out / "traces" / (stem + ".bin");
    fedsim::save_trace(out.traces[k], sim.run.trace);
    datagen::save_datasets(ctx.out / "traces" / (stem + "_data.bin"), f.datasets);
    manifests[k] = datagen::partition_manifest(f.dists, f.sizes, f.conc, f.graph.org(), f.anchor);
    std::ofstream(ctx.out / "traces" / (stem + "_partition.json")) << manifests[k].dump(1) << '\n';
    std::ofstream(ctx.out / "traces" / (stem + "_graph.json")) << graphs::to_json(f.graph).dump(1) << '\n';
    out.accuracy[k] = sim.run.accuracy;
  });
  RecordWriter rec(c, ctx, "simulate");
  for (std::size_t k = 0; k < c.seeds.size(); ++k)
    rec.add({{"kind", "simulate"},
             {"seed", c.seeds[k]},
             {"eta", spec.eta},
             {"U", u},
             {"t_max", t},
             {"allocation", scenario::to_string(alloc)},
             {"accuracy", out.accuracy[k]},
             {"trace", std::filesystem::relative(out.traces[k], ctx.out).string()}});
  rec.flush();
  return out;
}

// ---- tadi -------------------------------------------------------------------------

TadiOutput evaluate_channels(const ExperimentConfig& c, const RunContext& ctx, double eta) {
  auto spec = c.tadi.spec;
  spec.eta = eta;
  tadi::ShadowConfig sc{spec, c.tadi.prior, c.tadi.allocation, c.tadi.budget, c.tadi.t_max, ctx.workers};
  const auto corpus = tadi::harvest_shadow(sc, c.tadi.shadows, derive_seed(ctx.seed, kShadow));

  tadi::FitOptions fo;
  fo.lambda = c.tadi.lambda;
  fo.seed = derive_seed(ctx.seed, kInit);
  std::vector<tadi::ChannelRegressor> regs;
  for (auto ch : tadi::kAllChannels) regs.push_back(tadi::fit_channel(corpus, ch, c.tadi.backend, fo));

  // Targets: one federation per configured seed, disjoint from shadow seeds.
  struct Target {
    std::vector<double> p, base_err;
    std::vector<std::vector<double>> p_hat;  // per channel
  };
  std::vector<Target> targets(c.seeds.size());
  parallel_for(c.seeds.size(), ctx.workers, [&](std::size_t s) {
    const auto sim = scenario::simulate(spec, run_seed(ctx, c.seeds[s]), c.tadi.allocation, c.tadi.budget, c.tadi.t_max);
    const auto& f = sim.federation;
    const auto x = tadi::federation_features(sim.run.trace, f.graph, corpus.layout);
    auto& tg = targets[s];
    tg.p = f.conc.p;
    tg.base_err = stats::squared_errors(tadi::baseline_a0(f.conc), tg.p);
    for (const auto& reg : regs) tg.p_hat.push_back(tadi::predict_target(reg, x));
  });

  const int n_ch = static_cast<int>(regs.size());
  auto metrics = [&](const std::vector<double>& p, const std::vector<double>& base,
                     const std::vector<double>& ph, std::uint64_t boot_seed) {
    ChannelRow r;
    r.eta = eta;
    r.l_cal = stats::calibration_loss(ph, p);
    r.lift = stats::channel_lift(stats::mean(base), r.l_cal);
    const int k = std::max(1, static_cast<int>(std::lround(p.size() / 5.0)));
    r.top_k = stats::top_k_recovery(ph, p, std::min<int>(k, static_cast<int>(p.size())));
    r.auroc = stats::auroc(ph, p, stats::median(p));
    r.boot_p = stats::paired_bootstrap(base, stats::squared_errors(ph, p), c.tadi.bootstrap_reps, boot_seed,
                                       stats::Alternative::Greater);
    return r;
  };

  TadiOutput out;
  for (std::size_t s = 0; s < targets.size(); ++s) {
    std::vector<ChannelRow> rows;
    std::vector<double> raw_p;
    for (int ch = 0; ch < n_ch; ++ch) {
      auto r = metrics(targets[s].p, targets[s].base_err, targets[s].p_hat[ch],
                       derive_seed(ctx.seed, kBootstrap, s, ch));
      r.channel = tadi::kAllChannels[ch];
      r.seed = static_cast<int>(c.seeds[s]);
      raw_p.push_back(r.boot_p);
      rows.push_back(r);
    }
    const auto adj = stats::holm_correction(raw_p);
    for (int ch = 0; ch < n_ch; ++ch) rows[ch].boot_p = adj[ch];
    out.per_seed.insert(out.per_seed.end(), rows.begin(), rows.end());
  }

  // Pooled: clients across all target seeds form the paired sample.
  std::vector<double> p_all, base_all;
  for (const auto& tg : targets) {
    p_all.insert(p_all.end(), tg.p.begin(), tg.p.end());
    base_all.insert(base_all.end(), tg.base_err.begin(), tg.base_err.end());
  }
  std::vector<double> raw_p;
  for (int ch = 0; ch < n_ch; ++ch) {
    std::vector<double> ph_all;
    for (const auto& tg : targets) ph_all.insert(ph_all.end(), tg.p_hat[ch].begin(), tg.p_hat[ch].end());
    ChannelRow r;
    r.eta = eta;
    r.channel = tadi::kAllChannels[ch];
    r.l_cal = stats::calibration_loss(ph_all, p_all);
    r.lift = stats::channel_lift(stats::mean(base_all), r.l_cal);
    // Ranking metrics are per federation, then averaged.
    std::vector<double> topk, aur;
    for (const auto& row : out.per_seed)
      if (row.channel == r.channel) {
        topk.push_back(row.top_k);
        if (row.auroc) aur.push_back(*row.auroc);
      }
    r.top_k = stats::mean(topk);
    if (!aur.empty()) r.auroc = stats::mean(aur);
    r.boot_p = stats::paired_bootstrap(base_all, stats::squared_errors(ph_all, p_all), c.tadi.bootstrap_reps,
                                       derive_seed(ctx.seed, kBootstrap, ch), stats::Alternative::Greater);
    raw_p.push_back(r.boot_p);
    out.pooled.push_back(r);
  }
  const auto adj = stats::holm_correction(raw_p);
  for (int ch = 0; ch < n_ch; ++ch) out.pooled[ch].boot_p = adj[ch];
  return out;
}

TadiOutput cmd_tadi(const ExperimentConfig& c, const RunContext& ctx) {
  TadiOutput all;
  for (double eta : c.eta) {
    if (!ctx.quiet) std::cerr << "tadi: eta = " << eta << '\n';
    auto o = evaluate_channels(c, ctx, eta);
    all.per_seed.insert(all.per_seed.end(), o.per_seed.begin(), o.per_seed.end());
    all.pooled.insert(all.pooled.end(), o.pooled.begin(), o.pooled.end());
  }
  RecordWriter rec(c, ctx, "tadi");
  const std::string backend(tadi::to_string(c.tadi.backend));
  auto row_of = [&](const ChannelRow& r) {
    return std::vector<std::string>{c.setting, fmt(r.eta), std::string(tadi::to_string(r.channel)), backend,
                                    fmt(r.l_cal), fmt(r.lift), fmt(r.top_k), r.auroc ? fmt(*r.auroc) : "",
                                    fmt(r.boot_p)};
  };
  std::vector<std::vector<std::string>> pooled_rows, seed_rows;
  for (const auto& r : all.pooled) pooled_rows.push_back(row_of(r));
  for (const auto& r : all.per_seed) {
    auto row = row_of(r);
    row.push_back(std::to_string(r.seed));
    seed_rows.push_back(std::move(row));
  }
  const std::vector<std::string> cols = {"setting", "eta", "channel", "backend", "L_cal", "lift", "top_k", "auroc", "boot_p"};
  write_csv(rec.dir() / "channels.csv", cols, pooled_rows);
  auto seed_cols = cols;
  seed_cols.push_back("seed");
  write_csv(rec.dir() / "channels_per_seed.csv", seed_cols, seed_rows);
  for (const auto* rows : {&all.pooled, &all.per_seed})
    for (const auto& r : *rows)
      rec.add({{"kind", "channel"},
               {"eta", r.eta},
               {"channel", std::string(tadi::to_string(r.channel))},
               {"backend", backend},
               {"seed", r.seed < 0 ? json(nullptr) : json(r.seed)},
               {"L_cal", r.l_cal},
               {"lift", r.lift},
               {"top_k", r.top_k},
               {"auroc", auroc_json(r.auroc)},
               {"boot_p", r.boot_p}});
  rec.flush();
  return all;
}

// ---- report -----------------------------------------------------------------------

ReportSummary cmd_report(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "records.jsonl";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("no records: " + path.string() + " does not exist");
  std::vector<json> records;
  std::string line;
  for (int ln = 1; std::getline(in, line); ++ln) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw std::runtime_error("corrupt record at " + path.string() + ":" + std::to_string(ln) + ": " + e.what());
    }
    if (!records.back().is_object() || !records.back().contains("kind") || !records.back().contains("run_id"))
      throw std::runtime_error("corrupt record at " + path.string() + ":" + std::to_string(ln));
  }
  if (records.empty()) throw std::runtime_error("no records in " + run_dir.string());

  // Only the most recent invocation of each (command, setting) counts.
  std::map<std::pair<std::string, std::string>, std::string> latest;
  for (const auto& r : records) latest[{r.value("command", ""), r.value("setting", "")}] = r["run_id"].get<std::string>();
  std::vector<json> live;
  for (const auto& r : records)
    if (latest[{r.value("command", ""), r.value("setting", "")}] == r["run_id"].get<std::string>()) live.push_back(r);

  ReportSummary s;
  s.records = static_cast<int>(live.size());
  std::ostringstream txt;
  txt << "records: " << s.records << " (of " << records.size() << " stored)\n";

  // Heatmap matrix: topology x eta.
  {
    std::vector<std::string> topo_order;
    std::vector<double> etas;
    std::map<std::pair<std::string, std::string>, std::map<double, double>> cells;  // (setting, topology) -> eta -> gap
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& r : live) {
      if (r["kind"] != "heatmap") continue;
      const std::pair<std::string, std::string> key{r["setting"], r["topology"]};
      if (!cells.count(key)) keys.push_back(key);
      cells[key][r["eta"].get<double>()] = r["gap_mean"].get<double>();
      const double e = r["eta"].get<double>();
      if (std::find(etas.begin(), etas.end(), e) == etas.end()) etas.push_back(e);
    }
    if (!keys.empty()) {
      std::sort(etas.begin(), etas.end());
      std::vector<std::string> cols{"setting", "topology"};
      for (double e : etas) cols.push_back("eta=" + fmt(e));
      std::vector<std::vector<std::string>> rows;
      for (const auto& key : keys) {
        std::vector<std::string> row{key.first, key.second};
        for (double e : etas) row.push_back(cells[key].count(e) ? fmt(cells[key][e]) : "");
        rows.push_back(std::move(row));
      }
      const auto out = run_dir / "plot_heatmap_matrix.csv";
      write_csv(out, cols, rows);
      s.plot_files.push_back(out);
      txt << "heatmap: " << keys.size() << " topologies x " << etas.size() << " eta values\n";
    }
  }

  // Pareto curves and dominance.
  {
    struct Acc {
      double bound = 0.0;
      std::vector<double> acc;
    };
    std::map<std::tuple<std::string, int, std::string, double>, Acc> curves;
    for (const auto& r : live) {
      if (r["kind"] != "pareto") continue;
      const double k_star = r["k_star"], k_uni = r["k_uniform"];
      ++s.dominance_cells;
      if (!(k_star < k_uni)) ++s.dominance_violations;
      const std::string setting = r["setting"];
      const int t = r["t_max"];
      const double u = r["U"];
      auto& f = curves[{setting, t, "fulcrum", u}];
      f.bound = k_star;
      f.acc.push_back(r["acc_fulcrum"]);
      auto& un = curves[{setting, t, "uniform", u}];
      un.bound = k_uni;
      un.acc.push_back(r["acc_uniform"]);
    }
    if (!curves.empty()) {
      std::vector<std::vector<std::string>> rows;
      for (const auto& [key, v] : curves)
        rows.push_back({std::get<0>(key), std::to_string(std::get<1>(key)), std::get<2>(key), fmt(std::get<3>(key)),
                        fmt(v.bound), fmt(stats::mean(v.acc)), std::to_string(v.acc.size())});
      const auto out = run_dir / "plot_pareto_curves.csv";
      write_csv(out, {"setting", "t_max", "mode", "U", "bound", "accuracy_mean", "seeds"}, rows);
      s.plot_files.push_back(out);
      txt << "pareto dominance: " << s.dominance_cells - s.dominance_violations << "/" << s.dominance_cells
          << " cells with fulcrum bound strictly below uniform\n";
    }
    for (const auto& r : live) {
      if (r["kind"] != "equivalence") continue;
      ++s.equivalence_rows;
      const double p = r["tost_p"];
      if (p < 0.05) ++s.equivalence_passes;
      txt << "equivalence " << r["setting"].get<std::string>() << " T=" << r["t_max"].get<int>()
          << ": mean |diff| = " << fmt(r["mean_abs_diff"]) << ", TOST p = " << fmt(p)
          << ", paired t p = " << fmt(r["t_p"]) << (p < 0.05 ? " (equivalent)" : " (not shown equivalent)") << '\n';
    }
  }

  // Allocation dominance (analytic cells).
  {
    int cells = 0, bad = 0;
    for (const auto& r : live) {
      if (r["kind"] != "allocation") continue;
      ++cells;
      if (r["gap"].get<double>() < 0.0 || !r["kkt_pass"].get<bool>()) ++bad;
    }
    if (cells) txt << "allocation: " << cells - bad << "/" << cells << " cells with gap >= 0 and KKT verified\n";
  }

  // Channel ablation bars.
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : live) {
      if (r["kind"] != "channel" || !r["seed"].is_null()) continue;
      rows.push_back({r["setting"], fmt(r["eta"]), r["channel"], fmt(r["lift"]),
                      r["auroc"].is_null() ? "" : fmt(r["auroc"]), fmt(r["boot_p"])});
      txt << "channel " << r["setting"].get<std::string>() << " eta=" << fmt(r["eta"]) << " "
          << r["channel"].get<std::string>() << ": lift " << fmt(r["lift"]) << ", boot p " << fmt(r["boot_p"]) << '\n';
    }
    if (!rows.empty()) {
      const auto out = run_dir / "plot_ablation_bars.csv";
      write_csv(out, {"setting", "eta", "channel", "lift", "auroc", "boot_p"}, rows);
      s.plot_files.push_back(out);
    }
  }

  s.text = txt.str();
  std::ofstream(run_dir / "summary.txt") << s.text;
  return s;
}

}  // namespace topodp::bench
