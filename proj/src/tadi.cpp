#include "topodp/tadi.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "topodp/common.hpp"
#include "topodp/io.hpp"
#include "topodp/parallel.hpp"

namespace topodp::tadi {

namespace {

constexpr std::pair<Channel, std::string_view> kChannelNames[] = {
    {Channel::A1, "A1"},
    {Channel::A2Topo, "A2_topo"},
    {Channel::A2Org, "A2_org"},
    {Channel::A2Full, "A2_full"},
};

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += static_cast<double>(a[k]) * b[k];
    na += static_cast<double>(a[k]) * a[k];
    nb += static_cast<double>(b[k]) * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace

std::string_view to_string(Channel c) {
  for (const auto& [k, s] : kChannelNames)
    if (k == c) return s;
  return "unknown";
}

Channel channel_from_string(std::string_view s) {
  for (const auto& [k, name] : kChannelNames)
    if (name == s) return k;
  throw InvalidParameter("unknown channel '" + std::string(s) + "'");
}

std::string_view to_string(Backend b) { return b == Backend::Ridge ? "ridge" : "mlp"; }

Backend backend_from_string(std::string_view s) {
  if (s == "ridge") return Backend::Ridge;
  if (s == "mlp") return Backend::Mlp;
  throw InvalidParameter("unknown regressor backend '" + std::string(s) + "'");
}

std::vector<int> FeatureLayout::columns(Channel c) const {
  std::vector<int> cols(param_dim());
  std::iota(cols.begin(), cols.end(), 0);
  const bool with_struct = c == Channel::A2Topo || c == Channel::A2Full;
  const bool with_org = c == Channel::A2Org || c == Channel::A2Full;
  if (with_struct)
    for (int k = 0; k < 3; ++k) cols.push_back(struct_offset() + k);
  if (with_org)
    for (int k = 0; k < k_org; ++k) cols.push_back(org_offset() + k);
  return cols;
}

FeatureLayout layout_for(const fedsim::TrainingTrace& trace, int k_org) {
  return {trace.t_max(), static_cast<int>(trace.layer_offsets().size()) - 1,
          std::min(trace.param_dim(), kMaxParamTail), k_org};
}

std::vector<double> param_features(const fedsim::TrainingTrace& trace,
                                   const graphs::FederationGraph& g, int client) {
  if (client < 0 || client >= trace.n()) throw InvalidParameter("client absent from trace");
  const int t_max = trace.t_max();
  const auto& offs = trace.layer_offsets();
  const int layers = static_cast<int>(offs.size()) - 1;
  const int tail = std::min(trace.param_dim(), kMaxParamTail);

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(t_max) * (2 + layers) + 3 + tail);
  std::vector<double> norms(t_max);
  for (int t = 1; t <= t_max; ++t) out.push_back(norms[t - 1] = norm_of(trace.snapshot(client, t)));
  for (int t = 1; t <= t_max; ++t) {
    auto snap = trace.snapshot(client, t);
    for (int l = 0; l < layers; ++l) out.push_back(norm_of(snap.subspan(offs[l], offs[l + 1] - offs[l])));
  }
  const auto& nbrs = g.neighbours(client);
  for (int t = 1; t <= t_max; ++t) {
    double c = 0.0;
    for (int j : nbrs) c += cosine(trace.snapshot(client, t), trace.snapshot(j, t));
    out.push_back(nbrs.empty() ? 0.0 : c / static_cast<double>(nbrs.size()));
  }
  const double mean = std::accumulate(norms.begin(), norms.end(), 0.0) / t_max;
  double var = 0.0;
  for (double v : norms) var += (v - mean) * (v - mean);
  out.push_back(mean);
  out.push_back(std::sqrt(var / t_max));
  // Least-squares slope of norm against round index.
  const double t_mean = (t_max + 1) / 2.0;
  double sxy = 0.0, sxx = 0.0;
  for (int t = 1; t <= t_max; ++t) {
    sxy += (t - t_mean) * (norms[t - 1] - mean);
    sxx += (t - t_mean) * (t - t_mean);
  }
  out.push_back(sxx > 0.0 ? sxy / sxx : 0.0);
  auto last = trace.snapshot(client, t_max);
  for (int k = 0; k < tail; ++k) out.push_back(last[k]);
  return out;
}

StructOrgBlocks struct_org_features(const graphs::FederationGraph& g,
                                    const graphs::StructuralFeatures& sf, int client, int k_org) {
  if (client < 0 || client >= g.n()) throw InvalidParameter("client index out of range");
  StructOrgBlocks b;
  b.structural = {static_cast<double>(sf.degree[client]), static_cast<double>(sf.depth[client]),
                  sf.betweenness[client]};
  b.org.assign(k_org, 0.0);
  const int gid = g.org()[client];
  if (gid < k_org) b.org[gid] = 1.0;
  return b;
}

Eigen::MatrixXd federation_features(const fedsim::TrainingTrace& trace,
                                    const graphs::FederationGraph& g, const FeatureLayout& layout) {
  if (trace.n() != g.n()) throw InvalidParameter("trace and graph disagree on client count");
  if (layout_for(trace, layout.k_org) != layout) throw InvalidParameter("trace does not match feature layout");
  const auto sf = graphs::structural_features(g);
  Eigen::MatrixXd x(g.n(), layout.total());
  for (int i = 0; i < g.n(); ++i) {
    auto pf = param_features(trace, g, i);
    auto so = struct_org_features(g, sf, i, layout.k_org);
    int c = 0;
    for (double v : pf) x(i, c++) = v;
    for (double v : so.structural) x(i, c++) = v;
    for (double v : so.org) x(i, c++) = v;
  }
  return x;
}

ShadowCorpus harvest_shadow(const ShadowConfig& config, int count, std::uint64_t seed) {
  if (count < 1) throw InvalidParameter("shadow count must be >= 1");
  scenario::FederationSpec spec = config.spec;
  if (config.prior == PriorMode::Mismatched) spec.eta = 0.0;

  struct Part {
    Eigen::MatrixXd x;
    std::vector<double> p;
    FeatureLayout layout;
  };
  std::vector<Part> parts(count);
  parallel_for(static_cast<std::size_t>(count), config.workers, [&](std::size_t s) {
    const auto sim = scenario::simulate(spec, derive_seed(seed, kShadow, s), config.allocation,
                                        config.budget, config.t_max);
    const auto& f = sim.federation;
    parts[s].layout = layout_for(sim.run.trace, f.graph.org_count());
    parts[s].x = federation_features(sim.run.trace, f.graph, parts[s].layout);
    parts[s].p = f.conc.p;
  });

  ShadowCorpus c;
  c.layout = parts.front().layout;
  int rows = 0;
  for (const auto& part : parts) {
    if (part.layout != c.layout) throw InvalidParameter("shadow federations produced differing feature layouts");
    rows += static_cast<int>(part.p.size());
  }
  c.features.resize(rows, c.layout.total());
  c.p.resize(rows);
  int r = 0;
  for (int s = 0; s < count; ++s) {
    const auto& part = parts[s];
    for (std::size_t i = 0; i < part.p.size(); ++i, ++r) {
      c.features.row(r) = part.x.row(static_cast<Eigen::Index>(i));
      c.p[r] = part.p[i];
      c.federation.push_back(s);
    }
  }
  c.config = {{"spec", scenario::to_json(spec)},
              {"prior", config.prior == PriorMode::Matched ? "matched" : "mismatched"},
              {"allocation", scenario::to_string(config.allocation)},
              {"U", config.budget},
              {"t_max", config.t_max},
              {"count", count},
              {"seed", seed}};
  return c;
}

void save_corpus(const std::filesystem::path& path, const ShadowCorpus& corpus) {
  const auto rows = corpus.rows();
  const auto cols = corpus.layout.total();
  std::vector<float> blob;
  blob.reserve(static_cast<std::size_t>(rows) * (cols + 1));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) blob.push_back(static_cast<float>(corpus.features(r, c)));
    blob.push_back(static_cast<float>(corpus.p[r]));
  }
  nlohmann::json header = {{"kind", "corpus"},
                           {"rows", rows},
                           {"cols", cols},
                           {"dtype", "float32"},
                           {"order", "row-major; last column is p"},
                           {"layout",
                            {{"t_max", corpus.layout.t_max},
                             {"layers", corpus.layout.layers},
                             {"param_tail", corpus.layout.param_tail},
                             {"k_org", corpus.layout.k_org}}},
                           {"federation", corpus.federation},
                           {"config", corpus.config}};
  io::write_container(path, header, std::as_bytes(std::span(blob)));
}

ShadowCorpus load_corpus(const std::filesystem::path& path) {
  auto c = io::read_container(path);
  const auto& h = c.header;
  if (h.value("kind", "") != "corpus") throw std::runtime_error(path.string() + ": not a corpus file");
  ShadowCorpus out;
  const auto& l = h.at("layout");
  out.layout = {l.at("t_max").get<int>(), l.at("layers").get<int>(), l.at("param_tail").get<int>(),
                l.at("k_org").get<int>()};
  const int rows = h.at("rows").get<int>();
  const int cols = h.at("cols").get<int>();
  if (cols != out.layout.total()) throw std::runtime_error(path.string() + ": layout/width mismatch");
  std::vector<float> blob(static_cast<std::size_t>(rows) * (cols + 1));
  if (c.payload.size() != blob.size() * sizeof(float)) throw std::runtime_error(path.string() + ": payload size mismatch");
  std::memcpy(blob.data(), c.payload.data(), c.payload.size());
  out.features.resize(rows, cols);
  out.p.resize(rows);
  for (int r = 0; r < rows; ++r) {
    for (int k = 0; k < cols; ++k) out.features(r, k) = blob[static_cast<std::size_t>(r) * (cols + 1) + k];
    out.p[r] = blob[static_cast<std::size_t>(r) * (cols + 1) + cols];
  }
  out.federation = h.at("federation").get<std::vector<int>>();
  out.config = h.at("config");
  return out;
}

double ChannelRegressor::raw_predict(const Eigen::Ref<const Eigen::VectorXd>& row) const {
  if (row.size() != layout.total()) throw InvalidParameter("feature dimension mismatch");
  Eigen::VectorXd z(static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    z[kk] = (row[columns[k]] - center[kk]) * scale[kk];
  }
  if (backend == Backend::Ridge) return intercept + (columns.empty() ? 0.0 : weights.dot(z));
  Eigen::VectorXd h = (hidden_w * z + hidden_b).array().tanh();
  return intercept + out_w.dot(h);
}

namespace {

void fit_ridge(ChannelRegressor& reg, const Eigen::MatrixXd& z, const Eigen::VectorXd& yc, double lambda) {
  const auto m = z.cols();
  if (m == 0) {
    reg.weights.resize(0);
    return;
  }
  Eigen::MatrixXd gram = z.transpose() * z;
  gram.diagonal().array() += lambda;
  reg.weights = gram.ldlt().solve(z.transpose() * yc);
}

void fit_mlp(ChannelRegressor& reg, const Eigen::MatrixXd& z, const Eigen::VectorXd& yc,
             const FitOptions& opts) {
  const auto rows = z.rows(), m = z.cols();
  const int h = opts.mlp_hidden;
  Rng rng(derive_seed(opts.seed, kInit));
  const double r = m > 0 ? 1.0 / std::sqrt(static_cast<double>(m)) : 1.0;
  std::uniform_real_distribution<double> u(-r, r);
  reg.hidden_w = Eigen::MatrixXd::NullaryExpr(h, m, [&] { return u(rng); });
  reg.hidden_b = Eigen::VectorXd::Zero(h);
  reg.out_w = Eigen::VectorXd::Zero(h);
  // Full-batch Adam on mean squared error around the intercept.
  Eigen::MatrixXd mw = Eigen::MatrixXd::Zero(h, m), vw = mw;
  Eigen::VectorXd mb = Eigen::VectorXd::Zero(h), vb = mb, mo = mb, vo = mb;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int epoch = 1; epoch <= opts.mlp_epochs; ++epoch) {
    Eigen::MatrixXd pre = (z * reg.hidden_w.transpose()).rowwise() + reg.hidden_b.transpose();
    Eigen::MatrixXd act = pre.array().tanh();
    Eigen::VectorXd err = act * reg.out_w - yc;
    const double scale = 2.0 / static_cast<double>(rows);
    Eigen::VectorXd g_out = scale * act.transpose() * err + opts.lambda / rows * reg.out_w;
    Eigen::MatrixXd d_act = (err * reg.out_w.transpose()).array() * (1.0 - act.array().square());
    Eigen::MatrixXd g_w = scale * d_act.transpose() * z + opts.lambda / rows * reg.hidden_w;
    Eigen::VectorXd g_b = scale * d_act.colwise().sum().transpose();
    const double c1 = 1.0 - std::pow(b1, epoch), c2 = 1.0 - std::pow(b2, epoch);
    auto step = [&](auto& param, auto& mm, auto& vv, const auto& grad) {
      mm = b1 * mm + (1.0 - b1) * grad;
      vv = b2 * vv + (1.0 - b2) * grad.cwiseProduct(grad);
      param.array() -= opts.mlp_lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
    };
    step(reg.out_w, mo, vo, g_out);
    step(reg.hidden_w, mw, vw, g_w);
    step(reg.hidden_b, mb, vb, g_b);
  }
}

}  // namespace

ChannelRegressor fit_channel(const ShadowCorpus& corpus, Channel channel, Backend backend,
                             const FitOptions& opts) {
  if (corpus.rows() == 0) throw InvalidParameter("shadow corpus is empty");
  if (backend == Backend::Ridge && !(opts.lambda > 0.0)) throw InvalidParameter("ridge lambda must be > 0");
  ChannelRegressor reg;
  reg.channel = channel;
  reg.backend = backend;
  reg.layout = corpus.layout;
  const auto rows = corpus.features.rows();

  // Standardise exposed columns; constant columns carry nothing and are dropped.
  std::vector<int> kept;
  std::vector<double> centers, scales;
  for (int col : corpus.layout.columns(channel)) {
    const auto c = corpus.features.col(col);
    const double mu = c.mean();
    const double sd = std::sqrt((c.array() - mu).square().sum() / static_cast<double>(rows));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mu)))) continue;
    kept.push_back(col);
    centers.push_back(mu);
    scales.push_back(1.0 / sd);
  }
  reg.columns = kept;
  reg.center = Eigen::Map<Eigen::VectorXd>(centers.data(), static_cast<Eigen::Index>(centers.size()));
  reg.scale = Eigen::Map<Eigen::VectorXd>(scales.data(), static_cast<Eigen::Index>(scales.size()));
  Eigen::MatrixXd z(rows, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    z.col(kk) = (corpus.features.col(kept[k]).array() - reg.center[kk]) * reg.scale[kk];
  }
  reg.intercept = corpus.p.mean();
  const Eigen::VectorXd yc = corpus.p.array() - reg.intercept;
  if (backend == Backend::Ridge)
    fit_ridge(reg, z, yc, opts.lambda);
  else
    fit_mlp(reg, z, yc, opts);
  return reg;
}

std::vector<double> predict_target(const ChannelRegressor& reg, const Eigen::MatrixXd& features) {
  if (features.cols() != reg.layout.total()) throw InvalidParameter("feature dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    out[static_cast<std::size_t>(r)] = std::clamp(reg.raw_predict(features.row(r).transpose()), 0.0, 1.0);
  return out;
}

std::vector<double> baseline_a0(const datagen::ConcentrationVector& p) {
  if (p.p.empty()) throw InvalidParameter("baseline needs at least one client");
  const double mean = std::accumulate(p.p.begin(), p.p.end(), 0.0) / static_cast<double>(p.p.size());
  return std::vector<double>(p.p.size(), mean);
}

}  // namespace topodp::tadi
