#include "topodp/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "topodp/io.hpp"
#include "topodp/parallel.hpp"

namespace topodp::fedsim {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;
using MatMap = Eigen::Map<RowMajor>;

void softmax_inplace(Eigen::VectorXd& z) {
  z.array() -= z.maxCoeff();
  z = z.array().exp();
  z /= z.sum();
}

}  // namespace

Model::Model(ModelDims dims) : dims_(dims) {
  if (dims.input < 1 || dims.classes < 2 || dims.hidden < 0)
    throw InvalidParameter("model needs d >= 1, K >= 2, h >= 0");
  const int d = dims.input, h = dims.hidden, k = dims.classes;
  if (h == 0)
    offsets_ = {0, k * d, k * d + k};
  else
    offsets_ = {0, h * d, h * d + h, h * d + h + k * h, h * d + h + k * h + k};
  params_ = Eigen::VectorXd::Zero(offsets_.back());
}

Model Model::initialised(ModelDims dims, std::uint64_t seed) {
  Model m(dims);
  if (dims.hidden == 0) return m;
  Rng rng(derive_seed(seed, kInit));
  auto fill = [&](int layer, int fan_in) {
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-r, r);
    for (int k = m.offsets_[layer]; k < m.offsets_[layer + 1]; ++k) m.params_[k] = u(rng);
  };
  fill(0, dims.input);
  fill(2, dims.hidden);
  return m;
}

Eigen::VectorXd Model::logits(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const int d = dims_.input, h = dims_.hidden, k = dims_.classes;
  const double* p = params_.data();
  if (h == 0) {
    ConstMatMap w(p, k, d);
    return w * x + Eigen::Map<const Eigen::VectorXd>(p + offsets_[1], k);
  }
  ConstMatMap w1(p, h, d);
  Eigen::VectorXd a = (w1 * x + Eigen::Map<const Eigen::VectorXd>(p + offsets_[1], h)).array().tanh();
  ConstMatMap w2(p + offsets_[2], k, h);
  return w2 * a + Eigen::Map<const Eigen::VectorXd>(p + offsets_[3], k);
}

int Model::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::Index arg = 0;
  logits(x).maxCoeff(&arg);
  return static_cast<int>(arg);
}

double Model::accuracy(const datagen::ClientDataset& ds) const {
  if (ds.size() == 0) return 0.0;
  int hits = 0;
  for (int r = 0; r < ds.size(); ++r) hits += predict(ds.features.row(r).transpose()) == ds.labels[r];
  return static_cast<double>(hits) / ds.size();
}

void Model::record_gradient(const Eigen::Ref<const Eigen::VectorXd>& x, int label,
                            Eigen::Ref<Eigen::VectorXd> grad) const {
  const int d = dims_.input, h = dims_.hidden, k = dims_.classes;
  if (label < 0 || label >= k) throw InvalidParameter("label out of range");
  const double* p = params_.data();
  double* g = grad.data();
  if (h == 0) {
    Eigen::VectorXd e = logits(x);
    softmax_inplace(e);
    e[label] -= 1.0;
    MatMap(g, k, d).noalias() = e * x.transpose();
    Eigen::Map<Eigen::VectorXd>(g + offsets_[1], k) = e;
    return;
  }
  ConstMatMap w1(p, h, d);
  ConstMatMap w2(p + offsets_[2], k, h);
  Eigen::VectorXd a = (w1 * x + Eigen::Map<const Eigen::VectorXd>(p + offsets_[1], h)).array().tanh();
  Eigen::VectorXd e = w2 * a + Eigen::Map<const Eigen::VectorXd>(p + offsets_[3], k);
  softmax_inplace(e);
  e[label] -= 1.0;
  Eigen::VectorXd da = (w2.transpose() * e).array() * (1.0 - a.array().square());
  MatMap(g, h, d).noalias() = da * x.transpose();
  Eigen::Map<Eigen::VectorXd>(g + offsets_[1], h) = da;
  MatMap(g + offsets_[2], k, h).noalias() = e * a.transpose();
  Eigen::Map<Eigen::VectorXd>(g + offsets_[3], k) = e;
}

Eigen::VectorXd privatize(std::span<const Eigen::VectorXd> per_record, double clip_c,
                          double sigma, Rng& noise_rng, bool noiseless, StepStats* stats) {
  if (per_record.empty()) throw InvalidParameter("empty batch");
  if (!(clip_c > 0.0)) throw InvalidParameter("clipping norm must be positive");
  if (!noiseless && !(sigma > 0.0)) throw InvalidParameter("noise multiplier must be positive");
  const auto dim = per_record.front().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (const auto& g : per_record) {
    const double norm = g.norm();
    if (!std::isfinite(norm)) throw std::runtime_error("non-finite per-record gradient");
    const double scale = norm > clip_c ? clip_c / norm : 1.0;
    if (stats) stats->max_clipped_norm = std::max(stats->max_clipped_norm, norm * scale);
    sum += scale * g;
  }
  sum /= static_cast<double>(per_record.size());
  if (!noiseless) {
    std::normal_distribution<double> z(0.0, 1.0);
    const double s = sigma * clip_c;
    for (Eigen::Index k = 0; k < dim; ++k) sum[k] += s * z(noise_rng);
  }
  return sum;
}

Model dp_local_step(const Model& model, const datagen::ClientDataset& data,
                    std::span<const int> batch, const DpStepConfig& cfg, double sigma,
                    Rng& noise_rng, StepStats* stats) {
  if (batch.empty()) throw InvalidParameter("empty batch");
  std::vector<Eigen::VectorXd> grads(batch.size(), Eigen::VectorXd(model.param_dim()));
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const int row = batch[r];
    if (row < 0 || row >= data.size()) throw InvalidParameter("batch index out of range");
    model.record_gradient(data.features.row(row).transpose(), data.labels[row], grads[r]);
  }
  Eigen::VectorXd noisy = privatize(grads, cfg.clip_c, sigma, noise_rng, cfg.noiseless, stats);
  Model out = model;
  out.params() -= cfg.lr * noisy;
  if (!out.params().allFinite()) throw std::runtime_error("non-finite parameters after local step");
  return out;
}

std::string_view to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::FedAvg: return "fedavg";
    case AggregationMode::Gossip: return "gossip";
    case AggregationMode::Hierarchical: return "hierarchical";
  }
  return "unknown";
}

AggregationMode aggregation_from_string(std::string_view name) {
  if (name == "fedavg") return AggregationMode::FedAvg;
  if (name == "gossip") return AggregationMode::Gossip;
  if (name == "hierarchical") return AggregationMode::Hierarchical;
  throw InvalidParameter("unknown aggregation mode '" + std::string(name) + "'");
}

std::vector<Eigen::VectorXd> aggregate(const std::vector<Eigen::VectorXd>& models,
                                       AggregationMode mode, const graphs::FederationGraph& g,
                                       std::span<const int> sizes) {
  const int n = g.n();
  if (static_cast<int>(models.size()) != n || static_cast<int>(sizes.size()) != n)
    throw InvalidParameter("aggregate inputs disagree with graph size");
  switch (mode) {
    case AggregationMode::FedAvg: {
      const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
      Eigen::VectorXd avg = Eigen::VectorXd::Zero(models.front().size());
      for (int i = 0; i < n; ++i) avg += (sizes[i] / total) * models[i];
      return std::vector<Eigen::VectorXd>(n, avg);
    }
    case AggregationMode::Gossip: {
      std::vector<Eigen::VectorXd> out(n);
      for (int i = 0; i < n; ++i) {
        out[i] = models[i];
        for (int j : g.neighbours(i)) out[i] += models[j];
        out[i] /= static_cast<double>(g.degree(i) + 1);
      }
      return out;
    }
    case AggregationMode::Hierarchical: {
      if (!g.root()) throw InvalidParameter("hierarchical aggregation requires a rooted graph");
      const int groups = g.org_count();
      std::vector<Eigen::VectorXd> group_avg(groups, Eigen::VectorXd::Zero(models.front().size()));
      std::vector<double> group_size(groups, 0.0);
      for (int i = 0; i < n; ++i) group_size[g.org()[i]] += sizes[i];
      for (int i = 0; i < n; ++i) group_avg[g.org()[i]] += (sizes[i] / group_size[g.org()[i]]) * models[i];
      const double total = std::accumulate(group_size.begin(), group_size.end(), 0.0);
      Eigen::VectorXd global = Eigen::VectorXd::Zero(models.front().size());
      for (int k = 0; k < groups; ++k) global += (group_size[k] / total) * group_avg[k];
      return std::vector<Eigen::VectorXd>(n, global);
    }
  }
  throw InvalidParameter("unknown aggregation mode");
}

void SigmaSchedule::validate(int n) const {
  if (static_cast<int>(sigma.size()) != n) throw InvalidParameter("sigma schedule length != n");
  for (double s : sigma)
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidParameter("noise multipliers must be positive");
}

TrainingTrace::TrainingTrace(int n, int t_max, int param_dim, std::vector<int> layer_offsets)
    : n_(n), t_max_(t_max), param_dim_(param_dim), layer_offsets_(std::move(layer_offsets)),
      theta_(static_cast<std::size_t>(n) * t_max * param_dim, 0.0f) {}

std::span<const float> TrainingTrace::snapshot(int client, int t) const {
  if (client < 0 || client >= n_ || t < 1 || t > t_max_) throw InvalidParameter("snapshot index out of range");
  const std::size_t off = (static_cast<std::size_t>(t - 1) * n_ + client) * param_dim_;
  return {theta_.data() + off, static_cast<std::size_t>(param_dim_)};
}

std::span<float> TrainingTrace::snapshot(int client, int t) {
  auto c = std::as_const(*this).snapshot(client, t);
  return {const_cast<float*>(c.data()), c.size()};
}

void save_trace(const std::filesystem::path& path, const TrainingTrace& trace) {
  const auto& m = trace.meta;
  nlohmann::json header = {
      {"kind", "trace"},
      {"n", trace.n()},
      {"t_max", trace.t_max()},
      {"param_dim", trace.param_dim()},
      {"layer_offsets", trace.layer_offsets()},
      {"dtype", "float32"},
      {"order", "round-major, client-major"},
      {"meta",
       {{"topology", m.topology}, {"eta", m.eta}, {"U", m.budget}, {"t_max", m.t_max},
        {"seed", m.seed}, {"sigma", m.sigma}, {"sigma_source", m.sigma_source},
        {"sizes", m.sizes}, {"org", m.org}}}};
  const auto& d = trace.data();
  io::write_container(path, header, std::as_bytes(std::span(d)));
}

TrainingTrace load_trace(const std::filesystem::path& path) {
  auto c = io::read_container(path);
  const auto& h = c.header;
  if (h.value("kind", "") != "trace") throw std::runtime_error(path.string() + ": not a trace file");
  TrainingTrace t(h.at("n").get<int>(), h.at("t_max").get<int>(), h.at("param_dim").get<int>(),
                  h.at("layer_offsets").get<std::vector<int>>());
  if (c.payload.size() != t.data().size() * sizeof(float))
    throw std::runtime_error(path.string() + ": payload size does not match header");
  std::memcpy(const_cast<float*>(t.data().data()), c.payload.data(), c.payload.size());
  const auto& m = h.at("meta");
  t.meta.topology = m.at("topology").get<std::string>();
  t.meta.eta = m.at("eta").get<double>();
  t.meta.budget = m.at("U").get<double>();
  t.meta.t_max = m.at("t_max").get<int>();
  t.meta.seed = m.at("seed").get<std::uint64_t>();
  t.meta.sigma = m.at("sigma").get<std::vector<double>>();
  t.meta.sigma_source = m.at("sigma_source").get<std::string>();
  t.meta.sizes = m.at("sizes").get<std::vector<int>>();
  t.meta.org = m.at("org").get<std::vector<int>>();
  return t;
}

RunOutput run_federation(const graphs::FederationGraph& g,
                         const std::vector<datagen::ClientDataset>& datasets,
                         const SigmaSchedule& schedule, const FedConfig& cfg,
                         const datagen::ClientDataset& test_set, TraceMeta meta) {
  const int n = g.n();
  if (static_cast<int>(datasets.size()) != n) throw InvalidParameter("one dataset per client required");
  schedule.validate(n);
  if (cfg.t_max < 1 || cfg.batch < 1) throw InvalidParameter("t_max and batch must be >= 1");
  const int d = datasets.front().dim();
  int classes = 0;
  std::vector<int> sizes(n);
  for (int i = 0; i < n; ++i) {
    const auto& ds = datasets[i];
    if (ds.size() == 0 || ds.dim() != d) throw InvalidParameter("dataset shape mismatch");
    if (!cfg.with_replacement && ds.size() < cfg.batch)
      throw InvalidParameter("client " + std::to_string(i) + " has fewer records than the batch size");
    sizes[i] = ds.size();
    for (int l : ds.labels) classes = std::max(classes, l + 1);
  }
  for (int l : test_set.labels) classes = std::max(classes, l + 1);
  if (test_set.dim() != d) throw InvalidParameter("test set feature dimension mismatch");
  classes = std::max(classes, 2);

  const ModelDims dims{d, cfg.hidden, classes};
  Model init = Model::initialised(dims, cfg.seed);
  std::vector<Eigen::VectorXd> current(n, init.params());

  RunOutput out;
  out.trace = TrainingTrace(n, cfg.t_max, init.param_dim(), init.layer_offsets());
  meta.t_max = cfg.t_max;
  meta.seed = cfg.seed;
  meta.sigma = schedule.sigma;
  meta.sigma_source = schedule.source;
  meta.sizes = sizes;
  meta.org = g.org();
  out.trace.meta = std::move(meta);

  const DpStepConfig step{cfg.clip_c, cfg.lr, cfg.noiseless};
  std::vector<Eigen::VectorXd> transmitted(n);
  std::vector<double> max_norm(n, 0.0);
  for (int t = 1; t <= cfg.t_max; ++t) {
    parallel_for(static_cast<std::size_t>(n), cfg.workers, [&](std::size_t idx) {
      const int i = static_cast<int>(idx);
      const auto& ds = datasets[i];
      Rng batch_rng(derive_seed(cfg.seed, kBatch, i, t));
      std::vector<int> batch(cfg.batch);
      if (cfg.with_replacement && ds.size() < cfg.batch) {
        std::uniform_int_distribution<int> pick(0, ds.size() - 1);
        for (auto& b : batch) b = pick(batch_rng);
      } else {
        // Partial Fisher-Yates: first |B| entries form a uniform subset.
        std::vector<int> idxs(ds.size());
        std::iota(idxs.begin(), idxs.end(), 0);
        for (int k = 0; k < cfg.batch; ++k) {
          std::uniform_int_distribution<int> pick(k, ds.size() - 1);
          std::swap(idxs[k], idxs[pick(batch_rng)]);
        }
        std::copy_n(idxs.begin(), cfg.batch, batch.begin());
      }
      Model local(dims);
      local.params() = current[i];
      Rng noise_rng(derive_seed(cfg.seed, kNoise, i, t));
      StepStats stats;
      Model next = dp_local_step(local, ds, batch, step, schedule.sigma[i], noise_rng, &stats);
      max_norm[i] = std::max(max_norm[i], stats.max_clipped_norm);
      transmitted[i] = std::move(next.params());
      auto snap = out.trace.snapshot(i, t);
      for (int k = 0; k < init.param_dim(); ++k) snap[k] = static_cast<float>(transmitted[i][k]);
    });
    current = aggregate(transmitted, cfg.mode, g, sizes);
  }
  out.max_clipped_norm = *std::max_element(max_norm.begin(), max_norm.end());

  Model final_model(dims);
  if (cfg.mode == AggregationMode::Gossip) {
    final_model.params() = aggregate(current, AggregationMode::FedAvg, g, sizes).front();
  } else {
    final_model.params() = current.front();
  }
  out.accuracy = final_model.accuracy(test_set);
  return out;
}

}  // namespace topodp::fedsim
