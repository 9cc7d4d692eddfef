#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "topodp/common.hpp"
#include "topodp/datagen.hpp"
#include "topodp/graphs.hpp"

namespace topodp::fedsim {

struct ModelDims {
  int input = 16;
  int hidden = 0;  // 0 = multinomial logistic regression
  int classes = 2;
};

/// Flat parameter vector with layer structure. Layer order: for the linear
/// model W (K x d, row-major) then b (K); with a hidden layer W1, b1, W2, b2.
class Model {
 public:
  explicit Model(ModelDims dims);

  static Model zeros(ModelDims dims) { return Model(dims); }
  /// Weights uniform in +-1/sqrt(fan_in), biases zero. The linear model
  /// starts at zero regardless of seed.
  static Model initialised(ModelDims dims, std::uint64_t seed);

  const ModelDims& dims() const noexcept { return dims_; }
  int param_dim() const noexcept { return static_cast<int>(params_.size()); }
  int layer_count() const noexcept { return static_cast<int>(offsets_.size()) - 1; }
  /// Layer boundaries into the flat vector; size layer_count() + 1.
  const std::vector<int>& layer_offsets() const noexcept { return offsets_; }

  Eigen::VectorXd& params() noexcept { return params_; }
  const Eigen::VectorXd& params() const noexcept { return params_; }

  Eigen::VectorXd logits(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  int predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double accuracy(const datagen::ClientDataset& ds) const;

  /// Cross-entropy gradient for one record, written into `grad` (param_dim()).
  void record_gradient(const Eigen::Ref<const Eigen::VectorXd>& x, int label,
                       Eigen::Ref<Eigen::VectorXd> grad) const;

 private:
  ModelDims dims_;
  std::vector<int> offsets_;
  Eigen::VectorXd params_;
};

struct DpStepConfig {
  double clip_c = 1.0;
  double lr = 0.5;
  bool noiseless = false;  // stands in for the sigma -> 0 limit
};

struct StepStats {
  double max_clipped_norm = 0.0;
};

/// Clips each per-record gradient to L2 norm <= clip_c, averages over the
/// batch and adds N(0, (sigma clip_c)^2 I). Noise is drawn as standard
/// normals scaled by sigma clip_c, so equal streams give paired draws.
Eigen::VectorXd privatize(std::span<const Eigen::VectorXd> per_record, double clip_c,
                          double sigma, Rng& noise_rng, bool noiseless = false,
                          StepStats* stats = nullptr);

/// One DP-SGD step on `batch` rows of `data`.
Model dp_local_step(const Model& model, const datagen::ClientDataset& data,
                    std::span<const int> batch, const DpStepConfig& cfg, double sigma,
                    Rng& noise_rng, StepStats* stats = nullptr);

enum class AggregationMode { FedAvg, Gossip, Hierarchical };

std::string_view to_string(AggregationMode m);
AggregationMode aggregation_from_string(std::string_view name);

/// Aggregates per-client parameter vectors into the next round's per-client models.
std::vector<Eigen::VectorXd> aggregate(const std::vector<Eigen::VectorXd>& models,
                                       AggregationMode mode, const graphs::FederationGraph& g,
                                       std::span<const int> sizes);

struct SigmaSchedule {
  std::vector<double> sigma;  // noise multipliers
  std::string source = "uniform";

  void validate(int n) const;
};

struct TraceMeta {
  std::string topology;
  double eta = 0.0;
  double budget = 0.0;
  int t_max = 0;
  std::uint64_t seed = 0;
  std::vector<double> sigma;
  std::string sigma_source;
  std::vector<int> sizes;
  std::vector<int> org;

  bool operator==(const TraceMeta&) const = default;
};

/// Observation tensor: theta_i^(t) for t = 1..t_max, stored round-major then
/// client-major as float32.
class TrainingTrace {
 public:
  TrainingTrace() = default;
  TrainingTrace(int n, int t_max, int param_dim, std::vector<int> layer_offsets);

  int n() const noexcept { return n_; }
  int t_max() const noexcept { return t_max_; }
  int param_dim() const noexcept { return param_dim_; }
  const std::vector<int>& layer_offsets() const noexcept { return layer_offsets_; }
  std::size_t snapshot_count() const noexcept { return theta_.size() / std::max(param_dim_, 1); }

  /// Round t in [1, t_max].
  std::span<const float> snapshot(int client, int t) const;
  std::span<float> snapshot(int client, int t);
  const std::vector<float>& data() const noexcept { return theta_; }

  TraceMeta meta;

  bool operator==(const TrainingTrace& o) const {
    return n_ == o.n_ && t_max_ == o.t_max_ && param_dim_ == o.param_dim_ &&
           layer_offsets_ == o.layer_offsets_ && theta_ == o.theta_ && meta == o.meta;
  }

 private:
  int n_ = 0;
  int t_max_ = 0;
  int param_dim_ = 0;
  std::vector<int> layer_offsets_;
  std::vector<float> theta_;
};

void save_trace(const std::filesystem::path& path, const TrainingTrace& trace);
TrainingTrace load_trace(const std::filesystem::path& path);

struct FedConfig {
  int t_max = 100;
  double clip_c = 1.0;
  int batch = 64;
  double lr = 0.5;
  int hidden = 0;
  AggregationMode mode = AggregationMode::FedAvg;
  bool with_replacement = false;
  bool noiseless = false;
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

struct RunOutput {
  TrainingTrace trace;
  double accuracy = 0.0;
  double max_clipped_norm = 0.0;
};

/// T_max rounds of local DP-SGD step, snapshot, aggregate. Snapshots are the
/// transmitted post-step, pre-aggregation parameters.
RunOutput run_federation(const graphs::FederationGraph& g,
                         const std::vector<datagen::ClientDataset>& datasets,
                         const SigmaSchedule& schedule, const FedConfig& cfg,
                         const datagen::ClientDataset& test_set, TraceMeta meta = {});

}  // namespace topodp::fedsim
