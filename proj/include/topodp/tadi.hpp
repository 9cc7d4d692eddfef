#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "topodp/datagen.hpp"
#include "topodp/fedsim.hpp"
#include "topodp/graphs.hpp"
#include "topodp/scenario.hpp"

// Shadow-trained channel-decomposition attack: per-client sensitive-class
// concentration regressors restricted to parameter / structural /
// organisational feature channels.
namespace topodp::tadi {

enum class Channel { A1, A2Topo, A2Org, A2Full };
enum class Backend { Ridge, Mlp };

inline constexpr Channel kAllChannels[] = {Channel::A1, Channel::A2Topo, Channel::A2Org, Channel::A2Full};

std::string_view to_string(Channel c);
Channel channel_from_string(std::string_view s);
std::string_view to_string(Backend b);
Backend backend_from_string(std::string_view s);

/// Column layout of a full feature vector: [param | struct(3) | org(k_org)].
struct FeatureLayout {
  int t_max = 0;
  int layers = 0;
  int param_tail = 0;  // last-round parameter coordinates kept
  int k_org = 1;

  int param_dim() const noexcept { return t_max * (2 + layers) + 3 + param_tail; }
  int struct_offset() const noexcept { return param_dim(); }
  int org_offset() const noexcept { return param_dim() + 3; }
  int total() const noexcept { return param_dim() + 3 + k_org; }

  /// Column indices exposed to a channel.
  std::vector<int> columns(Channel c) const;

  bool operator==(const FeatureLayout&) const = default;
};

/// Last-round parameter blocks longer than this are truncated.
inline constexpr int kMaxParamTail = 256;

FeatureLayout layout_for(const fedsim::TrainingTrace& trace, int k_org);

/// Parameter-channel features for one client: per-round whole norms,
/// per-round per-layer norms, per-round mean neighbour cosine, norm mean/std,
/// norm-vs-round slope, last-round parameters (truncated to kMaxParamTail).
std::vector<double> param_features(const fedsim::TrainingTrace& trace,
                                   const graphs::FederationGraph& g, int client);

struct StructOrgBlocks {
  std::vector<double> structural;  // degree, depth, betweenness
  std::vector<double> org;         // one-hot of length k_org
};

StructOrgBlocks struct_org_features(const graphs::FederationGraph& g,
                                    const graphs::StructuralFeatures& sf, int client, int k_org);

/// Full feature matrix (n x layout.total()) for every client of one run.
Eigen::MatrixXd federation_features(const fedsim::TrainingTrace& trace,
                                    const graphs::FederationGraph& g, const FeatureLayout& layout);

enum class PriorMode { Matched, Mismatched };

struct ShadowConfig {
  scenario::FederationSpec spec;  // target generator; shadows reuse it with fresh seeds
  PriorMode prior = PriorMode::Matched;
  scenario::Allocation allocation = scenario::Allocation::Fulcrum;
  double budget = 0.5;
  int t_max = 100;
  unsigned workers = 1;
};

struct ShadowCorpus {
  Eigen::MatrixXd features;
  Eigen::VectorXd p;
  std::vector<int> federation;  // shadow index per row
  FeatureLayout layout;
  nlohmann::json config;

  int rows() const noexcept { return static_cast<int>(p.size()); }
};

/// Simulates `count` shadow federations with seeds derived from `seed` and
/// harvests one (features, p_i) row per client. Mismatched mode regenerates
/// partitions from the Dirichlet component alone (eta = 0).
ShadowCorpus harvest_shadow(const ShadowConfig& config, int count, std::uint64_t seed);

void save_corpus(const std::filesystem::path& path, const ShadowCorpus& corpus);
ShadowCorpus load_corpus(const std::filesystem::path& path);

struct ChannelRegressor {
  Channel channel = Channel::A1;
  Backend backend = Backend::Ridge;
  FeatureLayout layout;
  std::vector<int> columns;     // exposed full-vector columns with non-zero spread
  Eigen::VectorXd center;       // per exposed column
  Eigen::VectorXd scale;        // 1/std per exposed column
  Eigen::VectorXd weights;      // ridge weights on standardised columns
  double intercept = 0.0;
  // MLP backend
  Eigen::MatrixXd hidden_w;
  Eigen::VectorXd hidden_b;
  Eigen::VectorXd out_w;

  /// Unclipped output for one full-layout feature row.
  double raw_predict(const Eigen::Ref<const Eigen::VectorXd>& row) const;
};

struct FitOptions {
  double lambda = 1.0;
  int mlp_hidden = 16;
  int mlp_epochs = 300;
  double mlp_lr = 0.01;
  std::uint64_t seed = 0;
};

ChannelRegressor fit_channel(const ShadowCorpus& corpus, Channel channel,
                             Backend backend = Backend::Ridge, const FitOptions& opts = {});

/// Clipped estimates in [0, 1] for each row of `features`.
std::vector<double> predict_target(const ChannelRegressor& reg, const Eigen::MatrixXd& features);

/// Constant federation-mean predictor.
std::vector<double> baseline_a0(const datagen::ConcentrationVector& p);

}  // namespace topodp::tadi
