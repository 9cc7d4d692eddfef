#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace topodp::datagen {

/// Class distribution on the K-simplex.
struct ClassDistribution {
  std::vector<double> probs;

  int classes() const noexcept { return static_cast<int>(probs.size()); }
  /// Throws InvalidParameter unless non-negative and summing to 1 within 1e-12.
  void validate() const;
};

struct ClientDataset {
  Eigen::MatrixXd features;  // size x d
  std::vector<int> labels;   // size entries in [0, K)

  int size() const noexcept { return static_cast<int>(labels.size()); }
  int dim() const noexcept { return static_cast<int>(features.cols()); }
};

struct ConcentrationVector {
  std::vector<double> p;
  std::vector<int> sensitive_set;
};

/// n independent symmetric Dirichlet(alpha) draws over K classes.
std::vector<ClassDistribution> dirichlet_base(int n, int classes, double alpha, std::uint64_t seed);

/// (1 - eta) * base_i + eta * pointmass(anchor[i] mod K). `anchor` is phi(i).
std::vector<ClassDistribution> eta_couple(const std::vector<ClassDistribution>& base, double eta,
                                          const std::vector<int>& anchor, int classes);

/// Identity anchor map phi(i) = i.
std::vector<int> identity_anchor(int n);

ConcentrationVector concentrations(const std::vector<ClassDistribution>& dists,
                                   const std::vector<int>& sensitive_set);

/// Class-conditional Gaussian feature model: unit variance around class means.
struct FeatureModel {
  int dim = 16;
  double separation = 2.0;

  /// Mean of class c: +/- separation on coordinate (c mod dim), sign flipping
  /// each time the class index wraps past dim.
  Eigen::VectorXd class_mean(int c) const;
};

ClientDataset sample_dataset(const ClassDistribution& dist, int size, const FeatureModel& model,
                             std::uint64_t seed);

/// Balanced held-out set: labels cycle through the classes.
ClientDataset sample_balanced(int classes, int size, const FeatureModel& model, std::uint64_t seed);

/// Named dataset-size profiles: "uniform" (base each), "ratio30" (n = 6),
/// "ratio6p6" (n = 4). `custom` is returned verbatim when name == "custom".
std::vector<int> size_profile(const std::string& name, int n, int base = 500,
                              const std::vector<int>& custom = {});

/// Partition manifest row set: per-client {size, dist, p_i, org, anchor_class}.
nlohmann::json partition_manifest(const std::vector<ClassDistribution>& dists,
                                  const std::vector<int>& sizes, const ConcentrationVector& conc,
                                  const std::vector<int>& org, const std::vector<int>& anchor);

/// Container file: row-major float32 features, uint16 labels, per-client offsets in the header.
void save_datasets(const std::filesystem::path& path, const std::vector<ClientDataset>& datasets);
std::vector<ClientDataset> load_datasets(const std::filesystem::path& path);

}  // namespace topodp::datagen
