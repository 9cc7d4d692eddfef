#include "topodp/datagen.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "topodp/common.hpp"
#include "topodp/io.hpp"

namespace topodp::datagen {

void ClassDistribution::validate() const {
  if (probs.empty()) throw InvalidParameter("empty class distribution");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw InvalidParameter("negative or NaN class probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw InvalidParameter("class distribution does not sum to 1");
}

std::vector<ClassDistribution> dirichlet_base(int n, int classes, double alpha,
                                              std::uint64_t seed) {
  if (n < 1) throw InvalidParameter("dirichlet_base needs n >= 1");
  if (classes < 2) throw InvalidParameter("dirichlet_base needs K >= 2");
  if (!(alpha > 0.0)) throw InvalidParameter("Dirichlet alpha must be positive");
  std::vector<ClassDistribution> out(n);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, kDirichlet, i));
    auto& probs = out[i].probs;
    probs.resize(classes);
    double sum = 0.0;
    // Small alpha can underflow every draw; redraw until some mass survives.
    do {
      sum = 0.0;
      for (auto& p : probs) sum += (p = gamma(rng));
    } while (!(sum > 0.0));
    for (auto& p : probs) p /= sum;
    // Push the rounding residue onto the largest entry so the sum is 1 to ~1 ulp.
    double resid = 1.0 - std::accumulate(probs.begin(), probs.end(), 0.0);
    *std::max_element(probs.begin(), probs.end()) += resid;
  }
  return out;
}

std::vector<int> identity_anchor(int n) {
  std::vector<int> a(n);
  std::iota(a.begin(), a.end(), 0);
  return a;
}

std::vector<ClassDistribution> eta_couple(const std::vector<ClassDistribution>& base, double eta,
                                          const std::vector<int>& anchor, int classes) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidParameter("eta must lie in [0, 1]");
  if (anchor.size() != base.size()) throw InvalidParameter("anchor map must cover every client");
  std::vector<ClassDistribution> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (base[i].classes() != classes) throw InvalidParameter("class count mismatch");
    if (anchor[i] < 0) throw InvalidParameter("anchor class must be non-negative");
    const int star = anchor[i] % classes;
    auto& probs = out[i].probs;
    probs.resize(classes);
    for (int c = 0; c < classes; ++c)
      probs[c] = (1.0 - eta) * base[i].probs[c] + eta * (c == star ? 1.0 : 0.0);
  }
  return out;
}

ConcentrationVector concentrations(const std::vector<ClassDistribution>& dists,
                                   const std::vector<int>& sensitive_set) {
  if (sensitive_set.empty()) throw InvalidParameter("sensitive class set is empty");
  std::set<int> unique(sensitive_set.begin(), sensitive_set.end());
  if (unique.size() != sensitive_set.size()) throw InvalidParameter("duplicate sensitive class");
  ConcentrationVector cv;
  cv.sensitive_set.assign(unique.begin(), unique.end());
  cv.p.reserve(dists.size());
  for (const auto& d : dists) {
    double p = 0.0;
    for (int c : cv.sensitive_set) {
      if (c < 0 || c >= d.classes()) throw InvalidParameter("sensitive class index out of range");
      p += d.probs[c];
    }
    cv.p.push_back(std::clamp(p, 0.0, 1.0));
  }
  return cv;
}

Eigen::VectorXd FeatureModel::class_mean(int c) const {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(dim);
  const double sign = (c / dim) % 2 == 0 ? 1.0 : -1.0;
  mu[c % dim] = sign * separation;
  return mu;
}

namespace {

ClientDataset draw(const std::vector<int>& labels, const FeatureModel& model, Rng& rng) {
  ClientDataset ds;
  ds.labels = labels;
  ds.features.resize(static_cast<Eigen::Index>(labels.size()), model.dim);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    Eigen::VectorXd mu = model.class_mean(labels[r]);
    for (int k = 0; k < model.dim; ++k) ds.features(static_cast<Eigen::Index>(r), k) = mu[k] + z(rng);
  }
  return ds;
}

}  // namespace

ClientDataset sample_dataset(const ClassDistribution& dist, int size, const FeatureModel& model,
                             std::uint64_t seed) {
  if (size < 1) throw InvalidParameter("dataset size must be >= 1");
  if (model.dim < 1) throw InvalidParameter("feature dimension must be >= 1");
  dist.validate();
  Rng rng(derive_seed(seed, kSample));
  std::discrete_distribution<int> cls(dist.probs.begin(), dist.probs.end());
  std::vector<int> labels(size);
  for (auto& l : labels) l = cls(rng);
  return draw(labels, model, rng);
}

ClientDataset sample_balanced(int classes, int size, const FeatureModel& model, std::uint64_t seed) {
  if (size < 1 || classes < 1) throw InvalidParameter("balanced set needs size, K >= 1");
  std::vector<int> labels(size);
  for (int r = 0; r < size; ++r) labels[r] = r % classes;
  Rng rng(derive_seed(seed, kTestSet));
  return draw(labels, model, rng);
}

std::vector<int> size_profile(const std::string& name, int n, int base,
                              const std::vector<int>& custom) {
  if (name == "uniform") {
    if (n < 1 || base < 1) throw InvalidParameter("uniform profile needs n, base >= 1");
    return std::vector<int>(n, base);
  }
  if (name == "ratio30") {
    // Six sites, largest/smallest = 30.
    if (n != 6) throw InvalidParameter("ratio30 profile is defined for n = 6");
    return {1920, 620, 520, 350, 130, 64};
  }
  if (name == "ratio6p6") {
    // Four centres, largest/smallest ~ 6.6.
    if (n != 4) throw InvalidParameter("ratio6p6 profile is defined for n = 4");
    return {597, 516, 255, 90};
  }
  if (name == "custom") {
    if (static_cast<int>(custom.size()) != n) throw InvalidParameter("custom profile length != n");
    if (std::any_of(custom.begin(), custom.end(), [](int s) { return s < 1; }))
      throw InvalidParameter("custom profile sizes must be positive");
    return custom;
  }
  throw InvalidParameter("unknown size profile '" + name + "'");
}

nlohmann::json partition_manifest(const std::vector<ClassDistribution>& dists,
                                  const std::vector<int>& sizes, const ConcentrationVector& conc,
                                  const std::vector<int>& org, const std::vector<int>& anchor) {
  const std::size_t n = dists.size();
  if (sizes.size() != n || conc.p.size() != n || org.size() != n || anchor.size() != n)
    throw InvalidParameter("manifest inputs disagree on client count");
  nlohmann::json clients = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    clients.push_back({{"size", sizes[i]},
                       {"dist", dists[i].probs},
                       {"p_i", conc.p[i]},
                       {"org", org[i]},
                       {"anchor_class", anchor[i] % dists[i].classes()}});
  }
  return {{"sensitive_set", conc.sensitive_set}, {"clients", clients}};
}

void save_datasets(const std::filesystem::path& path, const std::vector<ClientDataset>& datasets) {
  std::vector<std::byte> blob;
  nlohmann::json clients = nlohmann::json::array();
  int dim = datasets.empty() ? 0 : static_cast<int>(datasets.front().features.cols());
  for (const auto& ds : datasets) {
    if (ds.features.cols() != dim) throw InvalidParameter("datasets disagree on feature dimension");
    if (static_cast<std::size_t>(ds.features.rows()) != ds.labels.size()) throw InvalidParameter("feature/label count mismatch");
    clients.push_back({{"rows", ds.labels.size()}, {"offset", blob.size()}});
    for (Eigen::Index r = 0; r < ds.features.rows(); ++r)
      for (Eigen::Index c = 0; c < dim; ++c) {
        const float v = static_cast<float>(ds.features(r, c));
        const auto* b = reinterpret_cast<const std::byte*>(&v);
        blob.insert(blob.end(), b, b + sizeof v);
      }
    for (int y : ds.labels) {
      if (y < 0 || y > 0xffff) throw InvalidParameter("label does not fit uint16");
      const auto v = static_cast<std::uint16_t>(y);
      const auto* b = reinterpret_cast<const std::byte*>(&v);
      blob.insert(blob.end(), b, b + sizeof v);
    }
  }
  io::write_container(path, {{"kind", "datasets"}, {"dim", dim}, {"features", "float32"}, {"labels", "uint16"},
                             {"clients", clients}},
                      blob);
}

std::vector<ClientDataset> load_datasets(const std::filesystem::path& path) {
  const auto c = io::read_container(path);
  if (c.header.value("kind", "") != "datasets") throw std::runtime_error(path.string() + ": not a dataset file");
  const int dim = c.header.at("dim").get<int>();
  std::vector<ClientDataset> out;
  for (const auto& cl : c.header.at("clients")) {
    const auto rows = cl.at("rows").get<std::size_t>();
    std::size_t off = cl.at("offset").get<std::size_t>();
    if (off + rows * (dim * sizeof(float) + sizeof(std::uint16_t)) > c.payload.size())
      throw std::runtime_error(path.string() + ": truncated payload");
    ClientDataset ds;
    ds.features.resize(static_cast<Eigen::Index>(rows), dim);
    for (std::size_t r = 0; r < rows; ++r)
      for (int k = 0; k < dim; ++k, off += sizeof(float)) {
        float v;
        std::memcpy(&v, c.payload.data() + off, sizeof v);
        ds.features(static_cast<Eigen::Index>(r), k) = v;
      }
    ds.labels.resize(rows);
    for (std::size_t r = 0; r < rows; ++r, off += sizeof(std::uint16_t)) {
      std::uint16_t v;
      std::memcpy(&v, c.payload.data() + off, sizeof v);
      ds.labels[r] = v;
    }
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace topodp::datagen
