#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <nlohmann/json.hpp>

#include "topodp/common.hpp"
#include "topodp/datagen.hpp"

using namespace topodp;
using namespace topodp::datagen;

namespace {

double total(const ClassDistribution& d) { return std::accumulate(d.probs.begin(), d.probs.end(), 0.0); }

}  // namespace

TEST_CASE("dirichlet draws lie on the simplex and are deterministic") {
  for (double alpha : {0.05, 0.5, 1.0, 10.0}) {
    const auto a = dirichlet_base(40, 10, alpha, 9);
    const auto b = dirichlet_base(40, 10, alpha, 9);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(total(a[i]) - 1.0) <= 1e-12);
      CHECK(*std::min_element(a[i].probs.begin(), a[i].probs.end()) >= 0.0);
      CHECK(a[i].probs == b[i].probs);
      CHECK_NOTHROW(a[i].validate());
    }
  }
  CHECK(dirichlet_base(3, 4, 0.5, 1)[0].probs != dirichlet_base(3, 4, 0.5, 2)[0].probs);
}

TEST_CASE("dirichlet concentration limit") {
  for (const auto& d : dirichlet_base(50, 2, 1e6, 4)) {
    CHECK(std::abs(d.probs[0] - 0.5) < 0.01);
    CHECK(std::abs(d.probs[1] - 0.5) < 0.01);
  }
}

TEST_CASE("dirichlet invalid parameters") {
  CHECK_THROWS_AS(dirichlet_base(3, 1, 0.5, 0), InvalidParameter);
  CHECK_THROWS_AS(dirichlet_base(3, 4, 0.0, 0), InvalidParameter);
  CHECK_THROWS_AS(dirichlet_base(0, 4, 0.5, 0), InvalidParameter);
}

TEST_CASE("eta coupling endpoints, arithmetic and affinity") {
  const auto base = dirichlet_base(12, 5, 0.5, 3);
  const auto anchor = identity_anchor(12);
  const auto at0 = eta_couple(base, 0.0, anchor, 5);
  const auto at1 = eta_couple(base, 1.0, anchor, 5);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(at0[i].probs == base[i].probs);
    for (int c = 0; c < 5; ++c) CHECK(at1[i].probs[c] == (c == static_cast<int>(i) % 5 ? 1.0 : 0.0));
  }
  for (double eta : {0.1, 0.25, 0.5, 0.9}) {
    const auto mid = eta_couple(base, eta, anchor, 5);
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(std::abs(total(mid[i]) - 1.0) <= 1e-12);
      for (int c = 0; c < 5; ++c) CHECK(mid[i].probs[c] == (1.0 - eta) * at0[i].probs[c] + eta * at1[i].probs[c]);
    }
  }
  const std::vector<ClassDistribution> half = {{{0.5, 0.5}}};
  const auto r = eta_couple(half, 0.5, {0}, 2);
  CHECK(r[0].probs[0] == doctest::Approx(0.75));
  CHECK(r[0].probs[1] == doctest::Approx(0.25));
  CHECK_THROWS_AS(eta_couple(half, 1.5, {0}, 2), InvalidParameter);
  CHECK_THROWS_AS(eta_couple(half, 0.5, {}, 2), InvalidParameter);
}

TEST_CASE("concentrations") {
  const std::vector<ClassDistribution> uni(5, ClassDistribution{std::vector<double>(8, 0.125)});
  const auto cv = concentrations(uni, {3});
  for (double p : cv.p) CHECK(p == doctest::Approx(0.125));
  std::vector<int> all(8);
  std::iota(all.begin(), all.end(), 0);
  for (double p : concentrations(uni, all).p) CHECK(p == doctest::Approx(1.0));
  CHECK_THROWS_AS(concentrations(uni, {}), InvalidParameter);
  CHECK_THROWS_AS(concentrations(uni, {8}), InvalidParameter);
  CHECK_THROWS_AS(concentrations(uni, {1, 1}), InvalidParameter);

  const auto base = dirichlet_base(20, 6, 0.5, 5);
  const auto dists = eta_couple(base, 0.3, identity_anchor(20), 6);
  const auto c2 = concentrations(dists, {0, 2});
  for (std::size_t i = 0; i < dists.size(); ++i)
    CHECK(std::abs(c2.p[i] - (dists[i].probs[0] + dists[i].probs[2])) <= 1e-12);
}

TEST_CASE("IID-null: shared base gives zero concentration variance") {
  const auto base = dirichlet_base(50, 10, 1e9, 2);
  const auto cv = concentrations(eta_couple(base, 0.0, identity_anchor(50), 10), {0});
  const double mean = std::accumulate(cv.p.begin(), cv.p.end(), 0.0) / 50.0;
  double var = 0.0;
  for (double p : cv.p) var += (p - mean) * (p - mean) / 50.0;
  CHECK(var < 1e-8);
}

TEST_CASE("sample_dataset") {
  const FeatureModel fm{16, 2.0};
  const auto point = sample_dataset({{0.0, 0.0, 1.0}}, 200, fm, 1);
  for (int y : point.labels) CHECK(y == 2);
  CHECK(point.features.rows() == 200);
  CHECK(point.features.cols() == 16);

  const auto ds = sample_dataset({{0.3, 0.7}}, 1000, fm, 7);
  const double frac0 = std::count(ds.labels.begin(), ds.labels.end(), 0) / 1000.0;
  CHECK(std::abs(frac0 - 0.3) < 0.05);

  const auto again = sample_dataset({{0.3, 0.7}}, 1000, fm, 7);
  CHECK(again.labels == ds.labels);
  CHECK(again.features == ds.features);

  // Class-conditional means recovered from the sample.
  const auto big = sample_dataset({{0.5, 0.5}}, 20000, fm, 3);
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(16);
  int n0 = 0;
  for (int r = 0; r < big.size(); ++r)
    if (big.labels[r] == 0) {
      m0 += big.features.row(r).transpose();
      ++n0;
    }
  m0 /= n0;
  CHECK((m0 - fm.class_mean(0)).cwiseAbs().maxCoeff() < 0.1);

  CHECK_THROWS_AS(sample_dataset({{0.5, 0.5}}, 0, fm, 1), InvalidParameter);
  CHECK_THROWS_AS(sample_dataset({{0.5, 0.6}}, 10, fm, 1), InvalidParameter);
}

TEST_CASE("empirical class frequencies pass a chi-square check") {
  const ClassDistribution d{{0.1, 0.2, 0.3, 0.4}};
  const int n = 20000;
  const auto ds = sample_dataset(d, n, {8, 2.0}, 11);
  double chi2 = 0.0;
  for (int c = 0; c < 4; ++c) {
    const double obs = std::count(ds.labels.begin(), ds.labels.end(), c);
    const double exp = n * d.probs[c];
    chi2 += (obs - exp) * (obs - exp) / exp;
  }
  CHECK(chi2 < 16.266);  // chi-square(3) 99.9% point
}

TEST_CASE("class means are distinct") {
  const FeatureModel fm{4, 2.0};
  CHECK(fm.class_mean(0)[0] == 2.0);
  CHECK(fm.class_mean(5)[1] == -2.0);
  for (int a = 0; a < 8; ++a)
    for (int b = a + 1; b < 8; ++b) CHECK((fm.class_mean(a) - fm.class_mean(b)).norm() > 0.0);
}

TEST_CASE("size profiles") {
  CHECK(size_profile("uniform", 4, 500) == std::vector<int>{500, 500, 500, 500});
  const auto r30 = size_profile("ratio30", 6);
  double ratio = static_cast<double>(*std::max_element(r30.begin(), r30.end())) / *std::min_element(r30.begin(), r30.end());
  CHECK(ratio >= 29.0);
  CHECK(ratio <= 31.0);
  const auto r66 = size_profile("ratio6p6", 4);
  ratio = static_cast<double>(*std::max_element(r66.begin(), r66.end())) / *std::min_element(r66.begin(), r66.end());
  CHECK(ratio >= 6.3);
  CHECK(ratio <= 6.9);
  CHECK(size_profile("custom", 3, 0, {5, 6, 7}) == std::vector<int>{5, 6, 7});
  CHECK_THROWS_AS(size_profile("ratio30", 5), InvalidParameter);
  CHECK_THROWS_AS(size_profile("ratio6p6", 6), InvalidParameter);
  CHECK_THROWS_AS(size_profile("custom", 2, 0, {5, 6, 7}), InvalidParameter);
  CHECK_THROWS_AS(size_profile("bogus", 2), InvalidParameter);
}

TEST_CASE("manifest and dataset container round trip") {
  const auto base = dirichlet_base(3, 4, 0.5, 1);
  const auto cv = concentrations(base, {0});
  const auto man = partition_manifest(base, {10, 20, 30}, cv, {0, 0, 1}, {0, 1, 2});
  const auto& cl = man.at("clients");
  REQUIRE(cl.size() == 3);
  CHECK(man["sensitive_set"] == nlohmann::json::array({0}));
  CHECK(cl[1]["size"] == 20);
  CHECK(cl[2]["org"] == 1);
  CHECK(cl[2]["anchor_class"] == 2);
  CHECK(cl[0]["p_i"].get<double>() == doctest::Approx(cv.p[0]));
  CHECK_THROWS_AS(partition_manifest(base, {10, 20}, cv, {0, 0, 1}, {0, 1, 2}), InvalidParameter);

  std::vector<ClientDataset> sets = {sample_dataset(base[0], 10, {5, 2.0}, 1),
                                     sample_dataset(base[1], 7, {5, 2.0}, 2)};
  const auto path = std::filesystem::temp_directory_path() / "topodp_test_datasets.bin";
  save_datasets(path, sets);
  const auto back = load_datasets(path);
  REQUIRE(back.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(back[k].labels == sets[k].labels);
    CHECK((back[k].features - sets[k].features).cwiseAbs().maxCoeff() < 1e-6);
  }
  std::filesystem::remove(path);
}
