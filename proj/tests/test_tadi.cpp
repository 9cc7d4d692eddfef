#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "topodp/common.hpp"
#include "topodp/fedsim.hpp"
#include "topodp/graphs.hpp"
#include "topodp/scenario.hpp"
#include "topodp/stats.hpp"
#include "topodp/tadi.hpp"

using namespace topodp;
using namespace topodp::tadi;
using graphs::TopologyKind;

namespace {

fedsim::TrainingTrace constant_trace(int n, int t_max, const std::vector<float>& v, std::vector<int> offsets) {
  fedsim::TrainingTrace tr(n, t_max, static_cast<int>(v.size()), std::move(offsets));
  for (int i = 0; i < n; ++i)
    for (int t = 1; t <= t_max; ++t) std::copy(v.begin(), v.end(), tr.snapshot(i, t).begin());
  return tr;
}

scenario::FederationSpec small_spec(double eta, double alpha) {
  scenario::FederationSpec s;
  s.topology = TopologyKind::Hierarchy;
  s.n = 50;
  s.topo_params.group_sizes = {20, 12, 8, 6, 4};
  s.classes = 5;
  s.features = {4, 2.0};
  s.alpha = alpha;
  s.eta = eta;
  s.anchor = scenario::AnchorMode::Org;
  s.base_size = 32;
  s.test_size = 50;
  s.fed.batch = 16;
  s.fed.mode = fedsim::AggregationMode::Hierarchical;
  return s;
}

// Synthetic corpus with a known layout: t_max=2, one layer, tail 2, k_org 3.
ShadowCorpus synthetic_corpus(int rows, std::uint64_t seed) {
  ShadowCorpus c;
  c.layout = {2, 1, 2, 3};
  c.features.resize(rows, c.layout.total());
  c.p.resize(rows);
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 0; r < rows; ++r) {
    for (int k = 0; k < c.layout.total(); ++k) c.features(r, k) = z(rng);
    const int org = r % 3;
    for (int k = 0; k < 3; ++k) c.features(r, c.layout.org_offset() + k) = k == org ? 1.0 : 0.0;
    c.p[r] = u(rng);
    c.federation.push_back(r / 10);
  }
  return c;
}

}  // namespace

TEST_CASE("feature dimension bookkeeping") {
  const fedsim::Model m({4, 0, 3});
  const auto g = graphs::make_topology(TopologyKind::Ring, 5);
  fedsim::TrainingTrace tr(5, 7, m.param_dim(), m.layer_offsets());
  const auto pf = param_features(tr, g, 2);
  const int layers = 2;
  CHECK(static_cast<int>(pf.size()) == 7 * (2 + layers) + 3 + m.param_dim());
  const auto lay = layout_for(tr, 1);
  CHECK(lay.param_dim() == static_cast<int>(pf.size()));
  CHECK(lay.total() == lay.param_dim() + 3 + 1);
  CHECK(federation_features(tr, g, lay).cols() == lay.total());

  fedsim::TrainingTrace wide(2, 1, 600, {0, 600});
  CHECK(layout_for(wide, 1).param_tail == kMaxParamTail);
  CHECK_THROWS_AS(param_features(tr, g, 5), InvalidParameter);
  CHECK_THROWS_AS(federation_features(tr, g, {7, 2, 3, 1}), InvalidParameter);
}

TEST_CASE("constant trace: zero norm spread and slope, unit neighbour cosine") {
  const std::vector<float> v = {3.0f, 4.0f, 0.0f, 12.0f};
  const auto tr = constant_trace(4, 5, v, {0, 2, 4});
  const auto g = graphs::make_topology(TopologyKind::Ring, 4);
  const auto pf = param_features(tr, g, 1);
  const int t = 5, layers = 2;
  for (int k = 0; k < t; ++k) CHECK(pf[k] == doctest::Approx(13.0));
  CHECK(pf[t] == doctest::Approx(5.0));
  CHECK(pf[t + 1] == doctest::Approx(12.0));
  for (int k = 0; k < t; ++k) CHECK(pf[t * (1 + layers) + k] == doctest::Approx(1.0).epsilon(1e-12));
  const int agg = t * (2 + layers);
  CHECK(pf[agg] == doctest::Approx(13.0));
  CHECK(pf[agg + 1] == 0.0);
  CHECK(pf[agg + 2] == 0.0);
  for (int k = 0; k < 4; ++k) CHECK(pf[agg + 3 + k] == v[k]);
}

TEST_CASE("norm slope on a linear ramp") {
  fedsim::TrainingTrace tr(1, 4, 1, {0, 1});
  for (int t = 1; t <= 4; ++t) tr.snapshot(0, t)[0] = static_cast<float>(2 * t + 1);
  const auto g = graphs::FederationGraph(1, {}, TopologyKind::Line, std::nullopt, {0});
  const auto pf = param_features(tr, g, 0);
  const int agg = 4 * 3;
  CHECK(pf[agg] == doctest::Approx(6.0));
  CHECK(pf[agg + 1] == doctest::Approx(std::sqrt(5.0)));
  CHECK(pf[agg + 2] == doctest::Approx(2.0));
}

TEST_CASE("structural and org blocks") {
  const auto ring = graphs::make_topology(TopologyKind::Ring, 6);
  const auto sf = graphs::structural_features(ring);
  const auto b0 = struct_org_features(ring, sf, 0, 1);
  for (int i = 1; i < 6; ++i) {
    const auto b = struct_org_features(ring, sf, i, 1);
    CHECK(b.structural[0] == 2.0);
    CHECK(b.structural[1] == 0.0);
    CHECK(b.structural[2] == doctest::Approx(b0.structural[2]));
  }
  const auto h = graphs::make_topology(TopologyKind::Hierarchy, 6, {.group_sizes = {2, 2, 2}});
  CHECK(struct_org_features(h, graphs::structural_features(h), 2, 3).org == std::vector<double>{0, 1, 0});
  const auto star = graphs::make_topology(TopologyKind::Star, 50);
  const auto hub = struct_org_features(star, graphs::structural_features(star), 0, 1);
  CHECK(hub.structural == std::vector<double>{49.0, 0.0, 1176.0});
}

TEST_CASE("channel masks") {
  const FeatureLayout lay{2, 1, 2, 3};
  CHECK(lay.columns(Channel::A1).size() == static_cast<std::size_t>(lay.param_dim()));
  CHECK(lay.columns(Channel::A2Topo).size() == static_cast<std::size_t>(lay.param_dim() + 3));
  CHECK(lay.columns(Channel::A2Org).size() == static_cast<std::size_t>(lay.param_dim() + 3));
  CHECK(lay.columns(Channel::A2Full).size() == static_cast<std::size_t>(lay.total()));
  const auto org = lay.columns(Channel::A2Org);
  CHECK(std::find(org.begin(), org.end(), lay.struct_offset()) == org.end());
  CHECK(org.back() == lay.total() - 1);
  for (auto c : kAllChannels) CHECK(channel_from_string(to_string(c)) == c);
  CHECK(backend_from_string("mlp") == Backend::Mlp);
  CHECK_THROWS_AS(channel_from_string("A3"), InvalidParameter);
}

TEST_CASE("mask discipline: hidden columns have no influence") {
  const auto base = synthetic_corpus(120, 1);
  std::vector<int> perm(120);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), Rng(5));
  for (auto ch : kAllChannels) {
    const auto cols = base.layout.columns(ch);
    auto shuffled = base;
    for (int k = 0; k < base.layout.total(); ++k) {
      if (std::find(cols.begin(), cols.end(), k) != cols.end()) continue;
      for (int r = 0; r < 120; ++r) shuffled.features(r, k) = base.features(perm[r], k);
    }
    for (auto be : {Backend::Ridge, Backend::Mlp}) {
      const FitOptions opts{.mlp_epochs = 50};
      const auto a = predict_target(fit_channel(base, ch, be, opts), base.features);
      const auto b = predict_target(fit_channel(shuffled, ch, be, opts), shuffled.features);
      CHECK(a == b);
    }
  }
}

TEST_CASE("fit: constant target, realisable feature, degenerate design") {
  auto c = synthetic_corpus(80, 2);
  c.p.setConstant(0.3);
  for (double v : predict_target(fit_channel(c, Channel::A2Full), c.features)) CHECK(v == doctest::Approx(0.3));

  auto r = synthetic_corpus(80, 3);
  r.features.col(0) = r.p;
  const auto fit = fit_channel(r, Channel::A1, Backend::Ridge, {.lambda = 1e-8});
  const auto pred = predict_target(fit, r.features);
  const std::vector<double> p(r.p.data(), r.p.data() + r.rows());
  CHECK(stats::calibration_loss(pred, p) <= 1e-6);

  auto flat = synthetic_corpus(30, 4);
  flat.features.setConstant(2.5);
  const auto f = fit_channel(flat, Channel::A2Full);
  CHECK(f.columns.empty());
  for (double v : predict_target(f, flat.features)) CHECK(v == doctest::Approx(flat.p.mean()));

  ShadowCorpus empty;
  CHECK_THROWS_AS(fit_channel(empty, Channel::A1), InvalidParameter);
  CHECK_THROWS_AS(fit_channel(c, Channel::A1, Backend::Ridge, {.lambda = 0.0}), InvalidParameter);
}

TEST_CASE("prediction clipping and baseline") {
  ChannelRegressor reg;
  reg.layout = {1, 1, 1, 1};
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, reg.layout.total());
  reg.intercept = 1.3;
  CHECK(predict_target(reg, x) == std::vector<double>{1.0, 1.0});
  reg.intercept = -0.2;
  CHECK(predict_target(reg, x) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(predict_target(reg, Eigen::MatrixXd::Zero(2, 3)), InvalidParameter);

  const datagen::ConcentrationVector cv{{0.2, 0.4}, {0}};
  const auto a0 = baseline_a0(cv);
  CHECK(a0[0] == doctest::Approx(0.3));
  CHECK(a0[1] == doctest::Approx(0.3));
  CHECK(stats::calibration_loss(a0, cv.p) == doctest::Approx(stats::population_variance(cv.p)));
  const datagen::ConcentrationVector flat{{0.5, 0.5, 0.5}, {0}};
  CHECK(stats::calibration_loss(baseline_a0(flat), flat.p) == 0.0);
}

TEST_CASE("shadow harvesting") {
  ShadowConfig cfg;
  cfg.spec = small_spec(0.5, 0.5);
  cfg.t_max = 3;
  const auto one = harvest_shadow(cfg, 1, 7);
  CHECK(one.rows() == 50);
  CHECK(one.features.cols() == one.layout.total());
  CHECK(one.layout.k_org == 5);
  for (int r = 0; r < one.rows(); ++r) {
    CHECK(one.p[r] >= 0.0);
    CHECK(one.p[r] <= 1.0);
  }

  cfg.workers = 2;
  const auto a = harvest_shadow(cfg, 3, 9), b = harvest_shadow(cfg, 3, 9);
  CHECK(a.features == b.features);
  CHECK(a.p == b.p);
  CHECK(a.rows() == 150);
  CHECK(a.federation[149] == 2);
  CHECK(harvest_shadow(cfg, 1, 10).p != one.p);

  // IID-null: shared prior with a huge concentration gives near-identical p.
  cfg.spec = small_spec(0.0, 1e6);
  const auto null = harvest_shadow(cfg, 2, 3);
  const std::vector<double> p(null.p.data(), null.p.data() + null.rows());
  CHECK(stats::population_variance(p) < 1e-4);

  // Mismatched prior ignores the eta coupling.
  cfg.spec = small_spec(1.0, 1e6);
  cfg.prior = PriorMode::Mismatched;
  const auto mm = harvest_shadow(cfg, 1, 3);
  const std::vector<double> pm(mm.p.data(), mm.p.data() + mm.rows());
  CHECK(stats::population_variance(pm) < 1e-4);
  CHECK(mm.config["prior"] == "mismatched");
  CHECK_THROWS_AS(harvest_shadow(cfg, 0, 1), InvalidParameter);
}

TEST_CASE("corpus container round trip") {
  const auto c = synthetic_corpus(25, 8);
  const auto path = std::filesystem::temp_directory_path() / "topodp_test_corpus.bin";
  save_corpus(path, c);
  const auto back = load_corpus(path);
  CHECK(back.layout == c.layout);
  CHECK(back.federation == c.federation);
  CHECK((back.features - c.features).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((back.p - c.p).cwiseAbs().maxCoeff() < 1e-7);
  std::filesystem::remove(path);
}
