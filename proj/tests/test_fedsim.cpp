#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "topodp/common.hpp"
#include "topodp/datagen.hpp"
#include "topodp/fedsim.hpp"
#include "topodp/graphs.hpp"

using namespace topodp;
using namespace topodp::fedsim;
using graphs::TopologyKind;

namespace {

double cross_entropy(const Model& m, const Eigen::VectorXd& x, int y) {
  Eigen::VectorXd z = m.logits(x);
  const double mx = z.maxCoeff();
  return -(z[y] - mx - std::log((z.array() - mx).exp().sum()));
}

// Central differences against the analytic per-record gradient.
void check_gradient(ModelDims dims) {
  Model m = Model::initialised(dims, 5);
  Rng rng(3);
  std::normal_distribution<double> z(0.0, 0.7);
  for (auto& p : m.params()) p += z(rng);
  Eigen::VectorXd x(dims.input);
  for (auto& v : x) v = z(rng);
  const int y = 1;
  Eigen::VectorXd g(m.param_dim());
  m.record_gradient(x, y, g);
  for (int k = 0; k < m.param_dim(); ++k) {
    Model hi = m, lo = m;
    hi.params()[k] += 1e-6;
    lo.params()[k] -= 1e-6;
    const double fd = (cross_entropy(hi, x, y) - cross_entropy(lo, x, y)) / 2e-6;
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
}

std::vector<datagen::ClientDataset> two_class_clients(int n, int size, std::uint64_t seed) {
  std::vector<datagen::ClientDataset> out;
  for (int i = 0; i < n; ++i) out.push_back(datagen::sample_dataset({{0.5, 0.5}}, size, {16, 2.0}, seed + i));
  return out;
}

}  // namespace

TEST_CASE("model layout") {
  const Model lin({16, 0, 3});
  CHECK(lin.param_dim() == 3 * 16 + 3);
  CHECK(lin.layer_count() == 2);
  const Model mlp({16, 8, 3});
  CHECK(mlp.layer_offsets() == std::vector<int>{0, 128, 136, 160, 163});
  CHECK(Model::initialised({16, 0, 3}, 9).params().isZero());
  CHECK_FALSE(Model::initialised({16, 8, 3}, 9).params().isZero());
  CHECK_THROWS_AS(Model({16, 0, 1}), InvalidParameter);
}

TEST_CASE("per-record gradient matches finite differences") {
  check_gradient({5, 0, 3});
  check_gradient({4, 6, 3});
}

TEST_CASE("clipping") {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(4);
  g[0] = 6.0;
  g[1] = 8.0;  // norm 10
  const std::vector<Eigen::VectorXd> one = {g};
  Rng rng(1);
  StepStats st;
  const auto out = privatize(one, 1.0, 1.0, rng, true, &st);
  CHECK(out.norm() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(st.max_clipped_norm <= 1.0 + 1e-9);
  // Below the threshold nothing is scaled.
  const std::vector<Eigen::VectorXd> small = {0.1 * g, 0.3 * g};
  CHECK((privatize(small, 5.0, 1.0, rng, true) - 0.2 * g).norm() <= 1e-12);
  CHECK_THROWS_AS(privatize(std::span<const Eigen::VectorXd>{}, 1.0, 1.0, rng), InvalidParameter);
  CHECK_THROWS_AS(privatize(one, 0.0, 1.0, rng), InvalidParameter);
  CHECK_THROWS_AS(privatize(one, 1.0, 0.0, rng), InvalidParameter);
}

TEST_CASE("noise standard deviation") {
  const double sigma = 0.8, c = 1.5;
  const std::vector<Eigen::VectorXd> zero = {Eigen::VectorXd::Zero(3)};
  Rng rng(17);
  const int reps = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(3), sq = Eigen::VectorXd::Zero(3);
  for (int r = 0; r < reps; ++r) {
    const auto v = privatize(zero, c, sigma, rng);
    sum += v;
    sq += v.cwiseProduct(v);
  }
  for (int k = 0; k < 3; ++k) {
    const double m = sum[k] / reps;
    const double sd = std::sqrt(sq[k] / reps - m * m);
    CHECK(std::abs(sd / (sigma * c) - 1.0) < 0.02);
  }
}

TEST_CASE("noise streams per (client, round) are uncorrelated") {
  Rng a(derive_seed(0, kNoise, 0, 1)), b(derive_seed(0, kNoise, 1, 1)), c(derive_seed(0, kNoise, 0, 2));
  std::normal_distribution<double> z(0.0, 1.0);
  double ab = 0, ac = 0, aa = 0, bb = 0, cc = 0;
  for (int r = 0; r < 10000; ++r) {
    const double x = z(a), y = z(b), w = z(c);
    ab += x * y;
    ac += x * w;
    aa += x * x;
    bb += y * y;
    cc += w * w;
  }
  CHECK(std::abs(ab / std::sqrt(aa * bb)) < 0.05);
  CHECK(std::abs(ac / std::sqrt(aa * cc)) < 0.05);
}

TEST_CASE("local step") {
  const Model m({16, 0, 2});
  auto ds = datagen::sample_dataset({{0.5, 0.5}}, 20, {16, 2.0}, 2);
  const std::vector<int> batch = {0, 1, 2, 3};
  Rng rng(1);
  // Zero-gradient records: a correct prediction far from the boundary saturates.
  Model sat({1, 0, 2});
  sat.params() << 1e3, -1e3, 0.0, 0.0;
  datagen::ClientDataset pos;
  pos.features = Eigen::MatrixXd::Ones(4, 1);
  pos.labels = {0, 0, 0, 0};
  const auto same = dp_local_step(sat, pos, batch, {1.0, 0.5, true}, 1.0, rng);
  CHECK((same.params() - sat.params()).norm() == 0.0);

  StepStats st;
  const auto next = dp_local_step(m, ds, batch, {1.0, 0.5, false}, 1.0, rng, &st);
  CHECK(st.max_clipped_norm <= 1.0 + 1e-9);
  CHECK((next.params() - m.params()).norm() > 0.0);
  const std::vector<int> bad = {99};
  CHECK_THROWS_AS(dp_local_step(m, ds, bad, {}, 1.0, rng), InvalidParameter);
  CHECK_THROWS_AS(dp_local_step(m, ds, std::span<const int>{}, {}, 1.0, rng), InvalidParameter);
}

TEST_CASE("aggregation") {
  const auto pair = graphs::make_topology(TopologyKind::Line, 2);
  Eigen::VectorXd a(2), b(2);
  a << 1.0, 2.0;
  b << 3.0, 6.0;
  const std::vector<int> equal = {5, 5}, skew = {3, 1};
  const auto mean = aggregate({a, b}, AggregationMode::FedAvg, pair, equal);
  CHECK((mean[0] - Eigen::Vector2d(2.0, 4.0)).norm() <= 1e-12);
  CHECK((mean[1] - mean[0]).norm() == 0.0);
  const auto w = aggregate({a, b}, AggregationMode::FedAvg, pair, skew);
  CHECK((w[0] - (0.75 * a + 0.25 * b)).norm() <= 1e-12);

  const auto k5 = graphs::make_topology(TopologyKind::ErdosRenyi, 5, {.er_p = 1.0}, 0);
  std::vector<Eigen::VectorXd> ms;
  for (int i = 0; i < 5; ++i) ms.push_back(Eigen::VectorXd::Constant(3, i * i));
  const std::vector<int> five(5, 10);
  const auto gos = aggregate(ms, AggregationMode::Gossip, k5, five);
  const auto fed = aggregate(ms, AggregationMode::FedAvg, k5, five);
  for (int i = 0; i < 5; ++i) CHECK((gos[i] - fed[i]).norm() <= 1e-12);

  // Ring gossip: self plus two neighbours.
  const auto ring = graphs::make_topology(TopologyKind::Ring, 5);
  const auto rg = aggregate(ms, AggregationMode::Gossip, ring, five);
  CHECK(rg[0][0] == doctest::Approx((0.0 + 1.0 + 16.0) / 3.0));

  // Hierarchy: within-group size-weighted, then across groups by group mass.
  const auto h = graphs::make_topology(TopologyKind::Hierarchy, 5, {.group_sizes = {3, 2}});
  const std::vector<int> sz = {1, 2, 3, 4, 4};
  const auto hg = aggregate(ms, AggregationMode::Hierarchical, h, sz);
  const double g0 = (1 * 0.0 + 2 * 1.0 + 3 * 4.0) / 6.0, g1 = (4 * 9.0 + 4 * 16.0) / 8.0;
  const double want = (6.0 * g0 + 8.0 * g1) / 14.0;
  for (int i = 0; i < 5; ++i) CHECK(hg[i][1] == doctest::Approx(want));
  CHECK_THROWS_AS(aggregate(ms, AggregationMode::Hierarchical, ring, five), InvalidParameter);
  CHECK_THROWS_AS(aggregate({a}, AggregationMode::FedAvg, pair, equal), InvalidParameter);
  CHECK(aggregation_from_string("gossip") == AggregationMode::Gossip);
  CHECK_THROWS_AS(aggregation_from_string("allreduce"), InvalidParameter);
}

TEST_CASE("federation: determinism, trace shape, trace file round trip") {
  const auto g = graphs::make_topology(TopologyKind::Ring, 4);
  const auto data = two_class_clients(4, 80, 10);
  const auto test = datagen::sample_balanced(2, 200, {16, 2.0}, 1);
  FedConfig cfg;
  cfg.t_max = 6;
  cfg.batch = 16;
  cfg.mode = AggregationMode::Gossip;
  cfg.seed = 4;
  const SigmaSchedule sched{{0.5, 1.0, 1.5, 2.0}, "fulcrum"};
  TraceMeta meta;
  meta.topology = "ring";
  meta.eta = 0.5;
  meta.budget = 0.1;
  const auto r1 = run_federation(g, data, sched, cfg, test, meta);
  const auto r2 = run_federation(g, data, sched, cfg, test, meta);
  CHECK(r1.trace == r2.trace);
  CHECK(r1.accuracy == r2.accuracy);
  CHECK(r1.trace.snapshot_count() == 4u * 6u);
  CHECK(r1.trace.meta.sigma == sched.sigma);
  CHECK(r1.trace.meta.sizes == std::vector<int>{80, 80, 80, 80});
  CHECK(r1.max_clipped_norm <= cfg.clip_c + 1e-9);
  for (float v : r1.trace.data()) CHECK(std::isfinite(v));

  cfg.workers = 3;
  CHECK(run_federation(g, data, sched, cfg, test, meta).trace == r1.trace);

  const auto path = std::filesystem::temp_directory_path() / "topodp_test_trace.bin";
  save_trace(path, r1.trace);
  CHECK(load_trace(path) == r1.trace);
  std::filesystem::remove(path);
}

TEST_CASE("federation: paired noise across schedules") {
  // Same seed, same batches; a second schedule only rescales the noise draws.
  const auto g = graphs::make_topology(TopologyKind::Star, 3);
  const auto data = two_class_clients(3, 64, 2);
  const auto test = datagen::sample_balanced(2, 50, {16, 2.0}, 1);
  FedConfig cfg;
  cfg.t_max = 1;
  cfg.batch = 8;
  cfg.lr = 1.0;
  const auto lo = run_federation(g, data, {{1.0, 1.0, 1.0}, "uniform"}, cfg, test);
  const auto hi = run_federation(g, data, {{3.0, 1.0, 1.0}, "uniform"}, cfg, test);
  cfg.noiseless = true;
  const auto none = run_federation(g, data, {{1.0, 1.0, 1.0}, "uniform"}, cfg, test);
  auto s_lo = lo.trace.snapshot(0, 1), s_hi = hi.trace.snapshot(0, 1), s0 = none.trace.snapshot(0, 1);
  for (std::size_t k = 0; k < s0.size(); ++k)
    CHECK((s_hi[k] - s0[k]) == doctest::Approx(3.0 * (s_lo[k] - s0[k])).epsilon(1e-4).scale(1e-5));
  auto c_lo = lo.trace.snapshot(1, 1), c_hi = hi.trace.snapshot(1, 1);
  for (std::size_t k = 0; k < c_lo.size(); ++k) CHECK(c_lo[k] == c_hi[k]);
}

TEST_CASE("federation: utility sanity") {
  const auto test = datagen::sample_balanced(2, 1000, {16, 2.0}, 7);
  const auto g = graphs::make_topology(TopologyKind::Star, 4);
  const auto data = two_class_clients(4, 200, 20);
  FedConfig cfg;
  cfg.t_max = 100;
  cfg.mode = AggregationMode::FedAvg;
  const auto good = run_federation(g, data, {{0.05, 0.05, 0.05, 0.05}, "uniform"}, cfg, test);
  CHECK(good.accuracy >= 0.9);

  // Centralised logistic regression on the pooled data reaches the same level.
  datagen::ClientDataset pooled;
  pooled.features.resize(800, 16);
  for (int i = 0; i < 4; ++i) {
    pooled.features.middleRows(200 * i, 200) = data[i].features;
    pooled.labels.insert(pooled.labels.end(), data[i].labels.begin(), data[i].labels.end());
  }
  Model central({16, 0, 2});
  Eigen::VectorXd grad(central.param_dim());
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd total = Eigen::VectorXd::Zero(central.param_dim());
    for (int r = 0; r < 800; ++r) {
      central.record_gradient(pooled.features.row(r).transpose(), pooled.labels[r], grad);
      total += grad;
    }
    central.params() -= 0.5 * total / 800.0;
  }
  CHECK(central.accuracy(test) >= 0.9);
  CHECK(std::abs(central.accuracy(test) - good.accuracy) < 0.05);

  // One client, one round, enormous noise: chance level.
  const auto solo = graphs::make_topology(TopologyKind::Star, 2);
  double acc = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    FedConfig c1;
    c1.t_max = 1;
    c1.seed = s;
    acc += run_federation(solo, two_class_clients(2, 100, s), {{1e6, 1e6}, "uniform"}, c1, test).accuracy / 20.0;
  }
  CHECK(std::abs(acc - 0.5) < 0.15);
}

TEST_CASE("federation: precondition errors") {
  const auto g = graphs::make_topology(TopologyKind::Ring, 3);
  const auto data = two_class_clients(3, 10, 1);
  const auto test = datagen::sample_balanced(2, 10, {16, 2.0}, 1);
  FedConfig cfg;
  cfg.t_max = 2;
  cfg.batch = 64;
  CHECK_THROWS_AS(run_federation(g, data, {{1, 1, 1}, "uniform"}, cfg, test), InvalidParameter);
  cfg.with_replacement = true;
  CHECK_NOTHROW(run_federation(g, data, {{1, 1, 1}, "uniform"}, cfg, test));
  CHECK_THROWS_AS(run_federation(g, data, {{1, 1}, "uniform"}, cfg, test), InvalidParameter);
  CHECK_THROWS_AS(run_federation(g, data, {{1, 0, 1}, "uniform"}, cfg, test), InvalidParameter);
  cfg.mode = AggregationMode::Hierarchical;
  CHECK_THROWS_AS(run_federation(g, data, {{1, 1, 1}, "uniform"}, cfg, test), InvalidParameter);
}
