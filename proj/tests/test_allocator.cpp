#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <nlohmann/json.hpp>

#include "topodp/allocator.hpp"
#include "topodp/common.hpp"

using namespace topodp;
using namespace topodp::allocator;

namespace {

// MechanismParams fixes a through (t_max, batch); a = 1 needs t_max = 2, batch = 1.
const MechanismParams kUnitA{2, 1};
const MechanismParams kSettingC{100, 64};

}  // namespace

TEST_CASE("mechanism constant") {
  CHECK(kUnitA.a() == 1.0);
  CHECK(kSettingC.a() == 100.0 / 8192.0);
  CHECK_THROWS_AS(MechanismParams(0, 64), InvalidParameter);
  CHECK_THROWS_AS(MechanismParams(10, 0), InvalidParameter);
}

TEST_CASE("closed-form small cases") {
  const std::vector<double> zeros = {0.0, 0.0};
  const auto r = solve_balanced(kUnitA, zeros, 2.0);
  CHECK(r.k_star == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.sigma_sq[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.sigma_sq[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.k_uniform == 1.0);
  CHECK(r.gap <= 1e-12);

  const std::vector<double> half = {0.5};
  const auto s = solve_balanced(kUnitA, half, 1.0);
  CHECK(s.k_star == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(s.sigma_sq[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("uniform bound") {
  const std::vector<double> zeros(50, 0.0);
  CHECK(std::abs(uniform_bound(kSettingC, zeros, 0.5) - 1.2207) < 5e-5);
  const std::vector<double> ell = {0.0, 0.5};
  CHECK(uniform_bound(kUnitA, ell, 2.0) == 1.5);
  const std::vector<double> flat(7, 0.8);
  const auto r = solve_balanced(kSettingC, flat, 0.3);
  CHECK(r.k_star == doctest::Approx(uniform_bound(kSettingC, flat, 0.3)).epsilon(1e-12));
  CHECK_THROWS_AS(uniform_bound(kSettingC, flat, 0.0), InvalidParameter);
}

TEST_CASE("star n=50 gap at eta=1") {
  std::vector<double> ell(50, 1.0 / 1.96);
  ell[0] = 25.0;
  const auto r = solve_balanced(kSettingC, ell, 0.5);
  CHECK(std::abs(r.gap - 1.195) <= 0.005);
  CHECK(verify_kkt(r, kSettingC, ell, 0.5).pass());
}

TEST_CASE("per-client bound and per-round KL") {
  CHECK(per_client_bound(1.0, 0.0, kSettingC) == doctest::Approx(100.0 / 8192.0).epsilon(1e-15));
  CHECK(per_client_bound(1.0, 0.5, kSettingC) == doctest::Approx(0.5 + 100.0 / 8192.0).epsilon(1e-15));
  CHECK_THROWS_AS(per_client_bound(0.0, 0.0, kSettingC), InvalidParameter);

  CHECK(kl_per_round(1.0, 1) == 0.5);
  CHECK(kl_per_round(1.0, 64) == 1.0 / 8192.0);
  CHECK(100.0 * kl_per_round(1.0, 64) == doctest::Approx(per_client_bound(1.0, 0.0, kSettingC)).epsilon(1e-15));
  CHECK_THROWS_AS(kl_per_round(0.0, 1), InvalidParameter);

  for (double sigma : {0.3, 1.0, 2.7})
    for (int b : {1, 16, 64})
      for (double c : {0.5, 1.0, 4.0}) CHECK(std::abs(adjacent_output_kl(sigma, c, b) - kl_per_round(sigma, b)) <= 1e-12);
  const double shift[] = {3.0, 4.0};
  CHECK(gaussian_shift_kl(shift, 5.0) == doctest::Approx(0.5));
}

TEST_CASE("per-client bound at the optimum equals K*") {
  const std::vector<double> ell = {0.0, 0.3, 2.0, 0.7, 0.7};
  const auto r = solve_balanced(kSettingC, ell, 0.8);
  for (std::size_t i = 0; i < ell.size(); ++i)
    CHECK(std::abs(per_client_bound(r.sigma_sq[i], ell[i], kSettingC) - r.k_star) <= 1e-8);
}

TEST_CASE("random instances: exactness, dominance, degeneracy") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nd(2, 100);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.1, 10.0), ad(0.001, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = nd(rng);
    const double budget = ud(rng);
    // a = t_max / 2048 spans roughly (0.001, 1)
    const MechanismParams mp(std::max(2, static_cast<int>(ad(rng) * 2048.0)), 32);
    std::vector<double> ell(n);
    const bool flat = rep % 10 == 0;
    for (auto& l : ell) l = flat ? 0.37 : std::abs(z(rng));
    const auto r = solve_balanced(mp, ell, budget);
    const auto k = verify_kkt(r, mp, ell, budget);
    CHECK(r.residual <= 1e-9);
    CHECK(k.activeness_residual <= 1e-8);
    CHECK(k.pass());
    CHECK(r.k_star > *std::max_element(ell.begin(), ell.end()));
    CHECK(r.k_star <= r.k_uniform);
    if (flat)
      CHECK(r.gap <= 1e-10);
    else
      CHECK(r.gap > 0.0);
  }
}

TEST_CASE("K* strictly decreases in U") {
  const std::vector<double> ell = {0.1, 0.9, 0.4};
  double prev = INFINITY;
  for (double u : {0.05, 0.1, 0.5, 1.0, 5.0}) {
    const double k = solve_balanced(kSettingC, ell, u).k_star;
    CHECK(k < prev);
    prev = k;
  }
}

TEST_CASE("hub limit") {
  const double limit = kSettingC.a() * 49 / 0.5;
  CHECK(std::abs(limit - 1.1963) < 5e-5);
  double prev_err = INFINITY;
  for (double big : {1e2, 1e3, 1e4}) {
    std::vector<double> ell(50, 0.0);
    ell[0] = big;
    const double err = std::abs(solve_balanced(kSettingC, ell, 0.5).gap - limit);
    CHECK(err <= prev_err);
    prev_err = err;
  }
  CHECK(prev_err <= 1e-3);
}

TEST_CASE("KKT report flags") {
  const std::vector<double> ell = {0.0, 1.0, 3.0};
  auto r = solve_balanced(kSettingC, ell, 1.0);
  auto k = verify_kkt(r, kSettingC, ell, 1.0);
  CHECK(k.brackets);
  CHECK(k.monotone);
  CHECK(k.locally_optimal);
  CHECK(k.below_floor.empty());

  // Tiny budget puts every variance below the floor; the report flags, the solver still answers.
  const auto tiny = solve_balanced(kSettingC, ell, 1e-7);
  const auto kt = verify_kkt(tiny, kSettingC, ell, 1e-7);
  CHECK(kt.below_floor.size() == 3);
  CHECK(tiny.residual <= 1e-9);

  // A non-optimal allocation fails activeness.
  r.sigma_sq = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK_FALSE(verify_kkt(r, kSettingC, ell, 1.0).pass());
}

TEST_CASE("invalid inputs and json") {
  const std::vector<double> ell = {0.0, 1.0};
  CHECK_THROWS_AS(solve_balanced(kSettingC, ell, 0.0), InvalidParameter);
  CHECK_THROWS_AS(solve_balanced(kSettingC, ell, -1.0), InvalidParameter);
  const std::vector<double> neg = {0.0, -1.0};
  CHECK_THROWS_AS(solve_balanced(kSettingC, neg, 1.0), InvalidParameter);
  const std::vector<double> none;
  CHECK_THROWS_AS(solve_balanced(kSettingC, none, 1.0), InvalidParameter);
  const auto j = to_json(solve_balanced(kSettingC, ell, 1.0));
  for (const char* key : {"k_star", "sigma_sq", "k_uniform", "gap", "budget", "residual"}) CHECK(j.contains(key));
}
