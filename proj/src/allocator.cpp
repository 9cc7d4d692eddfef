#include "topodp/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "topodp/common.hpp"

namespace topodp::allocator {

namespace {

constexpr int kIterationCap = 200;

double max_of(std::span<const double> ell) {
  if (ell.empty()) throw InvalidParameter("leverage vector is empty");
  double m = ell[0];
  for (double l : ell) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw InvalidParameter("leverage must be finite and >= 0");
    m = std::max(m, l);
  }
  return m;
}

void check_budget(double budget) {
  if (!(budget > 0.0) || !std::isfinite(budget)) throw InvalidParameter("budget U must be > 0");
}

}  // namespace

MechanismParams::MechanismParams(int t_max, int batch) : t_max_(t_max), batch_(batch) {
  if (t_max < 1) throw InvalidParameter("t_max must be >= 1");
  if (batch < 1) throw InvalidParameter("batch size must be >= 1");
  a_ = static_cast<double>(t_max) / (2.0 * static_cast<double>(batch) * static_cast<double>(batch));
}

double budget_function(double a, std::span<const double> ell, double k) {
  double g = 0.0;
  for (double l : ell) g += a / (k - l);
  return g;
}

AllocationResult solve_balanced(const MechanismParams& params, std::span<const double> ell,
                                double budget) {
  check_budget(budget);
  const double l_max = max_of(ell);
  const double a = params.a();
  const double n = static_cast<double>(ell.size());
  auto g = [&](double k) { return budget_function(a, ell, k); };

  // Lower end: just above the pole. g there is ~a/eps and exceeds any sane U;
  // if it does not, the root is within one ulp of max ell.
  double lo = l_max + 1e-15 * (1.0 + std::abs(l_max));
  if (lo <= l_max) lo = std::nextafter(l_max, std::numeric_limits<double>::infinity());
  while (g(lo) <= budget) {
    double next = l_max + (lo - l_max) / 2.0;
    if (next <= l_max) break;
    lo = next;
  }

  double offset = a * n / budget;
  double hi = l_max + offset;
  while (g(hi) >= budget) {
    offset *= 2.0;
    hi = l_max + offset;
  }

  int it = 0;
  if (g(lo) > budget) {
    // Bisect until the bracket collapses to adjacent doubles; width <= 1e-12
    // is reached long before, but the budget residual needs the extra digits
    // when g is steep near the pole.
    for (;; ++it) {
      if (it >= kIterationCap) throw NonConvergence("bisection exceeded iteration cap");
      const double mid = lo + (hi - lo) / 2.0;
      if (mid <= lo || mid >= hi) break;
      if (g(mid) > budget)
        lo = mid;
      else
        hi = mid;
    }
  } else {
    hi = lo;
  }

  const double k_uniform = a * n / budget + l_max;
  // g(K_uniform) <= U, so K_uniform bounds the root; the cap only absorbs last-ulp rounding.
  const double k_star = std::min(k_uniform, std::abs(g(lo) - budget) <= std::abs(g(hi) - budget) ? lo : hi);

  AllocationResult r;
  r.k_star = k_star;
  r.budget = budget;
  r.iterations = it;
  r.sigma_sq.resize(ell.size());
  double total = 0.0;
  for (std::size_t i = 0; i < ell.size(); ++i) total += (r.sigma_sq[i] = a / (k_star - ell[i]));
  r.residual = std::abs(total - budget);
  r.k_uniform = k_uniform;
  r.gap = r.k_uniform - r.k_star;
  return r;
}

double uniform_bound(const MechanismParams& params, std::span<const double> ell, double budget) {
  check_budget(budget);
  return params.a() * static_cast<double>(ell.size()) / budget + max_of(ell);
}

double per_client_bound(double sigma_sq, double ell, const MechanismParams& params) {
  if (!(sigma_sq > 0.0)) throw InvalidParameter("noise variance must be positive");
  return static_cast<double>(params.t_max()) /
             (2.0 * sigma_sq * params.batch() * static_cast<double>(params.batch())) +
         ell;
}

double kl_per_round(double sigma, int batch) {
  if (!(sigma > 0.0)) throw InvalidParameter("noise multiplier must be positive");
  if (batch < 1) throw InvalidParameter("batch size must be >= 1");
  const double b = static_cast<double>(batch);
  return 1.0 / (2.0 * sigma * sigma * b * b);
}

double gaussian_shift_kl(std::span<const double> shift, double s) {
  if (!(s > 0.0)) throw InvalidParameter("standard deviation must be positive");
  double sq = 0.0;
  for (double d : shift) sq += d * d;
  return sq / (2.0 * s * s);
}

double adjacent_output_kl(double sigma, double clip_c, int batch) {
  if (!(clip_c > 0.0)) throw InvalidParameter("clipping norm must be positive");
  if (batch < 1) throw InvalidParameter("batch size must be >= 1");
  // Swapping one record moves the clipped average by at most C/|B|.
  const double shift[] = {clip_c / static_cast<double>(batch)};
  return gaussian_shift_kl(shift, sigma * clip_c);
}

KktReport verify_kkt(const AllocationResult& result, const MechanismParams& params,
                     std::span<const double> ell, double budget, double sigma_floor) {
  KktReport rep;
  const double a = params.a();
  const std::size_t n = ell.size();
  const double l_max = max_of(ell);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s2 = result.sigma_sq.at(i);
    total += s2;
    rep.activeness_residual = std::max(rep.activeness_residual, std::abs(a / s2 + ell[i] - result.k_star));
    if (s2 < sigma_floor) rep.below_floor.push_back(static_cast<int>(i));
  }
  rep.budget_residual = std::abs(total - budget);

  const double span = result.k_star - l_max;
  const double h = 0.1 * span;
  rep.brackets = budget_function(a, ell, result.k_star - h) > budget &&
                 budget_function(a, ell, result.k_star + h) < budget;

  rep.monotone = true;
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 40; ++k) {
    const double kk = l_max + span * std::pow(2.0, (k - 20) / 4.0);
    const double gk = budget_function(a, ell, kk);
    if (!(gk < prev)) rep.monotone = false;
    prev = gk;
  }

  rep.locally_optimal = true;
  for (std::size_t i = 0; n > 1 && i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    std::vector<double> s = result.sigma_sq;
    const double delta = 0.01 * s[i];
    if (s[j] <= delta) continue;
    s[i] += delta;
    s[j] -= delta;
    double worst = 0.0;
    for (std::size_t m = 0; m < n; ++m) worst = std::max(worst, a / s[m] + ell[m]);
    if (!(worst > result.k_star)) rep.locally_optimal = false;
  }
  return rep;
}

nlohmann::json to_json(const AllocationResult& r) {
  return {{"k_star", r.k_star},   {"sigma_sq", r.sigma_sq}, {"k_uniform", r.k_uniform},
          {"gap", r.gap},         {"budget", r.budget},     {"residual", r.residual},
          {"iterations", r.iterations}};
}

}  // namespace topodp::allocator
