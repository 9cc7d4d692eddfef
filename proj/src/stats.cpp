#include "topodp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "topodp/common.hpp"

namespace topodp::stats {

namespace {

void check_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidParameter("length mismatch");
  if (a.empty()) throw InvalidParameter("empty input");
}

// Continued fraction for I_x(a, b), modified Lentz.
double beta_cf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NonConvergence("incomplete beta continued fraction did not converge");
}

// Upper tail P(T >= t).
double student_t_sf(double t, double df) {
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double t2 = t * t;
  // Near zero df/(df+t^2) rounds to 1; use the complementary form there.
  if (t2 < df) {
    const double centre = 0.5 * incomplete_beta(0.5, 0.5 * df, t2 / (df + t2));
    return t > 0 ? 0.5 - centre : 0.5 + centre;
  }
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t2));
  return t > 0 ? tail : 1.0 - tail;
}

}  // namespace

double mean(std::span<const double> x) {
  if (x.empty()) throw InvalidParameter("mean of empty input");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double population_variance(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

double calibration_loss(std::span<const double> p_hat, std::span<const double> p) {
  check_same_length(p_hat, p);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p_hat[i] - p[i]) * (p_hat[i] - p[i]);
  return s / static_cast<double>(p.size());
}

std::vector<double> squared_errors(std::span<const double> p_hat, std::span<const double> p) {
  check_same_length(p_hat, p);
  std::vector<double> e(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) e[i] = (p_hat[i] - p[i]) * (p_hat[i] - p[i]);
  return e;
}

double top_k_recovery(std::span<const double> p_hat, std::span<const double> p, int k) {
  check_same_length(p_hat, p);
  const int n = static_cast<int>(p.size());
  if (k < 1 || k > n) throw InvalidParameter("k must lie in [1, n]");
  auto top = [&](std::span<const double> v) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] > v[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  const auto a = top(p_hat), b = top(p);
  std::vector<int> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / k;
}

std::optional<double> auroc(std::span<const double> p_hat, std::span<const double> p, double tau,
                            int min_n) {
  check_same_length(p_hat, p);
  const std::size_t n = p.size();
  if (static_cast<int>(n) < min_n) return std::nullopt;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p_hat[a] < p_hat[b]; });
  // Average ranks over tied runs.
  std::vector<double> rank(n);
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo;
    while (hi + 1 < n && p_hat[idx[hi + 1]] == p_hat[idx[lo]]) ++hi;
    const double r = 0.5 * static_cast<double>(lo + hi) + 1.0;
    for (std::size_t k = lo; k <= hi; ++k) rank[idx[k]] = r;
    lo = hi + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (p[i] > tau) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double median(std::vector<double> x) {
  if (x.empty()) throw InvalidParameter("median of empty input");
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidParameter("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw InvalidParameter("degrees of freedom must be positive");
  return student_t_sf(-t, df);
}

double student_t_quantile(double q, double df) {
  if (!(q > 0.0 && q < 1.0)) throw InvalidParameter("quantile level must lie in (0, 1)");
  double lo = -1.0, hi = 1.0;
  while (student_t_cdf(lo, df) > q) lo *= 2.0;
  while (student_t_cdf(hi, df) < q) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

EquivalenceResult tost_equivalence(std::span<const double> diffs, double margin) {
  if (diffs.size() < 2) throw InvalidParameter("TOST needs at least two pairs");
  if (!(margin > 0.0)) throw InvalidParameter("equivalence margin must be positive");
  EquivalenceResult r;
  r.n_pairs = static_cast<int>(diffs.size());
  const double n = static_cast<double>(diffs.size());
  r.mean_diff = mean(diffs);
  for (double d : diffs) r.mean_abs_diff += std::abs(d);
  r.mean_abs_diff /= n;
  double ss = 0.0;
  for (double d : diffs) ss += (d - r.mean_diff) * (d - r.mean_diff);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double se = sd / std::sqrt(n);
  const double df = n - 1.0;
  if (!(se > 0.0)) {
    // Degenerate: the sample mean is exact.
    r.ci_lo = r.ci_hi = r.mean_diff;
    r.t_p = r.mean_diff == 0.0 ? 1.0 : 0.0;
    r.tost_p = std::abs(r.mean_diff) < margin ? 0.0 : 1.0;
    return r;
  }
  const double q = student_t_quantile(0.975, df);
  r.ci_lo = r.mean_diff - q * se;
  r.ci_hi = r.mean_diff + q * se;
  r.t_p = std::min(1.0, 2.0 * student_t_sf(std::abs(r.mean_diff / se), df));
  const double p_lower = student_t_sf((r.mean_diff + margin) / se, df);   // H0: mean <= -margin
  const double p_upper = student_t_sf((margin - r.mean_diff) / se, df);   // H0: mean >= +margin
  r.tost_p = std::max(p_lower, p_upper);
  return r;
}

double paired_bootstrap(std::span<const double> a, std::span<const double> b, int reps,
                        std::uint64_t seed, Alternative alt) {
  check_same_length(a, b);
  if (reps < 1) throw InvalidParameter("bootstrap needs at least one replicate");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  Rng rng(derive_seed(seed, kBootstrap));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  long at_most_zero = 0, at_least_zero = 0;
  for (int r = 0; r < reps; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += d[pick(rng)];
    if (s <= 0.0) ++at_most_zero;
    if (s >= 0.0) ++at_least_zero;
  }
  const double denom = reps + 1.0;
  const double p_greater = (1.0 + at_most_zero) / denom;
  const double p_less = (1.0 + at_least_zero) / denom;
  switch (alt) {
    case Alternative::Greater: return p_greater;
    case Alternative::Less: return p_less;
    case Alternative::TwoSided: break;
  }
  return std::min(1.0, 2.0 * std::min(p_greater, p_less));
}

std::vector<double> holm_correction(std::span<const double> p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return p[x] < p[y]; });
  std::vector<double> adj(m);
  double running = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    running = std::max(running, std::min(1.0, static_cast<double>(m - k) * p[order[k]]));
    adj[order[k]] = running;
  }
  return adj;
}

}  // namespace topodp::stats
