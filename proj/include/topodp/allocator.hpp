#pragma once

#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace topodp::allocator {

/// DP-SGD observation window and batch size; a = t_max / (2 batch^2) nats.
class MechanismParams {
 public:
  MechanismParams(int t_max, int batch);

  int t_max() const noexcept { return t_max_; }
  int batch() const noexcept { return batch_; }
  double a() const noexcept { return a_; }

 private:
  int t_max_;
  int batch_;
  double a_;
};

struct AllocationResult {
  double k_star = 0.0;
  std::vector<double> sigma_sq;
  double k_uniform = 0.0;
  double gap = 0.0;
  double budget = 0.0;
  double residual = 0.0;  // |g(K*) - U|
  int iterations = 0;
};

/// g(K) = sum_i a / (K - ell_i); defined for K > max ell.
double budget_function(double a, std::span<const double> ell, double k);

/// Balanced min-max allocation: K* is the root of g(K) = U on (max ell, inf),
/// sigma*_i^2 = a / (K* - ell_i).
AllocationResult solve_balanced(const MechanismParams& params, std::span<const double> ell,
                                double budget);

/// Worst-case bound of the uniform allocation sigma_i^2 = U/n: a n / U + max ell.
double uniform_bound(const MechanismParams& params, std::span<const double> ell, double budget);

/// Per-client MI bound: t_max / (2 sigma^2 |B|^2) + ell_i.
double per_client_bound(double sigma_sq, double ell, const MechanismParams& params);

/// Per-round Gaussian-mechanism KL for noise multiplier sigma: 1 / (2 sigma^2 |B|^2).
double kl_per_round(double sigma, int batch);

/// KL( N(mu, s^2 I) || N(mu + shift, s^2 I) ) for isotropic Gaussians.
double gaussian_shift_kl(std::span<const double> shift, double s);

/// Closed-form adjacent-output KL: noise std sigma*C on the averaged gradient,
/// sensitivity C/|B| along one coordinate.
double adjacent_output_kl(double sigma, double clip_c, int batch);

struct KktReport {
  double activeness_residual = 0.0;  // max_i |a/sigma_i^2 + ell_i - K*|
  double budget_residual = 0.0;      // |sum sigma_i^2 - U|
  bool monotone = false;             // g strictly decreasing on the probe grid
  bool brackets = false;             // g(K* - h) > U > g(K* + h)
  bool locally_optimal = false;      // +-1% budget-preserving perturbations never lower max bound
  std::vector<int> below_floor;      // clients with sigma^2 < floor
  bool pass() const noexcept { return activeness_residual <= 1e-8 && budget_residual <= 1e-9 && monotone && brackets && locally_optimal; }
};

KktReport verify_kkt(const AllocationResult& result, const MechanismParams& params,
                     std::span<const double> ell, double budget, double sigma_floor = 1e-6);

nlohmann::json to_json(const AllocationResult& r);

}  // namespace topodp::allocator
