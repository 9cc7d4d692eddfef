#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace topodp::stats {

double mean(std::span<const double> x);
/// Population (1/n) variance.
double population_variance(std::span<const double> x);

/// (1/n) sum (p_hat - p)^2.
double calibration_loss(std::span<const double> p_hat, std::span<const double> p);
/// Per-client squared errors, the paired unit for bootstrap tests.
std::vector<double> squared_errors(std::span<const double> p_hat, std::span<const double> p);

inline double channel_lift(double baseline_loss, double channel_loss) { return baseline_loss - channel_loss; }

/// |top-k(p_hat) & top-k(p)| / k; ties broken toward the lower index.
double top_k_recovery(std::span<const double> p_hat, std::span<const double> p, int k);

/// Mann-Whitney AUROC of p_hat against labels 1[p_i > tau]; ties count 0.5.
/// Empty when n < min_n or either label class is empty.
std::optional<double> auroc(std::span<const double> p_hat, std::span<const double> p, double tau,
                            int min_n = 20);

double median(std::vector<double> x);

/// Regularised incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
/// Student-t CDF with `df` degrees of freedom.
double student_t_cdf(double t, double df);
/// Inverse of student_t_cdf for q in (0, 1).
double student_t_quantile(double q, double df);

struct EquivalenceResult {
  double mean_diff = 0.0;
  double mean_abs_diff = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double t_p = 1.0;     // two-sided paired t
  double tost_p = 1.0;  // max of the two one-sided p-values
  int n_pairs = 0;
};

/// Paired t-test and TOST equivalence on differences (same units as margin).
EquivalenceResult tost_equivalence(std::span<const double> diffs, double margin);

enum class Alternative { TwoSided, Greater, Less };

/// Paired bootstrap on mean(a - b), resampling indices with replacement.
/// Greater tests mean(a - b) > 0. p-values use the (1 + count) / (reps + 1) form.
double paired_bootstrap(std::span<const double> a, std::span<const double> b, int reps,
                        std::uint64_t seed, Alternative alt = Alternative::TwoSided);

/// Holm-Bonferroni step-down adjustment; returns adjusted p in input order.
std::vector<double> holm_correction(std::span<const double> p);

}  // namespace topodp::stats
