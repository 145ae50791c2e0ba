#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mmxai {

struct ClassificationMetrics {
  double accuracy = 0.0;
  std::optional<double> sensitivity;  // absent when no positives in labels
  std::optional<double> specificity;  // absent when no negatives in labels
};

/// Binary metrics with label 1 ("severe") as the positive class.
ClassificationMetrics classification_metrics(const std::vector<int>& predictions,
                                             const std::vector<int>& labels);

/// Sample Pearson correlation; throws on zero variance rather than producing NaN.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct TTestResult {
  double t = 0.0;
  double p = 0.0;  // two-sided
};

/// Paired t-test on a-b with len-1 degrees of freedom; p from the t CDF via
/// the regularized incomplete beta continued fraction.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

/// Exposed for oracle tests; absolute accuracy well below 1e-10.
double regularized_incomplete_beta(double a, double b, double x);

/// |a AND b| / |a OR b|; two empty masks agree perfectly (1).
double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};
MeanSd mean_sd(const std::vector<double>& values);

/// Per-fold evaluation record.
struct EvalReport {
  int fold = 0;
  std::size_t n_test = 0;
  double accuracy = 0.0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  double mse_tab = 0.0;
  double mse_img = 0.0;
  double flip_rate = 0.0;
  MeanSd rho;      // per-sample pearson(latent-shift, occlusion) over test set
  double t_stat = 0.0;
  double p_value = 0.0;
  MeanSd iou_tab;  // binarized importance vs planted masks
  MeanSd iou_img;
};

std::string report_json(const EvalReport& report);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& report);

}  // namespace mmxai
