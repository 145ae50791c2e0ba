#pragma once

#include <cstdint>
#include <vector>

#include "mmxai/data.hpp"
#include "mmxai/explain.hpp"
#include "mmxai/metrics.hpp"
#include "mmxai/model.hpp"

namespace mmxai {

struct SplitEvalOptions {
  ExplainOptions explain;
  std::size_t occlusion_patch = 4;
  bool with_agreement = true;  // explanations + occlusion oracle per sample
};

/// Per-sample evaluation results over one index set.
struct SplitEvaluation {
  std::vector<std::size_t> idx;
  std::vector<int> predictions;
  std::vector<int> labels;
  std::vector<std::uint8_t> flip_found;
  double mse_tab = 0.0;
  double mse_img = 0.0;
  std::vector<double> iou_tab;      // binarized importance vs planted mask
  std::vector<double> iou_img;
  std::vector<double> rho;          // pearson(feat_tab, occlusion tab), per sample
  std::vector<double> shift_score;  // per-sample mean of min-max normalized feat_tab
  std::vector<double> occl_score;   // same for the occlusion importances
};

/// Mean of each preprocessed tabular feature over the given rows.
std::vector<double> feature_means(const Dataset& data, const std::vector<std::size_t>& idx);

SplitEvaluation evaluate_split(const MultimodalModel& model, const Dataset& data,
                               const std::vector<std::size_t>& eval_idx,
                               const std::vector<double>& train_means,
                               const SplitEvalOptions& opts = {});

/// Aggregates a SplitEvaluation into the per-fold report. The flip rate is
/// taken over correctly classified samples; the paired t-test compares the
/// per-sample scores of the latent-shift and occlusion importances.
EvalReport make_report(int fold, const SplitEvaluation& ev);

}  // namespace mmxai
