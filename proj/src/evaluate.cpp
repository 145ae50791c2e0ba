#include "mmxai/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmxai {

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double sample_mse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double normalized_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  if (hi <= lo) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - lo) / (hi - lo);
  return acc / static_cast<double>(v.size());
}

bool is_constant(const std::vector<double>& v) {
  for (double x : v) {
    if (x != v.front()) return false;
  }
  return true;
}

}  // namespace

std::vector<double> feature_means(const Dataset& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw std::invalid_argument("feature_means: empty index set");
  std::vector<double> means(data.tab_dim, 0.0);
  for (std::size_t i : idx) {
    const auto& row = data.samples.at(i).tab;
    for (std::size_t j = 0; j < data.tab_dim; ++j) means[j] += row[j];
  }
  for (double& v : means) v /= static_cast<double>(idx.size());
  return means;
}

SplitEvaluation evaluate_split(const MultimodalModel& model, const Dataset& data,
                               const std::vector<std::size_t>& eval_idx,
                               const std::vector<double>& train_means,
                               const SplitEvalOptions& opts) {
  const auto& cfg = model.config();
  SplitEvaluation ev;
  ev.idx = eval_idx;
  double mse_tab_acc = 0.0, mse_img_acc = 0.0;
  for (std::size_t i : eval_idx) {
    const auto& s = data.samples.at(i);
    const std::vector<double> x_tab = cfg.has_tabular() ? s.tab : std::vector<double>{};
    const std::vector<double> x_img = cfg.has_image() ? s.img : std::vector<double>{};
    const auto fwd = model.forward(x_tab, x_img);
    ev.predictions.push_back(static_cast<int>(argmax(fwd.probs)));
    ev.labels.push_back(s.label);
    if (cfg.has_tabular()) mse_tab_acc += sample_mse(s.tab, fwd.tab_recon);
    if (cfg.has_image()) mse_img_acc += sample_mse(s.img, fwd.img_recon);

    if (!opts.with_agreement) {
      ev.flip_found.push_back(0);
      continue;
    }
    const Explanation e = explain_sample(model, x_tab, x_img, s.id, opts.explain);
    ev.flip_found.push_back(e.flip_found ? 1 : 0);
    if (cfg.has_tabular()) {
      ev.iou_tab.push_back(iou(e.mask_tab, s.tab_mask));
    }
    if (cfg.has_image()) {
      ev.iou_img.push_back(iou(e.mask_img, s.img_mask));
    }
    if (cfg.has_tabular()) {
      const OcclusionResult occ =
          occlusion_oracle(model, x_tab, x_img, train_means, opts.occlusion_patch);
      if (!is_constant(e.feat_tab) && !is_constant(occ.tab)) {
        ev.rho.push_back(pearson(e.feat_tab, occ.tab));
      }
      ev.shift_score.push_back(normalized_mean(e.feat_tab));
      ev.occl_score.push_back(normalized_mean(occ.tab));
    }
  }
  const double n = static_cast<double>(eval_idx.size());
  ev.mse_tab = cfg.has_tabular() && n > 0 ? mse_tab_acc / n : 0.0;
  ev.mse_img = cfg.has_image() && n > 0 ? mse_img_acc / n : 0.0;
  return ev;
}

EvalReport make_report(int fold, const SplitEvaluation& ev) {
  EvalReport r;
  r.fold = fold;
  r.n_test = ev.idx.size();
  const ClassificationMetrics cm = classification_metrics(ev.predictions, ev.labels);
  r.accuracy = cm.accuracy;
  r.sensitivity = cm.sensitivity;
  r.specificity = cm.specificity;
  r.mse_tab = ev.mse_tab;
  r.mse_img = ev.mse_img;
  std::size_t correct = 0, correct_flipped = 0;
  for (std::size_t i = 0; i < ev.predictions.size(); ++i) {
    if (ev.predictions[i] == ev.labels[i]) {
      ++correct;
      if (ev.flip_found[i]) ++correct_flipped;
    }
  }
  r.flip_rate = correct > 0 ? static_cast<double>(correct_flipped) / static_cast<double>(correct)
                            : 0.0;
  r.rho = mean_sd(ev.rho);
  r.iou_tab = mean_sd(ev.iou_tab);
  r.iou_img = mean_sd(ev.iou_img);
  if (ev.shift_score.size() >= 3) {
    try {
      const TTestResult tt = paired_ttest(ev.shift_score, ev.occl_score);
      r.t_stat = tt.t;
      r.p_value = tt.p;
    } catch (const std::invalid_argument&) {
      r.t_stat = 0.0;
      r.p_value = 1.0;  // identical score vectors: no detectable difference
    }
  }
  return r;
}

}  // namespace mmxai
