#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmxai/model.hpp"

namespace mmxai {

/// Shifted latents, their reconstructions and the shifted prediction at one
/// lambda.
struct ShiftResult {
  double lambda = 0.0;
  std::vector<double> h_tab;  // h_T^lambda
  std::vector<double> h_img;  // h_I^lambda
  std::vector<double> h;      // h^lambda = concat of the above
  std::vector<double> probs;  // y^lambda
  std::vector<double> tab_recon;
  std::vector<double> img_recon;
};

/// Full latent-shift output for one sample.
struct Explanation {
  std::uint32_t sample_id = 0;
  double lambda = 0.0;  // flip magnitude (lambda_max when no flip was found)
  bool flip_found = false;
  std::vector<double> probs;          // y
  std::vector<double> probs_shifted;  // y^lambda
  double delta_tab = 0.0;             // Delta_T
  double delta_img = 0.0;             // Delta_I
  std::vector<double> feat_tab;       // |x_T reconstruction difference|
  std::vector<double> feat_img;       // per-pixel importance, img_side^2
  std::vector<std::uint8_t> mask_tab;
  std::vector<std::uint8_t> mask_img;
  std::size_t img_side = 0;
};

/// Gradient of the predicted-class posterior y[argmax y] with respect to the
/// fused latent; the first n coordinates are the h_T slice.
std::vector<double> latent_gradient(const MultimodalModel& model, const std::vector<double>& h);

/// h - lambda * g, elementwise.
std::vector<double> latent_shift(const std::vector<double>& h, const std::vector<double>& g,
                                 double lambda);

struct FlipSearch {
  bool found = false;
  double lambda = 0.0;
};

/// Scans lambda over {step, 2*step, ..., lambda_max} with the gradient frozen
/// at the original h and returns the first grid point whose prediction
/// differs from the original argmax. Not finding one is a normal outcome.
FlipSearch find_flip_lambda(const MultimodalModel& model, const std::vector<double>& h,
                            double step = 10.0, double lambda_max = 10000.0);

/// (Delta_T, Delta_I): per-modality mean absolute latent displacement.
std::pair<double, double> modality_importance(const std::vector<double>& h,
                                              const std::vector<double>& h_shifted,
                                              std::size_t n, std::size_t m);

/// Elementwise |recon - recon_shifted|.
std::vector<double> feature_importance(const std::vector<double>& recon,
                                       const std::vector<double>& recon_shifted);

/// Min-max normalizes per instance (constant input maps to all zeros), then
/// thresholds. With normalize=false the raw values are thresholded directly.
std::vector<std::uint8_t> binarize_importance(const std::vector<double>& importance,
                                              double threshold = 0.5, bool normalize = true);

/// Decodes and classifies the latents shifted by lambda along g.
ShiftResult shift_at(const MultimodalModel& model, const std::vector<double>& h,
                     const std::vector<double>& g, double lambda);

struct ExplainOptions {
  double step = 10.0;
  double lambda_max = 10000.0;
  double threshold = 0.5;
  bool normalize = true;
};

/// Encode, find the class flip, decode both shifted latents and derive all
/// importance quantities. When no flip occurs within lambda_max the deltas
/// are reported at lambda_max with flip_found=false.
Explanation explain_sample(const MultimodalModel& model, const std::vector<double>& x_tab,
                           const std::vector<double>& x_img, std::uint32_t sample_id,
                           const ExplainOptions& opts = {});

/// Independent attribution oracle: |change of the predicted-class posterior|
/// when a tabular feature is replaced by its training mean, or an image patch
/// is zeroed. The image map is constant within each patch.
struct OcclusionResult {
  std::vector<double> tab;
  std::vector<double> img;
};

OcclusionResult occlusion_oracle(const MultimodalModel& model, const std::vector<double>& x_tab,
                                 const std::vector<double>& x_img,
                                 const std::vector<double>& train_feature_means,
                                 std::size_t patch = 4);

/// JSON document with the documented schema (sample_id, lambda, flip_found,
/// y, y_lambda, delta_T, delta_I, deltahat_T, deltahat_I, masks).
std::string explanation_json(const Explanation& e);

}  // namespace mmxai
