#include "mmxai/explain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "mmxai/tensor.hpp"

namespace mmxai {

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void check_latent(const MultimodalModel& model, const std::vector<double>& h, const char* op) {
  if (h.size() != model.config().latent_dim()) {
    throw std::invalid_argument(std::string(op) + ": latent length " + std::to_string(h.size()) +
                                ", expected " + std::to_string(model.config().latent_dim()));
  }
}

FlipSearch scan_for_flip(const MultimodalModel& model, const std::vector<double>& h,
                         const std::vector<double>& g, std::size_t original_class, double step,
                         double lambda_max) {
  if (step <= 0.0) throw std::invalid_argument("find_flip_lambda: step must be positive");
  if (lambda_max < step) return {};
  const std::size_t count = static_cast<std::size_t>(lambda_max / step);
  for (std::size_t i = 1; i <= count; ++i) {
    const double lambda = static_cast<double>(i) * step;
    const auto probs = model.classify_latent(latent_shift(h, g, lambda));
    if (argmax(probs) != original_class) return {true, lambda};
  }
  return {};
}

}  // namespace

std::vector<double> latent_gradient(const MultimodalModel& model, const std::vector<double>& h) {
  check_latent(model, h, "latent_gradient");
  const auto& cfg = model.config();
  const std::size_t n = cfg.has_tabular() ? cfg.tab_latent : 0;
  const std::size_t m = cfg.has_image() ? cfg.img_latent : 0;

  Tape tape;
  Tensor h_tab, h_img, fused;
  if (n > 0 && m > 0) {
    h_tab = tape.input({1, n}, std::vector<double>(h.begin(), h.begin() + n), true);
    h_img = tape.input({1, m}, std::vector<double>(h.begin() + n, h.end()), true);
    fused = tape.concat_cols(h_tab, h_img);
  } else {
    fused = tape.input({1, h.size()}, h, true);
  }
  Tensor probs = model.classify(tape, fused);
  const std::size_t k = argmax(probs.value());
  tape.backward(tape.select(probs, k));

  std::vector<double> g;
  if (n > 0 && m > 0) {
    g = h_tab.grad();
    const auto gi = h_img.grad();
    g.insert(g.end(), gi.begin(), gi.end());
  } else {
    g = fused.grad();
  }
  for (double v : g) {
    if (!std::isfinite(v)) throw std::runtime_error("latent_gradient: non-finite gradient");
  }
  return g;
}

std::vector<double> latent_shift(const std::vector<double>& h, const std::vector<double>& g,
                                 double lambda) {
  if (h.size() != g.size()) {
    throw std::invalid_argument("latent_shift: length mismatch " + std::to_string(h.size()) +
                                " vs " + std::to_string(g.size()));
  }
  if (lambda < 0.0) throw std::invalid_argument("latent_shift: lambda must be >= 0");
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] - lambda * g[i];
  return out;
}

FlipSearch find_flip_lambda(const MultimodalModel& model, const std::vector<double>& h,
                            double step, double lambda_max) {
  check_latent(model, h, "find_flip_lambda");
  const auto g = latent_gradient(model, h);
  const std::size_t k = argmax(model.classify_latent(h));
  return scan_for_flip(model, h, g, k, step, lambda_max);
}

std::pair<double, double> modality_importance(const std::vector<double>& h,
                                              const std::vector<double>& h_shifted,
                                              std::size_t n, std::size_t m) {
  if (h.size() != h_shifted.size() || h.size() != n + m) {
    throw std::invalid_argument("modality_importance: latent lengths do not match n+m");
  }
  double acc_tab = 0.0, acc_img = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc_tab += std::fabs(h[i] - h_shifted[i]);
  for (std::size_t i = n; i < n + m; ++i) acc_img += std::fabs(h[i] - h_shifted[i]);
  return {n > 0 ? acc_tab / static_cast<double>(n) : 0.0,
          m > 0 ? acc_img / static_cast<double>(m) : 0.0};
}

std::vector<double> feature_importance(const std::vector<double>& recon,
                                       const std::vector<double>& recon_shifted) {
  if (recon.size() != recon_shifted.size()) {
    throw std::invalid_argument("feature_importance: shape mismatch " +
                                std::to_string(recon.size()) + " vs " +
                                std::to_string(recon_shifted.size()));
  }
  std::vector<double> out(recon.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(recon[i] - recon_shifted[i]);
  return out;
}

std::vector<std::uint8_t> binarize_importance(const std::vector<double>& importance,
                                              double threshold, bool normalize) {
  std::vector<std::uint8_t> mask(importance.size(), 0);
  if (importance.empty()) return mask;
  if (normalize) {
    const double lo = *std::min_element(importance.begin(), importance.end());
    const double hi = *std::max_element(importance.begin(), importance.end());
    if (hi <= lo) return mask;  // constant importance carries no ranking
    for (std::size_t i = 0; i < importance.size(); ++i) {
      mask[i] = (importance[i] - lo) / (hi - lo) >= threshold ? 1 : 0;
    }
  } else {
    for (std::size_t i = 0; i < importance.size(); ++i) {
      mask[i] = importance[i] >= threshold ? 1 : 0;
    }
  }
  return mask;
}

ShiftResult shift_at(const MultimodalModel& model, const std::vector<double>& h,
                     const std::vector<double>& g, double lambda) {
  check_latent(model, h, "shift_at");
  const auto& cfg = model.config();
  const std::size_t n = cfg.has_tabular() ? cfg.tab_latent : 0;

  ShiftResult r;
  r.lambda = lambda;
  r.h = latent_shift(h, g, lambda);
  if (cfg.has_tabular()) {
    r.h_tab.assign(r.h.begin(), r.h.begin() + n);
    r.tab_recon = model.decode_tabular(r.h_tab);
  }
  if (cfg.has_image()) {
    r.h_img.assign(r.h.begin() + n, r.h.end());
    r.img_recon = model.decode_image(r.h_img);
  }
  r.probs = model.classify_latent(r.h);
  return r;
}

Explanation explain_sample(const MultimodalModel& model, const std::vector<double>& x_tab,
                           const std::vector<double>& x_img, std::uint32_t sample_id,
                           const ExplainOptions& opts) {
  const auto& cfg = model.config();
  const auto base = model.forward(x_tab, x_img);
  const std::vector<double>& h = base.latent.fused;
  const std::size_t k = argmax(base.probs);

  const auto g = latent_gradient(model, h);
  const FlipSearch flip = scan_for_flip(model, h, g, k, opts.step, opts.lambda_max);
  const double lambda = flip.found ? flip.lambda : opts.lambda_max;
  const ShiftResult shifted = shift_at(model, h, g, lambda);

  Explanation e;
  e.sample_id = sample_id;
  e.lambda = lambda;
  e.flip_found = flip.found;
  e.probs = base.probs;
  e.probs_shifted = shifted.probs;
  const std::size_t n = cfg.has_tabular() ? cfg.tab_latent : 0;
  const std::size_t m = cfg.has_image() ? cfg.img_latent : 0;
  std::tie(e.delta_tab, e.delta_img) = modality_importance(h, shifted.h, n, m);
  if (cfg.has_tabular()) {
    e.feat_tab = feature_importance(base.tab_recon, shifted.tab_recon);
    e.mask_tab = binarize_importance(e.feat_tab, opts.threshold, opts.normalize);
  }
  if (cfg.has_image()) {
    e.feat_img = feature_importance(base.img_recon, shifted.img_recon);
    e.mask_img = binarize_importance(e.feat_img, opts.threshold, opts.normalize);
    e.img_side = cfg.img_side;
  }
  return e;
}

OcclusionResult occlusion_oracle(const MultimodalModel& model, const std::vector<double>& x_tab,
                                 const std::vector<double>& x_img,
                                 const std::vector<double>& train_feature_means,
                                 std::size_t patch) {
  const auto& cfg = model.config();
  if (patch == 0) throw std::invalid_argument("occlusion_oracle: patch must be positive");
  const auto base = model.forward(x_tab, x_img);
  const std::size_t k = argmax(base.probs);
  const double yk = base.probs[k];

  OcclusionResult out;
  if (cfg.has_tabular()) {
    if (train_feature_means.size() != cfg.tab_dim) {
      throw std::invalid_argument("occlusion_oracle: need one training mean per feature");
    }
    out.tab.resize(cfg.tab_dim);
    for (std::size_t j = 0; j < cfg.tab_dim; ++j) {
      std::vector<double> occluded = x_tab;
      occluded[j] = train_feature_means[j];
      std::vector<double> h = model.encode_tabular(occluded);
      if (cfg.has_image()) {
        h.insert(h.end(), base.latent.img.begin(), base.latent.img.end());
      }
      out.tab[j] = std::fabs(model.classify_latent(h)[k] - yk);
    }
  }
  if (cfg.has_image()) {
    const std::size_t side = cfg.img_side;
    out.img.assign(side * side, 0.0);
    for (std::size_t py = 0; py < side; py += patch) {
      for (std::size_t px = 0; px < side; px += patch) {
        std::vector<double> occluded = x_img;
        for (std::size_t y = py; y < std::min(side, py + patch); ++y) {
          for (std::size_t x = px; x < std::min(side, px + patch); ++x) {
            occluded[y * side + x] = 0.0;
          }
        }
        std::vector<double> h_img = model.encode_image(occluded);
        std::vector<double> h;
        if (cfg.has_tabular()) {
          h = base.latent.tab;
          h.insert(h.end(), h_img.begin(), h_img.end());
        } else {
          h = std::move(h_img);
        }
        const double delta = std::fabs(model.classify_latent(h)[k] - yk);
        for (std::size_t y = py; y < std::min(side, py + patch); ++y) {
          for (std::size_t x = px; x < std::min(side, px + patch); ++x) {
            out.img[y * side + x] = delta;
          }
        }
      }
    }
  }
  return out;
}

std::string explanation_json(const Explanation& e) {
  nlohmann::ordered_json j;
  j["sample_id"] = e.sample_id;
  j["lambda"] = e.lambda;
  j["flip_found"] = e.flip_found;
  j["y"] = e.probs;
  j["y_lambda"] = e.probs_shifted;
  j["delta_T"] = e.delta_tab;
  j["delta_I"] = e.delta_img;
  j["deltahat_T"] = e.feat_tab;
  j["deltahat_I"] = {{"shape", {e.img_side, e.img_side}}, {"data", e.feat_img}};
  j["masks"] = {
      {"tabular", std::vector<int>(e.mask_tab.begin(), e.mask_tab.end())},
      {"image",
       {{"shape", {e.img_side, e.img_side}},
        {"data", std::vector<int>(e.mask_img.begin(), e.mask_img.end())}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace mmxai
