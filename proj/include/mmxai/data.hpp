#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmxai {

/// One patient analogue. Tabular cells may be NaN (missing) before
/// preprocessing; images are always in [0,1].
struct MultimodalSample {
  std::uint32_t id = 0;
  std::uint32_t group = 0;
  int label = 0;  // 0 = mild, 1 = severe
  std::vector<double> tab;
  std::vector<double> img;
  std::vector<std::uint8_t> tab_mask;  // planted informative features
  std::vector<std::uint8_t> img_mask;  // planted informative region
};

struct Dataset {
  std::size_t tab_dim = 0;
  std::size_t img_side = 0;
  std::vector<MultimodalSample> samples;

  std::vector<int> labels() const;
  std::vector<std::uint32_t> groups() const;
};

using Table = std::vector<std::vector<double>>;  // rows x features, NaN = missing

struct SynthConfig {
  std::size_t n_samples = 2000;
  std::size_t tab_dim = 16;
  std::size_t n_informative = 4;  // |S_T|
  std::size_t n_categorical = 2;  // leading features are 0/1
  std::size_t img_side = 32;
  std::size_t region = 8;  // planted square side
  double separation = 0.5;
  double noise = 0.12;
  /// Per-modality probability that a sample's planted evidence follows the
  /// other class's distribution (region at the mirrored location, informative
  /// features drawn with the flipped mean). Drawn independently per modality.
  /// Bounds the attainable posterior away from saturation so the class flip
  /// stays reachable within the latent-shift search grid.
  double evidence_swap_rate = 0.07;
  std::size_t n_groups = 6;
  std::vector<std::size_t> group_sizes;  // optional; sum must equal n_samples
  double missing_rate = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  /// Planted feature indices, evenly spread over [0, tab_dim).
  std::vector<std::size_t> informative_indices() const;
};

/// Two-class multimodal data with planted ground truth: the classes differ in
/// mean exactly on the informative tabular features and inside one
/// class-specific image region; everything else is Gaussian noise.
Dataset generate_synthetic(const SynthConfig& cfg);

struct ImputeParams {
  std::vector<double> fill;
  std::vector<bool> categorical;  // 0/1-valued features take the mode
};

ImputeParams impute_fit(const Table& train);
Table impute_apply(const Table& rows, const ImputeParams& params);

struct ScalerParams {
  std::vector<double> min;
  std::vector<double> max;
};

ScalerParams minmax_fit(const Table& train);
/// (x - min) / (max - min), constant features map to 0, results clamp to [0,1].
Table minmax_apply(const Table& rows, const ScalerParams& params);

struct PreprocParams {
  ImputeParams impute;
  ScalerParams scaler;
};

/// Fits imputation and scaling on the train rows only, then applies them to
/// every sample in place.
PreprocParams preprocess_fit_apply(Dataset& data, const std::vector<std::size_t>& train_idx);

/// Bilinear resize of a square image; identity when sizes match.
std::vector<double> resize_image(const std::vector<double>& img, std::size_t src_side,
                                 std::size_t dst_side);

struct ManifestEntry {
  std::string file;
  std::uint64_t hash;
};

/// Writes tabular.csv, tab_masks.csv, img_masks/*.pgm and either a packed
/// images.bin (bit-exact round-trip) or per-sample images/*.pgm.
std::vector<ManifestEntry> save_dataset(const std::filesystem::path& dir, const Dataset& data,
                                        bool pgm_images = false);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mmxai
