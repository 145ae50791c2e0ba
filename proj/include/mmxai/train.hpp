#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mmxai/data.hpp"
#include "mmxai/model.hpp"
#include "mmxai/rng.hpp"

namespace mmxai {

/// Loss weights gamma_T, gamma_I, gamma_C of the combined objective.
struct StageWeights {
  double tab = 1.0;
  double img = 1.0;
  double cls = 1.0;
};

/// gamma_T*l_T + gamma_I*l_I + gamma_C*l_C; rejects negative loss values.
double combined_loss(double l_tab, double l_img, double l_cls, const StageWeights& w);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t plateau_patience = 10;  // epochs without a new minimum before lr /= 10
  double lr_decay = 0.1;
  std::size_t max_epochs = 300;
  std::size_t early_stop_patience = 25;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool augment = true;
  double min_improvement = 1e-6;  // absolute tolerance on "validation loss changed"
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_l_tab = 0.0, train_l_img = 0.0, train_l_cls = 0.0, train_total = 0.0;
  double val_l_tab = 0.0, val_l_img = 0.0, val_l_cls = 0.0, val_total = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_loss = 0.0;
};

/// CSV rows (epoch, lr, l_T, l_I, l_C, L, split), one train and one val row
/// per epoch.
void write_history_csv(std::ostream& os, const TrainHistory& history);

/// Trains the blocks reached by the nonzero weights; everything else is left
/// bit-identical. Restores the best-validation checkpoint on exit. Learning
/// rate drops by the decay factor after `plateau_patience` epochs without a
/// new validation minimum; training stops after `early_stop_patience`.
TrainHistory train_stage(MultimodalModel& model, const Dataset& data,
                         const std::vector<std::size_t>& train_idx,
                         const std::vector<std::size_t>& val_idx, const StageWeights& w,
                         const TrainConfig& cfg);

struct StageRun {
  std::string name;
  StageWeights weights;
  TrainHistory history;
};

/// Reconstruction-only pretraining of each present autoencoder, then the
/// joint stage with all weights at 1. Stage RNG streams depend only on the
/// stage kind, so swapping the two pretraining stages changes nothing.
std::vector<StageRun> three_stage_train(MultimodalModel& model, const Dataset& data,
                                        const std::vector<std::size_t>& train_idx,
                                        const std::vector<std::size_t>& val_idx,
                                        const TrainConfig& cfg);

/// Single joint stage from fresh initialization (no pretraining).
std::vector<StageRun> one_stage_train(MultimodalModel& model, const Dataset& data,
                                      const std::vector<std::size_t>& train_idx,
                                      const std::vector<std::size_t>& val_idx,
                                      const TrainConfig& cfg);

// Image augmentation. Each transform applies with independent probability
// 0.5; shifts stay within +/-20% of the side, zoom in [0.9, 1.1], rotation
// within +/-15 degrees. Tabular data is never augmented.
struct AugmentDraw {
  bool do_shift = false;
  int dx = 0, dy = 0;
  bool do_zoom = false;
  double zoom = 1.0;
  bool do_flip = false;
  bool do_rotate = false;
  double angle_deg = 0.0;
};

AugmentDraw draw_augmentations(std::size_t side, Rng& rng);
std::vector<double> apply_augmentations(const std::vector<double>& img, std::size_t side,
                                        const AugmentDraw& draw);
std::vector<double> augment_image(const std::vector<double>& img, std::size_t side, Rng& rng);

std::vector<double> shift_image(const std::vector<double>& img, std::size_t side, int dx, int dy);
std::vector<double> zoom_image(const std::vector<double>& img, std::size_t side, double factor);
std::vector<double> vflip_image(const std::vector<double>& img, std::size_t side);
std::vector<double> rotate_image(const std::vector<double>& img, std::size_t side,
                                 double angle_deg);

}  // namespace mmxai
