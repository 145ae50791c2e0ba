#include "mmxai/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mmxai/optim.hpp"
#include "mmxai/tensor.hpp"

namespace mmxai {

double combined_loss(double l_tab, double l_img, double l_cls, const StageWeights& w) {
  if (l_tab < 0.0 || l_img < 0.0 || l_cls < 0.0) {
    throw std::invalid_argument("combined_loss: loss values must be non-negative");
  }
  if (w.tab < 0.0 || w.img < 0.0 || w.cls < 0.0) {
    throw std::invalid_argument("combined_loss: weights must be non-negative");
  }
  if (w.tab == 0.0 && w.img == 0.0 && w.cls == 0.0) {
    throw std::invalid_argument("combined_loss: at least one weight must be positive");
  }
  return w.tab * l_tab + w.img * l_img + w.cls * l_cls;
}

void write_history_csv(std::ostream& os, const TrainHistory& history) {
  os << "epoch,lr,l_T,l_I,l_C,L,split\n";
  os.precision(17);
  for (const auto& e : history.epochs) {
    os << e.epoch << ',' << e.lr << ',' << e.train_l_tab << ',' << e.train_l_img << ','
       << e.train_l_cls << ',' << e.train_total << ",train\n";
    os << e.epoch << ',' << e.lr << ',' << e.val_l_tab << ',' << e.val_l_img << ','
       << e.val_l_cls << ',' << e.val_total << ",val\n";
  }
}

namespace {

struct BatchLosses {
  double l_tab = 0.0, l_img = 0.0, l_cls = 0.0, total = 0.0;
};

// Builds the weighted loss graph for one batch of samples. `augment_rng`
// is non-null only while training with an active image loss.
BatchLosses run_batch(Tape& tape, Tensor& loss_out, const MultimodalModel& model,
                      const Dataset& data, const std::vector<std::size_t>& batch,
                      const StageWeights& w, Rng* augment_rng) {
  const auto& cfg = model.config();
  const bool use_tab = model.config().has_tabular() && (w.tab > 0.0 || w.cls > 0.0);
  const bool use_img = model.config().has_image() && (w.img > 0.0 || w.cls > 0.0);
  const std::size_t n = batch.size();

  Tensor h_tab, h_img, x_tab, x_img;
  if (use_tab) {
    std::vector<double> flat;
    flat.reserve(n * cfg.tab_dim);
    for (std::size_t i : batch) {
      const auto& row = data.samples[i].tab;
      flat.insert(flat.end(), row.begin(), row.end());
    }
    x_tab = tape.input({n, cfg.tab_dim}, std::move(flat));
    h_tab = model.encode_tabular(tape, x_tab);
  }
  if (use_img) {
    std::vector<double> flat;
    flat.reserve(n * cfg.img_side * cfg.img_side);
    for (std::size_t i : batch) {
      if (augment_rng != nullptr) {
        const auto img = augment_image(data.samples[i].img, cfg.img_side, *augment_rng);
        flat.insert(flat.end(), img.begin(), img.end());
      } else {
        const auto& img = data.samples[i].img;
        flat.insert(flat.end(), img.begin(), img.end());
      }
    }
    x_img = tape.input({n, 1, cfg.img_side, cfg.img_side}, std::move(flat));
    h_img = model.encode_image(tape, x_img);
  }

  BatchLosses out;
  Tensor total;
  bool have_total = false;
  auto accumulate = [&](Tensor term, double weight) {
    Tensor scaled = tape.scale(term, weight);
    total = have_total ? tape.add(total, scaled) : scaled;
    have_total = true;
  };

  if (w.tab > 0.0) {
    Tensor l = tape.mse(model.decode_tabular(tape, h_tab), x_tab);
    out.l_tab = l.scalar();
    accumulate(l, w.tab);
  }
  if (w.img > 0.0) {
    Tensor l = tape.mse(model.decode_image(tape, h_img), x_img);
    out.l_img = l.scalar();
    accumulate(l, w.img);
  }
  if (w.cls > 0.0) {
    Tensor h;
    if (use_tab && use_img) {
      h = tape.concat_cols(h_tab, h_img);
    } else {
      h = use_tab ? h_tab : h_img;
    }
    std::vector<std::size_t> labels;
    labels.reserve(n);
    for (std::size_t i : batch) labels.push_back(static_cast<std::size_t>(data.samples[i].label));
    Tensor l = tape.cross_entropy(model.classify(tape, h), labels);
    out.l_cls = l.scalar();
    accumulate(l, w.cls);
  }
  out.total = total.scalar();
  loss_out = total;
  return out;
}

BatchLosses evaluate_losses(const MultimodalModel& model, const Dataset& data,
                            const std::vector<std::size_t>& idx, const StageWeights& w,
                            std::size_t batch_size) {
  BatchLosses agg;
  std::size_t seen = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    std::vector<std::size_t> batch(idx.begin() + start, idx.begin() + end);
    Tape tape;
    Tensor loss;
    const BatchLosses b = run_batch(tape, loss, model, data, batch, w, nullptr);
    const double size = static_cast<double>(batch.size());
    agg.l_tab += b.l_tab * size;
    agg.l_img += b.l_img * size;
    agg.l_cls += b.l_cls * size;
    agg.total += b.total * size;
    seen += batch.size();
  }
  const double n = static_cast<double>(seen);
  agg.l_tab /= n;
  agg.l_img /= n;
  agg.l_cls /= n;
  agg.total /= n;
  return agg;
}

std::vector<Parameter*> active_parameters(MultimodalModel& model, const StageWeights& w) {
  std::vector<Parameter*> out;
  auto push = [&](std::vector<Parameter*> ps) {
    for (Parameter* p : ps) {
      if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
  };
  if (model.config().has_tabular() && (w.tab > 0.0 || w.cls > 0.0)) {
    // The classification loss reaches both encoders; decoders only when the
    // reconstruction term is active.
    if (w.tab > 0.0) {
      push(model.tabular_ae_parameters());
    } else {
      auto all = model.tabular_ae_parameters();
      for (Parameter* p : all) {
        if (p->name.rfind("tab_enc.", 0) == 0) out.push_back(p);
      }
    }
  }
  if (model.config().has_image() && (w.img > 0.0 || w.cls > 0.0)) {
    if (w.img > 0.0) {
      push(model.conv_ae_parameters());
    } else {
      auto all = model.conv_ae_parameters();
      for (Parameter* p : all) {
        if (p->name.rfind("img_enc.", 0) == 0) out.push_back(p);
      }
    }
  }
  if (w.cls > 0.0) push(model.classifier_parameters());
  return out;
}

std::uint64_t stage_stream_tag(const StageWeights& w) {
  // Depends only on which loss terms are active, not on stage order.
  return (w.tab > 0.0 ? 1u : 0u) | (w.img > 0.0 ? 2u : 0u) | (w.cls > 0.0 ? 4u : 0u);
}

std::vector<std::vector<double>> snapshot(const std::vector<Parameter*>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<Parameter*>& params,
             const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

TrainHistory train_stage(MultimodalModel& model, const Dataset& data,
                         const std::vector<std::size_t>& train_idx,
                         const std::vector<std::size_t>& val_idx, const StageWeights& w,
                         const TrainConfig& cfg) {
  if (train_idx.empty() || val_idx.empty()) {
    throw std::invalid_argument("train_stage: empty train or validation split");
  }
  combined_loss(0.0, 0.0, 0.0, w);  // validates the weights
  if (cfg.plateau_patience < 1 || cfg.early_stop_patience < 1) {
    throw std::invalid_argument("train_stage: patience values must be >= 1");
  }
  if (cfg.lr_decay <= 0.0 || cfg.lr_decay >= 1.0) {
    throw std::invalid_argument("train_stage: lr decay must lie in (0,1)");
  }
  if (cfg.batch_size == 0) throw std::invalid_argument("train_stage: batch size must be >= 1");
  const auto& mc = model.config();
  if (mc.has_tabular() && data.tab_dim != mc.tab_dim) {
    throw std::invalid_argument("train_stage: dataset tabular width " +
                                std::to_string(data.tab_dim) + " does not match model " +
                                std::to_string(mc.tab_dim));
  }
  if (mc.has_image() && data.img_side != mc.img_side) {
    throw std::invalid_argument("train_stage: dataset image side " +
                                std::to_string(data.img_side) + " does not match model " +
                                std::to_string(mc.img_side));
  }

  std::vector<Parameter*> active = active_parameters(model, w);
  std::vector<Parameter*> all_params = model.parameters();
  Adam opt(active, {cfg.lr});
  Rng stage_rng = Rng(mix_seed(cfg.seed, 0x747261696eULL)).derive(stage_stream_tag(w));
  const bool augment_active = cfg.augment && w.img > 0.0 && mc.has_image();

  TrainHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  auto best_params = snapshot(all_params);
  std::size_t plateau = 0, since_best = 0;
  double lr = cfg.lr;

  std::vector<std::size_t> order(train_idx);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    stage_rng.shuffle(order);
    BatchLosses train_agg;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      ++batch_no;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      try {
        Tape tape;
        Tensor loss;
        const BatchLosses b = run_batch(tape, loss, model, data, batch, w,
                                        augment_active ? &stage_rng : nullptr);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        const double size = static_cast<double>(batch.size());
        train_agg.l_tab += b.l_tab * size;
        train_agg.l_img += b.l_img * size;
        train_agg.l_cls += b.l_cls * size;
        train_agg.total += b.total * size;
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train_stage: aborted at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_no) + ": " + e.what());
      }
    }
    const double n_train = static_cast<double>(order.size());
    train_agg.l_tab /= n_train;
    train_agg.l_img /= n_train;
    train_agg.l_cls /= n_train;
    train_agg.total /= n_train;

    const BatchLosses val = evaluate_losses(model, data, val_idx, w, cfg.batch_size);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_l_tab = train_agg.l_tab;
    rec.train_l_img = train_agg.l_img;
    rec.train_l_cls = train_agg.l_cls;
    rec.train_total = train_agg.total;
    rec.val_l_tab = val.l_tab;
    rec.val_l_img = val.l_img;
    rec.val_l_cls = val.l_cls;
    rec.val_total = val.total;
    history.epochs.push_back(rec);
    history.stopped_epoch = epoch;

    if (val.total < best_val - cfg.min_improvement) {
      best_val = val.total;
      best_params = snapshot(all_params);
      history.best_epoch = epoch;
      plateau = 0;
      since_best = 0;
    } else {
      ++plateau;
      ++since_best;
      if (since_best >= cfg.early_stop_patience) break;
      if (plateau >= cfg.plateau_patience) {
        lr *= cfg.lr_decay;
        opt.set_lr(lr);
        plateau = 0;
      }
    }
  }

  restore(all_params, best_params);
  history.best_val_loss = history.best_epoch > 0 ? best_val : 0.0;
  return history;
}

std::vector<StageRun> three_stage_train(MultimodalModel& model, const Dataset& data,
                                        const std::vector<std::size_t>& train_idx,
                                        const std::vector<std::size_t>& val_idx,
                                        const TrainConfig& cfg) {
  const auto& mc = model.config();
  std::vector<StageRun> runs;
  if (mc.has_tabular()) {
    StageRun run{"tabular_pretrain", {1.0, 0.0, 0.0}, {}};
    run.history = train_stage(model, data, train_idx, val_idx, run.weights, cfg);
    runs.push_back(std::move(run));
  }
  if (mc.has_image()) {
    StageRun run{"image_pretrain", {0.0, 1.0, 0.0}, {}};
    run.history = train_stage(model, data, train_idx, val_idx, run.weights, cfg);
    runs.push_back(std::move(run));
  }
  StageRun joint{"joint",
                 {mc.has_tabular() ? 1.0 : 0.0, mc.has_image() ? 1.0 : 0.0, 1.0},
                 {}};
  joint.history = train_stage(model, data, train_idx, val_idx, joint.weights, cfg);
  runs.push_back(std::move(joint));
  return runs;
}

std::vector<StageRun> one_stage_train(MultimodalModel& model, const Dataset& data,
                                      const std::vector<std::size_t>& train_idx,
                                      const std::vector<std::size_t>& val_idx,
                                      const TrainConfig& cfg) {
  const auto& mc = model.config();
  StageRun joint{"joint",
                 {mc.has_tabular() ? 1.0 : 0.0, mc.has_image() ? 1.0 : 0.0, 1.0},
                 {}};
  joint.history = train_stage(model, data, train_idx, val_idx, joint.weights, cfg);
  std::vector<StageRun> runs;
  runs.push_back(std::move(joint));
  return runs;
}

AugmentDraw draw_augmentations(std::size_t side, Rng& rng) {
  AugmentDraw d;
  const int max_shift = static_cast<int>(std::lround(0.2 * static_cast<double>(side)));
  if (rng.bernoulli(0.5)) {
    d.do_shift = true;
    d.dx = static_cast<int>(rng.index(static_cast<std::size_t>(2 * max_shift + 1))) - max_shift;
    d.dy = static_cast<int>(rng.index(static_cast<std::size_t>(2 * max_shift + 1))) - max_shift;
  }
  if (rng.bernoulli(0.5)) {
    d.do_zoom = true;
    d.zoom = rng.uniform(0.9, 1.1);
  }
  if (rng.bernoulli(0.5)) d.do_flip = true;
  if (rng.bernoulli(0.5)) {
    d.do_rotate = true;
    d.angle_deg = rng.uniform(-15.0, 15.0);
  }
  return d;
}

std::vector<double> apply_augmentations(const std::vector<double>& img, std::size_t side,
                                        const AugmentDraw& d) {
  std::vector<double> out = img;
  if (d.do_shift) out = shift_image(out, side, d.dx, d.dy);
  if (d.do_zoom) out = zoom_image(out, side, d.zoom);
  if (d.do_flip) out = vflip_image(out, side);
  if (d.do_rotate) out = rotate_image(out, side, d.angle_deg);
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::vector<double> augment_image(const std::vector<double>& img, std::size_t side, Rng& rng) {
  return apply_augmentations(img, side, draw_augmentations(side, rng));
}

std::vector<double> shift_image(const std::vector<double>& img, std::size_t side, int dx,
                                int dy) {
  std::vector<double> out(img.size(), 0.0);
  const int s = static_cast<int>(side);
  for (int y = 0; y < s; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= s) continue;
    for (int x = 0; x < s; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= s) continue;
      out[static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x)] =
          img[static_cast<std::size_t>(sy) * side + static_cast<std::size_t>(sx)];
    }
  }
  return out;
}

namespace {

double bilinear_at(const std::vector<double>& img, std::size_t side, double sy, double sx) {
  const double s = static_cast<double>(side);
  if (sy <= -1.0 || sy >= s || sx <= -1.0 || sx >= s) return 0.0;
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const double fy = sy - y0, fx = sx - x0;
  auto at = [&](int y, int x) -> double {
    if (y < 0 || x < 0 || y >= static_cast<int>(side) || x >= static_cast<int>(side)) return 0.0;
    return img[static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x)];
  };
  return at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx +
         at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
}

}  // namespace

std::vector<double> zoom_image(const std::vector<double>& img, std::size_t side, double factor) {
  if (factor <= 0.0) throw std::invalid_argument("zoom_image: factor must be positive");
  std::vector<double> out(img.size());
  const double c = (static_cast<double>(side) - 1.0) / 2.0;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double sy = c + (static_cast<double>(y) - c) / factor;
      const double sx = c + (static_cast<double>(x) - c) / factor;
      out[y * side + x] = bilinear_at(img, side, sy, sx);
    }
  }
  return out;
}

std::vector<double> vflip_image(const std::vector<double>& img, std::size_t side) {
  std::vector<double> out(img.size());
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      out[y * side + x] = img[(side - 1 - y) * side + x];
    }
  }
  return out;
}

std::vector<double> rotate_image(const std::vector<double>& img, std::size_t side,
                                 double angle_deg) {
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  std::vector<double> out(img.size());
  const double c = (static_cast<double>(side) - 1.0) / 2.0;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double ry = static_cast<double>(y) - c;
      const double rx = static_cast<double>(x) - c;
      const double sy = c + (cs * ry - sn * rx);
      const double sx = c + (sn * ry + cs * rx);
      out[y * side + x] = bilinear_at(img, side, sy, sx);
    }
  }
  return out;
}

}  // namespace mmxai
