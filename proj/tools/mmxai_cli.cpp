// mmxai: synthetic multimodal data, joint autoencoder-classifier training,
// latent-shift explanations and their evaluation, as reproducible runs.
//
// Commands: synth, train, explain, eval. Every command honors --seed (or the
// MMXAI_SEED environment variable) and an optional flat-JSON --config whose
// keys match the long option names; explicit flags win over the config file.
// Machine-readable outputs go to files or stdout, diagnostics to stderr.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmxai/data.hpp"
#include "mmxai/evaluate.hpp"
#include "mmxai/explain.hpp"
#include "mmxai/io.hpp"
#include "mmxai/metrics.hpp"
#include "mmxai/model.hpp"
#include "mmxai/rng.hpp"
#include "mmxai/splits.hpp"
#include "mmxai/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::uint64_t env_seed() {
  if (const char* env = std::getenv("MMXAI_SEED")) {
    return std::stoull(env);
  }
  return 0;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

// Applies the flat-JSON config as new defaults for the subcommand's options;
// values given on the command line afterwards override them. Unknown keys
// are rejected.
void apply_config(CLI::App* cmd, const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw CLI::ValidationError("--config", "cannot open " + path.string());
  ordered_json cfg;
  try {
    cfg = ordered_json::parse(is);
  } catch (const std::exception& e) {
    throw CLI::ValidationError("--config", std::string("invalid JSON: ") + e.what());
  }
  if (!cfg.is_object()) throw CLI::ValidationError("--config", "expected a flat JSON object");
  for (const auto& [key, value] : cfg.items()) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr) {
      throw CLI::ValidationError("--config", "unknown key '" + key + "'");
    }
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else {
      text = value.dump();
    }
    if (opt->get_expected_min() == 0) {  // flag
      if (text == "true" || text == "1") opt->default_val("true");
      else if (text == "false" || text == "0") opt->default_val("false");
      else throw CLI::ValidationError("--config", "key '" + key + "' expects a boolean");
    } else {
      opt->default_val(text);
    }
  }
}

void ensure_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw std::runtime_error("output directory " + dir.string() +
                             " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  mmxai::SynthConfig cfg;
  std::string group_sizes_text;
  std::string out_dir;
  bool pgm_images = false;
  bool force = false;
};

int run_synth(SynthArgs& args) {
  if (!args.group_sizes_text.empty()) {
    args.cfg.group_sizes = parse_size_list(args.group_sizes_text);
    args.cfg.n_groups = args.cfg.group_sizes.size();
  }
  ensure_output_dir(args.out_dir, args.force);
  const mmxai::Dataset data = mmxai::generate_synthetic(args.cfg);
  const auto manifest = mmxai::save_dataset(args.out_dir, data, args.pgm_images);
  for (const auto& entry : manifest) {
    std::cout << entry.file << '\t' << mmxai::hash_hex(entry.hash) << '\n';
  }
  std::cerr << "wrote " << data.samples.size() << " samples to " << args.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// shared fold plumbing

struct FoldContext {
  int fold = 0;
  mmxai::Fold split;
  mmxai::PreprocParams preproc;
};

mmxai::FoldPlan make_plan(const mmxai::Dataset& data, const std::string& folds_mode,
                          std::uint64_t seed) {
  if (folds_mode == "holdout" || folds_mode == "cv10") {
    return mmxai::kfold_split(data.labels(), 10, seed);
  }
  if (folds_mode == "loco") {
    return mmxai::loco_split(data.labels(), data.groups(), seed);
  }
  throw std::runtime_error("unknown fold mode '" + folds_mode + "'");
}

ordered_json fold_to_json(const FoldContext& ctx, const std::string& folds_mode,
                          std::uint64_t seed) {
  ordered_json j;
  j["fold"] = ctx.fold;
  j["folds_mode"] = folds_mode;
  j["seed"] = seed;
  j["train"] = ctx.split.train;
  j["val"] = ctx.split.val;
  j["test"] = ctx.split.test;
  j["impute_fill"] = ctx.preproc.impute.fill;
  ordered_json cat = ordered_json::array();
  for (bool c : ctx.preproc.impute.categorical) cat.push_back(c ? 1 : 0);
  j["impute_categorical"] = cat;
  j["scaler_min"] = ctx.preproc.scaler.min;
  j["scaler_max"] = ctx.preproc.scaler.max;
  return j;
}

FoldContext fold_from_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open preprocessing record " + path.string());
  const ordered_json j = ordered_json::parse(is);
  FoldContext ctx;
  ctx.fold = j.at("fold").get<int>();
  ctx.split.train = j.at("train").get<std::vector<std::size_t>>();
  ctx.split.val = j.at("val").get<std::vector<std::size_t>>();
  ctx.split.test = j.at("test").get<std::vector<std::size_t>>();
  ctx.preproc.impute.fill = j.at("impute_fill").get<std::vector<double>>();
  for (int c : j.at("impute_categorical").get<std::vector<int>>()) {
    ctx.preproc.impute.categorical.push_back(c != 0);
  }
  ctx.preproc.scaler.min = j.at("scaler_min").get<std::vector<double>>();
  ctx.preproc.scaler.max = j.at("scaler_max").get<std::vector<double>>();
  return ctx;
}

void apply_preproc(mmxai::Dataset& data, const mmxai::PreprocParams& params) {
  mmxai::Table all;
  all.reserve(data.samples.size());
  for (const auto& s : data.samples) all.push_back(s.tab);
  all = mmxai::minmax_apply(mmxai::impute_apply(all, params.impute), params.scaler);
  for (std::size_t i = 0; i < data.samples.size(); ++i) data.samples[i].tab = all[i];
}

fs::path sibling_preproc_path(const fs::path& model_path) {
  std::string name = model_path.filename().string();
  const std::string prefix = "model_f";
  if (name.rfind(prefix, 0) == 0) {
    const std::string fold_part = name.substr(prefix.size(), name.size() - prefix.size() - 4);
    return model_path.parent_path() / ("preproc_f" + fold_part + ".json");
  }
  return model_path.parent_path() / "preproc_f0.json";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data_dir;
  std::string out_dir;
  std::string mode = "three-stage";
  std::string folds_mode = "holdout";
  std::size_t tab_latent = 8;
  std::size_t img_latent = 32;
  std::string tab_hidden = "14,10";
  std::string conv_channels = "8,16,32";
  std::string mlp_hidden = "32,16,8";
  mmxai::TrainConfig train;
  bool no_augment = false;
  std::uint64_t seed = 0;
  bool force = false;
};

int run_train(TrainArgs& args) {
  mmxai::Dataset raw = mmxai::load_dataset(args.data_dir);
  ensure_output_dir(args.out_dir, args.force);

  mmxai::ModelConfig mc;
  mc.tab_dim = raw.tab_dim;
  mc.img_side = raw.img_side;
  mc.tab_latent = args.tab_latent;
  mc.img_latent = args.img_latent;
  mc.tab_hidden = parse_size_list(args.tab_hidden);
  mc.conv_channels = parse_size_list(args.conv_channels);
  mc.mlp_hidden = parse_size_list(args.mlp_hidden);
  if (args.mode == "ablate-tabular") mc.modality = mmxai::ModelModality::image_only;
  if (args.mode == "ablate-image") mc.modality = mmxai::ModelModality::tabular_only;

  const mmxai::FoldPlan plan = make_plan(raw, args.folds_mode, args.seed);
  const std::size_t n_folds = args.folds_mode == "holdout" ? 1 : plan.folds.size();

  for (std::size_t f = 0; f < n_folds; ++f) {
    FoldContext ctx;
    ctx.fold = static_cast<int>(f);
    ctx.split = plan.folds[f];
    mmxai::Dataset data = raw;
    ctx.preproc = mmxai::preprocess_fit_apply(data, ctx.split.train);

    mmxai::MultimodalModel model(mc, mmxai::mix_seed(args.seed, 1000 + f));
    mmxai::TrainConfig cfg = args.train;
    cfg.seed = mmxai::mix_seed(args.seed, 2000 + f);
    cfg.augment = !args.no_augment;

    std::vector<mmxai::StageRun> stages;
    if (args.mode == "one-stage") {
      stages = mmxai::one_stage_train(model, data, ctx.split.train, ctx.split.val, cfg);
    } else {
      stages = mmxai::three_stage_train(model, data, ctx.split.train, ctx.split.val, cfg);
    }

    const std::string suffix = "_f" + std::to_string(f);
    model.save(fs::path(args.out_dir) / ("model" + suffix + ".bin"));
    {
      std::ofstream os(fs::path(args.out_dir) / ("preproc" + suffix + ".json"));
      os << fold_to_json(ctx, args.folds_mode, args.seed).dump(2) << "\n";
    }
    ordered_json report;
    report["fold"] = ctx.fold;
    report["mode"] = args.mode;
    report["stages"] = ordered_json::array();
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& stage = stages[s];
      std::ofstream os(fs::path(args.out_dir) /
                       ("history" + suffix + "_stage" + std::to_string(s + 1) + "_" + stage.name +
                        ".csv"));
      mmxai::write_history_csv(os, stage.history);
      ordered_json sj;
      sj["name"] = stage.name;
      sj["weights"] = {stage.weights.tab, stage.weights.img, stage.weights.cls};
      sj["epochs"] = stage.history.stopped_epoch;
      sj["best_epoch"] = stage.history.best_epoch;
      sj["best_val_loss"] = stage.history.best_val_loss;
      report["stages"].push_back(sj);
      std::cerr << "fold " << f << " stage " << stage.name << ": best val loss "
                << stage.history.best_val_loss << " at epoch " << stage.history.best_epoch
                << " of " << stage.history.stopped_epoch << "\n";
    }
    std::ofstream os(fs::path(args.out_dir) / ("train_report" + suffix + ".json"));
    os << report.dump(2) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// explain

struct ExplainArgs {
  std::string model_path;
  std::string preproc_path;
  std::string data_dir;
  std::string out_dir;
  std::string sample = "all";
  std::string split = "test";
  mmxai::ExplainOptions opts;
  bool raw_threshold = false;
  std::size_t workers = 1;
  bool force = false;
};

void write_explanation_files(const fs::path& dir, const mmxai::Explanation& e,
                             const mmxai::ModelConfig& mc) {
  const std::string id = std::to_string(e.sample_id);
  {
    std::ofstream os(dir / ("explain_" + id + ".json"));
    os << mmxai::explanation_json(e);
  }
  if (mc.has_image()) {
    mmxai::write_pgm(dir / ("heatmap_" + id + ".pgm"), e.feat_img, e.img_side, e.img_side,
                     /*stretch=*/true);
  }
  if (mc.has_tabular()) {
    std::ofstream os(dir / ("bars_" + id + ".csv"));
    os << "feature,deltahat\n";
    os.precision(17);
    for (std::size_t j = 0; j < e.feat_tab.size(); ++j) {
      os << 'f' << j << ',' << e.feat_tab[j] << '\n';
    }
  }
}

int run_explain(ExplainArgs& args) {
  const mmxai::MultimodalModel model = mmxai::MultimodalModel::load(args.model_path);
  const fs::path preproc_path =
      args.preproc_path.empty() ? sibling_preproc_path(args.model_path) : fs::path(args.preproc_path);
  const FoldContext ctx = fold_from_json(preproc_path);
  mmxai::Dataset data = mmxai::load_dataset(args.data_dir);
  apply_preproc(data, ctx.preproc);
  ensure_output_dir(args.out_dir, args.force);
  args.opts.normalize = !args.raw_threshold;

  std::vector<std::size_t> pool;
  if (args.split == "test") pool = ctx.split.test;
  else if (args.split == "val") pool = ctx.split.val;
  else if (args.split == "train") pool = ctx.split.train;
  else if (args.split == "all") {
    pool.resize(data.samples.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  } else {
    throw std::runtime_error("unknown split '" + args.split + "'");
  }

  std::vector<std::size_t> targets;
  if (args.sample == "all") {
    targets = pool;
  } else {
    const std::uint32_t wanted = static_cast<std::uint32_t>(std::stoul(args.sample));
    bool found = false;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      if (data.samples[i].id == wanted) {
        targets.push_back(i);
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("unknown sample id " + args.sample);
  }

  const auto& mc = model.config();
  std::atomic<std::size_t> flips{0};
  auto work = [&](std::size_t worker_id) {
    for (std::size_t t = worker_id; t < targets.size(); t += std::max<std::size_t>(1, args.workers)) {
      const auto& s = data.samples[targets[t]];
      const auto e = mmxai::explain_sample(model, mc.has_tabular() ? s.tab : std::vector<double>{},
                                           mc.has_image() ? s.img : std::vector<double>{}, s.id,
                                           args.opts);
      if (e.flip_found) ++flips;
      write_explanation_files(args.out_dir, e, mc);
    }
  };
  if (args.workers > 1) {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < args.workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  } else {
    work(0);
  }
  std::cerr << "explained " << targets.size() << " samples, " << flips.load()
            << " with class flips\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string model_path;
  std::string preproc_path;
  std::string data_dir;
  std::string out_dir;
  mmxai::SplitEvalOptions opts;
  bool force = false;
};

int run_eval(EvalArgs& args) {
  const mmxai::MultimodalModel model = mmxai::MultimodalModel::load(args.model_path);
  const fs::path preproc_path =
      args.preproc_path.empty() ? sibling_preproc_path(args.model_path) : fs::path(args.preproc_path);
  const FoldContext ctx = fold_from_json(preproc_path);
  mmxai::Dataset data = mmxai::load_dataset(args.data_dir);
  apply_preproc(data, ctx.preproc);
  ensure_output_dir(args.out_dir, args.force);

  const auto means = mmxai::feature_means(data, ctx.split.train);
  const auto ev = mmxai::evaluate_split(model, data, ctx.split.test, means, args.opts);
  const auto report = mmxai::make_report(ctx.fold, ev);

  {
    std::ofstream os(fs::path(args.out_dir) / ("report_f" + std::to_string(ctx.fold) + ".json"));
    os << mmxai::report_json(report);
  }
  const fs::path csv_path = fs::path(args.out_dir) / "report.csv";
  const bool fresh = !fs::exists(csv_path);
  std::ofstream os(csv_path, std::ios::app);
  if (fresh) os << mmxai::report_csv_header() << '\n';
  os << mmxai::report_csv_row(report) << '\n';
  std::cerr << "fold " << ctx.fold << ": accuracy " << report.accuracy << ", flip rate "
            << report.flip_rate << ", iou_img " << report.iou_img.mean << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal latent-shift explainability workbench"};
  app.require_subcommand(1);

  const std::uint64_t default_seed = env_seed();
  std::string config_path;

  SynthArgs synth;
  synth.cfg.seed = default_seed;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic multimodal dataset");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_cmd->add_option("--n", synth.cfg.n_samples, "number of samples");
  synth_cmd->add_option("--tab-dim", synth.cfg.tab_dim, "tabular feature count");
  synth_cmd->add_option("--informative", synth.cfg.n_informative, "planted tabular features");
  synth_cmd->add_option("--categorical", synth.cfg.n_categorical, "leading 0/1 features");
  synth_cmd->add_option("--img-side", synth.cfg.img_side, "image side length");
  synth_cmd->add_option("--region", synth.cfg.region, "planted region side");
  synth_cmd->add_option("--separation", synth.cfg.separation, "class mean separation");
  synth_cmd->add_option("--noise", synth.cfg.noise, "gaussian noise level");
  synth_cmd->add_option("--groups", synth.cfg.n_groups, "number of groups");
  synth_cmd->add_option("--group-sizes", synth.group_sizes_text, "explicit sizes a,b,c");
  synth_cmd->add_option("--missing-rate", synth.cfg.missing_rate, "missing cell fraction");
  synth_cmd->add_flag("--pgm-images", synth.pgm_images, "per-sample PGM instead of images.bin");
  synth_cmd->add_option("--seed", synth.cfg.seed, "run seed");
  synth_cmd->add_flag("--force", synth.force, "overwrite a non-empty output directory");

  TrainArgs train;
  train.seed = default_seed;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model per mode and fold plan");
  train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", train.out_dir, "output directory")->required();
  train_cmd->add_option("--mode", train.mode, "three-stage | one-stage | ablate-tabular | ablate-image")
      ->check(CLI::IsMember({"three-stage", "one-stage", "ablate-tabular", "ablate-image"}));
  train_cmd->add_option("--folds", train.folds_mode, "holdout | cv10 | loco")
      ->check(CLI::IsMember({"holdout", "cv10", "loco"}));
  train_cmd->add_option("--tab-latent", train.tab_latent, "tabular latent width n");
  train_cmd->add_option("--img-latent", train.img_latent, "image latent width m");
  train_cmd->add_option("--tab-hidden", train.tab_hidden, "AE hidden widths");
  train_cmd->add_option("--conv-channels", train.conv_channels, "CAE channels");
  train_cmd->add_option("--mlp-hidden", train.mlp_hidden, "classifier hidden widths");
  train_cmd->add_option("--lr", train.train.lr, "initial learning rate");
  train_cmd->add_option("--max-epochs", train.train.max_epochs, "epoch cap per stage");
  train_cmd->add_option("--batch-size", train.train.batch_size, "mini-batch size");
  train_cmd->add_option("--plateau-patience", train.train.plateau_patience, "epochs before lr drop");
  train_cmd->add_option("--early-stop", train.train.early_stop_patience, "epochs before stopping");
  train_cmd->add_option("--lr-decay", train.train.lr_decay, "lr decay factor");
  train_cmd->add_flag("--no-augment", train.no_augment, "disable image augmentation");
  train_cmd->add_option("--seed", train.seed, "run seed");
  train_cmd->add_flag("--force", train.force, "overwrite a non-empty output directory");

  ExplainArgs explain;
  CLI::App* explain_cmd = app.add_subcommand("explain", "emit latent-shift explanations");
  explain_cmd->add_option("--model", explain.model_path, "checkpoint file")->required();
  explain_cmd->add_option("--preproc", explain.preproc_path, "preprocessing record (default: sibling)");
  explain_cmd->add_option("--data", explain.data_dir, "dataset directory")->required();
  explain_cmd->add_option("--out", explain.out_dir, "output directory")->required();
  explain_cmd->add_option("--sample", explain.sample, "sample id or 'all'");
  explain_cmd->add_option("--split", explain.split, "test | val | train | all")
      ->check(CLI::IsMember({"test", "val", "train", "all"}));
  explain_cmd->add_option("--step", explain.opts.step, "lambda search step");
  explain_cmd->add_option("--lambda-max", explain.opts.lambda_max, "lambda search bound");
  explain_cmd->add_option("--threshold", explain.opts.threshold, "mask threshold");
  explain_cmd->add_flag("--raw-threshold", explain.raw_threshold,
                        "threshold raw importances without per-instance normalization");
  explain_cmd->add_option("--workers", explain.workers, "parallel explanation workers");
  explain_cmd->add_flag("--force", explain.force, "overwrite a non-empty output directory");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on its fold");
  eval_cmd->add_option("--model", eval.model_path, "checkpoint file")->required();
  eval_cmd->add_option("--preproc", eval.preproc_path, "preprocessing record (default: sibling)");
  eval_cmd->add_option("--data", eval.data_dir, "dataset directory")->required();
  eval_cmd->add_option("--out", eval.out_dir, "output directory")->required();
  eval_cmd->add_option("--occlusion-patch", eval.opts.occlusion_patch, "occlusion patch side");
  eval_cmd->add_flag("--force", eval.force, "overwrite a non-empty output directory");

  for (CLI::App* cmd : {synth_cmd, train_cmd, explain_cmd, eval_cmd}) {
    cmd->add_option("--config", config_path, "flat JSON config; flags win");
  }

  // Two-phase parse so the config file can re-default any option.
  std::vector<std::string> raw_args(argv + 1, argv + argc);
  for (std::size_t i = 0; i + 1 < raw_args.size(); ++i) {
    if (raw_args[i] == "--config" && !raw_args.empty()) {
      CLI::App* target = nullptr;
      for (CLI::App* cmd : {synth_cmd, train_cmd, explain_cmd, eval_cmd}) {
        if (!raw_args.empty() && raw_args.front() == cmd->get_name()) target = cmd;
      }
      if (target != nullptr) {
        try {
          apply_config(target, raw_args[i + 1]);
        } catch (const CLI::Error& e) {
          std::cerr << "error: " << e.what() << "\n";
          return 1;
        }
      }
    }
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train);
    if (explain_cmd->parsed()) return run_explain(explain);
    if (eval_cmd->parsed()) return run_eval(eval);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
