#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mmxai/io.hpp"

namespace fs = std::filesystem;

namespace {

#ifndef MMXAI_CLI_PATH
#define MMXAI_CLI_PATH "mmxai"
#endif

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MMXAI_CLI_PATH) + " " + args + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

int run_cli_capture(const std::string& args, const fs::path& stdout_file) {
  const std::string cmd = std::string(MMXAI_CLI_PATH) + " " + args + " > " +
                          stdout_file.string() + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  return std::string((std::istreambuf_iterator<char>(is)), {});
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth manifest is seed-deterministic") {
  const fs::path a = fresh_dir("mmxai_cli_a");
  const fs::path b = fresh_dir("mmxai_cli_b");
  const fs::path ma = fs::temp_directory_path() / "mmxai_cli_ma.txt";
  const fs::path mb = fs::temp_directory_path() / "mmxai_cli_mb.txt";
  REQUIRE(run_cli_capture("synth --out " + a.string() + " --n 60 --img-side 16 --region 4 --seed 42",
                          ma) == 0);
  REQUIRE(run_cli_capture("synth --out " + b.string() + " --n 60 --img-side 16 --region 4 --seed 42",
                          mb) == 0);
  const std::string manifest_a = slurp(ma);
  CHECK(manifest_a == slurp(mb));
  CHECK(manifest_a.find("tabular.csv") != std::string::npos);
  CHECK(manifest_a.find("images.bin") != std::string::npos);

  SUBCASE("refuses to clobber without --force") {
    CHECK(run_cli("synth --out " + a.string() + " --n 60 --img-side 16 --region 4 --seed 42") != 0);
    CHECK(run_cli("synth --out " + a.string() +
                  " --n 60 --img-side 16 --region 4 --seed 42 --force") == 0);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("synth rejects a zero-sample request") {
  const fs::path dir = fresh_dir("mmxai_cli_zero");
  CHECK(run_cli("synth --out " + dir.string() + " --n 0") != 0);
}

TEST_CASE("config file keys act as defaults and unknown keys fail") {
  const fs::path dir = fresh_dir("mmxai_cli_cfg");
  const fs::path cfg = fs::temp_directory_path() / "mmxai_cli_cfg.json";
  {
    std::ofstream os(cfg);
    os << R"({"n": 48, "img-side": 16, "region": 4, "seed": 9})";
  }
  REQUIRE(run_cli("synth --out " + dir.string() + " --config " + cfg.string()) == 0);
  // flag wins over the config value
  const fs::path dir2 = fresh_dir("mmxai_cli_cfg2");
  REQUIRE(run_cli("synth --out " + dir2.string() + " --config " + cfg.string() + " --n 52") == 0);
  std::ifstream tab(dir2 / "tabular.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(tab, line);
  while (std::getline(tab, line)) rows += !line.empty();
  CHECK(rows == 52);

  {
    std::ofstream os(cfg);
    os << R"({"not-a-key": 1})";
  }
  CHECK(run_cli("synth --out " + dir.string() + " --config " + cfg.string() + " --force") != 0);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("train, explain and eval round trip on a small dataset") {
  const fs::path data = fresh_dir("mmxai_cli_data");
  const fs::path run = fresh_dir("mmxai_cli_run");
  const fs::path expl = fresh_dir("mmxai_cli_expl");
  const fs::path evald = fresh_dir("mmxai_cli_eval");
  REQUIRE(run_cli("synth --out " + data.string() +
                  " --n 80 --img-side 16 --region 4 --groups 4 --seed 3") == 0);
  REQUIRE(run_cli("train --data " + data.string() + " --out " + run.string() +
                  " --img-latent 8 --conv-channels 4,8 --max-epochs 2 --seed 3") == 0);
  CHECK(fs::exists(run / "model_f0.bin"));
  CHECK(fs::exists(run / "preproc_f0.json"));
  CHECK(fs::exists(run / "train_report_f0.json"));
  CHECK(fs::exists(run / "history_f0_stage1_tabular_pretrain.csv"));
  CHECK(fs::exists(run / "history_f0_stage3_joint.csv"));

  SUBCASE("explaining a split twice is byte identical") {
    REQUIRE(run_cli("explain --model " + (run / "model_f0.bin").string() + " --data " +
                    data.string() + " --out " + expl.string() + " --sample all") == 0);
    std::map<std::string, std::uint64_t> first;
    for (const auto& entry : fs::directory_iterator(expl)) {
      first[entry.path().filename().string()] = mmxai::file_hash(entry.path());
    }
    CHECK(first.size() >= 3 * 8);  // json + pgm + csv per test sample
    REQUIRE(run_cli("explain --model " + (run / "model_f0.bin").string() + " --data " +
                    data.string() + " --out " + expl.string() + " --sample all --force") == 0);
    for (const auto& entry : fs::directory_iterator(expl)) {
      CHECK(first.at(entry.path().filename().string()) == mmxai::file_hash(entry.path()));
    }
  }

  SUBCASE("explaining an unknown sample fails") {
    CHECK(run_cli("explain --model " + (run / "model_f0.bin").string() + " --data " +
                  data.string() + " --out " + expl.string() + " --sample 9999 --force") != 0);
  }

  SUBCASE("eval emits the documented report shape") {
    REQUIRE(run_cli("eval --model " + (run / "model_f0.bin").string() + " --data " +
                    data.string() + " --out " + evald.string()) == 0);
    const std::string report = slurp(evald / "report_f0.json");
    for (const char* key : {"accuracy", "sensitivity", "specificity", "mse_tab", "mse_img",
                            "flip_rate", "rho", "t_test", "iou_tab", "iou_img"}) {
      CHECK(report.find(key) != std::string::npos);
    }
    const std::string csv = slurp(evald / "report.csv");
    CHECK(csv.find("fold,n_test,accuracy") == 0);
  }

  fs::remove_all(data);
  fs::remove_all(run);
  fs::remove_all(expl);
  fs::remove_all(evald);
}

TEST_CASE("ablation modes train single-modality models") {
  const fs::path data = fresh_dir("mmxai_cli_abl_data");
  const fs::path run = fresh_dir("mmxai_cli_abl_run");
  REQUIRE(run_cli("synth --out " + data.string() +
                  " --n 60 --img-side 16 --region 4 --groups 3 --seed 5") == 0);
  REQUIRE(run_cli("train --data " + data.string() + " --out " + run.string() +
                  " --mode ablate-image --max-epochs 2 --seed 5") == 0);
  const std::string report = slurp(run / "train_report_f0.json");
  CHECK(report.find("tabular_pretrain") != std::string::npos);
  CHECK(report.find("image_pretrain") == std::string::npos);
  fs::remove_all(data);
  fs::remove_all(run);
}

}  // TEST_SUITE
