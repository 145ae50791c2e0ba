#include <stdexcept>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "doctest.h"
#include "mmxai/data.hpp"
#include "mmxai/io.hpp"
#include "mmxai/rng.hpp"

using namespace mmxai;

namespace {

SynthConfig small_cfg() {
  SynthConfig cfg;
  cfg.n_samples = 120;
  cfg.tab_dim = 10;
  cfg.n_informative = 3;
  cfg.n_categorical = 2;
  cfg.img_side = 16;
  cfg.region = 4;
  cfg.n_groups = 4;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generator plants exactly the configured signal") {
  const SynthConfig cfg = small_cfg();
  const Dataset data = generate_synthetic(cfg);
  REQUIRE(data.samples.size() == cfg.n_samples);
  const auto informative = cfg.informative_indices();
  const std::set<std::size_t> info_set(informative.begin(), informative.end());

  for (const auto& s : data.samples) {
    REQUIRE(s.tab.size() == cfg.tab_dim);
    REQUIRE(s.img.size() == cfg.img_side * cfg.img_side);
    std::size_t tab_marked = 0, img_marked = 0;
    for (std::size_t j = 0; j < cfg.tab_dim; ++j) {
      CHECK((s.tab_mask[j] == 1) == (info_set.count(j) > 0));
      tab_marked += s.tab_mask[j];
    }
    for (auto m : s.img_mask) img_marked += m;
    CHECK(tab_marked == cfg.n_informative);
    CHECK(img_marked == cfg.region * cfg.region);
    for (double v : s.img) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  SUBCASE("class means differ only on informative features") {
    std::vector<double> mean0(cfg.tab_dim, 0.0), mean1(cfg.tab_dim, 0.0);
    std::size_t n0 = 0, n1 = 0;
    for (const auto& s : data.samples) {
      for (std::size_t j = 0; j < cfg.tab_dim; ++j) {
        const double v = std::isnan(s.tab[j]) ? 0.5 : s.tab[j];
        (s.label == 0 ? mean0[j] : mean1[j]) += v;
      }
      (s.label == 0 ? n0 : n1) += 1;
    }
    for (std::size_t j = 0; j < cfg.tab_dim; ++j) {
      const double gap = std::fabs(mean1[j] / n1 - mean0[j] / n0);
      if (info_set.count(j)) {
        CHECK(gap > cfg.separation / 2.0);
      } else {
        CHECK(gap < cfg.separation / 2.0);
      }
    }
  }

  SUBCASE("groups are assigned round robin") {
    std::vector<std::size_t> counts(cfg.n_groups, 0);
    for (const auto& s : data.samples) ++counts[s.group];
    for (std::size_t c : counts) CHECK(c == cfg.n_samples / cfg.n_groups);
  }
}

TEST_CASE("single planted feature separates the classes") {
  SynthConfig cfg = small_cfg();
  cfg.separation = 0.8;
  cfg.noise = 0.05;
  cfg.missing_rate = 0.0;
  cfg.evidence_swap_rate = 0.0;
  const Dataset data = generate_synthetic(cfg);
  // threshold on the first continuous informative feature
  std::size_t feature = 0;
  for (std::size_t j : cfg.informative_indices()) {
    if (j >= cfg.n_categorical) feature = j;
  }
  std::size_t correct = 0;
  for (const auto& s : data.samples) {
    const int pred = s.tab[feature] > 0.5 ? 1 : 0;
    correct += pred == s.label;
  }
  CHECK(static_cast<double>(correct) / data.samples.size() >= 0.95);
}

TEST_CASE("same seed gives byte-identical dataset files") {
  namespace fs = std::filesystem;
  const fs::path dir_a = fs::temp_directory_path() / "mmxai_data_a";
  const fs::path dir_b = fs::temp_directory_path() / "mmxai_data_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  const auto m1 = save_dataset(dir_a, generate_synthetic(small_cfg()));
  const auto m2 = save_dataset(dir_b, generate_synthetic(small_cfg()));
  REQUIRE(m1.size() == m2.size());
  for (std::size_t i = 0; i < m1.size(); ++i) {
    CHECK(m1[i].file == m2[i].file);
    CHECK(m1[i].hash == m2[i].hash);
  }
  SynthConfig other = small_cfg();
  other.seed = 6;
  const auto m3 = save_dataset(dir_b, generate_synthetic(other));
  CHECK(m3[0].hash != m1[0].hash);
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("dataset round-trips through the packed binary form") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mmxai_data_rt";
  fs::remove_all(dir);
  SynthConfig cfg = small_cfg();
  cfg.missing_rate = 0.15;
  const Dataset data = generate_synthetic(cfg);
  save_dataset(dir, data);
  const Dataset loaded = load_dataset(dir);
  REQUIRE(loaded.samples.size() == data.samples.size());
  CHECK(loaded.tab_dim == data.tab_dim);
  CHECK(loaded.img_side == data.img_side);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& a = data.samples[i];
    const auto& b = loaded.samples[i];
    CHECK(a.id == b.id);
    CHECK(a.group == b.group);
    CHECK(a.label == b.label);
    CHECK(a.img == b.img);  // bit exact
    CHECK(a.tab_mask == b.tab_mask);
    CHECK(a.img_mask == b.img_mask);
    for (std::size_t j = 0; j < data.tab_dim; ++j) {
      if (std::isnan(a.tab[j])) {
        CHECK(std::isnan(b.tab[j]));  // empty cell loads as missing
      } else {
        CHECK(a.tab[j] == b.tab[j]);
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("pgm handles maxval and round-trips masks") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mmxai_pgm";
  fs::create_directories(dir);
  write_pgm(dir / "t.pgm", {0.0, 1.0, 0.5, 0.25}, 2, 2);
  const PgmImage img = read_pgm(dir / "t.pgm");
  CHECK(img.width == 2);
  CHECK(img.pixels[0] == 0.0);
  CHECK(img.pixels[1] == 1.0);  // 255 -> 1.0
  CHECK(std::fabs(img.pixels[2] - 0.5) <= 1.0 / 255.0);
  {
    std::ofstream os(dir / "bad.pgm");
    os << "P5 2 2 255";
  }
  CHECK_THROWS_WITH_AS(read_pgm(dir / "bad.pgm"), doctest::Contains("magic"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("imputation fills from the training split only") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  SUBCASE("mean for continuous features") {
    const Table train = {{1.0}, {2.0}, {3.0}};
    const auto params = impute_fit(train);
    CHECK_FALSE(params.categorical[0]);
    const Table out = impute_apply({{nan}}, params);
    CHECK(out[0][0] == 2.0);
  }
  SUBCASE("mode for categorical features") {
    const Table train = {{0.0}, {0.0}, {1.0}};
    const auto params = impute_fit(train);
    CHECK(params.categorical[0]);
    CHECK(impute_apply({{nan}}, params)[0][0] == 0.0);
  }
  SUBCASE("identity without missing values") {
    const Table rows = {{0.25, 1.0}, {0.75, 0.0}};
    const auto params = impute_fit(rows);
    CHECK(impute_apply(rows, params) == rows);
  }
  SUBCASE("entirely missing training feature is an error") {
    CHECK_THROWS_AS(impute_fit({{nan}, {nan}}), std::runtime_error);
  }
}

TEST_CASE("minmax scaling clamps and zeroes constants") {
  const Table train = {{0.0, 7.0}, {10.0, 7.0}};
  const auto params = minmax_fit(train);
  const Table out = minmax_apply({{5.0, 7.0}, {12.0, 7.0}, {-3.0, 7.0}}, params);
  CHECK(out[0][0] == 0.5);
  CHECK(out[0][1] == 0.0);  // constant feature
  CHECK(out[1][0] == 1.0);  // clamped above
  CHECK(out[2][0] == 0.0);  // clamped below
}

TEST_CASE("preprocessing never reads outside the training split") {
  SynthConfig cfg = small_cfg();
  cfg.missing_rate = 0.1;
  Dataset a = generate_synthetic(cfg);
  Dataset b = a;
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < 80; ++i) train_idx.push_back(i);
  // perturb a non-train value
  b.samples[100].tab[3] = 123.0;
  const auto pa = preprocess_fit_apply(a, train_idx);
  const auto pb = preprocess_fit_apply(b, train_idx);
  CHECK(pa.impute.fill == pb.impute.fill);
  CHECK(pa.scaler.min == pb.scaler.min);
  CHECK(pa.scaler.max == pb.scaler.max);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    for (double v : a.samples[i].tab) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("bilinear resize") {
  SUBCASE("identity at equal sizes") {
    const std::vector<double> img = {0.1, 0.2, 0.3, 0.4};
    CHECK(resize_image(img, 2, 2) == img);
  }
  SUBCASE("constant image stays constant") {
    const std::vector<double> img(9, 0.7);
    const auto out = resize_image(img, 3, 5);
    for (double v : out) CHECK(v == doctest::Approx(0.7));
  }
  SUBCASE("checkerboard center interpolates to one half") {
    const std::vector<double> img = {0.0, 1.0, 1.0, 0.0};
    const auto out = resize_image(img, 2, 3);
    CHECK(out[4] == doctest::Approx(0.5));
    CHECK(out[0] == doctest::Approx(0.0));
    CHECK(out[2] == doctest::Approx(1.0));
  }
  SUBCASE("non-square input is rejected") {
    CHECK_THROWS_AS(resize_image(std::vector<double>(6, 0.0), 2, 3), std::invalid_argument);
  }
}

TEST_CASE("generator validates its configuration") {
  SynthConfig cfg = small_cfg();
  cfg.n_samples = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = small_cfg();
  cfg.region = 16;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = small_cfg();
  cfg.group_sizes = {10, 10};
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("explicit group sizes mimic the six-hospital counts") {
  SynthConfig cfg = small_cfg();
  cfg.n_samples = 120 + 104 + 31 + 139 + 101 + 325;
  cfg.n_groups = 6;
  cfg.group_sizes = {120, 104, 31, 139, 101, 325};
  const Dataset data = generate_synthetic(cfg);
  std::vector<std::size_t> counts(6, 0);
  for (const auto& s : data.samples) ++counts[s.group];
  CHECK(counts == std::vector<std::size_t>{120, 104, 31, 139, 101, 325});
}

}  // TEST_SUITE
