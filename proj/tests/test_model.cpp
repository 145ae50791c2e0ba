#include <stdexcept>
#include <vector>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mmxai/model.hpp"
#include "mmxai/rng.hpp"
#include "mmxai/tensor.hpp"

using namespace mmxai;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.tab_dim = 8;
  cfg.img_side = 16;
  cfg.tab_latent = 4;
  cfg.img_latent = 12;
  cfg.tab_hidden = {6};
  cfg.conv_channels = {4, 8};
  cfg.mlp_hidden = {8};
  return cfg;
}

void zero_params(MultimodalModel& model) {
  for (Parameter* p : model.parameters()) std::fill(p->value.begin(), p->value.end(), 0.0);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("construction rejects non-bottleneck latents") {
  ModelConfig cfg = small_config();
  cfg.tab_latent = cfg.tab_dim;
  CHECK_THROWS_AS(MultimodalModel(cfg, 0), std::invalid_argument);
  cfg = small_config();
  cfg.img_latent = cfg.img_side * cfg.img_side;
  CHECK_THROWS_AS(MultimodalModel(cfg, 0), std::invalid_argument);
  cfg = small_config();
  cfg.classes = 1;
  CHECK_THROWS_AS(MultimodalModel(cfg, 0), std::invalid_argument);
}

TEST_CASE("zero weights give zero embeddings and bias-only decodes") {
  MultimodalModel model(small_config(), 1);
  zero_params(model);
  const auto h_tab = model.encode_tabular(std::vector<double>(8, 0.7));
  for (double v : h_tab) CHECK(v == 0.0);
  const auto h_img = model.encode_image(std::vector<double>(16 * 16, 0.3));
  for (double v : h_img) CHECK(v == 0.0);
  const auto x_tab = model.decode_tabular(std::vector<double>(4, 1.0));
  for (double v : x_tab) CHECK(v == 0.0);  // zero weights, zero bias
  const auto x_img = model.decode_image(std::vector<double>(12, 1.0));
  for (double v : x_img) CHECK(v == doctest::Approx(0.5));  // sigmoid(0)
}

TEST_CASE("single linear identity layer passes the input through") {
  ModelConfig cfg;
  cfg.tab_dim = 5;
  cfg.tab_latent = 4;
  cfg.tab_hidden = {};
  cfg.img_side = 8;
  cfg.img_latent = 6;
  cfg.conv_channels = {2};
  cfg.mlp_hidden = {};
  MultimodalModel model(cfg, 0);
  zero_params(model);
  // encoder is one linear layer [5,4]; make it the truncated identity
  Parameter* w = model.tabular_ae_parameters()[0];
  REQUIRE(w->shape == Shape{5, 4});
  for (std::size_t i = 0; i < 4; ++i) w->value[i * 4 + i] = 1.0;
  const auto h = model.encode_tabular({0.1, 0.2, 0.3, 0.4, 0.9});
  CHECK(h == std::vector<double>{0.1, 0.2, 0.3, 0.4});
}

TEST_CASE("fixed random tabular encoder matches an independent evaluation") {
  ModelConfig cfg = small_config();
  MultimodalModel model(cfg, 33);
  Rng rng(5);
  std::vector<double> x(cfg.tab_dim);
  for (auto& v : x) v = rng.uniform(0.0, 1.0);
  const auto got = model.encode_tabular(x);

  // layer-by-layer re-evaluation from the raw parameters
  auto params = model.tabular_ae_parameters();
  std::vector<double> cur = x;
  const std::size_t n_layers = cfg.tab_hidden.size() + 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Parameter* w = params[2 * l];
    const Parameter* b = params[2 * l + 1];
    std::vector<double> next(w->shape[1], 0.0);
    for (std::size_t j = 0; j < w->shape[1]; ++j) {
      double acc = b->value[j];
      for (std::size_t i = 0; i < w->shape[0]; ++i) acc += cur[i] * w->value[i * w->shape[1] + j];
      next[j] = l + 1 < n_layers && acc < 0.0 ? 0.0 : acc;
    }
    cur = next;
  }
  REQUIRE(got.size() == cur.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i] == doctest::Approx(cur[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv encoder on a 4x4 image matches a brute-force quadruple loop") {
  ModelConfig cfg;
  cfg.tab_dim = 4;
  cfg.tab_latent = 2;
  cfg.tab_hidden = {};
  cfg.img_side = 4;
  cfg.img_latent = 3;
  cfg.conv_channels = {2};
  cfg.mlp_hidden = {};
  MultimodalModel model(cfg, 77);
  Rng rng(9);
  std::vector<double> img(16);
  for (auto& v : img) v = rng.uniform(0.0, 1.0);
  const auto got = model.encode_image(img);

  auto params = model.conv_ae_parameters();
  const Parameter* k = params[0];  // [2,1,3,3]
  const Parameter* cb = params[1];
  const Parameter* fw = params[2];  // [2*2*2, 3]
  const Parameter* fb = params[3];
  // stride-2 pad-1 conv, relu, flatten, dense
  std::vector<double> feat;
  for (std::size_t co = 0; co < 2; ++co) {
    for (int oy = 0; oy < 2; ++oy) {
      for (int ox = 0; ox < 2; ++ox) {
        double acc = cb->value[co];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy * 2 - 1 + ky;
            const int ix = ox * 2 - 1 + kx;
            if (iy < 0 || ix < 0 || iy >= 4 || ix >= 4) continue;
            acc += img[iy * 4 + ix] * k->value[(co * 9) + ky * 3 + kx];
          }
        }
        feat.push_back(acc > 0.0 ? acc : 0.0);
      }
    }
  }
  std::vector<double> expect(3, 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = fb->value[j];
    for (std::size_t i = 0; i < feat.size(); ++i) acc += feat[i] * fw->value[i * 3 + j];
    expect[j] = acc;
  }
  REQUIRE(got.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) CHECK(got[j] == doctest::Approx(expect[j]).epsilon(1e-12));
}

TEST_CASE("classify returns a probability vector") {
  MultimodalModel model(small_config(), 3);
  SUBCASE("zero logits give the uniform distribution") {
    zero_params(model);
    const auto y = model.classify_latent(std::vector<double>(16, 0.4));
    CHECK(y == std::vector<double>{0.5, 0.5});
  }
  SUBCASE("random latents sum to one") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> h(16);
      for (auto& v : h) v = rng.uniform(-2.0, 2.0);
      const auto y = model.classify_latent(h);
      double sum = 0.0;
      for (double p : y) sum += p;
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
  }
  SUBCASE("wrong latent width is rejected") {
    CHECK_THROWS_AS(model.classify_latent(std::vector<double>(7, 0.0)), std::invalid_argument);
  }
}

TEST_CASE("constructed linear classifier flips with the sign of w dot h") {
  ModelConfig cfg = small_config();
  cfg.mlp_hidden = {};
  MultimodalModel model(cfg, 0);
  Parameter* w = model.classifier_parameters()[0];
  REQUIRE(w->shape == Shape{16, 2});
  Rng rng(23);
  std::vector<double> dir(16);
  for (auto& v : dir) v = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < 16; ++i) {
    w->value[i * 2 + 0] = dir[i];
    w->value[i * 2 + 1] = -dir[i];
  }
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> h(16);
    double dot = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      h[i] = rng.uniform(-1.0, 1.0);
      dot += dir[i] * h[i];
    }
    const auto y = model.classify_latent(h);
    CHECK((y[0] > 0.5) == (dot > 0.0));
  }
}

TEST_CASE("multimodal forward equals the composition of its pieces") {
  MultimodalModel model(small_config(), 41);
  Rng rng(2);
  std::vector<double> x_tab(8), x_img(16 * 16);
  for (auto& v : x_tab) v = rng.uniform(0.0, 1.0);
  for (auto& v : x_img) v = rng.uniform(0.0, 1.0);
  const auto r = model.forward(x_tab, x_img);

  const auto h_tab = model.encode_tabular(x_tab);
  const auto h_img = model.encode_image(x_img);
  std::vector<double> h = h_tab;
  h.insert(h.end(), h_img.begin(), h_img.end());
  CHECK(r.latent.tab == h_tab);
  CHECK(r.latent.img == h_img);
  CHECK(r.latent.fused == h);
  CHECK(r.probs == model.classify_latent(h));
  CHECK(r.tab_recon == model.decode_tabular(h_tab));
  CHECK(r.img_recon == model.decode_image(h_img));
}

TEST_CASE("latent gradient decomposes into per-modality slices") {
  MultimodalModel model(small_config(), 19);
  Rng rng(4);
  std::vector<double> h(16);
  for (auto& v : h) v = rng.uniform(-1.0, 1.0);

  auto grad_of = [&](bool tab_grad, bool img_grad) {
    Tape tape;
    Tensor ht = tape.input({1, 4}, {h.begin(), h.begin() + 4}, tab_grad);
    Tensor hi = tape.input({1, 12}, {h.begin() + 4, h.end()}, img_grad);
    Tensor y = model.classify(tape, tape.concat_cols(ht, hi));
    std::size_t k = 0;
    for (std::size_t i = 1; i < y.value().size(); ++i) {
      if (y.value()[i] > y.value()[k]) k = i;
    }
    tape.backward(tape.select(y, k));
    auto gt = ht.grad();
    auto gi = hi.grad();
    gt.insert(gt.end(), gi.begin(), gi.end());
    return gt;
  };

  const auto full = grad_of(true, true);
  const auto tab_only = grad_of(true, false);
  const auto img_only = grad_of(false, true);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::fabs(full[i] - tab_only[i]) < 1e-12);
  for (std::size_t i = 4; i < 16; ++i) CHECK(std::fabs(full[i] - img_only[i]) < 1e-12);
}

TEST_CASE("checkpoint round-trip is bit exact") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mmxai_model_test";
  fs::create_directories(dir);
  const fs::path file = dir / "model.bin";

  MultimodalModel model(small_config(), 123);
  model.save(file);
  MultimodalModel loaded = MultimodalModel::load(file);

  const auto a = model.parameters();
  const auto b = loaded.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(a[i]->value == b[i]->value);
  }

  Rng rng(8);
  std::vector<double> x_tab(8), x_img(256);
  for (auto& v : x_tab) v = rng.uniform(0.0, 1.0);
  for (auto& v : x_img) v = rng.uniform(0.0, 1.0);
  const auto r1 = model.forward(x_tab, x_img);
  const auto r2 = loaded.forward(x_tab, x_img);
  CHECK(r1.probs == r2.probs);
  CHECK(r1.tab_recon == r2.tab_recon);
  CHECK(r1.img_recon == r2.img_recon);

  const fs::path file2 = dir / "model2.bin";
  loaded.save(file2);
  std::ifstream f1(file, std::ios::binary), f2(file2, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes1 == bytes2);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader names the failure") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mmxai_model_bad";
  fs::create_directories(dir);
  const fs::path file = dir / "bad.bin";
  {
    std::ofstream os(file, std::ios::binary);
    os << "NOTMAGIC and some garbage";
  }
  CHECK_THROWS_WITH_AS(MultimodalModel::load(file), doctest::Contains("magic"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("ablated models carry one modality") {
  ModelConfig cfg = small_config();
  cfg.modality = ModelModality::image_only;
  MultimodalModel model(cfg, 6);
  CHECK(model.config().latent_dim() == cfg.img_latent);
  CHECK(model.tabular_ae_parameters().empty());
  Rng rng(3);
  std::vector<double> img(256);
  for (auto& v : img) v = rng.uniform(0.0, 1.0);
  const auto r = model.forward({}, img);
  CHECK(r.probs.size() == 2);
  CHECK(r.tab_recon.empty());
  CHECK_THROWS_AS(model.forward(std::vector<double>(8, 0.1), img), std::invalid_argument);
}

}  // TEST_SUITE
