#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmxai/tensor.hpp"

namespace mmxai {

enum class ModelModality { multimodal, tabular_only, image_only };

std::string modality_name(ModelModality m);

struct ModelConfig {
  std::size_t tab_dim = 16;    // d_T
  std::size_t img_side = 32;   // s
  std::size_t tab_latent = 8;  // n
  std::size_t img_latent = 32; // m
  std::size_t classes = 2;     // c
  std::vector<std::size_t> tab_hidden = {14, 10};
  std::vector<std::size_t> conv_channels = {8, 16, 32};
  std::vector<std::size_t> mlp_hidden = {32, 16, 8};
  ModelModality modality = ModelModality::multimodal;

  bool has_tabular() const { return modality != ModelModality::image_only; }
  bool has_image() const { return modality != ModelModality::tabular_only; }
  /// Width of the fused embedding actually fed to the classifier.
  std::size_t latent_dim() const;
  /// Image side after the stride-2 encoder stack.
  std::size_t encoded_side() const;
  void validate() const;
};

struct DenseLayer {
  Parameter w;  // [in, out]
  Parameter b;  // [out]
};

struct ConvLayer {
  Parameter k;  // [cout, cin, 3, 3]
  Parameter b;  // [cout]
};

/// Per-modality embeddings and their concatenation.
struct LatentEmbedding {
  std::vector<double> tab;    // h_T
  std::vector<double> img;    // h_I
  std::vector<double> fused;  // h = concat(h_T, h_I)
};

/// Tabular autoencoder + convolutional image autoencoder + MLP classifier
/// over the concatenated latent. Blocks may be absent in ablation modes.
class MultimodalModel {
 public:
  MultimodalModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> tabular_ae_parameters();
  std::vector<Parameter*> conv_ae_parameters();
  std::vector<Parameter*> classifier_parameters();
  std::vector<const Parameter*> parameters() const;

  // Tape-building forwards over batches.
  Tensor encode_tabular(Tape& tape, Tensor x) const;  // [B,d_T] -> [B,n]
  Tensor decode_tabular(Tape& tape, Tensor h) const;  // [B,n] -> [B,d_T]
  Tensor encode_image(Tape& tape, Tensor x) const;    // [B,1,s,s] -> [B,m]
  Tensor decode_image(Tape& tape, Tensor h) const;    // [B,m] -> [B,1,s,s]
  Tensor classify(Tape& tape, Tensor h) const;        // [B,latent] -> [B,c] softmax

  // Single-sample conveniences (fresh tape, values only).
  std::vector<double> encode_tabular(const std::vector<double>& x) const;
  std::vector<double> decode_tabular(const std::vector<double>& h) const;
  std::vector<double> encode_image(const std::vector<double>& img) const;
  std::vector<double> decode_image(const std::vector<double>& h) const;
  std::vector<double> classify_latent(const std::vector<double>& h) const;

  struct ForwardResult {
    std::vector<double> tab_recon;
    std::vector<double> img_recon;
    std::vector<double> probs;
    LatentEmbedding latent;
  };
  /// Full two-input / three-output pass for one sample. Absent-modality
  /// arguments must be empty in ablation modes.
  ForwardResult forward(const std::vector<double>& x_tab,
                        const std::vector<double>& x_img) const;

  void save(const std::filesystem::path& path) const;
  static MultimodalModel load(const std::filesystem::path& path);

 private:
  MultimodalModel() = default;
  void init_weights(std::uint64_t seed);
  Tensor dense_chain(Tape& tape, Tensor x, const std::vector<DenseLayer>& layers,
                     bool relu_last) const;

  ModelConfig cfg_;
  std::vector<DenseLayer> tab_enc_;
  std::vector<DenseLayer> tab_dec_;
  std::vector<ConvLayer> img_enc_conv_;
  DenseLayer img_enc_fc_;
  DenseLayer img_dec_fc_;
  std::vector<ConvLayer> img_dec_conv_;
  std::vector<DenseLayer> clf_;
};

}  // namespace mmxai
