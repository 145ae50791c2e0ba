#include "mmxai/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "mmxai/rng.hpp"

namespace mmxai {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 4);
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& path)
      : is_(path, std::ios::binary), path_(path.string()) {
    if (!is_) throw std::runtime_error("checkpoint: cannot open " + path_);
  }

  std::uint32_t read_u32() {
    unsigned char buf[4];
    read_bytes(buf, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
  }

  double read_f64() {
    unsigned char buf[8];
    read_bytes(buf, 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string read_string(std::size_t len) {
    std::string s(len, '\0');
    read_bytes(reinterpret_cast<unsigned char*>(s.data()), len);
    return s;
  }

  void read_bytes(unsigned char* dst, std::size_t n) {
    is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw std::runtime_error("checkpoint: truncated file " + path_ + " at offset " +
                               std::to_string(offset_));
    }
    offset_ += n;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::ifstream is_;
  std::string path_;
  std::size_t offset_ = 0;
};

constexpr char kMagic[6] = {'M', 'M', 'X', 'A', 'I', '\0'};
constexpr std::uint32_t kVersion = 1;

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// Registering a parameter as a tape leaf does not modify the model; the
// const forwards shed constness only for that registration.
Parameter& mut(const Parameter& p) { return const_cast<Parameter&>(p); }

}  // namespace

std::string modality_name(ModelModality m) {
  switch (m) {
    case ModelModality::multimodal: return "multimodal";
    case ModelModality::tabular_only: return "tabular_only";
    case ModelModality::image_only: return "image_only";
  }
  return "unknown";
}

std::size_t ModelConfig::latent_dim() const {
  std::size_t d = 0;
  if (has_tabular()) d += tab_latent;
  if (has_image()) d += img_latent;
  return d;
}

std::size_t ModelConfig::encoded_side() const {
  std::size_t side = img_side;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (side % 2 != 0) {
      throw std::invalid_argument("ModelConfig: image side " + std::to_string(img_side) +
                                  " not divisible by 2^" + std::to_string(conv_channels.size()));
    }
    side /= 2;
  }
  return side;
}

void ModelConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("ModelConfig: need at least 2 classes");
  if (has_tabular()) {
    if (tab_dim == 0 || tab_latent == 0)
      throw std::invalid_argument("ModelConfig: tabular dims must be positive");
    if (tab_latent >= tab_dim) {
      throw std::invalid_argument("ModelConfig: tabular latent " + std::to_string(tab_latent) +
                                  " must be below input dim " + std::to_string(tab_dim));
    }
  }
  if (has_image()) {
    if (img_side == 0 || img_latent == 0)
      throw std::invalid_argument("ModelConfig: image dims must be positive");
    if (img_latent >= img_side * img_side) {
      throw std::invalid_argument("ModelConfig: image latent " + std::to_string(img_latent) +
                                  " must be below pixel count " +
                                  std::to_string(img_side * img_side));
    }
    if (conv_channels.empty())
      throw std::invalid_argument("ModelConfig: need at least one conv layer");
    const std::size_t side = encoded_side();
    if (side == 0) throw std::invalid_argument("ModelConfig: conv stack collapses the image");
  }
}

MultimodalModel::MultimodalModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.has_tabular()) {
    std::vector<std::size_t> enc_widths;
    enc_widths.push_back(cfg_.tab_dim);
    enc_widths.insert(enc_widths.end(), cfg_.tab_hidden.begin(), cfg_.tab_hidden.end());
    enc_widths.push_back(cfg_.tab_latent);
    for (std::size_t i = 0; i + 1 < enc_widths.size(); ++i) {
      const std::string base = "tab_enc." + std::to_string(i);
      tab_enc_.push_back({Parameter(base + ".w", {enc_widths[i], enc_widths[i + 1]}),
                          Parameter(base + ".b", {enc_widths[i + 1]})});
    }
    std::vector<std::size_t> dec_widths(enc_widths.rbegin(), enc_widths.rend());
    for (std::size_t i = 0; i + 1 < dec_widths.size(); ++i) {
      const std::string base = "tab_dec." + std::to_string(i);
      tab_dec_.push_back({Parameter(base + ".w", {dec_widths[i], dec_widths[i + 1]}),
                          Parameter(base + ".b", {dec_widths[i + 1]})});
    }
  }
  if (cfg_.has_image()) {
    const std::size_t side = cfg_.encoded_side();
    const std::size_t feat = cfg_.conv_channels.back() * side * side;
    std::size_t cin = 1;
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      const std::size_t cout = cfg_.conv_channels[i];
      const std::string base = "img_enc.conv" + std::to_string(i);
      img_enc_conv_.push_back(
          {Parameter(base + ".k", {cout, cin, 3, 3}), Parameter(base + ".b", {cout})});
      cin = cout;
    }
    img_enc_fc_ = {Parameter("img_enc.fc.w", {feat, cfg_.img_latent}),
                   Parameter("img_enc.fc.b", {cfg_.img_latent})};
    img_dec_fc_ = {Parameter("img_dec.fc.w", {cfg_.img_latent, feat}),
                   Parameter("img_dec.fc.b", {feat})};
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      const std::size_t src = cfg_.conv_channels[cfg_.conv_channels.size() - 1 - i];
      const std::size_t dst =
          i + 1 < cfg_.conv_channels.size() ? cfg_.conv_channels[cfg_.conv_channels.size() - 2 - i]
                                            : 1;
      const std::string base = "img_dec.conv" + std::to_string(i);
      img_dec_conv_.push_back(
          {Parameter(base + ".k", {dst, src, 3, 3}), Parameter(base + ".b", {dst})});
    }
  }
  {
    std::vector<std::size_t> widths;
    widths.push_back(cfg_.latent_dim());
    widths.insert(widths.end(), cfg_.mlp_hidden.begin(), cfg_.mlp_hidden.end());
    widths.push_back(cfg_.classes);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const std::string base = "clf." + std::to_string(i);
      clf_.push_back({Parameter(base + ".w", {widths[i], widths[i + 1]}),
                      Parameter(base + ".b", {widths[i + 1]})});
    }
  }
  init_weights(seed);
}

void MultimodalModel::init_weights(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));  // "model" stream
  for (Parameter* p : parameters()) {
    if (p->shape.size() == 2) {
      const double bound = glorot_bound(p->shape[0], p->shape[1]);
      for (double& v : p->value) v = rng.uniform(-bound, bound);
    } else if (p->shape.size() == 4) {
      const std::size_t rf = p->shape[2] * p->shape[3];
      const double bound = glorot_bound(p->shape[1] * rf, p->shape[0] * rf);
      for (double& v : p->value) v = rng.uniform(-bound, bound);
    }
    // rank-1 biases stay zero
  }
}

std::vector<Parameter*> MultimodalModel::tabular_ae_parameters() {
  std::vector<Parameter*> out;
  for (auto& l : tab_enc_) { out.push_back(&l.w); out.push_back(&l.b); }
  for (auto& l : tab_dec_) { out.push_back(&l.w); out.push_back(&l.b); }
  return out;
}

std::vector<Parameter*> MultimodalModel::conv_ae_parameters() {
  std::vector<Parameter*> out;
  for (auto& l : img_enc_conv_) { out.push_back(&l.k); out.push_back(&l.b); }
  if (cfg_.has_image()) {
    out.push_back(&img_enc_fc_.w);
    out.push_back(&img_enc_fc_.b);
    out.push_back(&img_dec_fc_.w);
    out.push_back(&img_dec_fc_.b);
  }
  for (auto& l : img_dec_conv_) { out.push_back(&l.k); out.push_back(&l.b); }
  return out;
}

std::vector<Parameter*> MultimodalModel::classifier_parameters() {
  std::vector<Parameter*> out;
  for (auto& l : clf_) { out.push_back(&l.w); out.push_back(&l.b); }
  return out;
}

std::vector<Parameter*> MultimodalModel::parameters() {
  std::vector<Parameter*> out = tabular_ae_parameters();
  for (Parameter* p : conv_ae_parameters()) out.push_back(p);
  for (Parameter* p : classifier_parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> MultimodalModel::parameters() const {
  auto* self = const_cast<MultimodalModel*>(this);
  std::vector<const Parameter*> out;
  for (Parameter* p : self->parameters()) out.push_back(p);
  return out;
}

Tensor MultimodalModel::dense_chain(Tape& tape, Tensor x, const std::vector<DenseLayer>& layers,
                                    bool relu_last) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = tape.add_row_bias(tape.matmul(h, tape.param(mut(layers[i].w))),
                          tape.param(mut(layers[i].b)));
    if (i + 1 < layers.size() || relu_last) h = tape.relu(h);
  }
  return h;
}

Tensor MultimodalModel::encode_tabular(Tape& tape, Tensor x) const {
  if (!cfg_.has_tabular()) throw std::runtime_error("encode_tabular: model has no tabular block");
  return dense_chain(tape, x, tab_enc_, false);
}

Tensor MultimodalModel::decode_tabular(Tape& tape, Tensor h) const {
  if (!cfg_.has_tabular()) throw std::runtime_error("decode_tabular: model has no tabular block");
  return dense_chain(tape, h, tab_dec_, false);
}

Tensor MultimodalModel::encode_image(Tape& tape, Tensor x) const {
  if (!cfg_.has_image()) throw std::runtime_error("encode_image: model has no image block");
  const std::size_t batch = x.shape().empty() ? 0 : x.shape()[0];
  Tensor h = x;
  for (const auto& l : img_enc_conv_) {
    h = tape.conv2d(h, tape.param(mut(l.k)), 2, 1);
    h = tape.add_channel_bias(h, tape.param(mut(l.b)));
    h = tape.relu(h);
  }
  const std::size_t feat = img_enc_fc_.w.shape[0];
  h = tape.reshape(h, {batch, feat});
  return tape.add_row_bias(tape.matmul(h, tape.param(mut(img_enc_fc_.w))),
                           tape.param(mut(img_enc_fc_.b)));
}

Tensor MultimodalModel::decode_image(Tape& tape, Tensor h) const {
  if (!cfg_.has_image()) throw std::runtime_error("decode_image: model has no image block");
  const std::size_t batch = h.shape().empty() ? 0 : h.shape()[0];
  const std::size_t side = cfg_.encoded_side();
  Tensor t = tape.relu(tape.add_row_bias(tape.matmul(h, tape.param(mut(img_dec_fc_.w))),
                                         tape.param(mut(img_dec_fc_.b))));
  t = tape.reshape(t, {batch, cfg_.conv_channels.back(), side, side});
  for (std::size_t i = 0; i < img_dec_conv_.size(); ++i) {
    t = tape.upsample_zero(t, 2);
    t = tape.conv2d(t, tape.param(mut(img_dec_conv_[i].k)), 1, 1);
    t = tape.add_channel_bias(t, tape.param(mut(img_dec_conv_[i].b)));
    t = i + 1 < img_dec_conv_.size() ? tape.relu(t) : tape.sigmoid(t);
  }
  return t;
}

Tensor MultimodalModel::classify(Tape& tape, Tensor h) const {
  if (h.shape().size() != 2 || h.shape()[1] != cfg_.latent_dim()) {
    throw std::invalid_argument("classify: expected [B," + std::to_string(cfg_.latent_dim()) +
                                "], got " + shape_str(h.shape()));
  }
  return tape.softmax(dense_chain(tape, h, clf_, false));
}

std::vector<double> MultimodalModel::encode_tabular(const std::vector<double>& x) const {
  if (x.size() != cfg_.tab_dim) {
    throw std::invalid_argument("encode_tabular: expected length " +
                                std::to_string(cfg_.tab_dim) + ", got " +
                                std::to_string(x.size()));
  }
  Tape tape;
  return encode_tabular(tape, tape.input({1, cfg_.tab_dim}, x)).value();
}

std::vector<double> MultimodalModel::decode_tabular(const std::vector<double>& h) const {
  if (h.size() != cfg_.tab_latent) {
    throw std::invalid_argument("decode_tabular: expected length " +
                                std::to_string(cfg_.tab_latent) + ", got " +
                                std::to_string(h.size()));
  }
  Tape tape;
  return decode_tabular(tape, tape.input({1, cfg_.tab_latent}, h)).value();
}

std::vector<double> MultimodalModel::encode_image(const std::vector<double>& img) const {
  if (img.size() != cfg_.img_side * cfg_.img_side) {
    throw std::invalid_argument("encode_image: expected " +
                                std::to_string(cfg_.img_side * cfg_.img_side) + " pixels, got " +
                                std::to_string(img.size()));
  }
  Tape tape;
  return encode_image(tape, tape.input({1, 1, cfg_.img_side, cfg_.img_side}, img)).value();
}

std::vector<double> MultimodalModel::decode_image(const std::vector<double>& h) const {
  if (h.size() != cfg_.img_latent) {
    throw std::invalid_argument("decode_image: expected length " +
                                std::to_string(cfg_.img_latent) + ", got " +
                                std::to_string(h.size()));
  }
  Tape tape;
  return decode_image(tape, tape.input({1, cfg_.img_latent}, h)).value();
}

std::vector<double> MultimodalModel::classify_latent(const std::vector<double>& h) const {
  if (h.size() != cfg_.latent_dim()) {
    throw std::invalid_argument("classify_latent: expected length " +
                                std::to_string(cfg_.latent_dim()) + ", got " +
                                std::to_string(h.size()));
  }
  Tape tape;
  return classify(tape, tape.input({1, h.size()}, h)).value();
}

MultimodalModel::ForwardResult MultimodalModel::forward(const std::vector<double>& x_tab,
                                                        const std::vector<double>& x_img) const {
  ForwardResult r;
  Tape tape;
  Tensor h_tab, h_img, h;
  bool have_tab = false, have_img = false;
  if (cfg_.has_tabular()) {
    if (x_tab.size() != cfg_.tab_dim) {
      throw std::invalid_argument("forward: tabular input length " + std::to_string(x_tab.size()) +
                                  ", expected " + std::to_string(cfg_.tab_dim));
    }
    h_tab = encode_tabular(tape, tape.input({1, cfg_.tab_dim}, x_tab));
    r.latent.tab = h_tab.value();
    have_tab = true;
  } else if (!x_tab.empty()) {
    throw std::invalid_argument("forward: model has no tabular block");
  }
  if (cfg_.has_image()) {
    if (x_img.size() != cfg_.img_side * cfg_.img_side) {
      throw std::invalid_argument("forward: image input length " + std::to_string(x_img.size()) +
                                  ", expected " + std::to_string(cfg_.img_side * cfg_.img_side));
    }
    h_img = encode_image(tape, tape.input({1, 1, cfg_.img_side, cfg_.img_side}, x_img));
    r.latent.img = h_img.value();
    have_img = true;
  } else if (!x_img.empty()) {
    throw std::invalid_argument("forward: model has no image block");
  }
  if (have_tab && have_img) {
    h = tape.concat_cols(h_tab, h_img);
  } else {
    h = have_tab ? h_tab : h_img;
  }
  r.latent.fused = h.value();
  r.probs = classify(tape, h).value();
  if (have_tab) r.tab_recon = decode_tabular(tape, h_tab).value();
  if (have_img) r.img_recon = decode_image(tape, h_img).value();
  return r;
}

void MultimodalModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
  os.write(kMagic, 6);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(cfg_.tab_dim));
  write_u32(os, static_cast<std::uint32_t>(cfg_.img_side));
  write_u32(os, static_cast<std::uint32_t>(cfg_.tab_latent));
  write_u32(os, static_cast<std::uint32_t>(cfg_.img_latent));
  write_u32(os, static_cast<std::uint32_t>(cfg_.classes));
  const auto params = parameters();
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    write_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u32(os, static_cast<std::uint32_t>(p->shape.size()));
    for (std::size_t d : p->shape) write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : p->value) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

MultimodalModel MultimodalModel::load(const std::filesystem::path& path) {
  CheckpointReader in(path);
  unsigned char magic[6];
  in.read_bytes(magic, 6);
  if (std::memcmp(magic, kMagic, 6) != 0) {
    throw std::runtime_error("checkpoint: bad magic at offset 0 in " + path.string());
  }
  const std::uint32_t version = in.read_u32();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.tab_dim = in.read_u32();
  cfg.img_side = in.read_u32();
  cfg.tab_latent = in.read_u32();
  cfg.img_latent = in.read_u32();
  cfg.classes = in.read_u32();

  struct Record {
    std::string name;
    Shape shape;
    std::vector<double> value;
  };
  const std::uint32_t count = in.read_u32();
  std::vector<Record> records(count);
  for (auto& rec : records) {
    const std::uint32_t name_len = in.read_u32();
    rec.name = in.read_string(name_len);
    const std::uint32_t rank = in.read_u32();
    rec.shape.resize(rank);
    std::size_t total = 1;
    for (auto& d : rec.shape) {
      d = in.read_u32();
      total *= d;
    }
    rec.value.resize(total);
    for (auto& v : rec.value) v = in.read_f64();
  }

  // Recover the layer structure from the stored shapes.
  bool has_tab = false, has_img = false;
  std::map<std::size_t, Shape> tab_enc_shapes, conv_shapes, clf_shapes;
  for (const auto& rec : records) {
    if (rec.name.rfind("tab_enc.", 0) == 0) {
      has_tab = true;
      if (rec.name.size() > 2 && rec.name.compare(rec.name.size() - 2, 2, ".w") == 0) {
        tab_enc_shapes[std::stoul(rec.name.substr(8))] = rec.shape;
      }
    } else if (rec.name.rfind("img_enc.conv", 0) == 0) {
      has_img = true;
      if (rec.name.compare(rec.name.size() - 2, 2, ".k") == 0) {
        conv_shapes[std::stoul(rec.name.substr(12))] = rec.shape;
      }
    } else if (rec.name.rfind("img_enc.fc", 0) == 0) {
      has_img = true;
    } else if (rec.name.rfind("clf.", 0) == 0) {
      if (rec.name.compare(rec.name.size() - 2, 2, ".w") == 0) {
        clf_shapes[std::stoul(rec.name.substr(4))] = rec.shape;
      }
    }
  }
  if (has_tab && !has_img) cfg.modality = ModelModality::tabular_only;
  if (!has_tab && has_img) cfg.modality = ModelModality::image_only;
  cfg.tab_hidden.clear();
  for (const auto& [idx, shape] : tab_enc_shapes) {
    if (idx + 1 != tab_enc_shapes.size()) cfg.tab_hidden.push_back(shape[1]);
  }
  cfg.conv_channels.clear();
  for (const auto& [idx, shape] : conv_shapes) {
    (void)idx;
    cfg.conv_channels.push_back(shape[0]);
  }
  cfg.mlp_hidden.clear();
  for (const auto& [idx, shape] : clf_shapes) {
    if (idx + 1 != clf_shapes.size()) cfg.mlp_hidden.push_back(shape[1]);
  }

  MultimodalModel model(cfg, 0);
  std::map<std::string, Record*> by_name;
  for (auto& rec : records) by_name[rec.name] = &rec;
  for (Parameter* p : model.parameters()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: missing parameter " + p->name + " in " +
                               path.string());
    }
    if (it->second->shape != p->shape) {
      throw std::runtime_error("checkpoint: parameter " + p->name + " has shape " +
                               shape_str(it->second->shape) + ", expected " + shape_str(p->shape));
    }
    p->value = it->second->value;
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw std::runtime_error("checkpoint: unexpected parameter " + by_name.begin()->first +
                             " in " + path.string());
  }
  return model;
}

}  // namespace mmxai
