#include "mmxai/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mmxai/io.hpp"
#include "mmxai/rng.hpp"

namespace mmxai {

namespace {

constexpr std::uint64_t kSynthStream = 0x73796e7468ULL;  // "synth"

// The planted image region is brightened by separation * this factor. The
// swap rate, not the amplitude, bounds how informative the region can be, so
// the bump is kept strong enough to dominate the encoder's latent geometry.
constexpr double kImageBumpScale = 2.0;

// Every latent dimension of the trained autoencoders should carry strong,
// class-independent structure; otherwise the classifier accumulates weight on
// near-degenerate directions and the latent-shift reconstruction differences
// smear off the planted evidence. The generator therefore correlates features
// through per-sample factors: an alternating-sign severity factor across the
// planted features (orthogonal to the class-mean direction), shared factors
// within groups of nuisance features, and smooth brightness/tilt fields in
// the images.
constexpr double kSeverityFactorWeight = 0.85;
constexpr double kNuisanceFactorWeight = 0.85;
constexpr std::size_t kNuisanceGroupSize = 3;
constexpr double kBrightnessSigma = 0.0;
constexpr double kTiltSigma = 0.0;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32_le(std::istream& is, const std::string& what) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (is.gcount() != 4) throw std::runtime_error(what + ": truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<std::uint32_t> Dataset::groups() const {
  std::vector<std::uint32_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.group);
  return out;
}

void SynthConfig::validate() const {
  if (n_samples == 0) throw std::invalid_argument("SynthConfig: n_samples must be positive");
  if (tab_dim == 0) throw std::invalid_argument("SynthConfig: tab_dim must be positive");
  if (n_informative == 0 || n_informative >= tab_dim) {
    throw std::invalid_argument("SynthConfig: need 0 < n_informative < tab_dim");
  }
  if (n_categorical > tab_dim) {
    throw std::invalid_argument("SynthConfig: n_categorical exceeds tab_dim");
  }
  if (img_side == 0) throw std::invalid_argument("SynthConfig: img_side must be positive");
  const std::size_t margin = std::max<std::size_t>(1, img_side / 8);
  if (region == 0 || region + 2 * margin > img_side) {
    throw std::invalid_argument("SynthConfig: region " + std::to_string(region) +
                                " does not fit in image of side " + std::to_string(img_side));
  }
  if (missing_rate < 0.0 || missing_rate > 1.0) {
    throw std::invalid_argument("SynthConfig: missing_rate must lie in [0,1]");
  }
  if (separation < 0.0) throw std::invalid_argument("SynthConfig: separation must be >= 0");
  if (evidence_swap_rate < 0.0 || evidence_swap_rate >= 0.5) {
    throw std::invalid_argument("SynthConfig: evidence_swap_rate must lie in [0, 0.5)");
  }
  if (noise < 0.0) throw std::invalid_argument("SynthConfig: noise must be >= 0");
  if (n_groups == 0) throw std::invalid_argument("SynthConfig: n_groups must be positive");
  if (!group_sizes.empty()) {
    std::size_t total = 0;
    for (std::size_t g : group_sizes) total += g;
    if (group_sizes.size() != n_groups || total != n_samples) {
      throw std::invalid_argument("SynthConfig: group_sizes must cover all samples");
    }
  }
}

std::vector<std::size_t> SynthConfig::informative_indices() const {
  std::vector<std::size_t> idx(n_informative);
  for (std::size_t j = 0; j < n_informative; ++j) idx[j] = (j * tab_dim) / n_informative;
  return idx;
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, kSynthStream));
  const auto informative = cfg.informative_indices();
  std::vector<bool> is_informative(cfg.tab_dim, false);
  for (std::size_t j : informative) is_informative[j] = true;

  const std::size_t margin = std::max<std::size_t>(1, cfg.img_side / 8);
  // Class 0 region sits near the top-left corner, class 1 near the bottom-right.
  const std::size_t r0 = margin;
  const std::size_t r1 = cfg.img_side - margin - cfg.region;

  Dataset data;
  data.tab_dim = cfg.tab_dim;
  data.img_side = cfg.img_side;
  data.samples.resize(cfg.n_samples);

  std::vector<std::uint32_t> group_of(cfg.n_samples);
  if (!cfg.group_sizes.empty()) {
    std::size_t i = 0;
    for (std::uint32_t g = 0; g < cfg.group_sizes.size(); ++g) {
      for (std::size_t k = 0; k < cfg.group_sizes[g]; ++k) group_of[i++] = g;
    }
  } else {
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
      group_of[i] = static_cast<std::uint32_t>(i % cfg.n_groups);
    }
  }

  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    MultimodalSample& s = data.samples[i];
    s.id = static_cast<std::uint32_t>(i);
    s.group = group_of[i];
    s.label = cfg.group_sizes.empty() ? static_cast<int>((i / cfg.n_groups) % 2)
                                      : static_cast<int>(i % 2);
    const bool swap_tab = rng.bernoulli(cfg.evidence_swap_rate);
    const bool swap_img = rng.bernoulli(cfg.evidence_swap_rate);
    const double sign = (s.label == 1) != swap_tab ? 1.0 : -1.0;

    s.tab.resize(cfg.tab_dim);
    s.tab_mask.assign(cfg.tab_dim, 0);
    const double severity = rng.normal();
    std::vector<double> group_factors((cfg.tab_dim / kNuisanceGroupSize) + 1);
    for (auto& f : group_factors) f = rng.normal();
    const double sev_own = std::sqrt(1.0 - kSeverityFactorWeight * kSeverityFactorWeight);
    const double nui_own = std::sqrt(1.0 - kNuisanceFactorWeight * kNuisanceFactorWeight);
    std::size_t planted_seen = 0, nuisance_seen = 0;
    for (std::size_t j = 0; j < cfg.tab_dim; ++j) {
      if (j < cfg.n_categorical) {
        double p = 0.5;
        if (is_informative[j]) p = std::clamp(0.5 + sign * cfg.separation, 0.05, 0.95);
        s.tab[j] = rng.bernoulli(p) ? 1.0 : 0.0;
      } else if (is_informative[j]) {
        // alternating factor loadings keep the severity direction orthogonal
        // to the class-mean direction
        const double loading = planted_seen++ % 2 == 0 ? 1.0 : -1.0;
        const double mean = 0.5 + sign * cfg.separation / 2.0;
        s.tab[j] = mean + cfg.noise * (kSeverityFactorWeight * loading * severity +
                                       sev_own * rng.normal());
      } else {
        const double factor = group_factors[nuisance_seen++ / kNuisanceGroupSize];
        s.tab[j] = 0.5 + cfg.noise * (kNuisanceFactorWeight * factor +
                                      nui_own * rng.normal());
      }
      if (is_informative[j]) s.tab_mask[j] = 1;
    }

    const std::size_t r = (s.label == 1) != swap_img ? r1 : r0;
    s.img.resize(cfg.img_side * cfg.img_side);
    s.img_mask.assign(cfg.img_side * cfg.img_side, 0);
    const double brightness = kBrightnessSigma * rng.normal();
    const double tilt_x = kTiltSigma * rng.normal();
    const double tilt_y = kTiltSigma * rng.normal();
    const double span = cfg.img_side > 1 ? static_cast<double>(cfg.img_side - 1) : 1.0;
    for (std::size_t y = 0; y < cfg.img_side; ++y) {
      for (std::size_t x = 0; x < cfg.img_side; ++x) {
        double v = 0.35 + brightness + tilt_x * (static_cast<double>(x) / span - 0.5) +
                   tilt_y * (static_cast<double>(y) / span - 0.5) + cfg.noise * rng.normal();
        const bool inside = y >= r && y < r + cfg.region && x >= r && x < r + cfg.region;
        if (inside) {
          v += cfg.separation * kImageBumpScale;
          s.img_mask[y * cfg.img_side + x] = 1;
        }
        s.img[y * cfg.img_side + x] = std::clamp(v, 0.0, 1.0);
      }
    }

    for (std::size_t j = 0; j < cfg.tab_dim; ++j) {
      if (rng.bernoulli(cfg.missing_rate)) {
        s.tab[j] = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return data;
}

ImputeParams impute_fit(const Table& train) {
  if (train.empty()) throw std::invalid_argument("impute_fit: empty training table");
  const std::size_t dim = train.front().size();
  ImputeParams params;
  params.fill.resize(dim);
  params.categorical.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    bool categorical = true;
    std::size_t present = 0, ones = 0;
    double sum = 0.0;
    for (const auto& row : train) {
      const double v = row[j];
      if (std::isnan(v)) continue;
      ++present;
      sum += v;
      if (v == 1.0) ++ones;
      if (v != 0.0 && v != 1.0) categorical = false;
    }
    if (present == 0) {
      throw std::runtime_error("impute_fit: feature " + std::to_string(j) +
                               " entirely missing in training split");
    }
    params.categorical[j] = categorical;
    // Mode for 0/1 features (ties resolve to 0), mean otherwise.
    params.fill[j] = categorical ? (2 * ones > present ? 1.0 : 0.0)
                                 : sum / static_cast<double>(present);
  }
  return params;
}

Table impute_apply(const Table& rows, const ImputeParams& params) {
  Table out = rows;
  for (auto& row : out) {
    if (row.size() != params.fill.size()) {
      throw std::invalid_argument("impute_apply: row width " + std::to_string(row.size()) +
                                  " does not match fitted width " +
                                  std::to_string(params.fill.size()));
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (std::isnan(row[j])) row[j] = params.fill[j];
    }
  }
  return out;
}

ScalerParams minmax_fit(const Table& train) {
  if (train.empty()) throw std::invalid_argument("minmax_fit: empty training table");
  const std::size_t dim = train.front().size();
  ScalerParams params;
  params.min.assign(dim, std::numeric_limits<double>::infinity());
  params.max.assign(dim, -std::numeric_limits<double>::infinity());
  for (const auto& row : train) {
    for (std::size_t j = 0; j < dim; ++j) {
      if (std::isnan(row[j])) continue;
      params.min[j] = std::min(params.min[j], row[j]);
      params.max[j] = std::max(params.max[j], row[j]);
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    if (!std::isfinite(params.min[j])) {
      throw std::runtime_error("minmax_fit: feature " + std::to_string(j) +
                               " has no observed values");
    }
  }
  return params;
}

Table minmax_apply(const Table& rows, const ScalerParams& params) {
  Table out = rows;
  for (auto& row : out) {
    if (row.size() != params.min.size()) {
      throw std::invalid_argument("minmax_apply: row width mismatch");
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double span = params.max[j] - params.min[j];
      double v = span > 0.0 ? (row[j] - params.min[j]) / span : 0.0;
      row[j] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

PreprocParams preprocess_fit_apply(Dataset& data, const std::vector<std::size_t>& train_idx) {
  Table train_rows;
  train_rows.reserve(train_idx.size());
  for (std::size_t i : train_idx) train_rows.push_back(data.samples.at(i).tab);

  PreprocParams params;
  params.impute = impute_fit(train_rows);
  const Table imputed_train = impute_apply(train_rows, params.impute);
  params.scaler = minmax_fit(imputed_train);

  Table all;
  all.reserve(data.samples.size());
  for (const auto& s : data.samples) all.push_back(s.tab);
  all = minmax_apply(impute_apply(all, params.impute), params.scaler);
  for (std::size_t i = 0; i < data.samples.size(); ++i) data.samples[i].tab = all[i];
  return params;
}

std::vector<double> resize_image(const std::vector<double>& img, std::size_t src_side,
                                 std::size_t dst_side) {
  if (img.size() != src_side * src_side) {
    throw std::invalid_argument("resize_image: expected square " + std::to_string(src_side) +
                                "x" + std::to_string(src_side) + " input, got " +
                                std::to_string(img.size()) + " pixels");
  }
  if (src_side == dst_side) return img;
  std::vector<double> out(dst_side * dst_side);
  const double scale = dst_side > 1
                           ? static_cast<double>(src_side - 1) / static_cast<double>(dst_side - 1)
                           : 0.0;
  for (std::size_t y = 0; y < dst_side; ++y) {
    const double sy = dst_side > 1 ? y * scale : (src_side - 1) / 2.0;
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, src_side - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dst_side; ++x) {
      const double sx = dst_side > 1 ? x * scale : (src_side - 1) / 2.0;
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, src_side - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = img[y0 * src_side + x0] * (1.0 - fx) + img[y0 * src_side + x1] * fx;
      const double bot = img[y1 * src_side + x0] * (1.0 - fx) + img[y1 * src_side + x1] * fx;
      out[y * dst_side + x] = std::clamp(top * (1.0 - fy) + bot * fy, 0.0, 1.0);
    }
  }
  return out;
}

std::vector<ManifestEntry> save_dataset(const std::filesystem::path& dir, const Dataset& data,
                                        bool pgm_images) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> written;

  {
    std::ofstream os(dir / "tabular.csv");
    if (!os) throw std::runtime_error("save_dataset: cannot write tabular.csv");
    os << "id,group,label";
    for (std::size_t j = 0; j < data.tab_dim; ++j) os << ",f" << j;
    os << '\n';
    for (const auto& s : data.samples) {
      os << s.id << ',' << s.group << ',' << s.label;
      for (std::size_t j = 0; j < data.tab_dim; ++j) {
        os << ',';
        if (!std::isnan(s.tab[j])) os << fmt_double(s.tab[j]);
      }
      os << '\n';
    }
    written.push_back("tabular.csv");
  }

  {
    std::ofstream os(dir / "tab_masks.csv");
    if (!os) throw std::runtime_error("save_dataset: cannot write tab_masks.csv");
    os << "id";
    for (std::size_t j = 0; j < data.tab_dim; ++j) os << ",m" << j;
    os << '\n';
    for (const auto& s : data.samples) {
      os << s.id;
      for (std::size_t j = 0; j < data.tab_dim; ++j) os << ',' << int(s.tab_mask[j]);
      os << '\n';
    }
    written.push_back("tab_masks.csv");
  }

  if (pgm_images) {
    fs::create_directories(dir / "images");
    for (const auto& s : data.samples) {
      const std::string rel = "images/" + std::to_string(s.id) + ".pgm";
      write_pgm(dir / rel, s.img, data.img_side, data.img_side);
      written.push_back(rel);
    }
  } else {
    std::ofstream os(dir / "images.bin", std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset: cannot write images.bin");
    os.write("MMIMG", 5);
    write_u32_le(os, static_cast<std::uint32_t>(data.samples.size()));
    write_u32_le(os, static_cast<std::uint32_t>(data.img_side));
    for (const auto& s : data.samples) {
      for (double v : s.img) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(buf), 8);
      }
    }
    written.push_back("images.bin");
  }

  fs::create_directories(dir / "img_masks");
  for (const auto& s : data.samples) {
    const std::string rel = "img_masks/" + std::to_string(s.id) + ".pgm";
    std::vector<double> mask(s.img_mask.begin(), s.img_mask.end());
    write_pgm(dir / rel, mask, data.img_side, data.img_side);
    written.push_back(rel);
  }

  std::sort(written.begin(), written.end());
  std::vector<ManifestEntry> manifest;
  manifest.reserve(written.size());
  for (const auto& rel : written) manifest.push_back({rel, file_hash(dir / rel)});
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Dataset data;

  std::ifstream tab(dir / "tabular.csv");
  if (!tab) throw std::runtime_error("load_dataset: cannot open " + (dir / "tabular.csv").string());
  std::string line;
  if (!std::getline(tab, line)) throw std::runtime_error("load_dataset: empty tabular.csv");
  {
    const auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "id" || header[1] != "group" || header[2] != "label") {
      throw std::runtime_error("load_dataset: malformed tabular.csv header at line 1");
    }
    data.tab_dim = header.size() - 3;
    for (std::size_t j = 0; j < data.tab_dim; ++j) {
      if (header[3 + j] != "f" + std::to_string(j)) {
        throw std::runtime_error("load_dataset: unexpected column '" + header[3 + j] +
                                 "' at position " + std::to_string(3 + j));
      }
    }
  }
  std::size_t line_no = 1;
  while (std::getline(tab, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != data.tab_dim + 3) {
      throw std::runtime_error("load_dataset: wrong cell count at tabular.csv line " +
                               std::to_string(line_no));
    }
    MultimodalSample s;
    s.id = static_cast<std::uint32_t>(std::stoul(cells[0]));
    s.group = static_cast<std::uint32_t>(std::stoul(cells[1]));
    s.label = std::stoi(cells[2]);
    s.tab.resize(data.tab_dim);
    for (std::size_t j = 0; j < data.tab_dim; ++j) {
      s.tab[j] = cells[3 + j].empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : std::stod(cells[3 + j]);
    }
    data.samples.push_back(std::move(s));
  }

  const fs::path packed = dir / "images.bin";
  if (fs::exists(packed)) {
    std::ifstream is(packed, std::ios::binary);
    char magic[5];
    is.read(magic, 5);
    if (is.gcount() != 5 || std::memcmp(magic, "MMIMG", 5) != 0) {
      throw std::runtime_error("load_dataset: bad magic at offset 0 in images.bin");
    }
    const std::uint32_t count = read_u32_le(is, "images.bin");
    const std::uint32_t side = read_u32_le(is, "images.bin");
    if (count != data.samples.size()) {
      throw std::runtime_error("load_dataset: images.bin holds " + std::to_string(count) +
                               " images for " + std::to_string(data.samples.size()) + " samples");
    }
    data.img_side = side;
    const std::size_t pixels = static_cast<std::size_t>(side) * side;
    std::vector<unsigned char> buf(pixels * 8);
    for (auto& s : data.samples) {
      is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
        throw std::runtime_error("load_dataset: truncated images.bin at sample " +
                                 std::to_string(s.id));
      }
      s.img.resize(pixels);
      for (std::size_t i = 0; i < pixels; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
        std::memcpy(&s.img[i], &bits, 8);
      }
    }
  } else {
    for (auto& s : data.samples) {
      const PgmImage img = read_pgm(dir / "images" / (std::to_string(s.id) + ".pgm"));
      if (img.width != img.height) {
        throw std::runtime_error("load_dataset: non-square image for sample " +
                                 std::to_string(s.id));
      }
      if (data.img_side == 0) data.img_side = img.width;
      if (img.width != data.img_side) {
        throw std::runtime_error("load_dataset: inconsistent image sides");
      }
      s.img = img.pixels;
    }
  }

  {
    std::ifstream ms(dir / "tab_masks.csv");
    if (!ms) throw std::runtime_error("load_dataset: cannot open tab_masks.csv");
    std::getline(ms, line);  // header
    std::map<std::uint32_t, std::vector<std::uint8_t>> masks;
    while (std::getline(ms, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != data.tab_dim + 1) {
        throw std::runtime_error("load_dataset: malformed tab_masks.csv row");
      }
      std::vector<std::uint8_t> mask(data.tab_dim);
      for (std::size_t j = 0; j < data.tab_dim; ++j) {
        mask[j] = cells[1 + j] == "1" ? 1 : 0;
      }
      masks[static_cast<std::uint32_t>(std::stoul(cells[0]))] = std::move(mask);
    }
    for (auto& s : data.samples) {
      auto it = masks.find(s.id);
      if (it == masks.end()) {
        throw std::runtime_error("load_dataset: missing tabular mask for sample " +
                                 std::to_string(s.id));
      }
      s.tab_mask = it->second;
    }
  }

  for (auto& s : data.samples) {
    const PgmImage img = read_pgm(dir / "img_masks" / (std::to_string(s.id) + ".pgm"));
    if (img.pixels.size() != data.img_side * data.img_side) {
      throw std::runtime_error("load_dataset: mask size mismatch for sample " +
                               std::to_string(s.id));
    }
    s.img_mask.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) s.img_mask[i] = img.pixels[i] > 0.5;
  }

  return data;
}

}  // namespace mmxai
