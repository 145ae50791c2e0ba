#include "mmxai/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mmxai {

std::uint64_t fnv1a64(const unsigned char* data, std::size_t len) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("file_hash: cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

void write_pgm(const std::filesystem::path& path, const std::vector<double>& pixels,
               std::size_t width, std::size_t height, bool stretch) {
  if (pixels.size() != width * height) {
    throw std::invalid_argument("write_pgm: pixel count " + std::to_string(pixels.size()) +
                                " does not match " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
  double lo = 0.0, hi = 1.0;
  if (stretch) {
    lo = pixels.empty() ? 0.0 : *std::min_element(pixels.begin(), pixels.end());
    hi = pixels.empty() ? 1.0 : *std::max_element(pixels.begin(), pixels.end());
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_pgm: cannot write " + path.string());
  os << "P2\n" << width << ' ' << height << "\n255\n";
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double v = pixels[y * width + x];
      v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      const int q = std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255);
      os << q << (x + 1 < width ? ' ' : '\n');
    }
  }
  if (!os) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_pgm: cannot open " + path.string());
  std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  // Strip comment lines before tokenizing.
  std::string cleaned;
  cleaned.reserve(content.size());
  for (std::size_t i = 0; i < content.size(); ++i) {
    if (content[i] == '#') {
      while (i < content.size() && content[i] != '\n') ++i;
    }
    if (i < content.size()) cleaned.push_back(content[i]);
  }
  std::istringstream ss(cleaned);
  std::string magic;
  ss >> magic;
  if (magic != "P2") {
    throw std::runtime_error("read_pgm: bad magic '" + magic + "' at offset 0 in " +
                             path.string());
  }
  long w = 0, h = 0, maxval = 0;
  if (!(ss >> w >> h >> maxval) || w <= 0 || h <= 0 || maxval <= 0) {
    throw std::runtime_error("read_pgm: malformed header in " + path.string());
  }
  PgmImage img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    long v = 0;
    if (!(ss >> v)) {
      throw std::runtime_error("read_pgm: truncated pixel data at index " + std::to_string(i) +
                               " in " + path.string());
    }
    img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

}  // namespace mmxai
