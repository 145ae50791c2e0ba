#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmxai {

/// FNV-1a over a byte range; used for content manifests and reproducibility checks.
std::uint64_t fnv1a64(const unsigned char* data, std::size_t len);
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hash_hex(std::uint64_t h);

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // row-major, scaled to [0,1]
};

/// ASCII PGM (P2, maxval 255). With `stretch`, values are min-max normalized
/// before quantization (constant input writes all zeros); otherwise values
/// must already lie in [0,1].
void write_pgm(const std::filesystem::path& path, const std::vector<double>& pixels,
               std::size_t width, std::size_t height, bool stretch = false);
PgmImage read_pgm(const std::filesystem::path& path);

}  // namespace mmxai
