#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "seqloc/error.hpp"

namespace seqloc {

/// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int u, int v) { return pixels[static_cast<std::size_t>(v) * width + u]; }
  std::uint8_t at(int u, int v) const { return pixels[static_cast<std::size_t>(v) * width + u]; }

  /// Intensities as doubles in [0, 1], rows = height.
  Eigen::MatrixXd to_unit() const {
    Eigen::MatrixXd m(height, width);
    for (int v = 0; v < height; ++v)
      for (int u = 0; u < width; ++u) m(v, u) = at(u, v) / 255.0;
    return m;
  }

  bool operator==(const GrayImage&) const = default;
};

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

namespace detail {

inline bool pgm_token(std::istream& in, std::string& token) {
  token.clear();
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) return true;
      continue;
    }
    token.push_back(c);
  }
  return !token.empty();
}

}  // namespace detail

/// Reads a binary (P5) 8-bit PGM. Any structural problem is CorruptDataset naming the file.
inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::CorruptDataset, "missing image " + path.string());
  std::string magic, ws, hs, maxs;
  if (!detail::pgm_token(in, magic) || magic != "P5" || !detail::pgm_token(in, ws) ||
      !detail::pgm_token(in, hs) || !detail::pgm_token(in, maxs))
    throw Error(Errc::CorruptDataset, "bad PGM header in " + path.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    maxval = std::stoi(maxs);
  } catch (const std::exception&) {
    throw Error(Errc::CorruptDataset, "bad PGM header in " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(Errc::CorruptDataset, "unsupported PGM in " + path.string());
  GrayImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw Error(Errc::CorruptDataset, "truncated PGM " + path.string());
  return img;
}

}  // namespace seqloc
