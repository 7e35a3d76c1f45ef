#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "seqloc/error.hpp"

namespace seqloc {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense per-pixel descriptors, scores and detection logits. Pixel j = v * width + u.
struct FeatureMap {
  int height = 0;
  int width = 0;
  RowMatrixXd descriptors;  // (height*width) x D
  Eigen::VectorXd scores;   // in [0, 1]
  Eigen::VectorXd logits;

  FeatureMap() = default;
  FeatureMap(int h, int w, int dim)
      : height(h),
        width(w),
        descriptors(RowMatrixXd::Zero(static_cast<Eigen::Index>(h) * w, dim)),
        scores(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(h) * w)),
        logits(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(h) * w)) {}

  int dim() const { return static_cast<int>(descriptors.cols()); }
  Eigen::Index pixel_count() const { return static_cast<Eigen::Index>(height) * width; }
  Eigen::Index index(int u, int v) const { return static_cast<Eigen::Index>(v) * width + u; }

  /// Throws if any FeatureMap invariant is violated.
  void check() const {
    if (dim() < 2) throw Error(Errc::InvalidConfig, "feature map descriptor dimension must be >= 2");
    if (descriptors.rows() != pixel_count() || scores.size() != pixel_count() || logits.size() != pixel_count())
      throw Error(Errc::InvalidConfig, "feature map channel sizes disagree");
    if (!descriptors.allFinite() || !scores.allFinite() || !logits.allFinite())
      throw Error(Errc::InvalidConfig, "feature map contains non-finite values");
    if (scores.size() > 0 && (scores.minCoeff() < 0.0 || scores.maxCoeff() > 1.0))
      throw Error(Errc::InvalidConfig, "feature map scores outside [0,1]");
  }
};

/// Dense disparity in pixels; values <= 0 mark pixels with no depth.
struct DisparityMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  DisparityMap() = default;
  DisparityMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0f) {}

  float& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
  float at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }

  bool operator==(const DisparityMap&) const = default;
};

// ---------------------------------------------------------------------------
// SLFM container: "SLFM", u16 version, u32 H, u32 W, u32 C, f32 LE row-major channel-last.

inline constexpr std::uint16_t kSlfmVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "SLFM I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return in.gcount() == static_cast<std::streamsize>(sizeof(T));
}

struct SlfmBlock {
  std::uint32_t height = 0, width = 0, channels = 0;
  std::vector<float> data;
};

inline void write_slfm_block(const std::filesystem::path& path, const SlfmBlock& block) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
  out.write("SLFM", 4);
  put(out, kSlfmVersion);
  put(out, block.height);
  put(out, block.width);
  put(out, block.channels);
  out.write(reinterpret_cast<const char*>(block.data.data()), static_cast<std::streamsize>(block.data.size() * 4));
  if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

inline SlfmBlock read_slfm_block(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::CorruptDataset, "missing feature map " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "SLFM", 4) != 0)
    throw Error(Errc::CorruptDataset, "bad SLFM magic in " + path.string());
  std::uint16_t version = 0;
  SlfmBlock block;
  if (!get(in, version) || !get(in, block.height) || !get(in, block.width) || !get(in, block.channels))
    throw Error(Errc::CorruptDataset, "truncated SLFM header in " + path.string());
  if (version != kSlfmVersion) throw Error(Errc::CorruptDataset, "unsupported SLFM version in " + path.string());
  const std::uint64_t count = std::uint64_t{block.height} * block.width * block.channels;
  if (count == 0 || count > (1ull << 31)) throw Error(Errc::CorruptDataset, "bad SLFM shape in " + path.string());
  block.data.resize(count);
  in.read(reinterpret_cast<char*>(block.data.data()), static_cast<std::streamsize>(count * 4));
  if (in.gcount() != static_cast<std::streamsize>(count * 4))
    throw Error(Errc::CorruptDataset, "truncated SLFM payload in " + path.string());
  return block;
}

}  // namespace detail

/// Channels written per pixel: D descriptors, score, detection logit.
inline void write_slfm(const FeatureMap& map, const std::filesystem::path& path) {
  detail::SlfmBlock block;
  block.height = static_cast<std::uint32_t>(map.height);
  block.width = static_cast<std::uint32_t>(map.width);
  block.channels = static_cast<std::uint32_t>(map.dim() + 2);
  block.data.reserve(static_cast<std::size_t>(map.pixel_count()) * block.channels);
  for (Eigen::Index j = 0; j < map.pixel_count(); ++j) {
    for (int c = 0; c < map.dim(); ++c) block.data.push_back(static_cast<float>(map.descriptors(j, c)));
    block.data.push_back(static_cast<float>(map.scores(j)));
    block.data.push_back(static_cast<float>(map.logits(j)));
  }
  detail::write_slfm_block(path, block);
}

inline FeatureMap read_slfm(const std::filesystem::path& path) {
  const auto block = detail::read_slfm_block(path);
  if (block.channels < 4) throw Error(Errc::CorruptDataset, "SLFM feature map needs >= 4 channels: " + path.string());
  const int dim = static_cast<int>(block.channels) - 2;
  FeatureMap map(static_cast<int>(block.height), static_cast<int>(block.width), dim);
  std::size_t k = 0;
  for (Eigen::Index j = 0; j < map.pixel_count(); ++j) {
    for (int c = 0; c < dim; ++c) map.descriptors(j, c) = block.data[k++];
    map.scores(j) = block.data[k++];
    map.logits(j) = block.data[k++];
  }
  try {
    map.check();
  } catch (const Error& e) {
    throw Error(Errc::CorruptDataset, path.string() + ": " + e.what());
  }
  return map;
}

/// Disparity maps use the same container with a single channel.
inline void write_disparity(const DisparityMap& disp, const std::filesystem::path& path) {
  detail::write_slfm_block(path, {static_cast<std::uint32_t>(disp.height), static_cast<std::uint32_t>(disp.width), 1,
                                  disp.values});
}

inline DisparityMap read_disparity(const std::filesystem::path& path) {
  auto block = detail::read_slfm_block(path);
  if (block.channels != 1) throw Error(Errc::CorruptDataset, "disparity map must have one channel: " + path.string());
  DisparityMap disp;
  disp.height = static_cast<int>(block.height);
  disp.width = static_cast<int>(block.width);
  disp.values = std::move(block.data);
  return disp;
}

}  // namespace seqloc
