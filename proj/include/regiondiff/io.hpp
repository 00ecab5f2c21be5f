#pragma once

#include "regiondiff/image_grid.hpp"
#include "regiondiff/noise_synth.hpp"
#include "regiondiff/tiny_cnn.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace regiondiff {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

class IncompatibleWeightsError : public IoError {
 public:
  using IoError::IoError;
};

// ---------------------------------------------------------------------------
// Images. 8-bit formats map v -> v / 127.5 - 1 on load and clamp + round on
// save. Raw float32 grids keep values untouched and carry their shape in a
// text sidecar `<path>.hdr`.

enum class ImageFormat { pgm, png, raw_f32 };

/// By extension: .pgm, .png, .f32 / .raw.
ImageFormat format_from_path(const fs::path& path);

fs::path raw_sidecar_path(const fs::path& path);

template <typename Scalar>
ImageGrid<Scalar> load_image(const fs::path& path);

/// Refuses to replace an existing file unless `overwrite`.
template <typename Scalar>
void save_image(const ImageGrid<Scalar>& img, const fs::path& path, std::optional<ImageFormat> format = {},
                bool overwrite = false);

/// Fails with IoError if `path` exists and overwriting was not requested.
void ensure_writable(const fs::path& path, bool overwrite);

// ---------------------------------------------------------------------------
// Weights: text header, then the parameter block as little-endian float32.
//
//   regiondiff-weights
//   format_version 1
//   architecture tiny_cnn_v1
//   channels <C>
//   hidden <H>
//   embed_dim <E>
//   parameter_count <N>
//   seed <S>
//   checksum_crc32 <hex of the float block>
//   end_header

inline constexpr int kWeightsFormatVersion = 1;

struct WeightsHeader {
  int format_version = kWeightsFormatVersion;
  std::string architecture = kTinyCnnArchitecture;
  TinyCnnShape shape;
  Index parameter_count = 0;
  std::uint64_t seed = 0;
  std::uint32_t checksum = 0;
};

std::uint32_t crc32_of(const void* data, std::size_t bytes);

template <typename Scalar>
void save_weights(const TinyCnnDenoiser<Scalar>& model, const fs::path& path, bool overwrite = false);

/// Verifies version, architecture, parameter count and checksum before
/// accepting any parameter.
template <typename Scalar>
TinyCnnDenoiser<Scalar> load_weights(const fs::path& path);

WeightsHeader read_weights_header(const fs::path& path);

// ---------------------------------------------------------------------------
// Dataset manifest (JSON): clean/degraded pairs with the degradation used.
// Paths are stored relative to the manifest's directory.

struct ManifestEntry {
  fs::path clean;
  fs::path degraded;
  DegradationSpec spec;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  fs::path base_dir;  // directory the relative entry paths resolve against

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
};

DatasetManifest load_manifest(const fs::path& path);
void save_manifest(const DatasetManifest& manifest, const fs::path& path, bool overwrite = false);

/// Row-major patch origins with the given stride; empty when patch exceeds the image.
std::vector<std::pair<Index, Index>> tile_origins(Index height, Index width, Index patch, Index stride);

/// Cuts every pair of the manifest into patches and writes them plus a new
/// manifest under `out_dir`. Images smaller than the patch are skipped with a
/// warning on stderr. Returns the number of patches written.
std::size_t tile_dataset(const DatasetManifest& manifest, Index patch, Index stride, const fs::path& out_dir,
                         bool overwrite = false);

}  // namespace regiondiff
