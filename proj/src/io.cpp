#include "regiondiff/io.hpp"

#include "json.hpp"
#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace regiondiff {

namespace {

static_assert(std::endian::native == std::endian::little, "raw float blocks assume a little-endian host");

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

template <typename Scalar>
Scalar from_byte(std::uint8_t v) {
  return static_cast<Scalar>(static_cast<double>(v) / 127.5 - 1.0);
}

template <typename Scalar>
std::uint8_t to_byte(Scalar v) {
  const double d = std::clamp(static_cast<double>(v), -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((d + 1.0) * 127.5));
}

std::ofstream open_for_write(const fs::path& path, bool overwrite) {
  ensure_writable(path, overwrite);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

// PGM ------------------------------------------------------------------------

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

template <typename Scalar>
ImageGrid<Scalar> load_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  if (next_token(in) != "P5") throw IoError("'" + path.string() + "' is not a binary PGM (P5)");
  Index w = 0, h = 0;
  int maxval = 0;
  try {
    w = std::stol(next_token(in));
    h = std::stol(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw IoError("malformed PGM header in '" + path.string() + "'");
  }
  if (maxval != 255) throw IoError("unsupported PGM bit depth (maxval " + std::to_string(maxval) + ")");
  if (w < 1 || h < 1) throw IoError("PGM with empty dimensions");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w * h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("truncated PGM '" + path.string() + "'");
  ImageGrid<Scalar> img(h, w, 1);
  for (Index i = 0; i < w * h; ++i) img.data()[i] = from_byte<Scalar>(bytes[static_cast<std::size_t>(i)]);
  return img;
}

template <typename Scalar>
void save_pgm(const ImageGrid<Scalar>& img, const fs::path& path, bool overwrite) {
  if (img.channels() != 1) throw IoError("PGM holds one channel; image has " + std::to_string(img.channels()));
  std::ofstream out = open_for_write(path, overwrite);
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.size()));
  for (Index i = 0; i < img.size(); ++i) bytes[static_cast<std::size_t>(i)] = to_byte(img.data()[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// PNG (libpng simplified API) -------------------------------------------------

template <typename Scalar>
ImageGrid<Scalar> load_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + image.message);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw IoError("unsupported PNG bit depth (16-bit) in '" + path.string() + "'");
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const Index channels = color ? 3 : 1;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const Index h = image.height;
  const Index w = image.width;
  ImageGrid<Scalar> img(h, w, channels);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      for (Index ch = 0; ch < channels; ++ch) {
        img(r, c, ch) = from_byte<Scalar>(buf[static_cast<std::size_t>((r * w + c) * channels + ch)]);
      }
    }
  }
  return img;
}

template <typename Scalar>
void save_png(const ImageGrid<Scalar>& img, const fs::path& path, bool overwrite) {
  if (img.channels() != 1 && img.channels() != 3) throw IoError("PNG output needs 1 or 3 channels");
  ensure_writable(path, overwrite);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const Index channels = img.channels();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.size()));
  for (Index r = 0; r < img.height(); ++r) {
    for (Index c = 0; c < img.width(); ++c) {
      for (Index ch = 0; ch < channels; ++ch) {
        buf[static_cast<std::size_t>((r * img.width() + c) * channels + ch)] = to_byte(img(r, c, ch));
      }
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + image.message);
  }
}

// Raw float32 -------------------------------------------------------------------

template <typename Scalar>
ImageGrid<Scalar> load_raw(const fs::path& path) {
  const fs::path hdr = raw_sidecar_path(path);
  std::ifstream side(hdr);
  if (!side) throw IoError("missing sidecar '" + hdr.string() + "'");
  Index h = -1, w = -1, c = -1;
  std::string key;
  Index value;
  while (side >> key >> value) {
    if (key == "height") h = value;
    else if (key == "width") w = value;
    else if (key == "channels") c = value;
  }
  if (h < 1 || w < 1 || c < 1) throw IoError("sidecar '" + hdr.string() + "' lacks height/width/channels");
  const std::uintmax_t expected = static_cast<std::uintmax_t>(h * w * c) * sizeof(float);
  if (!fs::exists(path)) throw IoError("cannot open '" + path.string() + "'");
  if (fs::file_size(path) != expected) {
    throw IoError("'" + path.string() + "' holds " + std::to_string(fs::file_size(path)) + " bytes, sidecar implies " +
                  std::to_string(expected));
  }
  std::vector<float> vals(static_cast<std::size_t>(h * w * c));
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IoError("read failed for '" + path.string() + "'");
  ImageGrid<Scalar> img(h, w, c);
  for (std::size_t i = 0; i < vals.size(); ++i) img.data()[i] = static_cast<Scalar>(vals[i]);
  return img;
}

template <typename Scalar>
void save_raw(const ImageGrid<Scalar>& img, const fs::path& path, bool overwrite) {
  const fs::path hdr = raw_sidecar_path(path);
  ensure_writable(hdr, overwrite);
  std::ofstream out = open_for_write(path, overwrite);
  std::vector<float> vals(static_cast<std::size_t>(img.size()));
  for (Index i = 0; i < img.size(); ++i) vals[static_cast<std::size_t>(i)] = static_cast<float>(img.data()[i]);
  out.write(reinterpret_cast<const char*>(vals.data()), static_cast<std::streamsize>(vals.size() * sizeof(float)));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
  std::ofstream side(hdr, std::ios::trunc);
  side << "height " << img.height() << "\nwidth " << img.width() << "\nchannels " << img.channels() << '\n';
  if (!side) throw IoError("write failed for '" + hdr.string() + "'");
}

}  // namespace

void ensure_writable(const fs::path& path, bool overwrite) {
  if (!overwrite && fs::exists(path)) {
    throw IoError("refusing to overwrite existing '" + path.string() + "' (pass the overwrite flag)");
  }
}

ImageFormat format_from_path(const fs::path& path) {
  const std::string e = lower_ext(path);
  if (e == ".pgm") return ImageFormat::pgm;
  if (e == ".png") return ImageFormat::png;
  if (e == ".f32" || e == ".raw") return ImageFormat::raw_f32;
  throw IoError("unsupported image extension '" + e + "' (use .pgm, .png, .f32)");
}

fs::path raw_sidecar_path(const fs::path& path) { return fs::path(path.string() + ".hdr"); }

template <typename Scalar>
ImageGrid<Scalar> load_image(const fs::path& path) {
  switch (format_from_path(path)) {
    case ImageFormat::pgm: return load_pgm<Scalar>(path);
    case ImageFormat::png: return load_png<Scalar>(path);
    case ImageFormat::raw_f32: return load_raw<Scalar>(path);
  }
  throw IoError("unreachable");
}

template <typename Scalar>
void save_image(const ImageGrid<Scalar>& img, const fs::path& path, std::optional<ImageFormat> format,
                bool overwrite) {
  switch (format.value_or(format_from_path(path))) {
    case ImageFormat::pgm: return save_pgm(img, path, overwrite);
    case ImageFormat::png: return save_png(img, path, overwrite);
    case ImageFormat::raw_f32: return save_raw(img, path, overwrite);
  }
}

// Weights ----------------------------------------------------------------------

std::uint32_t crc32_of(const void* data, std::size_t bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (bytes > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    bytes -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

WeightsHeader parse_weights_header(std::istream& in, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line) || line != "regiondiff-weights") {
    throw IncompatibleWeightsError("'" + path.string() + "' is not a weights file");
  }
  WeightsHeader h;
  h.format_version = -1;
  h.architecture.clear();
  bool have_checksum = false;
  while (std::getline(in, line)) {
    if (line == "end_header") {
      if (h.format_version != kWeightsFormatVersion) {
        throw IncompatibleWeightsError("weights format version " + std::to_string(h.format_version) +
                                       " is not supported (expected " + std::to_string(kWeightsFormatVersion) + ")");
      }
      if (!have_checksum) throw IoError("weights header lacks a checksum");
      return h;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format_version") ls >> h.format_version;
    else if (key == "architecture") ls >> h.architecture;
    else if (key == "channels") ls >> h.shape.channels;
    else if (key == "hidden") ls >> h.shape.hidden;
    else if (key == "embed_dim") ls >> h.shape.embed_dim;
    else if (key == "parameter_count") ls >> h.parameter_count;
    else if (key == "seed") ls >> h.seed;
    else if (key == "checksum_crc32") {
      ls >> std::hex >> h.checksum;
      have_checksum = true;
    } else {
      throw IoError("unknown weights header key '" + key + "'");
    }
    if (ls.fail()) throw IoError("malformed weights header line '" + line + "'");
  }
  throw IoError("weights header is not terminated");
}

}  // namespace

WeightsHeader read_weights_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_weights_header(in, path);
}

template <typename Scalar>
void save_weights(const TinyCnnDenoiser<Scalar>& model, const fs::path& path, bool overwrite) {
  const Vector<float> block = model.parameters().template cast<float>();
  const std::size_t bytes = static_cast<std::size_t>(block.size()) * sizeof(float);
  std::ofstream out = open_for_write(path, overwrite);
  out << "regiondiff-weights\n"
      << "format_version " << kWeightsFormatVersion << '\n'
      << "architecture " << kTinyCnnArchitecture << '\n'
      << "channels " << model.shape().channels << '\n'
      << "hidden " << model.shape().hidden << '\n'
      << "embed_dim " << model.shape().embed_dim << '\n'
      << "parameter_count " << block.size() << '\n'
      << "seed " << model.seed() << '\n'
      << "checksum_crc32 " << std::hex << std::setw(8) << std::setfill('0') << crc32_of(block.data(), bytes)
      << std::dec << '\n'
      << "end_header\n";
  out.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

template <typename Scalar>
TinyCnnDenoiser<Scalar> load_weights(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const WeightsHeader h = parse_weights_header(in, path);
  if (h.architecture != kTinyCnnArchitecture) {
    throw IncompatibleWeightsError("weights architecture '" + h.architecture + "' is incompatible with '" +
                                   kTinyCnnArchitecture + "'");
  }
  if (h.shape.channels < 1 || h.shape.hidden < 1 || h.shape.embed_dim < 2 ||
      h.parameter_count != h.shape.parameter_count()) {
    throw IncompatibleWeightsError("weights shape does not match parameter_count " +
                                   std::to_string(h.parameter_count));
  }
  Vector<float> block(h.parameter_count);
  const std::size_t bytes = static_cast<std::size_t>(block.size()) * sizeof(float);
  in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) throw IoError("truncated weights block in '" + path.string() + "'");
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after weights block");
  if (crc32_of(block.data(), bytes) != h.checksum) {
    throw ChecksumError("weights checksum mismatch in '" + path.string() + "'");
  }
  return TinyCnnDenoiser<Scalar>(h.shape, block.template cast<Scalar>(), h.seed);
}

// Manifest ---------------------------------------------------------------------

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  try {
    if (j.at("version").get<int>() != 1) throw IoError("unsupported manifest version");
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.clean = e.at("clean").get<std::string>();
      entry.degraded = e.at("degraded").get<std::string>();
      const auto& s = e.at("spec");
      entry.spec.kind = parse_degradation_kind(s.at("kind").get<std::string>());
      entry.spec.sigma = s.value("sigma", 0.0);
      entry.spec.looks = s.value("looks", 1);
      entry.spec.seed = s.value("seed", std::uint64_t{0});
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest '" + path.string() + "' is malformed: " + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path, bool overwrite) {
  nlohmann::json j;
  j["format"] = "regiondiff-manifest";
  j["version"] = 1;
  j["entries"] = nlohmann::json::array();
  for (const ManifestEntry& e : manifest.entries) {
    j["entries"].push_back({{"clean", e.clean.generic_string()},
                            {"degraded", e.degraded.generic_string()},
                            {"spec",
                             {{"kind", std::string(to_string(e.spec.kind))},
                              {"sigma", e.spec.sigma},
                              {"looks", e.spec.looks},
                              {"seed", e.spec.seed}}}});
  }
  std::ofstream out = open_for_write(path, overwrite);
  out << j.dump(2) << '\n';
}

std::vector<std::pair<Index, Index>> tile_origins(Index height, Index width, Index patch, Index stride) {
  if (patch < 1 || stride < 1) throw std::invalid_argument("tile_origins: patch and stride must be >= 1");
  std::vector<std::pair<Index, Index>> out;
  for (Index r = 0; r + patch <= height; r += stride) {
    for (Index c = 0; c + patch <= width; c += stride) out.emplace_back(r, c);
  }
  return out;
}

std::size_t tile_dataset(const DatasetManifest& manifest, Index patch, Index stride, const fs::path& out_dir,
                         bool overwrite) {
  DatasetManifest tiled;
  tiled.base_dir = out_dir;
  std::size_t count = 0;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    const ImageGrid<float> clean = load_image<float>(manifest.resolve(e.clean));
    const ImageGrid<float> degraded = load_image<float>(manifest.resolve(e.degraded));
    if (!clean.same_shape(degraded)) throw IoError("manifest entry " + std::to_string(i) + ": clean/degraded shapes differ");
    const auto origins = tile_origins(clean.height(), clean.width(), patch, stride);
    if (origins.empty()) {
      std::cerr << "warning: skipping '" << e.clean.string() << "' (" << clean.shape() << ") smaller than patch "
                << patch << '\n';
      continue;
    }
    for (const auto& [r, c] : origins) {
      std::ostringstream name;
      name << std::setw(6) << std::setfill('0') << count << ".f32";
      ManifestEntry out{fs::path("clean") / name.str(), fs::path("degraded") / name.str(), e.spec};
      save_image(crop(clean, r, c, patch, patch), out_dir / out.clean, ImageFormat::raw_f32, overwrite);
      save_image(crop(degraded, r, c, patch, patch), out_dir / out.degraded, ImageFormat::raw_f32, overwrite);
      tiled.entries.push_back(std::move(out));
      ++count;
    }
  }
  save_manifest(tiled, out_dir / "manifest.json", overwrite);
  return count;
}

#define REGIONDIFF_INSTANTIATE(S)                                                                             \
  template ImageGrid<S> load_image<S>(const fs::path&);                                                       \
  template void save_image<S>(const ImageGrid<S>&, const fs::path&, std::optional<ImageFormat>, bool);        \
  template void save_weights<S>(const TinyCnnDenoiser<S>&, const fs::path&, bool);                            \
  template TinyCnnDenoiser<S> load_weights<S>(const fs::path&);

REGIONDIFF_INSTANTIATE(float)
REGIONDIFF_INSTANTIATE(double)
#undef REGIONDIFF_INSTANTIATE

}  // namespace regiondiff
