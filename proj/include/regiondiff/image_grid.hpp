#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace regiondiff {

using Index = Eigen::Index;

/// Nominal value range carried by a grid. Normalized grids hold images in
/// [-1, 1]; unconstrained grids hold noise draws, noise estimates and latents.
enum class ValueDomain { normalized, unconstrained };

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// H x W x C raster stored channel-major: one row of the backing array per
/// channel, each row a row-major H*W plane. Whole-grid arithmetic goes through
/// array(); per-channel 2-D access through plane().
template <typename Scalar_>
class ImageGrid {
 public:
  using Scalar = Scalar_;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using PlaneMap = Eigen::Map<Storage>;
  using ConstPlaneMap = Eigen::Map<const Storage>;

  ImageGrid(Index height, Index width, Index channels = 1,
            ValueDomain domain = ValueDomain::normalized)
      : height_(height), width_(width), domain_(domain) {
    if (height < 1 || width < 1 || channels < 1) {
      throw ShapeError("ImageGrid dimensions must be >= 1, got " + shape_string(height, width, channels));
    }
    data_.setZero(channels, height * width);
  }

  static ImageGrid constant(Index height, Index width, Index channels, Scalar value,
                            ValueDomain domain = ValueDomain::normalized) {
    ImageGrid g(height, width, channels, domain);
    g.data_.setConstant(value);
    return g;
  }

  /// Adopts a channels x (height*width) array.
  static ImageGrid from_storage(Index height, Index width, Storage data,
                                ValueDomain domain = ValueDomain::normalized) {
    if (data.cols() != height * width || data.rows() < 1) {
      throw ShapeError("storage does not match " + shape_string(height, width, data.rows()));
    }
    ImageGrid g(height, width, data.rows(), domain);
    g.data_ = std::move(data);
    return g;
  }

  Index height() const { return height_; }
  Index width() const { return width_; }
  Index channels() const { return data_.rows(); }
  Index pixels() const { return height_ * width_; }
  Index size() const { return data_.size(); }

  ValueDomain domain() const { return domain_; }
  void set_domain(ValueDomain d) { domain_ = d; }

  Scalar& operator()(Index row, Index col, Index ch = 0) { return data_(ch, row * width_ + col); }
  Scalar operator()(Index row, Index col, Index ch = 0) const { return data_(ch, row * width_ + col); }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  PlaneMap plane(Index ch) { return PlaneMap(data_.row(ch).data(), height_, width_); }
  ConstPlaneMap plane(Index ch) const { return ConstPlaneMap(data_.row(ch).data(), height_, width_); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  bool same_shape(const ImageGrid& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels() == o.channels();
  }
  bool same_spatial_shape(const ImageGrid& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  bool all_finite() const { return data_.isFinite().all(); }

  std::string shape() const { return shape_string(height_, width_, channels()); }

  template <typename Other>
  ImageGrid<Other> cast() const {
    return ImageGrid<Other>::from_storage(height_, width_, data_.template cast<Other>(), domain_);
  }

  /// Bit-for-bit equality of shape and values.
  bool identical(const ImageGrid& o) const {
    return same_shape(o) && (data_ == o.data_).all();
  }

 private:
  static std::string shape_string(Index h, Index w, Index c) {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
  }

  Index height_;
  Index width_;
  ValueDomain domain_;
  Storage data_;
};

template <typename Scalar>
void require_same_shape(const ImageGrid<Scalar>& a, const ImageGrid<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

/// Stacks the channels of `a` followed by those of `b`.
template <typename Scalar>
ImageGrid<Scalar> concat_channels(const ImageGrid<Scalar>& a, const ImageGrid<Scalar>& b) {
  if (!a.same_spatial_shape(b)) {
    throw ShapeError("concat_channels: spatial mismatch " + a.shape() + " vs " + b.shape());
  }
  ImageGrid<Scalar> out(a.height(), a.width(), a.channels() + b.channels(), ValueDomain::unconstrained);
  out.array().topRows(a.channels()) = a.array();
  out.array().bottomRows(b.channels()) = b.array();
  return out;
}

template <typename Scalar>
ImageGrid<Scalar> clamp_normalized(ImageGrid<Scalar> g) {
  g.array() = g.array().max(Scalar(-1)).min(Scalar(1));
  g.set_domain(ValueDomain::normalized);
  return g;
}

/// Copies the [row, row+h) x [col, col+w) block of every channel.
template <typename Scalar>
ImageGrid<Scalar> crop(const ImageGrid<Scalar>& g, Index row, Index col, Index h, Index w) {
  if (row < 0 || col < 0 || row + h > g.height() || col + w > g.width()) {
    throw ShapeError("crop: block exceeds " + g.shape());
  }
  ImageGrid<Scalar> out(h, w, g.channels(), g.domain());
  for (Index c = 0; c < g.channels(); ++c) {
    out.plane(c) = g.plane(c).block(row, col, h, w);
  }
  return out;
}

/// Mirror index without edge repetition (…2 1 0 1 2…), periodic so any pad
/// width is legal.
inline Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Extends `g` by reflection on the bottom and right edges.
template <typename Scalar>
ImageGrid<Scalar> pad_reflect(const ImageGrid<Scalar>& g, Index pad_bottom, Index pad_right) {
  if (pad_bottom < 0 || pad_right < 0) throw ShapeError("pad_reflect: negative pad");
  if (pad_bottom == 0 && pad_right == 0) return g;
  const Index h = g.height() + pad_bottom;
  const Index w = g.width() + pad_right;
  ImageGrid<Scalar> out(h, w, g.channels(), g.domain());
  for (Index c = 0; c < g.channels(); ++c) {
    auto src = g.plane(c);
    auto dst = out.plane(c);
    for (Index r = 0; r < h; ++r) {
      const Index sr = reflect_index(r, g.height());
      for (Index q = 0; q < w; ++q) dst(r, q) = src(sr, reflect_index(q, g.width()));
    }
  }
  return out;
}

}  // namespace regiondiff
