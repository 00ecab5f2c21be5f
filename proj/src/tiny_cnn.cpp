#include "regiondiff/tiny_cnn.hpp"

#include "regiondiff/random.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace regiondiff {

Index TinyCnnShape::parameter_count() const { return offsets().end; }

TinyCnnShape::Offsets TinyCnnShape::offsets() const {
  Offsets o{};
  o.conv1_w = 0;
  o.conv1_b = o.conv1_w + hidden * input_channels() * 9;
  o.conv2_w = o.conv1_b + hidden;
  o.conv2_b = o.conv2_w + hidden * hidden * 9;
  o.time_w = o.conv2_b + hidden;
  o.conv3_w = o.time_w + hidden * embed_dim;
  o.conv3_b = o.conv3_w + channels * hidden * 9;
  o.end = o.conv3_b + channels;
  return o;
}

template <typename Scalar>
Vector<Scalar> sinusoidal_embedding(int t, int total_steps, Index dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dimension must be even and >= 2");
  const Index half = dim / 2;
  const double pos = 1000.0 * static_cast<double>(t) / static_cast<double>(total_steps);
  Vector<Scalar> e(dim);
  for (Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = static_cast<Scalar>(std::sin(pos * freq));
    e[half + i] = static_cast<Scalar>(std::cos(pos * freq));
  }
  return e;
}

template <typename Scalar>
Vector<Scalar> init_tiny_cnn(const TinyCnnShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  const auto o = shape.offsets();
  Vector<Scalar> p = Vector<Scalar>::Zero(o.end);
  auto fill = [&](Index begin, Index end, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Index i = begin; i < end; ++i) p[i] = static_cast<Scalar>(u(rng));
  };
  const double fan1 = static_cast<double>(shape.input_channels() * 9);
  const double fan2 = static_cast<double>(shape.hidden * 9);
  fill(o.conv1_w, o.conv2_w, fan1);  // weight and bias share the bound
  fill(o.conv2_w, o.time_w, fan2);
  fill(o.time_w, o.conv3_w, static_cast<double>(shape.embed_dim));
  return p;
}

namespace {

template <typename Scalar>
using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using ConstVecMap = Eigen::Map<const Vector<Scalar>>;

/// (channels x H*W) -> (channels*9 x H*W); row ci*9 + ky*3 + kx holds the
/// input shifted by (ky-1, kx-1) with zeros outside the image.
template <typename Scalar>
void im2col(const Scalar* act, Index channels, Index h, Index w, RowMatrix<Scalar>& cols) {
  const Index P = h * w;
  cols.resize(channels * 9, P);
  for (Index ci = 0; ci < channels; ++ci) {
    const Scalar* plane = act + ci * P;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        Scalar* row = cols.row(ci * 9 + ky * 3 + kx).data();
        const Index dy = ky - 1;
        const Index dx = kx - 1;
        const Index x_lo = std::max<Index>(0, -dx);
        const Index x_hi = std::min<Index>(w, w - dx);
        for (Index y = 0; y < h; ++y) {
          Scalar* dst = row + y * w;
          const Index sy = y + dy;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + sy * w + dx;
          std::fill(dst, dst + x_lo, Scalar(0));
          std::copy(src + x_lo, src + x_hi, dst + x_lo);
          std::fill(dst + x_hi, dst + w, Scalar(0));
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the activation grid.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Index channels, Index h, Index w, RowMatrix<Scalar>& act) {
  const Index P = h * w;
  act.setZero(channels, P);
  for (Index ci = 0; ci < channels; ++ci) {
    Scalar* plane = act.row(ci).data();
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const Scalar* row = cols.row(ci * 9 + ky * 3 + kx).data();
        const Index dy = ky - 1;
        const Index dx = kx - 1;
        const Index x_lo = std::max<Index>(0, -dx);
        const Index x_hi = std::min<Index>(w, w - dx);
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const Scalar* src = row + y * w;
          Scalar* dst = plane + sy * w + dx;
          for (Index x = x_lo; x < x_hi; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

/// out = SiLU(z), written in place so repeated calls reuse the buffer.
template <typename Scalar>
void silu(const RowMatrix<Scalar>& z, RowMatrix<Scalar>& out) {
  out.resize(z.rows(), z.cols());
  out.array() = z.array() / (Scalar(1) + (-z.array()).exp());
}

/// g <- g * SiLU'(z)
template <typename Scalar>
void mul_silu_grad(const RowMatrix<Scalar>& z, RowMatrix<Scalar>& g, RowMatrix<Scalar>& tmp) {
  tmp.resize(z.rows(), z.cols());
  tmp.array() = Scalar(1) / (Scalar(1) + (-z.array()).exp());
  g.array() *= tmp.array() * (Scalar(1) + z.array() * (Scalar(1) - tmp.array()));
}

/// Large per-call buffers. Kept per thread so that back-to-back window
/// evaluations do not page-fault fresh allocations every time.
template <typename Scalar>
struct Workspace {
  TinyCnnTape<Scalar> tape;
  RowMatrix<Scalar> act;
  RowMatrix<Scalar> d_cols;
  RowMatrix<Scalar> d_pre;
  RowMatrix<Scalar> tmp;
};

template <typename Scalar>
Workspace<Scalar>& workspace() {
  thread_local Workspace<Scalar> ws;
  return ws;
}

template <typename Scalar>
void check_parameters(const TinyCnnShape& shape, const Vector<Scalar>& p) {
  if (p.size() != shape.parameter_count()) {
    throw std::invalid_argument("tiny_cnn: expected " + std::to_string(shape.parameter_count()) +
                                " parameters, got " + std::to_string(p.size()));
  }
}

}  // namespace

template <typename Scalar>
ImageGrid<Scalar> tiny_cnn_forward(const TinyCnnShape& shape, const Vector<Scalar>& parameters,
                                   const ImageGrid<Scalar>& concat_input, const Vector<Scalar>& t_embed,
                                   TinyCnnTape<Scalar>* tape) {
  check_parameters(shape, parameters);
  if (concat_input.channels() != shape.input_channels()) {
    throw ShapeError("tiny_cnn: expected " + std::to_string(shape.input_channels()) + " input channels, got " +
                     std::to_string(concat_input.channels()));
  }
  if (t_embed.size() != shape.embed_dim) throw ShapeError("tiny_cnn: time embedding size mismatch");

  const auto o = shape.offsets();
  const Scalar* p = parameters.data();
  const Index hid = shape.hidden;
  const Index h = concat_input.height();
  const Index w = concat_input.width();

  Workspace<Scalar>& ws = workspace<Scalar>();
  TinyCnnTape<Scalar>& tp = tape ? *tape : ws.tape;
  tp.height = h;
  tp.width = w;
  tp.t_embed = t_embed;

  im2col(concat_input.data(), shape.input_channels(), h, w, tp.cols0);
  tp.pre1.noalias() = ConstMap<Scalar>(p + o.conv1_w, hid, shape.input_channels() * 9) * tp.cols0;
  tp.pre1.colwise() += ConstVecMap<Scalar>(p + o.conv1_b, hid);

  silu(tp.pre1, ws.act);
  im2col(ws.act.data(), hid, h, w, tp.cols1);
  tp.pre2.noalias() = ConstMap<Scalar>(p + o.conv2_w, hid, hid * 9) * tp.cols1;
  const Vector<Scalar> shift =
      ConstVecMap<Scalar>(p + o.conv2_b, hid) + ConstMap<Scalar>(p + o.time_w, hid, shape.embed_dim) * t_embed;
  tp.pre2.colwise() += shift;

  silu(tp.pre2, ws.act);
  im2col(ws.act.data(), hid, h, w, tp.cols2);
  typename ImageGrid<Scalar>::Storage out_data =
      (ConstMap<Scalar>(p + o.conv3_w, shape.channels, hid * 9) * tp.cols2).array();
  out_data.colwise() += ConstVecMap<Scalar>(p + o.conv3_b, shape.channels).array();

  return ImageGrid<Scalar>::from_storage(h, w, std::move(out_data), ValueDomain::unconstrained);
}

template <typename Scalar>
Vector<Scalar> tiny_cnn_backward(const TinyCnnShape& shape, const Vector<Scalar>& parameters,
                                 const TinyCnnTape<Scalar>& tape, const ImageGrid<Scalar>& upstream_grad) {
  check_parameters(shape, parameters);
  if (upstream_grad.height() != tape.height || upstream_grad.width() != tape.width ||
      upstream_grad.channels() != shape.channels) {
    throw ShapeError("tiny_cnn_backward: upstream gradient shape " + upstream_grad.shape() +
                     " does not match the forward pass");
  }
  const auto o = shape.offsets();
  const Scalar* p = parameters.data();
  const Index hid = shape.hidden;
  const Index h = tape.height;
  const Index w = tape.width;

  Vector<Scalar> grad = Vector<Scalar>::Zero(o.end);
  auto grad_block = [&](Index offset, Index rows, Index cols) {
    return Eigen::Map<RowMatrix<Scalar>>(grad.data() + offset, rows, cols);
  };
  auto grad_vec = [&](Index offset, Index n) { return Eigen::Map<Vector<Scalar>>(grad.data() + offset, n); };

  const Eigen::Map<const RowMatrix<Scalar>> d_out(upstream_grad.data(), shape.channels, h * w);

  // conv3
  grad_block(o.conv3_w, shape.channels, hid * 9).noalias() = d_out * tape.cols2.transpose();
  grad_vec(o.conv3_b, shape.channels) = d_out.rowwise().sum();
  Workspace<Scalar>& ws = workspace<Scalar>();
  RowMatrix<Scalar>& d_cols = ws.d_cols;
  RowMatrix<Scalar>& d_pre = ws.d_pre;
  d_cols.noalias() = ConstMap<Scalar>(p + o.conv3_w, shape.channels, hid * 9).transpose() * d_out;
  col2im(d_cols, hid, h, w, d_pre);

  // conv2 + time projection
  mul_silu_grad(tape.pre2, d_pre, ws.tmp);
  grad_block(o.conv2_w, hid, hid * 9).noalias() = d_pre * tape.cols1.transpose();
  const Vector<Scalar> d_shift = d_pre.rowwise().sum();
  grad_vec(o.conv2_b, hid) = d_shift;
  grad_block(o.time_w, hid, shape.embed_dim).noalias() = d_shift * tape.t_embed.transpose();
  d_cols.noalias() = ConstMap<Scalar>(p + o.conv2_w, hid, hid * 9).transpose() * d_pre;
  col2im(d_cols, hid, h, w, d_pre);

  // conv1
  mul_silu_grad(tape.pre1, d_pre, ws.tmp);
  grad_block(o.conv1_w, hid, shape.input_channels() * 9).noalias() = d_pre * tape.cols0.transpose();
  grad_vec(o.conv1_b, hid) = d_pre.rowwise().sum();
  return grad;
}

template <typename Scalar>
Vector<Scalar> tiny_cnn_backward(const TinyCnnShape& shape, const Vector<Scalar>& parameters,
                                 const ImageGrid<Scalar>& concat_input, const Vector<Scalar>& t_embed,
                                 const ImageGrid<Scalar>& upstream_grad) {
  TinyCnnTape<Scalar> tape;
  tiny_cnn_forward(shape, parameters, concat_input, t_embed, &tape);
  return tiny_cnn_backward(shape, parameters, tape, upstream_grad);
}

template <typename Scalar>
void TinyCnnDenoiser<Scalar>::set_parameters(Vector<Scalar> p) {
  check_parameters(shape_, p);
  if (!p.allFinite()) throw std::invalid_argument("tiny_cnn: non-finite parameter");
  parameters_ = std::move(p);
}

template <typename Scalar>
ImageGrid<Scalar> TinyCnnDenoiser<Scalar>::estimate(const ImageGrid<Scalar>& concat_input, int t,
                                                    const NoiseSchedule& s) const {
  s.check_timestep(t);
  return tiny_cnn_forward(shape_, parameters_, concat_input, embed(t, s));
}

#define REGIONDIFF_INSTANTIATE(S)                                                                               \
  template Vector<S> sinusoidal_embedding<S>(int, int, Index);                                                  \
  template Vector<S> init_tiny_cnn<S>(const TinyCnnShape&, std::uint64_t);                                      \
  template ImageGrid<S> tiny_cnn_forward<S>(const TinyCnnShape&, const Vector<S>&, const ImageGrid<S>&,          \
                                            const Vector<S>&, TinyCnnTape<S>*);                                  \
  template Vector<S> tiny_cnn_backward<S>(const TinyCnnShape&, const Vector<S>&, const TinyCnnTape<S>&,          \
                                          const ImageGrid<S>&);                                                  \
  template Vector<S> tiny_cnn_backward<S>(const TinyCnnShape&, const Vector<S>&, const ImageGrid<S>&,            \
                                          const Vector<S>&, const ImageGrid<S>&);                                \
  template class TinyCnnDenoiser<S>;

REGIONDIFF_INSTANTIATE(float)
REGIONDIFF_INSTANTIATE(double)
#undef REGIONDIFF_INSTANTIATE

}  // namespace regiondiff
