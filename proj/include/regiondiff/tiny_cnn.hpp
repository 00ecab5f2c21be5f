#pragma once

// Desk-scale noise estimator with hand-written gradients.
//
//   (x_t || condition) : 2C channels
//     -> conv3x3(hidden) -> SiLU
//     -> conv3x3(hidden) + W_time * embed(t) -> SiLU
//     -> conv3x3(C)            (zero-initialized)
//
// All convolutions use zero padding and keep the spatial size. Parameters live
// in one flat vector laid out as
//   conv1.weight [hidden][2C][3][3], conv1.bias [hidden],
//   conv2.weight [hidden][hidden][3][3], conv2.bias [hidden],
//   time.weight [hidden][embed_dim],
//   conv3.weight [C][hidden][3][3], conv3.bias [C].

#include "regiondiff/denoiser.hpp"
#include "regiondiff/image_grid.hpp"
#include "regiondiff/schedule.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>

namespace regiondiff {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr const char* kTinyCnnArchitecture = "tiny_cnn_v1";

struct TinyCnnShape {
  Index channels = 1;
  Index hidden = 32;
  Index embed_dim = 32;

  Index input_channels() const { return 2 * channels; }
  Index parameter_count() const;

  struct Offsets {
    Index conv1_w, conv1_b, conv2_w, conv2_b, time_w, conv3_w, conv3_b, end;
  };
  Offsets offsets() const;

  bool operator==(const TinyCnnShape&) const = default;
};

/// Sinusoidal embedding of position 1000 * t / T: dim/2 sines then dim/2 cosines.
template <typename Scalar>
Vector<Scalar> sinusoidal_embedding(int t, int total_steps, Index dim);

/// Uniform(+-1/sqrt(fan_in)) weights and biases; the output conv is all zero.
template <typename Scalar>
Vector<Scalar> init_tiny_cnn(const TinyCnnShape& shape, std::uint64_t seed);

/// Intermediate activations kept for the backward pass.
template <typename Scalar>
struct TinyCnnTape {
  Index height = 0;
  Index width = 0;
  RowMatrix<Scalar> cols0;  // im2col(input)
  RowMatrix<Scalar> pre1;   // conv1 output before SiLU
  RowMatrix<Scalar> cols1;  // im2col(SiLU(pre1))
  RowMatrix<Scalar> pre2;
  RowMatrix<Scalar> cols2;
  Vector<Scalar> t_embed;
};

template <typename Scalar>
ImageGrid<Scalar> tiny_cnn_forward(const TinyCnnShape& shape, const Vector<Scalar>& parameters,
                                   const ImageGrid<Scalar>& concat_input, const Vector<Scalar>& t_embed,
                                   TinyCnnTape<Scalar>* tape = nullptr);

/// Gradient of <upstream, forward(...)> with respect to every parameter.
template <typename Scalar>
Vector<Scalar> tiny_cnn_backward(const TinyCnnShape& shape, const Vector<Scalar>& parameters,
                                 const TinyCnnTape<Scalar>& tape, const ImageGrid<Scalar>& upstream_grad);

template <typename Scalar>
Vector<Scalar> tiny_cnn_backward(const TinyCnnShape& shape, const Vector<Scalar>& parameters,
                                 const ImageGrid<Scalar>& concat_input, const Vector<Scalar>& t_embed,
                                 const ImageGrid<Scalar>& upstream_grad);

template <typename Scalar>
class TinyCnnDenoiser final : public Denoiser<Scalar> {
 public:
  explicit TinyCnnDenoiser(TinyCnnShape shape = {}, std::uint64_t seed = 0)
      : shape_(shape), seed_(seed), parameters_(init_tiny_cnn<Scalar>(shape, seed)) {}

  TinyCnnDenoiser(TinyCnnShape shape, Vector<Scalar> parameters, std::uint64_t seed = 0)
      : shape_(shape), seed_(seed) {
    set_parameters(std::move(parameters));
  }

  DenoiserKind kind() const override { return DenoiserKind::tiny_cnn; }

  const TinyCnnShape& shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }
  const Vector<Scalar>& parameters() const { return parameters_; }
  Vector<Scalar>& mutable_parameters() { return parameters_; }
  void set_parameters(Vector<Scalar> p);

  Vector<Scalar> embed(int t, const NoiseSchedule& s) const {
    return sinusoidal_embedding<Scalar>(t, s.steps(), shape_.embed_dim);
  }

  ImageGrid<Scalar> estimate(const ImageGrid<Scalar>& concat_input, int t, const NoiseSchedule& s) const override;

 private:
  TinyCnnShape shape_;
  std::uint64_t seed_;
  Vector<Scalar> parameters_;
};

}  // namespace regiondiff
