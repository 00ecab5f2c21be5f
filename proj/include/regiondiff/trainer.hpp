#pragma once

#include "regiondiff/denoiser.hpp"
#include "regiondiff/image_grid.hpp"
#include "regiondiff/random.hpp"
#include "regiondiff/schedule.hpp"
#include "regiondiff/tiny_cnn.hpp"

#include <cstdint>
#include <span>

namespace regiondiff {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 2e-5;
  Index batch_size = 4;
  int num_iterations = 1000;
  std::uint64_t seed = 0;
  AdamParams adam;

  void validate() const;
};

/// Moment estimates for one parameter vector.
template <typename Scalar>
class AdamState {
 public:
  explicit AdamState(Index n) : m_(Vector<double>::Zero(n)), v_(Vector<double>::Zero(n)) {}

  void apply(Vector<Scalar>& params, const Vector<Scalar>& grad, double lr, const AdamParams& hp);
  long long step() const { return step_; }

 private:
  Vector<double> m_;
  Vector<double> v_;
  long long step_ = 0;
};

template <typename Scalar>
struct TrainingPair {
  ImageGrid<Scalar> clean;
  ImageGrid<Scalar> condition;
};

/// Owns the optimizer state and sampling stream for epsilon-prediction
/// training of a TinyCnnDenoiser.
template <typename Scalar>
class Trainer {
 public:
  /// Throws std::invalid_argument unless `model` is a trainable tiny_cnn.
  Trainer(Denoiser<Scalar>& model, const NoiseSchedule& schedule, TrainConfig cfg);

  /// Draws t ~ U{1..T} and eps ~ N(0, I) per item, forms x_t, and applies one
  /// Adam update on the mean squared error between eps and the prediction.
  /// Returns the batch loss before the update.
  double train_step(std::span<const TrainingPair<Scalar>> batch);

  /// Last gradient (mean over the batch).
  const Vector<Scalar>& last_gradient() const { return grad_; }
  const TrainConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }

 private:
  TinyCnnDenoiser<Scalar>& model_;
  const NoiseSchedule& schedule_;
  TrainConfig cfg_;
  AdamState<Scalar> adam_;
  Rng rng_;
  Vector<Scalar> grad_;
};

/// Free-function form of one step with explicit optimizer state and stream.
template <typename Scalar>
double train_step(TinyCnnDenoiser<Scalar>& model, std::span<const TrainingPair<Scalar>> batch,
                  const NoiseSchedule& s, const TrainConfig& cfg, AdamState<Scalar>& adam, Rng& rng,
                  Vector<Scalar>* grad_out = nullptr);

}  // namespace regiondiff
