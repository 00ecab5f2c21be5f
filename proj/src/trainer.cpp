#include "regiondiff/trainer.hpp"

#include "regiondiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace regiondiff {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (num_iterations < 0) throw std::invalid_argument("num_iterations must be >= 0");
}

template <typename Scalar>
void AdamState<Scalar>::apply(Vector<Scalar>& params, const Vector<Scalar>& grad, double lr,
                              const AdamParams& hp) {
  if (grad.size() != m_.size() || params.size() != m_.size()) {
    throw std::invalid_argument("adam: size mismatch");
  }
  ++step_;
  const Vector<double> g = grad.template cast<double>();
  m_ = hp.beta1 * m_ + (1.0 - hp.beta1) * g;
  v_ = hp.beta2 * v_ + (1.0 - hp.beta2) * g.cwiseAbs2();
  if (lr == 0.0) return;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step_));
  const Vector<double> update =
      (lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + hp.epsilon)).matrix();
  params -= update.template cast<Scalar>();
}

template <typename Scalar>
double train_step(TinyCnnDenoiser<Scalar>& model, std::span<const TrainingPair<Scalar>> batch,
                  const NoiseSchedule& s, const TrainConfig& cfg, AdamState<Scalar>& adam, Rng& rng,
                  Vector<Scalar>* grad_out) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::uniform_int_distribution<int> pick_t(1, s.steps());
  const TinyCnnShape& shape = model.shape();

  Vector<Scalar> grad = Vector<Scalar>::Zero(shape.parameter_count());
  double loss = 0.0;
  const double items = static_cast<double>(batch.size());
  thread_local TinyCnnTape<Scalar> tape;
  // Items are processed in order so the summed gradient is reproducible.
  for (const TrainingPair<Scalar>& pair : batch) {
    require_same_shape(pair.clean, pair.condition, "train_step");
    const int t = pick_t(rng);
    const ImageGrid<Scalar> eps = standard_normal<Scalar>(pair.clean.height(), pair.clean.width(),
                                                          pair.clean.channels(), rng);
    const ImageGrid<Scalar> x_t = q_sample(pair.clean, t, eps, s);
    const Vector<Scalar> embed = model.embed(t, s);
    const ImageGrid<Scalar> pred =
        tiny_cnn_forward(shape, model.parameters(), concat_channels(x_t, pair.condition), embed, &tape);

    const double n = static_cast<double>(pred.size());
    ImageGrid<Scalar> upstream(pred.height(), pred.width(), pred.channels(), ValueDomain::unconstrained);
    upstream.array() = pred.array() - eps.array();
    loss += upstream.array().template cast<double>().square().sum() / n;
    upstream.array() *= static_cast<Scalar>(2.0 / (n * items));
    grad += tiny_cnn_backward(shape, model.parameters(), tape, upstream);
  }
  loss /= items;
  if (!grad.allFinite()) throw std::runtime_error("train_step: non-finite gradient");

  adam.apply(model.mutable_parameters(), grad, cfg.learning_rate, cfg.adam);
  if (grad_out) *grad_out = std::move(grad);
  return loss;
}

template <typename Scalar>
Trainer<Scalar>::Trainer(Denoiser<Scalar>& model, const NoiseSchedule& schedule, TrainConfig cfg)
    : model_([&]() -> TinyCnnDenoiser<Scalar>& {
        auto* cnn = dynamic_cast<TinyCnnDenoiser<Scalar>*>(&model);
        if (!cnn) {
          throw std::invalid_argument("model kind '" + std::string(to_string(model.kind())) + "' is not trainable");
        }
        return *cnn;
      }()),
      schedule_(schedule),
      cfg_(cfg),
      adam_(model_.shape().parameter_count()),
      rng_(mix_seed(cfg.seed, 7)) {
  cfg_.validate();
}

template <typename Scalar>
double Trainer<Scalar>::train_step(std::span<const TrainingPair<Scalar>> batch) {
  return regiondiff::train_step(model_, batch, schedule_, cfg_, adam_, rng_, &grad_);
}

#define REGIONDIFF_INSTANTIATE(S)                                                                      \
  template class AdamState<S>;                                                                         \
  template class Trainer<S>;                                                                           \
  template double train_step<S>(TinyCnnDenoiser<S>&, std::span<const TrainingPair<S>>, const NoiseSchedule&, \
                                const TrainConfig&, AdamState<S>&, Rng&, Vector<S>*);

REGIONDIFF_INSTANTIATE(float)
REGIONDIFF_INSTANTIATE(double)
#undef REGIONDIFF_INSTANTIATE

}  // namespace regiondiff
