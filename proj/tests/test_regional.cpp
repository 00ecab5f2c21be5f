#include "doctest.h"

#include "regiondiff/metrics.hpp"
#include "regiondiff/random.hpp"
#include "regiondiff/regional.hpp"
#include "regiondiff/tiny_cnn.hpp"

#include <cmath>
#include <vector>

using namespace regiondiff;

namespace {

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  return s;
}

const NoiseSchedule& short_schedule() {
  static const NoiseSchedule s = build_linear_schedule(20, 1e-3, 0.2);
  return s;
}

/// eps_hat[p] = f(x_t[p], condition[p]).
class PointwiseDenoiser final : public Denoiser<double> {
 public:
  DenoiserKind kind() const override { return DenoiserKind::custom; }
  ImageGrid<double> estimate(const ImageGrid<double>& in, int t, const NoiseSchedule&) const override {
    const Index c = in.channels() / 2;
    ImageGrid<double> out(in.height(), in.width(), c, ValueDomain::unconstrained);
    out.array() = 0.5 * in.array().topRows(c).tanh() + 0.3 * in.array().bottomRows(c) + 1e-4 * t;
    return out;
  }
};

/// Shrinks x_t toward its zero-padded 3x3 mean, so estimates near a window
/// border differ from those in the interior.
class BoxDenoiser final : public Denoiser<double> {
 public:
  DenoiserKind kind() const override { return DenoiserKind::custom; }
  ImageGrid<double> estimate(const ImageGrid<double>& in, int t, const NoiseSchedule& s) const override {
    const Index h = in.height(), w = in.width();
    const double ab = s.alpha_bar(t);
    ImageGrid<double> out(h, w, 1, ValueDomain::unconstrained);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        double acc = 0.0;
        for (Index dr = -1; dr <= 1; ++dr) {
          for (Index dc = -1; dc <= 1; ++dc) {
            const Index rr = r + dr, cc = c + dc;
            if (rr >= 0 && rr < h && cc >= 0 && cc < w) acc += in(rr, cc, 0);
          }
        }
        out(r, c) = (in(r, c, 0) - std::sqrt(ab) * acc / 9.0) / std::sqrt(1.0 - ab);
      }
    }
    return out;
  }
};

int brute_coverage(const WindowPlan& plan, Index r, Index c) {
  int n = 0;
  for (Index i = 0; i + plan.window <= plan.padded_height; i += plan.stride) {
    for (Index j = 0; j + plan.window <= plan.padded_width; j += plan.stride) {
      if (r >= i && r < i + plan.window && c >= j && c < j + plan.window) ++n;
    }
  }
  return n;
}

/// Deliberately wrong sampler: every window takes its own reverse step with
/// its own estimate and its own noise, and windows are pasted in row-major
/// order so the last writer wins.
ImageGrid<double> window_local_despeckle(const ImageGrid<double>& cond, const Denoiser<double>& model,
                                         const NoiseSchedule& s, const WindowPlan& plan, std::uint64_t seed) {
  ImageGrid<double> x = initial_state<double>(cond.height(), cond.width(), 1, seed);
  Rng rng = step_noise_rng(seed);
  const Index m = plan.window;
  for (int t = s.steps(); t >= 1; --t) {
    ImageGrid<double> next = x;
    for (const WindowOrigin& o : plan.origins) {
      const ImageGrid<double> xw = crop(x, o.row, o.col, m, m);
      const ImageGrid<double> eps = model.predict(xw, crop(cond, o.row, o.col, m, m), t, s);
      ImageGrid<double> noise(m, m, 1, ValueDomain::unconstrained);
      if (t > 1) fill_standard_normal(noise, rng);
      next.plane(0).block(o.row, o.col, m, m) = ddpm_step(xw, eps, t, s, noise, VarianceChoice::beta).plane(0);
    }
    x = std::move(next);
  }
  return clamp_normalized(std::move(x));
}

Vector<double> random_parameters(const TinyCnnShape& sh, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.2);
  Vector<double> p(sh.parameter_count());
  for (Index i = 0; i < p.size(); ++i) p[i] = n(rng);
  return p;
}

}  // namespace

TEST_CASE("plan examples") {
  const WindowPlan one = plan_windows(64, 64, 64, 16);
  CHECK(one.window_count() == 1);
  CHECK(one.pad_bottom() == 0);
  CHECK(one.pad_right() == 0);
  CHECK((one.coverage == 1).all());

  const WindowPlan nine = plan_windows(96, 96, 64, 16);
  REQUIRE(nine.window_count() == 9);
  std::vector<WindowOrigin> want;
  for (Index r : {0, 16, 32}) {
    for (Index c : {0, 16, 32}) want.push_back({r, c});
  }
  CHECK(nine.origins == want);
  CHECK(nine.coverage(48, 48) == 9);
  CHECK(nine.coverage(0, 0) == 1);
  CHECK(nine.coverage(95, 95) == 1);

  const WindowPlan seventy = plan_windows(70, 70, 64, 16);
  CHECK(seventy.padded_height == 80);
  CHECK(seventy.padded_width == 80);
  CHECK(seventy.window_count() == 4);

  const WindowPlan small = plan_windows(5, 3, 64, 16);
  CHECK(small.padded_height == 64);
  CHECK(small.padded_width == 64);
  CHECK(small.window_count() == 1);

  const WindowPlan odd = plan_windows(130, 257, 64, 16);
  CHECK(odd.padded_height == 144);
  CHECK(odd.padded_width == 272);
}

TEST_CASE("plan rejects bad geometry") {
  CHECK_THROWS_AS(plan_windows(64, 64, 64, 24), std::invalid_argument);
  CHECK_THROWS_AS(plan_windows(64, 64, 16, 32), std::invalid_argument);
  CHECK_THROWS_AS(plan_windows(0, 64, 64, 16), std::invalid_argument);
  CHECK_THROWS_AS(plan_windows(64, 64, 64, 0), std::invalid_argument);
}

TEST_CASE("coverage matches enumeration and plan invariants hold") {
  const std::vector<std::pair<Index, Index>> geometries{{64, 16}, {32, 8}, {16, 16}, {8, 4}, {12, 3}};
  for (auto [m, n] : geometries) {
    for (Index h = 1; h <= 128; h += 9) {
      for (Index w = 1; w <= 128; w += 11) {
        const WindowPlan plan = plan_windows(h, w, m, n);
        REQUIRE(plan.padded_height >= std::max(h, m));
        REQUIRE(plan.padded_width >= std::max(w, m));
        REQUIRE((plan.padded_height - m) % n == 0);
        REQUIRE((plan.padded_width - m) % n == 0);
        REQUIRE(plan.padded_height - h < std::max<Index>(n, m - h + 1));
        for (std::size_t k = 1; k < plan.origins.size(); ++k) REQUIRE(plan.origins[k - 1] < plan.origins[k]);
        for (const WindowOrigin& o : plan.origins) {
          REQUIRE(o.row + m <= plan.padded_height);
          REQUIRE(o.col + m <= plan.padded_width);
        }
        const int full = static_cast<int>((m / n) * (m / n));
        for (Index r = 0; r < plan.padded_height; ++r) {
          for (Index c = 0; c < plan.padded_width; ++c) {
            const int cov = plan.coverage(r, c);
            REQUIRE(cov == brute_coverage(plan, r, c));
            REQUIRE(cov >= 1);
            const bool interior = r >= m - n && c >= m - n && plan.padded_height - 1 - r >= m - n &&
                                  plan.padded_width - 1 - c >= m - n;
            if (interior) REQUIRE(cov == full);
          }
        }
      }
    }
  }
}

TEST_CASE("constant zero denoiser gives a zero estimate") {
  const ConstantZeroDenoiser<double> zero;
  Rng rng(1);
  for (auto [h, w] : std::vector<std::pair<Index, Index>>{{64, 64}, {96, 96}, {70, 33}}) {
    const ImageGrid<double> x = standard_normal<double>(h, w, 1, rng);
    const ImageGrid<double> c = standard_normal<double>(h, w, 1, rng);
    const ImageGrid<double> e = regional_epsilon(x, c, 10, zero, plan_windows(h, w, 64, 16), schedule());
    CHECK((e.array() == 0.0).all());
  }
}

TEST_CASE("pointwise denoiser: regional equals full image") {
  const PointwiseDenoiser f;
  Rng rng(2);
  for (auto [h, w] : std::vector<std::pair<Index, Index>>{{64, 64}, {96, 96}, {70, 70}, {130, 97}, {20, 150}}) {
    const ImageGrid<double> x = standard_normal<double>(h, w, 1, rng);
    const ImageGrid<double> c = standard_normal<double>(h, w, 1, rng);
    for (auto [m, n] : std::vector<std::pair<Index, Index>>{{64, 16}, {32, 8}, {16, 16}}) {
      const WindowPlan plan = plan_windows(h, w, m, n);
      const ImageGrid<double> global = f.predict(x, c, 300, schedule());
      const ImageGrid<double> regional = regional_epsilon(x, c, 300, f, plan, schedule());
      CHECK((regional.array() - global.array()).abs().maxCoeff() <= 1e-6);

      const ImageGrid<double> noise = standard_normal<double>(h, w, 1, rng);
      const ImageGrid<double> step = regional_sample_step(x, c, 300, f, plan, schedule(), noise, SamplerConfig{});
      const ImageGrid<double> ref = ddpm_step(x, global, 300, schedule(), noise, VarianceChoice::beta);
      CHECK((step.array() - ref.array()).abs().maxCoeff() <= 1e-6);
    }
  }
}

TEST_CASE("tiny network: overlap average equals a brute-force mean") {
  const TinyCnnShape sh;
  const TinyCnnDenoiser<double> model(sh, random_parameters(sh, 3));
  Rng rng(4);
  const ImageGrid<double> x = standard_normal<double>(96, 96, 1, rng);
  const ImageGrid<double> c = standard_normal<double>(96, 96, 1, rng);
  const WindowPlan plan = plan_windows(96, 96, 64, 16);
  const ImageGrid<double> fused = regional_epsilon(x, c, 123, model, plan, schedule());

  std::vector<ImageGrid<double>> outs;
  for (const WindowOrigin& o : plan.origins) {
    outs.push_back(model.predict(crop(x, o.row, o.col, 64, 64), crop(c, o.row, o.col, 64, 64), 123, schedule()));
  }
  bool identical = true;
  for (Index r = 0; r < 96; ++r) {
    for (Index col = 0; col < 96; ++col) {
      double sum = 0.0;
      int count = 0;
      for (std::size_t k = 0; k < plan.origins.size(); ++k) {
        const WindowOrigin& o = plan.origins[k];
        if (r >= o.row && r < o.row + 64 && col >= o.col && col < o.col + 64) {
          sum += outs[k](r - o.row, col - o.col);
          ++count;
        }
      }
      identical = identical && fused(r, col) == sum / count;
    }
  }
  CHECK(identical);
}

TEST_CASE("averaging conserves the window estimates") {
  const TinyCnnShape sh;
  const TinyCnnDenoiser<double> model(sh, random_parameters(sh, 5));
  Rng rng(6);
  const WindowPlan plan = plan_windows(80, 112, 32, 8);
  const ImageGrid<double> x = standard_normal<double>(80, 112, 1, rng);
  const ImageGrid<double> c = standard_normal<double>(80, 112, 1, rng);
  const RegionalEngine<double> engine(model, plan);
  const ImageGrid<double> eps = engine.epsilon_padded(x, c, 40, schedule());
  const double weighted = (eps.plane(0).array() * plan.coverage.cast<double>()).sum();
  double raw = 0.0;
  for (const WindowOrigin& o : plan.origins) {
    raw += model.predict(crop(x, o.row, o.col, 32, 32), crop(c, o.row, o.col, 32, 32), 40, schedule()).array().sum();
  }
  CHECK(std::abs(weighted - raw) <= 1e-9 * std::max(1.0, std::abs(raw)));
}

TEST_CASE("worker count does not change the result") {
  const TinyCnnShape sh;
  const TinyCnnDenoiser<float> model(sh, random_parameters(sh, 7).cast<float>());
  Rng rng(8);
  const ImageGrid<float> x = standard_normal<float>(100, 90, 1, rng);
  const ImageGrid<float> c = standard_normal<float>(100, 90, 1, rng);
  const WindowPlan plan = plan_windows(100, 90, 32, 16);
  const ImageGrid<float> one = regional_epsilon(x, c, 500, model, plan, schedule(), 1);
  for (int workers : {2, 3, 8}) CHECK(regional_epsilon(x, c, 500, model, plan, schedule(), workers).identical(one));
}

TEST_CASE("single window reduces to the global sampler") {
  const TinyCnnShape sh;
  const TinyCnnDenoiser<float> model(sh, random_parameters(sh, 9).cast<float>());
  Rng rng(10);
  const ImageGrid<float> x = standard_normal<float>(64, 64, 1, rng);
  const ImageGrid<float> c = standard_normal<float>(64, 64, 1, rng);
  const ImageGrid<float> noise = standard_normal<float>(64, 64, 1, rng);
  const WindowPlan plan = plan_windows(64, 64, 64, 16);
  const ImageGrid<float> a = regional_sample_step(x, c, 77, model, plan, schedule(), noise, SamplerConfig{});
  const ImageGrid<float> b =
      ddpm_step(x, model.predict(x, c, 77, schedule()), 77, schedule(), noise, VarianceChoice::beta);
  CHECK(a.identical(b));

  const ImageGrid<float> cond = clamp_normalized(c);
  SamplerConfig cfg;
  cfg.num_inference_steps = short_schedule().steps();
  cfg.seed = 11;
  CHECK(regional_despeckle(cond, model, short_schedule(), cfg).identical(sample(cond, model, short_schedule(), cfg)));
  cfg.kind = SamplerKind::ddim;
  cfg.num_inference_steps = 7;
  cfg.eta = 0.5;
  CHECK(regional_despeckle(cond, model, short_schedule(), cfg).identical(sample(cond, model, short_schedule(), cfg)));
}

TEST_CASE("arbitrary shapes come back unchanged in size") {
  const OracleGaussianDenoiser<double> oracle({0.0, 0.25});
  Rng rng(12);
  const ImageGrid<double> cond = clamp_normalized(standard_normal<double>(130, 257, 1, rng));
  SamplerConfig cfg;
  cfg.num_inference_steps = short_schedule().steps();
  const ImageGrid<double> out = regional_despeckle(cond, oracle, short_schedule(), cfg);
  CHECK(out.height() == 130);
  CHECK(out.width() == 257);
  CHECK(out.array().abs().maxCoeff() <= 1.0);
  CHECK(out.all_finite());

  CHECK_THROWS_AS(regional_epsilon(cond, cond, 5, oracle, plan_windows(130, 256, 64, 16), short_schedule()),
                  ShapeError);
}

TEST_CASE("reflection padding feeds mirrored pixels") {
  const PointwiseDenoiser f;
  Rng rng(13);
  const ImageGrid<double> x = standard_normal<double>(3, 5, 1, rng);
  const ImageGrid<double> padded = pad_reflect(x, 2, 3);
  CHECK(padded.height() == 5);
  CHECK(padded.width() == 8);
  CHECK(padded(3, 0) == x(1, 0));
  CHECK(padded(4, 0) == x(0, 0));
  CHECK(padded(0, 5) == x(0, 3));
  CHECK(padded(0, 7) == x(0, 1));
}

TEST_CASE("window-local updates leave seams on a flat image") {
  const NoiseSchedule s = build_linear_schedule(50, 1e-3, 0.2);
  const BoxDenoiser model;
  const ImageGrid<double> flat = ImageGrid<double>::constant(128, 128, 1, 0.0);
  const WindowPlan plan = plan_windows(128, 128, 32, 8);
  const WindowPlan seams = plan_windows(128, 128, 32, 32);

  SamplerConfig cfg;
  cfg.num_inference_steps = s.steps();
  cfg.seed = 5;
  const ImageGrid<double> good = regional_despeckle(flat, model, s, cfg, 32, 8);
  const ImageGrid<double> bad = window_local_despeckle(flat, model, s, plan, 5);
  const Measurement g = seam_ratio(good, seams);
  const Measurement b = seam_ratio(bad, seams);
  MESSAGE("seam ratio regional " << g.value << ", window-local " << b.value);
  REQUIRE(g.ok());
  REQUIRE(b.ok());
  CHECK(b.value > g.value);
}
