#include "doctest.h"

#include "regiondiff/denoiser.hpp"
#include "regiondiff/diffusion.hpp"
#include "regiondiff/random.hpp"
#include "regiondiff/tiny_cnn.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace regiondiff;

namespace {

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  return s;
}

// Straightforward loop implementation of the same network, written against
// the documented parameter layout rather than the im2col code path.
std::vector<double> conv3x3(const std::vector<double>& in, Index cin, Index cout, Index h, Index w,
                            const double* weight, const double* bias) {
  std::vector<double> out(static_cast<std::size_t>(cout * h * w), 0.0);
  for (Index o = 0; o < cout; ++o) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double acc = bias ? bias[o] : 0.0;
        for (Index c = 0; c < cin; ++c) {
          for (Index ky = 0; ky < 3; ++ky) {
            for (Index kx = 0; kx < 3; ++kx) {
              const Index sy = y + ky - 1, sx = x + kx - 1;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              acc += weight[((o * cin + c) * 3 + ky) * 3 + kx] * in[static_cast<std::size_t>((c * h + sy) * w + sx)];
            }
          }
        }
        out[static_cast<std::size_t>((o * h + y) * w + x)] = acc;
      }
    }
  }
  return out;
}

double silu_ref(double v) { return v / (1.0 + std::exp(-v)); }

std::vector<double> reference_forward(const TinyCnnShape& sh, const Vector<double>& p, const ImageGrid<double>& in,
                                      const Vector<double>& embed) {
  const auto o = sh.offsets();
  const Index h = in.height(), w = in.width();
  std::vector<double> x(in.data(), in.data() + in.size());
  std::vector<double> a1 = conv3x3(x, sh.input_channels(), sh.hidden, h, w, p.data() + o.conv1_w, p.data() + o.conv1_b);
  for (double& v : a1) v = silu_ref(v);
  std::vector<double> a2 = conv3x3(a1, sh.hidden, sh.hidden, h, w, p.data() + o.conv2_w, p.data() + o.conv2_b);
  for (Index c = 0; c < sh.hidden; ++c) {
    double shift = 0.0;
    for (Index k = 0; k < sh.embed_dim; ++k) shift += p[o.time_w + c * sh.embed_dim + k] * embed[k];
    for (Index i = 0; i < h * w; ++i) a2[static_cast<std::size_t>(c * h * w + i)] += shift;
  }
  for (double& v : a2) v = silu_ref(v);
  return conv3x3(a2, sh.hidden, sh.channels, h, w, p.data() + o.conv3_w, p.data() + o.conv3_b);
}

Vector<double> random_parameters(const TinyCnnShape& sh, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Vector<double> p(sh.parameter_count());
  for (Index i = 0; i < p.size(); ++i) p[i] = n(rng);
  return p;
}

double objective(const TinyCnnShape& sh, const Vector<double>& p, const ImageGrid<double>& in,
                 const Vector<double>& embed, const ImageGrid<double>& upstream) {
  return (tiny_cnn_forward(sh, p, in, embed).array() * upstream.array()).sum();
}

}  // namespace

// Oracle --------------------------------------------------------------------------

TEST_CASE("oracle fixed point at the scaled prior mean") {
  const OracleGaussianDenoiser<double> oracle({0.3, 0.04});
  for (int t : {1, 400, 1000}) {
    const double x = std::sqrt(schedule().alpha_bar(t)) * 0.3;
    const ImageGrid<double> x_t = ImageGrid<double>::constant(2, 2, 1, x);
    const ImageGrid<double> eps = oracle.predict(x_t, ImageGrid<double>(2, 2), t, schedule());
    CHECK((eps.array() == 0.0).all());
  }
}

TEST_CASE("oracle with an uninformative prior") {
  const OracleGaussianDenoiser<double> oracle({0.3, 1e12});
  Rng rng(3);
  const ImageGrid<double> x_t = standard_normal<double>(3, 3, 1, rng);
  for (int t : {10, 400, 1000}) {
    const ImageGrid<double> eps = oracle.predict(x_t, ImageGrid<double>(3, 3), t, schedule());
    CHECK(eps.array().abs().maxCoeff() < 1e-5);
    for (Index i = 0; i < x_t.size(); ++i) {
      const double post = oracle.posterior_x0(x_t.data()[i], t, schedule());
      CHECK(std::abs(post - x_t.data()[i] / std::sqrt(schedule().alpha_bar(t))) < 1e-5);
    }
  }
}

TEST_CASE("oracle matches the regression of true noise on x_t") {
  const double mu0 = 0.3, s0_sq = 0.04;
  const int t = 400;
  const double ab = schedule().alpha_bar(t);
  Rng rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  const int N = 100000;
  double sx = 0, se = 0, sxx = 0, sxe = 0;
  for (int i = 0; i < N; ++i) {
    const double x0 = mu0 + std::sqrt(s0_sq) * n(rng);
    const double e = n(rng);
    const double x = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * e;
    sx += x;
    se += e;
    sxx += x * x;
    sxe += x * e;
  }
  const double slope = (sxe - sx * se / N) / (sxx - sx * sx / N);
  const double intercept = se / N - slope * sx / N;
  const OracleGaussianDenoiser<double> oracle({mu0, s0_sq});
  const auto coef = oracle.coefficients(t, schedule());
  CHECK(std::abs(slope - coef.slope) <= 0.01 * std::abs(coef.slope));
  CHECK(std::abs(intercept - (-coef.slope * coef.center)) <= 0.01 * std::abs(coef.slope * coef.center));
}

TEST_CASE("oracle estimate is affine in x_t") {
  const OracleGaussianDenoiser<double> oracle({-0.2, 0.5});
  const ImageGrid<double> cond(1, 3);
  ImageGrid<double> x(1, 3, 1, ValueDomain::unconstrained);
  x(0, 0) = -1.0;
  x(0, 1) = 0.5;
  x(0, 2) = 2.0;  // collinear: midpoint of the outer two
  for (int t : {3, 600}) {
    const ImageGrid<double> e = oracle.predict(x, cond, t, schedule());
    CHECK(std::abs(e(0, 1) - 0.5 * (e(0, 0) + e(0, 2))) < 1e-14);
  }
}

TEST_CASE("oracle posterior step equals the Bayesian blend") {
  const double mu0 = 0.3, s0_sq = 0.04;
  const OracleGaussianDenoiser<double> oracle({mu0, s0_sq});
  Rng rng(21);
  const ImageGrid<double> x_t = standard_normal<double>(4, 4, 1, rng);
  for (int t : {1, 2, 100, 999, 1000}) {
    const NoiseSchedule& s = schedule();
    const ImageGrid<double> mu = posterior_mean(x_t, oracle.predict(x_t, ImageGrid<double>(4, 4), t, s), t, s);
    const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
    for (Index i = 0; i < mu.size(); ++i) {
      const double x = x_t.data()[i];
      const double x0 = (std::sqrt(ab) * s0_sq * x + (1.0 - ab) * mu0) / (ab * s0_sq + 1.0 - ab);
      const double blend =
          std::sqrt(ab_prev) * s.beta(t) / (1.0 - ab) * x0 + std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab) * x;
      CHECK(std::abs(mu.data()[i] - blend) < 1e-10);
    }
  }
}

TEST_CASE("oracle rejects a non-positive prior variance") {
  CHECK_THROWS_AS(OracleGaussianDenoiser<double>({0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("constant zero and predict contracts") {
  const ConstantZeroDenoiser<float> zero;
  Rng rng(1);
  const ImageGrid<float> x = standard_normal<float>(5, 7, 2, rng);
  const ImageGrid<float> c = standard_normal<float>(5, 7, 2, rng);
  const ImageGrid<float> x_copy = x, c_copy = c;
  const ImageGrid<float> e = zero.predict(x, c, 1, schedule());
  CHECK(e.channels() == 2);
  CHECK((e.array() == 0.0f).all());
  CHECK(x.identical(x_copy));
  CHECK(c.identical(c_copy));
  CHECK_THROWS_AS(zero.predict(x, ImageGrid<float>(5, 6, 2), 1, schedule()), ShapeError);
  CHECK_THROWS_AS(zero.predict(x, c, 0, schedule()), std::out_of_range);
  CHECK_THROWS_AS(zero.predict(x, c, 1001, schedule()), std::out_of_range);
}

// Tiny CNN ------------------------------------------------------------------------

TEST_CASE("parameter layout") {
  const TinyCnnShape sh;
  CHECK(sh.parameter_count() == 32 * 2 * 9 + 32 + 32 * 32 * 9 + 32 + 32 * 32 + 1 * 32 * 9 + 1);
  CHECK(sh.parameter_count() == 11169);
  const auto o = sh.offsets();
  CHECK(o.conv1_w == 0);
  CHECK(o.end == sh.parameter_count());
  CHECK(TinyCnnShape{3}.input_channels() == 6);
}

TEST_CASE("sinusoidal embedding") {
  const Vector<double> e = sinusoidal_embedding<double>(1000, 1000, 32);
  CHECK(e.size() == 32);
  CHECK(e[0] == doctest::Approx(std::sin(1000.0)));
  CHECK(e[16] == doctest::Approx(std::cos(1000.0)));
  const double f = std::exp(-std::log(10000.0) * 5.0 / 16.0);
  const Vector<double> e2 = sinusoidal_embedding<double>(250, 1000, 32);
  CHECK(e2[5] == doctest::Approx(std::sin(250.0 * f)));
  CHECK(e2[21] == doctest::Approx(std::cos(250.0 * f)));
  CHECK_THROWS_AS(sinusoidal_embedding<double>(1, 10, 31), std::invalid_argument);
}

TEST_CASE("initialization") {
  const TinyCnnShape sh;
  const Vector<float> a = init_tiny_cnn<float>(sh, 9);
  const Vector<float> b = init_tiny_cnn<float>(sh, 9);
  CHECK(a == b);
  CHECK_FALSE(a == init_tiny_cnn<float>(sh, 10));
  const auto o = sh.offsets();
  CHECK(a.segment(o.conv3_w, o.end - o.conv3_w).isZero(0));
  const float bound1 = 1.0f / std::sqrt(18.0f);
  CHECK(a.segment(0, o.conv2_w).cwiseAbs().maxCoeff() <= bound1);
  CHECK(a.segment(0, o.conv2_w).cwiseAbs().maxCoeff() > 0.9f * bound1);
}

TEST_CASE("zero parameters give zero output; fresh init predicts zero noise") {
  const TinyCnnShape sh;
  Rng rng(2);
  const ImageGrid<double> in = standard_normal<double>(9, 11, 2, rng);
  const Vector<double> zero = Vector<double>::Zero(sh.parameter_count());
  CHECK((tiny_cnn_forward(sh, zero, in, sinusoidal_embedding<double>(3, 10, 32)).array() == 0.0).all());

  const TinyCnnDenoiser<double> fresh(sh, 4);
  const ImageGrid<double> x = standard_normal<double>(9, 11, 1, rng);
  const ImageGrid<double> e = fresh.predict(x, x, 5, schedule());
  CHECK((e.array() == 0.0).all());
}

TEST_CASE("forward is deterministic and matches a loop reference") {
  const TinyCnnShape sh;
  const Vector<double> p = random_parameters(sh, 5);
  Rng rng(6);
  const ImageGrid<double> in = standard_normal<double>(16, 16, 2, rng);
  const Vector<double> embed = sinusoidal_embedding<double>(321, 1000, 32);
  const ImageGrid<double> out = tiny_cnn_forward(sh, p, in, embed);
  CHECK(out.identical(tiny_cnn_forward(sh, p, in, embed)));
  const std::vector<double> ref = reference_forward(sh, p, in, embed);
  double worst = 0.0;
  for (Index i = 0; i < out.size(); ++i) worst = std::max(worst, std::abs(out.data()[i] - ref[static_cast<std::size_t>(i)]));
  CHECK(worst < 1e-6);

  // single precision stays close to the double reference
  const ImageGrid<float> outf = tiny_cnn_forward<float>(sh, p.cast<float>(), in.cast<float>(), embed.cast<float>());
  CHECK((outf.cast<double>().array() - out.array()).abs().maxCoeff() < 1e-3);

  // three channels
  const TinyCnnShape sh3{3};
  const Vector<double> p3 = random_parameters(sh3, 8);
  const ImageGrid<double> in3 = standard_normal<double>(6, 5, 6, rng);
  const ImageGrid<double> out3 = tiny_cnn_forward(sh3, p3, in3, embed);
  const std::vector<double> ref3 = reference_forward(sh3, p3, in3, embed);
  CHECK(out3.channels() == 3);
  for (Index i = 0; i < out3.size(); ++i) CHECK(std::abs(out3.data()[i] - ref3[static_cast<std::size_t>(i)]) < 1e-9);
}

TEST_CASE("forward rejects inconsistent input") {
  const TinyCnnShape sh;
  const Vector<double> p = random_parameters(sh, 5);
  const Vector<double> embed = sinusoidal_embedding<double>(1, 10, 32);
  CHECK_THROWS_AS(tiny_cnn_forward(sh, p, ImageGrid<double>(4, 4, 3), embed), ShapeError);
  CHECK_THROWS_AS(tiny_cnn_forward(sh, Vector<double>(p.head(100)), ImageGrid<double>(4, 4, 2), embed),
                  std::invalid_argument);
  CHECK_THROWS_AS(tiny_cnn_forward(sh, p, ImageGrid<double>(4, 4, 2), Vector<double>(embed.head(8))), ShapeError);
  Vector<double> bad = p;
  bad[3] = std::nan("");
  CHECK_THROWS_AS(TinyCnnDenoiser<double>(sh, bad), std::invalid_argument);
}

TEST_CASE("backward matches central differences") {
  const TinyCnnShape sh;
  Vector<double> p = random_parameters(sh, 12);
  Rng rng(13);
  const ImageGrid<double> in = standard_normal<double>(8, 8, 2, rng);
  const ImageGrid<double> up = standard_normal<double>(8, 8, 1, rng);
  const Vector<double> embed = sinusoidal_embedding<double>(77, 1000, 32);
  const Vector<double> g = tiny_cnn_backward(sh, p, in, embed, up);
  const double h = 1e-5;
  double worst = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double fp = objective(sh, p, in, embed, up);
    p[i] = keep - h;
    const double fm = objective(sh, p, in, embed, up);
    p[i] = keep;
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - g[i]) / denom);
  }
  MESSAGE("max relative error " << worst);
  CHECK(worst <= 1e-4);
}

TEST_CASE("zero upstream gives a zero gradient") {
  const TinyCnnShape sh;
  const Vector<double> p = random_parameters(sh, 14);
  Rng rng(15);
  const ImageGrid<double> in = standard_normal<double>(8, 8, 2, rng);
  const Vector<double> g =
      tiny_cnn_backward(sh, p, in, sinusoidal_embedding<double>(5, 10, 32), ImageGrid<double>(8, 8, 1));
  CHECK(g.isZero(0));
  CHECK_THROWS_AS(tiny_cnn_backward(sh, p, in, sinusoidal_embedding<double>(5, 10, 32), ImageGrid<double>(8, 7, 1)),
                  ShapeError);
}

TEST_CASE("locality: a pixel only sees its 7x7 neighbourhood") {
  const TinyCnnShape sh;
  const Vector<double> p = random_parameters(sh, 16);
  const Vector<double> embed = sinusoidal_embedding<double>(500, 1000, 32);
  Rng rng(17);
  const ImageGrid<double> in = standard_normal<double>(16, 16, 2, rng);
  ImageGrid<double> probe(16, 16, 1, ValueDomain::unconstrained);
  probe(8, 8) = 1.0;
  const Vector<double> g = tiny_cnn_backward(sh, p, in, embed, probe);
  const ImageGrid<double> out = tiny_cnn_forward(sh, p, in, embed);

  ImageGrid<double> far = in;
  far(8, 12, 0) += 3.0;  // 4 columns away: outside the 3-pixel radius
  far(3, 2, 1) -= 2.0;
  CHECK(tiny_cnn_backward(sh, p, far, embed, probe) == g);
  CHECK(tiny_cnn_forward(sh, p, far, embed)(8, 8) == out(8, 8));

  ImageGrid<double> near = in;
  near(8, 11, 0) += 3.0;  // 3 columns away: inside
  CHECK_FALSE(tiny_cnn_backward(sh, p, near, embed, probe) == g);
  CHECK(tiny_cnn_forward(sh, p, near, embed)(8, 8) != out(8, 8));
}

TEST_CASE("condition channels influence the estimate") {
  const TinyCnnShape sh;
  TinyCnnDenoiser<double> model(sh, random_parameters(sh, 18));
  Rng rng(19);
  const ImageGrid<double> x = standard_normal<double>(8, 8, 1, rng);
  const ImageGrid<double> c1 = standard_normal<double>(8, 8, 1, rng);
  const ImageGrid<double> c2 = standard_normal<double>(8, 8, 1, rng);
  CHECK_FALSE(model.predict(x, c1, 10, schedule()).identical(model.predict(x, c2, 10, schedule())));
  CHECK_FALSE(model.predict(x, c1, 10, schedule()).identical(model.predict(x, c1, 900, schedule())));
}
