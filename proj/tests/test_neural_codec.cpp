#include <cmath>
#include <filesystem>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include "nicreg/neural_codec.hpp"
#include "nicreg/sources.hpp"
#include "test_util.hpp"

using namespace nicreg;
using nicreg::testing::check_param_gradients;
using nicreg::testing::expect_error;

namespace {

struct Fixture {
  CodecArchitecture arch;
  Rng init{derive_seed(5, "codec-init")};
  CodecModel model{arch, init};
  ad::Tensor x;

  explicit Fixture(std::size_t rows = 16) {
    Rng data(derive_seed(5, "data"));
    x = make_source(SourceConfig{})->sample(data, rows).x;
  }
};

double quadrature_mass(double v, double mean, double scale) {
  auto pdf = [&](double t) {
    const double z = (t - mean) / scale;
    return std::exp(-0.5 * z * z) / (scale * std::sqrt(2.0 * M_PI));
  };
  double err = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(pdf, v - 0.5, v + 0.5, 15,
                                                                       1e-14, &err);
}

}  // namespace

TEST_CASE("zero noise leaves the analysis output untouched") {
  Fixture f;
  ad::Graph g;
  AunNoise zero = AunNoise::zero();
  CodecOutput out = encode_train(f.model, g, g.constant(f.x), zero);
  CHECK(out.latent.value().data() == out.y.value().data());
}

TEST_CASE("noisy latent stays within half a step and has identity Jacobian") {
  Fixture f;
  Rng rng(9);
  AunNoise noise(rng);
  ad::Graph g;
  CodecOutput out = encode_train(f.model, g, g.constant(f.x), noise);
  double max_dev = 0.0;
  for (std::size_t i = 0; i < out.y.value().size(); ++i) {
    max_dev = std::max(max_dev, std::abs(out.latent.value()[i] - out.y.value()[i]));
  }
  CHECK(max_dev <= 0.5);
  CHECK(max_dev > 0.0);
  // d(sum(c * latent)) / dy == c exactly.
  std::mt19937_64 r(2);
  ad::Tensor c(out.latent.shape());
  for (double& v : c.values()) v = std::uniform_real_distribution<double>(-1, 1)(r);
  g.backward(ad::sum(ad::mul(out.latent, g.constant(c))));
  CHECK(out.y.grad().data() == c.data());
}

TEST_CASE("rounding is ties-to-even") {
  CHECK(round_half_even(2.3) == 2.0);
  CHECK(round_half_even(2.5) == 2.0);
  CHECK(round_half_even(3.5) == 4.0);
  CHECK(round_half_even(-0.49) == 0.0);
  CHECK(!std::signbit(round_half_even(-0.49)));
  CHECK(round_half_even(-2.5) == -2.0);
}

TEST_CASE("eval latents are integers and evaluation is deterministic") {
  Fixture f(64);
  ad::Graph g1, g2;
  CodecOutput a = encode_eval(f.model, g1, g1.constant(f.x));
  for (double v : a.latent.value().values()) CHECK(v == std::nearbyint(v));

  const auto dir = std::filesystem::temp_directory_path() / "nicreg_test_codec";
  std::filesystem::remove_all(dir);
  f.model.save(dir);
  CodecModel loaded = CodecModel::load(dir);
  CodecOutput b = encode_eval(loaded, g2, g2.constant(f.x));
  CHECK(a.latent.value().data() == b.latent.value().data());
  CHECK(a.xhat.value().data() == b.xhat.value().data());
  CHECK(a.rate.bits_per_vector.item() == b.rate.bits_per_vector.item());
}

TEST_CASE("interval rate at the mode of a unit Gaussian") {
  // Oracle: -log2(erf(0.5 / sqrt 2)) evaluated at 40 digits.
  CHECK(interval_rate_bits(0.0, 0.0, 1.0) == doctest::Approx(1.3848665342909897).epsilon(1e-14));
  CHECK(gaussian_interval_mass(0.0, 0.0, 1.0) ==
        doctest::Approx(0.38292492254802620728).epsilon(1e-14));
}

TEST_CASE("rate grows with the prior scale at the mode") {
  double prev = -1.0;
  for (double s = 0.05; s < 1e4; s *= 1.7) {
    const double r = interval_rate_bits(3.0, 3.0, s);
    CHECK(r > prev);
    prev = r;
  }
  // Large-scale asymptote log2(sigma sqrt(2 pi)).
  CHECK(interval_rate_bits(0.0, 0.0, 1e3) ==
        doctest::Approx(std::log2(1e3 * std::sqrt(2.0 * M_PI))).epsilon(1e-6));
}

TEST_CASE("interval mass matches adaptive quadrature") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> mu(-5, 5), ls(-1.5, 1.5);
  for (int i = 0; i < 200; ++i) {
    const double m = mu(rng), s = std::pow(10.0, ls(rng));
    const double v = std::round(m + std::uniform_real_distribution<double>(-4, 4)(rng) * s);
    const double q = quadrature_mass(v, m, s);
    CHECK(std::abs(gaussian_interval_mass(v, m, s) - q) <= 1e-9);
    if (q > 1e-250) CHECK(std::abs(gaussian_interval_mass(v, m, s) - q) <= 1e-9 * q);
  }
}

TEST_CASE("interval masses over the integer lattice sum to one") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> mu(-20, 20), ls(-2, 2);
  for (int i = 0; i < 100; ++i) {
    const double m = mu(rng), s = std::pow(10.0, ls(rng));
    const double lo = std::floor(m - 40.0 * s - 2), hi = std::ceil(m + 40.0 * s + 2);
    long double total = 0.0L;
    for (double v = lo; v <= hi; v += 1.0) total += gaussian_interval_mass(v, m, s);
    CHECK(std::abs(static_cast<double>(total) - 1.0) <= 1e-9);
  }
}

TEST_CASE("scale floor is reported") {
  Fixture f;
  auto& raw = f.model.params().at("prior.raw_scale").value;
  for (double& v : raw.values()) v = -1000.0;
  ad::Graph g;
  ad::Var latent = g.constant(ad::Tensor({2, f.arch.latent}, 0.0));
  RateTerm r = rate_bits(f.model, g, latent, false);
  CHECK(r.scale_clamped == f.arch.latent);
  CHECK(std::isfinite(r.bits_per_vector.item()));
}

TEST_CASE("rate-distortion loss arithmetic") {
  CHECK(rd_loss_value(1.0, 0.01, 0.0130) == doctest::Approx(1.00013).epsilon(1e-15));
  CHECK(rd_loss_value(2.5, 0.0, 0.0130) == 2.5);
  expect_error(ErrorKind::kInvalidArgument, [] { rd_loss_value(1.0, 1.0, -0.1); });

  Fixture f;
  ad::Graph g;
  Rng rng(1);
  AunNoise noise(rng);
  CodecOutput out = encode_train(f.model, g, g.constant(f.x), noise);
  CHECK(rd_loss(out, 0.0).item() == out.rate.bits_per_vector.item());
  CHECK(rd_loss(out, 0.01).item() ==
        doctest::Approx(out.rate.bits_per_vector.item() + 0.01 * out.distortion.item()));
  CHECK(out.mse == doctest::Approx(out.distortion.item() / 8.0));
  CHECK(out.rate.bits_per_dim == doctest::Approx(out.rate.bits_per_vector.item() / 8.0));
  expect_error(ErrorKind::kInvalidArgument, [&] { rd_loss(out, -1.0); });

  // Perfect reconstruction contributes no distortion.
  CodecOutput perfect = out;
  perfect.xhat = g.constant(f.x);
  perfect.distortion = ad::scale(ad::sum(ad::square(ad::sub(g.constant(f.x), perfect.xhat))), 1.0);
  CHECK(rd_loss(perfect, 0.013).item() == out.rate.bits_per_vector.item());
}

TEST_CASE("rd_loss gradients match central differences over all parameters") {
  Fixture f(8);
  for (double lambda : {0.0018, 0.013}) {
    auto loss = [&](ad::Graph& g) {
      Rng rng(31);  // same noise on every evaluation
      AunNoise noise(rng);
      return rd_loss(encode_train(f.model, g, g.constant(f.x), noise), lambda);
    };
    const auto r = check_param_gradients(f.model.params(), loss);
    CHECK_MESSAGE(r.max_rel_error <= 1e-4, "worst ", r.worst, ": ", r.max_rel_error);
  }
}

TEST_CASE("non-finite inputs abort as divergence") {
  Fixture f;
  ad::Tensor bad = f.x;
  bad[3] = std::nan("");
  ad::Graph g;
  expect_error(ErrorKind::kTrainingDiverged, [&] { encode_eval(f.model, g, g.constant(bad)); });
}

TEST_CASE("trained rate stays close to its noisy surrogate") {
  // Short training on the default source; compares the noisy and hard rates.
  Fixture f(1);
  Rng data(derive_seed(2, "data")), nrng(derive_seed(2, "aun-noise"));
  auto source = make_source(SourceConfig{});
  AunNoise noise(nrng);
  for (int step = 0; step < 1500; ++step) {
    const ad::Tensor batch = source->sample(data, 64).x;
    ad::Graph g;
    CodecOutput out = encode_train(f.model, g, g.constant(batch), noise);
    f.model.params().zero_grad();
    g.backward(rd_loss(out, 0.0067));
    ad::adam_step(f.model.params(), {1e-3});
  }
  const ad::Tensor test = source->sample(data, 2048).x;
  ad::Graph g;
  CodecOutput soft = encode_train(f.model, g, g.constant(test), noise, false);
  CodecOutput hard = encode_eval(f.model, g, g.constant(test));
  CHECK(std::isfinite(soft.rate.bits_per_dim));
  CHECK(std::isfinite(hard.rate.bits_per_dim));
  CHECK(std::abs(soft.rate.bits_per_dim - hard.rate.bits_per_dim) <= 1.0);
}

TEST_CASE("architecture json round trip and validation") {
  CodecArchitecture a;
  a.latent = 3;
  const CodecArchitecture b = codec_architecture_from_json(to_json(a));
  CHECK(b.latent == 3);
  CHECK(b.dim == a.dim);
  CodecArchitecture bad;
  bad.hidden = 0;
  expect_error(ErrorKind::kInvalidArgument, [&] { bad.validate(); });
}
