#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include "nicreg/eval_harness.hpp"
#include "test_util.hpp"

using namespace nicreg;
using nicreg::testing::expect_error;

namespace {

RdCurve make_curve(const std::vector<std::pair<double, double>>& rq, double rate_factor = 1.0) {
  std::vector<RdPoint> pts;
  for (auto [r, q] : rq) pts.push_back({r * rate_factor, q, {}});
  return RdCurve(std::move(pts));
}

const std::vector<std::pair<double, double>> kAnchor{{0.25, 30}, {0.5, 33}, {1.0, 36}, {2.0, 39}};

// Cubic through four (quality, log10 rate) points, by Lagrange's formula.
double lagrange_log_rate(const RdCurve& c, double q) {
  const auto& p = c.points();
  double v = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double w = std::log10(p[i].rate);
    for (std::size_t j = 0; j < 4; ++j) {
      if (j != i) w *= (q - p[j].quality) / (p[i].quality - p[j].quality);
    }
    v += w;
  }
  return v;
}

// Independent BD-rate for four-point curves: interpolate and integrate numerically.
double bd_oracle(const RdCurve& a, const RdCurve& t) {
  auto qrange = [](const RdCurve& c) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& p : c.points()) lo = std::min(lo, p.quality), hi = std::max(hi, p.quality);
    return std::pair{lo, hi};
  };
  const double lo = std::max(qrange(a).first, qrange(t).first);
  const double hi = std::min(qrange(a).second, qrange(t).second);
  auto diff = [&](double q) { return lagrange_log_rate(t, q) - lagrange_log_rate(a, q); };
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 31>::integrate(diff, lo, hi, 10, 1e-15);
  return (std::pow(10.0, integral / (hi - lo)) - 1.0) * 100.0;
}

ProbeCodec identity_codec() {
  return [](const ad::Tensor& x) {
    ProbeCodecOutput out;
    out.latent = x.cols();
    for (double v : x.values()) out.indices.push_back(std::llround(v));
    out.xhat = x;
    return out;
  };
}

ProbeSource integer_grid(std::size_t side) {
  ProbeSource p;
  p.origin = {0.0, 0.0};
  p.directions = {{1.0, 0.0}, {0.0, 1.0}};
  std::vector<double> g;
  for (std::size_t i = 0; i < side; ++i) g.push_back(static_cast<double>(i));
  p.grid = {g, g};
  return p;
}

RunRecord fake_run(double lambda, double alpha, std::uint64_t seed, double rate, double quality) {
  RunRecord r;
  r.lambda = lambda;
  r.alpha = alpha;
  r.seed = seed;
  r.hash = "h";
  r.rows.push_back({0, rate, std::pow(10.0, -quality / 10.0), quality, NAN});
  return r;
}

}  // namespace

TEST_CASE("bd-rate of identical curves is exactly zero") {
  const RdCurve a = make_curve(kAnchor);
  const BdResult r = bd_rate(a, a);
  CHECK(r.bd_rate_percent == 0.0);
  CHECK(r.warnings.empty());
  CHECK(r.overlap_low == 30.0);
  CHECK(r.overlap_high == 39.0);
}

TEST_CASE("bd-rate of uniformly scaled rates") {
  const RdCurve a = make_curve(kAnchor);
  CHECK(std::abs(bd_rate(a, make_curve(kAnchor, 1.10)).bd_rate_percent - 10.0) <= 1e-9);
  CHECK(std::abs(bd_rate(a, make_curve(kAnchor, 0.97)).bd_rate_percent + 3.0) <= 1e-9);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::pair<double, double>> pts;
    double r = std::exp(std::uniform_real_distribution<double>(-3, 0)(rng));
    double q = std::uniform_real_distribution<double>(20, 30)(rng);
    for (int k = 0; k < 6; ++k) {
      pts.push_back({r, q});
      r *= std::uniform_real_distribution<double>(1.3, 2.5)(rng);
      q += std::uniform_real_distribution<double>(1.0, 4.0)(rng);
    }
    const double c = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    CHECK(std::abs(bd_rate(make_curve(pts), make_curve(pts, c)).bd_rate_percent - (c - 1.0) * 100.0) <=
          1e-9);
  }
}

TEST_CASE("bd-rate matches numeric integration of the interpolating cubics") {
  const RdCurve a = make_curve(kAnchor);
  const RdCurve t = make_curve(kAnchor, 0.97);
  const double oracle = bd_oracle(a, t);
  CHECK(std::abs(oracle + 3.0) <= 1e-9);
  CHECK(std::abs(bd_rate(a, t).bd_rate_percent - oracle) <= 1e-6 * std::abs(oracle));

  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    std::vector<std::pair<double, double>> pa, pt;
    for (auto [r, q] : kAnchor) {
      pa.push_back({r * std::exp(std::uniform_real_distribution<double>(-0.1, 0.1)(rng)),
                    q + std::uniform_real_distribution<double>(-0.5, 0.5)(rng)});
      pt.push_back({r * std::exp(std::uniform_real_distribution<double>(-0.2, 0.1)(rng)),
                    q + std::uniform_real_distribution<double>(-0.5, 1.0)(rng)});
    }
    const RdCurve ca = make_curve(pa), ct = make_curve(pt);
    const BdResult r = bd_rate(ca, ct);
    const double o = bd_oracle(ca, ct);
    CHECK(std::abs(r.bd_rate_percent - o) <= 1e-9 * std::max(1.0, std::abs(o)));
    CHECK(r.anchor_fit.rms_residual <= 1e-12);
  }
}

TEST_CASE("closed-form integral agrees with quadrature over the fitted polynomials") {
  // Six-point curves: a genuine least-squares fit, integrated both ways.
  std::mt19937_64 rng(12);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::pair<double, double>> pa, pt;
    double r = 0.1, q = 25.0;
    for (int k = 0; k < 6; ++k) {
      pa.push_back({r, q + std::uniform_real_distribution<double>(-0.3, 0.3)(rng)});
      pt.push_back({r * std::uniform_real_distribution<double>(0.8, 1.1)(rng),
                    q + std::uniform_real_distribution<double>(-0.3, 0.3)(rng)});
      r *= 1.8;
      q += 2.5;
    }
    const BdResult b = bd_rate(make_curve(pa), make_curve(pt));
    CHECK(b.anchor_fit.rms_residual >= 0.0);
    auto diff = [&](double qq) { return evaluate_fit(b.test_fit, b, qq) - evaluate_fit(b.anchor_fit, b, qq); };
    const double integral = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        diff, b.overlap_low, b.overlap_high, 10, 1e-15);
    const double numeric =
        (std::pow(10.0, integral / (b.overlap_high - b.overlap_low)) - 1.0) * 100.0;
    CHECK(std::abs(b.bd_rate_percent - numeric) <= 1e-9 * std::max(1.0, std::abs(numeric)));
  }
}

TEST_CASE("bd-rate antisymmetry") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 30; ++i) {
    std::vector<std::pair<double, double>> pt;
    for (auto [r, q] : kAnchor) {
      pt.push_back({r * std::exp(std::uniform_real_distribution<double>(-0.3, 0.3)(rng)), q + 0.2});
    }
    const RdCurve a = make_curve(kAnchor), b = make_curve(pt);
    const double ab = bd_rate(a, b).bd_rate_percent / 100.0;
    const double ba = bd_rate(b, a).bd_rate_percent / 100.0;
    CHECK(ab == doctest::Approx(-ba / (1.0 + ba)).epsilon(1e-12));
  }
}

TEST_CASE("bd-rate input errors") {
  const RdCurve a = make_curve(kAnchor);
  const RdCurve far = make_curve({{0.25, 50}, {0.5, 53}, {1.0, 56}, {2.0, 59}});
  expect_error(ErrorKind::kNoOverlap, [&] { bd_rate(a, far); });
  const RdCurve three = make_curve({{0.25, 30}, {0.5, 33}, {1.0, 36}});
  expect_error(ErrorKind::kInvalidArgument, [&] { bd_rate(a, three); });
  expect_error(ErrorKind::kInvalidArgument, [] { make_curve({{0.0, 30}}); });
  expect_error(ErrorKind::kInvalidArgument, [] { make_curve({{1.0, NAN}}); });
}

TEST_CASE("non-monotone curves are projected with a warning") {
  CHECK(isotonic_nondecreasing({3, 1, 2}) == std::vector<double>{2, 2, 2});
  CHECK(isotonic_nondecreasing({1, 3, 2, 4}) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK(isotonic_nondecreasing({1, 2, 3}) == std::vector<double>{1, 2, 3});
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(12);
    for (double& x : v) x = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto p = isotonic_nondecreasing(v);
    double sum_v = 0, sum_p = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      sum_v += v[k];
      sum_p += p[k];
      if (k > 0) CHECK(p[k] >= p[k - 1]);
    }
    CHECK(sum_p == doctest::Approx(sum_v));
  }

  const RdCurve bumpy = make_curve({{0.25, 30}, {0.5, 34}, {1.0, 33}, {2.0, 39}, {4.0, 42}});
  CHECK(!bumpy.monotone());
  const BdResult r = bd_rate(make_curve(kAnchor), bumpy);
  CHECK(r.test_fit.projected);
  CHECK(!r.anchor_fit.projected);
  CHECK(!r.warnings.empty());
  CHECK(std::isfinite(r.bd_rate_percent));
}

TEST_CASE("curve csv round trip") {
  const auto path = std::filesystem::temp_directory_path() / "nicreg_test_curve.csv";
  std::ofstream(path) << "# comment\nlabel,rate_bpd,quality_db\na,1.0,36\na,0.25,30\na,0.5,33\na,2,39\n";
  const RdCurve c = read_curve_csv(path);
  REQUIRE(c.size() == 4);
  CHECK(c.points()[0].rate == 0.25);
  CHECK(bd_rate(c, make_curve(kAnchor)).bd_rate_percent == 0.0);
  std::ofstream(path) << "x,y\n1,2\n";
  expect_error(ErrorKind::kInvalidArgument, [&] { read_curve_csv(path); });
}

TEST_CASE("identity codec on an integer grid reduces to direct coding") {
  const IdentityProbeReport r = identity_probe(identity_codec(), integer_grid(16), 16);
  CHECK(r.pass());
  CHECK(r.grid_points == 256);
  CHECK(r.distinct_indices == 256);
  CHECK(r.distinct_reconstructions == 256);
  CHECK(r.residual_u_given_xhat == 0.0);
  CHECK(r.max_gap <= 1e-10);
  CHECK(r.h_x == doctest::Approx(8.0));
  CHECK(r.h_u == doctest::Approx(8.0));
  CHECK(r.h_x_given_xhat == doctest::Approx(0.0));
}

TEST_CASE("coarser reconstruction bins never lower the residual") {
  CodecArchitecture arch;
  Rng init(derive_seed(4, "codec-init"));
  CodecModel codec(arch, init);
  // Make the latent resolution fine enough to have structure at every bin count.
  for (double& v : codec.params().at("prior.raw_scale").value.values()) v = 3.0;
  const ProbeSource probe = principal_probe(*make_source(SourceConfig{}), 2, 32, 1);
  double prev = -1.0;
  for (std::size_t bins : {64, 32, 16, 8}) {
    const IdentityProbeReport r = identity_probe(codec, probe, bins);
    CHECK(r.pass());
    CHECK(r.max_gap <= 1e-10);
    CHECK(r.residual_u_given_xhat >= prev - 1e-12);
    prev = r.residual_u_given_xhat;
    MESSAGE("bins ", bins, " residual ", r.residual_u_given_xhat, " |U| ", r.distinct_indices);
  }
  CHECK(prev > 0.0);
}

TEST_CASE("probe grid validation and cap") {
  ProbeSource p;
  p.origin = {0, 0, 0, 0};
  std::vector<double> g(33, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i);
  p.directions = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  p.grid = {g, g, g, g};
  expect_error(ErrorKind::kResourceLimit, [&] { p.validate(); });
  g.resize(32);
  p.grid = {g, g, g, g};
  CHECK(p.point_count() == std::size_t{1} << 20);
  CHECK_NOTHROW(p.validate());
  p.directions.push_back({1, 1, 1, 1});
  p.grid.push_back({0.0});
  expect_error(ErrorKind::kInvalidArgument, [&] { p.validate(); });

  ProbeSource small = integer_grid(3);
  const ad::Tensor pts = small.points();
  REQUIRE(pts.rows() == 9);
  CHECK(pts.at(1, 0) == 0.0);
  CHECK(pts.at(1, 1) == 1.0);  // last axis fastest
  CHECK(pts.at(3, 0) == 1.0);

  CodecArchitecture arch;
  Rng init(1);
  CodecModel codec(arch, init);
  expect_error(ErrorKind::kInvalidArgument, [&] { identity_probe(codec, small, 8); });
}

TEST_CASE("principal probe spans the dominant axes") {
  const auto src = make_source(SourceConfig{});
  const ProbeSource a = principal_probe(*src, 2, 5, 9);
  const ProbeSource b = principal_probe(*src, 2, 5, 9);
  CHECK(a.origin == b.origin);
  CHECK(a.directions == b.directions);
  REQUIRE(a.grid.size() == 2);
  CHECK(a.grid[0].front() == doctest::Approx(-a.grid[0].back()));
  CHECK(std::abs(a.grid[0].back()) >= std::abs(a.grid[1].back()));
  double dot = 0.0, n0 = 0.0;
  for (std::size_t j = 0; j < 8; ++j) dot += a.directions[0][j] * a.directions[1][j], n0 += a.directions[0][j] * a.directions[0][j];
  CHECK(std::abs(dot) <= 1e-12);
  CHECK(n0 == doctest::Approx(1.0));
}

TEST_CASE("alpha sweep table shape and medians") {
  const std::vector<double> lambdas{0.0018, 0.0035, 0.0067, 0.013};
  const std::vector<double> alphas{0.0, 0.1, 0.3, 1.0, 3.0};
  std::vector<RunRecord> runs;
  auto factor = [](double alpha, std::uint64_t seed) {
    return alpha == 0.0 ? 1.0 : 1.0 + 0.01 * alpha * (static_cast<double>(seed) - 2.0) - 0.005;
  };
  for (double a : alphas)
    for (std::uint64_t s : {1, 2, 3})
      for (std::size_t i = 0; i < lambdas.size(); ++i) {
        runs.push_back(fake_run(lambdas[i], a, s, kAnchor[i].first * factor(a, s) * (1.0 + 0.01 * s),
                                kAnchor[i].second));
      }
  const AlphaSweepTable t = alpha_sweep_report(runs);
  CHECK(t.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(t.lambdas == lambdas);
  REQUIRE(t.rows.size() == 5);
  std::size_t cells = 0, medians = 0;
  for (const auto& row : t.rows) {
    if (row.alpha == 0.0) {
      for (double v : row.per_seed) CHECK(v == 0.0);
      continue;
    }
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(row.per_seed[k] == doctest::Approx((factor(row.alpha, k + 1) - 1.0) * 100.0).epsilon(1e-9));
      ++cells;
    }
    CHECK(row.median == doctest::Approx((factor(row.alpha, 2) - 1.0) * 100.0));
    ++medians;
  }
  CHECK(cells == 12);
  CHECK(medians == 4);
  CHECK(t.best_regularized().median == doctest::Approx(-0.5));
  CHECK(t.curves.size() == 5);

  const std::string csv = alpha_sweep_csv(t, {"nicreg sweep-alpha", "abc", t.seeds});
  CHECK(csv.find("alpha,bd_rate_seed_1,bd_rate_seed_2,bd_rate_seed_3,median\n") != std::string::npos);
  CHECK(csv.find("-1.24%") != std::string::npos);
  CHECK(csv.find("not asserted") != std::string::npos);
  CHECK(alpha_sweep_svg(t, {}).find("<svg") != std::string::npos);
}

TEST_CASE("alpha sweep edge cases") {
  std::vector<RunRecord> anchor_only;
  for (std::size_t i = 0; i < 4; ++i) anchor_only.push_back(fake_run(0.001 * (i + 1), 0.0, 1, kAnchor[i].first, kAnchor[i].second));
  const AlphaSweepTable t = alpha_sweep_report(anchor_only);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].median == 0.0);
  expect_error(ErrorKind::kInvalidArgument, [&] { t.best_regularized(); });

  std::vector<RunRecord> no_anchor = anchor_only;
  for (auto& r : no_anchor) r.alpha = 1.0;
  expect_error(ErrorKind::kInvalidArgument, [&] { alpha_sweep_report(no_anchor); });

  // A failed cell leaves that seed's value undefined instead of aborting.
  std::vector<RunRecord> partial = anchor_only;
  for (std::size_t i = 0; i < 4; ++i) partial.push_back(fake_run(0.001 * (i + 1), 1.0, 1, kAnchor[i].first, kAnchor[i].second));
  partial.back().status = RunStatus::kDiverged;
  CHECK(std::isnan(alpha_sweep_report(partial).row(1.0).per_seed[0]));

  std::vector<RunRecord> collapsed = anchor_only;
  for (std::size_t i = 0; i < 4; ++i) collapsed.push_back(fake_run(0.001 * (i + 1), 1.0, 1, kAnchor[i].first, kAnchor[i].second));
  collapsed[4].rows.back().rate_bpd = 0.0;
  const AlphaSweepTable c = alpha_sweep_report(collapsed);
  CHECK(std::isnan(c.row(1.0).per_seed[0]));
  REQUIRE(c.curves.size() == 2);
  CHECK(c.curves[1].second.size() == 3);
  CHECK(alpha_sweep_svg(c, {}).find("<svg") != std::string::npos);
}

TEST_CASE("domain shift report") {
  TrainConfig c;
  c.alphas = {0.0, 0.1};
  c.steps = 1200;
  c.batch_size = 64;
  c.dataset_size = 4000;
  c.eval_every = 1200;
  c.codec_lr = 1e-3;
  const auto root = std::filesystem::temp_directory_path() / "nicreg_test_shift";
  std::filesystem::remove_all(root);
  TrainOptions o;
  o.output_root = root;
  const std::vector<RunRecord> runs = train_grid(c, o);
  std::vector<CodecModel> codecs;
  codecs.reserve(runs.size());
  for (const auto& r : runs) REQUIRE(r.ok());
  for (const auto& r : runs) codecs.push_back(CodecModel::load(r.checkpoint / "codec"));
  std::vector<CodecModel*> anchor, reg;
  for (std::size_t i = 0; i < runs.size(); ++i) (runs[i].alpha == 0.0 ? anchor : reg).push_back(&codecs[i]);

  const DomainShiftTable t = domain_shift_report(anchor, reg, c.source, default_shift_cases(), 1, 2048);
  REQUIRE(t.rows.size() == 5);
  CHECK(t.rows[0].name == "identity");
  CHECK(t.rows[0].bd_rate_percent == t.in_domain.bd_rate_percent);
  std::size_t shifted = 0;
  for (const auto& r : t.rows) {
    CHECK(std::isfinite(r.bd_rate_percent));
    shifted += r.name != "identity" ? 1 : 0;
  }
  CHECK(shifted == 4);
  const std::string csv = domain_shift_csv(t, {});
  CHECK(csv.find("shift,domain,bd_rate_percent,note\nin_domain,") != std::string::npos);
  CHECK(csv.find("-2.38%") != std::string::npos);

  // Same codecs on both sides: every row is exactly zero.
  const DomainShiftTable same = domain_shift_report(anchor, anchor, c.source, default_shift_cases(), 1, 512);
  for (const auto& r : same.rows) CHECK(r.bd_rate_percent == 0.0);

  // Disjoint quality ranges are reported, not fatal.
  CodecArchitecture tiny_arch;
  std::vector<CodecModel> untrained;
  for (std::uint64_t s = 1; s <= 4; ++s) {
    Rng r(s);
    untrained.emplace_back(tiny_arch, r);
  }
  std::vector<CodecModel*> raw;
  for (auto& u : untrained) raw.push_back(&u);
  const DomainShiftTable disjoint = domain_shift_report(anchor, raw, c.source, {}, 1, 512);
  MESSAGE("untrained vs anchor: ", disjoint.in_domain.bd_rate_percent, " ", disjoint.in_domain.note);
  CHECK(std::isnan(disjoint.in_domain.bd_rate_percent));
  CHECK(disjoint.in_domain.note == "no quality overlap");

  CodecArchitecture small;
  small.dim = 4;
  Rng init(1);
  CodecModel wrong(small, init);
  std::vector<CodecModel*> bad{&wrong};
  expect_error(ErrorKind::kInvalidArgument,
               [&] { domain_shift_report(bad, bad, c.source, default_shift_cases(), 1, 64); });
}
