#include "nicreg/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "nicreg/errors.hpp"
#include "nicreg/info_core.hpp"
#include "nicreg/rng.hpp"

namespace nicreg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Curves

RdCurve::RdCurve(std::vector<RdPoint> points) : points_(std::move(points)) {
  for (const auto& p : points_) {
    require(std::isfinite(p.rate) && p.rate > 0.0, "curve rates must be finite and > 0");
    require(std::isfinite(p.quality), "curve qualities must be finite");
  }
  std::stable_sort(points_.begin(), points_.end(),
                   [](const RdPoint& a, const RdPoint& b) { return a.rate < b.rate; });
}

bool RdCurve::monotone() const {
  for (std::size_t i = 1; i < points_.size(); ++i) {
    if (!(points_[i].quality > points_[i - 1].quality)) return false;
  }
  return true;
}

RdCurve curve_from_runs(const std::vector<const RunRecord*>& runs) {
  std::vector<RdPoint> pts;
  for (const RunRecord* r : runs) {
    const MetricRow& m = r->final_row();
    pts.push_back({m.rate_bpd, m.quality_db, r->hash});
  }
  return RdCurve(std::move(pts));
}

RdCurve read_curve_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::string line;
  std::vector<std::string> header;
  std::ptrdiff_t rate_col = -1, quality_col = -1;
  std::vector<RdPoint> pts;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split(line);
    if (header.empty()) {
      header = cells;
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "rate_bpd" || header[i] == "rate") rate_col = static_cast<std::ptrdiff_t>(i);
        if (header[i] == "quality_db" || header[i] == "quality") quality_col = static_cast<std::ptrdiff_t>(i);
      }
      if (rate_col < 0 || quality_col < 0) {
        fail(ErrorKind::kInvalidArgument, path.string() + " needs rate_bpd and quality_db columns");
      }
      continue;
    }
    require(cells.size() == header.size(), path.string() + ": ragged row '" + line + "'");
    char* end = nullptr;
    RdPoint p;
    p.rate = std::strtod(cells[static_cast<std::size_t>(rate_col)].c_str(), &end);
    p.quality = std::strtod(cells[static_cast<std::size_t>(quality_col)].c_str(), &end);
    pts.push_back(p);
  }
  require(!header.empty(), path.string() + " has no header row");
  return RdCurve(std::move(pts));
}

// ---------------------------------------------------------------------------
// BD-rate

std::vector<double> isotonic_nondecreasing(const std::vector<double>& values) {
  struct Block {
    double sum;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (double v : values) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1) {
      const Block& b = blocks.back();
      const Block& a = blocks[blocks.size() - 2];
      if (a.sum / static_cast<double>(a.count) <= b.sum / static_cast<double>(b.count)) break;
      Block merged{a.sum + b.sum, a.count + b.count};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> out;
  for (const Block& b : blocks) out.insert(out.end(), b.count, b.sum / static_cast<double>(b.count));
  return out;
}

namespace {

CurveFit fit_curve(const RdCurve& curve, double center, double half_width, const char* label,
                   std::vector<std::string>& warnings) {
  CurveFit fit;
  std::vector<double> q;
  for (const auto& p : curve.points()) q.push_back(p.quality);
  if (!curve.monotone()) {
    warnings.push_back(std::string(label) + " curve is not monotone; applied isotonic projection");
    q = isotonic_nondecreasing(q);
    fit.projected = true;
  }
  const std::size_t n = q.size();
  const std::size_t distinct = std::set<double>(q.begin(), q.end()).size();
  require(distinct >= 2, std::string(label) + " curve has fewer than two distinct qualities");
  fit.degree = std::min<std::size_t>(3, distinct - 1);
  if (fit.degree < 3) {
    warnings.push_back(std::string(label) + " fit reduced to degree " + std::to_string(fit.degree));
  }
  Eigen::MatrixXd v(n, fit.degree + 1);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (q[i] - center) / half_width;
    double pw = 1.0;
    for (std::size_t k = 0; k <= fit.degree; ++k) {
      v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = pw;
      pw *= t;
    }
    y(static_cast<Eigen::Index>(i)) = std::log10(curve.points()[i].rate);
  }
  const Eigen::VectorXd c = v.colPivHouseholderQr().solve(y);
  for (std::size_t k = 0; k <= fit.degree; ++k) fit.coefficients[k] = c(static_cast<Eigen::Index>(k));
  fit.rms_residual = std::sqrt((v * c - y).squaredNorm() / static_cast<double>(n));
  return fit;
}

// Mean of t^k over [-1, 1].
double mean_power(std::size_t k) { return k % 2 == 1 ? 0.0 : 1.0 / static_cast<double>(k + 1); }

}  // namespace

BdResult bd_rate(const RdCurve& anchor, const RdCurve& test) {
  require(anchor.size() >= 4 && test.size() >= 4, "BD-rate needs at least 4 points per curve");
  auto range = [](const RdCurve& c) {
    auto [lo, hi] = std::minmax_element(c.points().begin(), c.points().end(),
                                        [](const RdPoint& a, const RdPoint& b) {
                                          return a.quality < b.quality;
                                        });
    return std::pair{lo->quality, hi->quality};
  };
  const auto [alo, ahi] = range(anchor);
  const auto [tlo, thi] = range(test);
  BdResult r;
  r.overlap_low = std::max(alo, tlo);
  r.overlap_high = std::min(ahi, thi);
  if (!(r.overlap_high > r.overlap_low)) {
    fail(ErrorKind::kNoOverlap, "curves share no quality interval");
  }
  r.center = 0.5 * (r.overlap_low + r.overlap_high);
  r.half_width = 0.5 * (r.overlap_high - r.overlap_low);
  r.anchor_fit = fit_curve(anchor, r.center, r.half_width, "anchor", r.warnings);
  r.test_fit = fit_curve(test, r.center, r.half_width, "test", r.warnings);
  double avg = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    avg += (r.test_fit.coefficients[k] - r.anchor_fit.coefficients[k]) * mean_power(k);
  }
  r.bd_rate_percent = (std::pow(10.0, avg) - 1.0) * 100.0;
  return r;
}

double evaluate_fit(const CurveFit& fit, const BdResult& frame, double quality) {
  const double t = (quality - frame.center) / frame.half_width;
  double v = 0.0;
  for (std::size_t k = 4; k-- > 0;) v = v * t + fit.coefficients[k];
  return v;
}

nlohmann::json to_json(const BdResult& r) {
  auto fit_json = [](const CurveFit& f) {
    return nlohmann::json{{"coefficients", f.coefficients},
                          {"degree", f.degree},
                          {"rms_residual", f.rms_residual},
                          {"projected", f.projected}};
  };
  return {{"bd_rate_percent", r.bd_rate_percent},
          {"overlap_db", {r.overlap_low, r.overlap_high}},
          {"fit_variable", {{"center", r.center}, {"half_width", r.half_width}}},
          {"anchor_fit", fit_json(r.anchor_fit)},
          {"test_fit", fit_json(r.test_fit)},
          {"warnings", r.warnings},
          {"method", r.method}};
}

// ---------------------------------------------------------------------------
// Identity probe

std::size_t ProbeSource::point_count() const {
  std::size_t n = 1;
  for (const auto& g : grid) {
    n *= g.size();
    if (n > kMaxProbePoints) return n;
  }
  return n;
}

void ProbeSource::validate() const {
  require(!origin.empty(), "probe origin is empty");
  require(!directions.empty() && directions.size() <= 4, "probe needs between 1 and 4 axes");
  require(grid.size() == directions.size(), "probe needs one grid per axis");
  for (const auto& d : directions) require(d.size() == origin.size(), "probe direction has the wrong length");
  for (const auto& g : grid) require(!g.empty(), "probe grid axis is empty");
  if (point_count() > kMaxProbePoints) {
    fail(ErrorKind::kResourceLimit, "probe grid exceeds 2^20 points");
  }
}

ad::Tensor ProbeSource::points() const {
  validate();
  const std::size_t n = point_count(), d = dim(), k = grid.size();
  ad::Tensor out({n, d});
  std::vector<std::size_t> digit(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &out.values()[i * d];
    std::copy(origin.begin(), origin.end(), row);
    for (std::size_t a = 0; a < k; ++a) {
      const double t = grid[a][digit[a]];
      for (std::size_t j = 0; j < d; ++j) row[j] += t * directions[a][j];
    }
    for (std::size_t a = k; a-- > 0;) {
      if (++digit[a] < grid[a].size()) break;
      digit[a] = 0;
    }
  }
  return out;
}

ProbeSource principal_probe(const VectorSource& source, std::size_t axes,
                            std::size_t points_per_axis, std::uint64_t seed, std::size_t samples) {
  require(axes >= 1 && axes <= 4 && axes <= source.dim(), "probe axes must be in 1..min(4, dim)");
  require(points_per_axis >= 1, "points_per_axis must be >= 1");
  require(samples >= 2, "need at least two samples");
  Rng rng(derive_seed(seed, "probe"));
  const ad::Tensor x = source.sample(rng, samples).x;
  const auto d = static_cast<Eigen::Index>(source.dim());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      x.values().data(), static_cast<Eigen::Index>(samples), d);
  const Eigen::RowVectorXd mean = m.colwise().mean();
  const Eigen::MatrixXd centered = m.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(samples - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);

  ProbeSource p;
  p.origin.assign(mean.data(), mean.data() + d);
  for (std::size_t a = 0; a < axes; ++a) {
    const Eigen::Index col = d - 1 - static_cast<Eigen::Index>(a);  // ascending eigenvalues
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.directions.emplace_back(v.data(), v.data() + d);
    const double sd = std::sqrt(std::max(0.0, eig.eigenvalues()(col)));
    std::vector<double> g(points_per_axis, 0.0);
    for (std::size_t i = 0; i < points_per_axis && points_per_axis > 1; ++i) {
      g[i] = -2.5 * sd + 5.0 * sd * static_cast<double>(i) / static_cast<double>(points_per_axis - 1);
    }
    p.grid.push_back(std::move(g));
  }
  return p;
}

ProbeCodec probe_codec(CodecModel& model) {
  return [&model](const ad::Tensor& x) {
    ad::Graph g;
    CodecOutput out = encode_eval(model, g, g.constant(x));
    ProbeCodecOutput r;
    r.latent = out.latent.value().cols();
    for (double v : out.latent.value().values()) r.indices.push_back(std::llround(v));
    r.xhat = out.xhat.value();
    return r;
  };
}

IdentityProbeReport identity_probe(const ProbeCodec& codec, const ProbeSource& probe,
                                   std::size_t bins) {
  require(bins >= 1, "bins must be >= 1");
  const ad::Tensor x = probe.points();
  const std::size_t n = x.rows(), d = x.cols();
  constexpr std::size_t kChunk = 4096;

  std::vector<std::int64_t> indices;
  std::vector<double> xhat;
  std::size_t latent = 0, xdim = 0;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    ad::Tensor chunk({end - begin, d},
                     std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                                         x.data().begin() + static_cast<std::ptrdiff_t>(end * d)));
    ProbeCodecOutput out = codec(chunk);
    require(out.latent >= 1 && out.indices.size() == (end - begin) * out.latent,
            "probe codec returned malformed indices");
    require(out.xhat.rows() == end - begin, "probe codec returned the wrong number of reconstructions");
    require(out.xhat.all_finite(), "probe codec produced non-finite reconstructions");
    latent = out.latent;
    xdim = out.xhat.cols();
    indices.insert(indices.end(), out.indices.begin(), out.indices.end());
    xhat.insert(xhat.end(), out.xhat.values().begin(), out.xhat.values().end());
  }

  std::vector<double> lo(xdim, INFINITY), hi(xdim, -INFINITY);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < xdim; ++j) {
      lo[j] = std::min(lo[j], xhat[i * xdim + j]);
      hi[j] = std::max(hi[j], xhat[i * xdim + j]);
    }
  }

  std::map<std::vector<std::int64_t>, std::uint64_t> u_ids;
  std::map<std::vector<std::uint32_t>, std::uint64_t> xhat_ids;
  std::vector<std::uint64_t> u_label(n), xhat_label(n);
  std::vector<std::uint32_t> cell(xdim);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::int64_t> u(indices.begin() + static_cast<std::ptrdiff_t>(i * latent),
                                indices.begin() + static_cast<std::ptrdiff_t>((i + 1) * latent));
    u_label[i] = u_ids.emplace(std::move(u), u_ids.size()).first->second;
    for (std::size_t j = 0; j < xdim; ++j) {
      const double span = hi[j] - lo[j];
      const double f = span > 0.0 ? (xhat[i * xdim + j] - lo[j]) / span : 0.0;
      cell[j] = static_cast<std::uint32_t>(
          std::min<double>(static_cast<double>(bins - 1), std::floor(f * static_cast<double>(bins))));
    }
    xhat_label[i] = xhat_ids.emplace(cell, xhat_ids.size()).first->second;
  }

  const std::uint64_t nu = u_ids.size(), nxh = xhat_ids.size();
  std::vector<JointTable::Cell> cells(n);
  const double mass = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) cells[i] = {(i * nu + u_label[i]) * nxh + xhat_label[i], mass};
  const JointTable joint = JointTable::from_cells(
      {Alphabet::of_size(n), Alphabet::of_size(nu), Alphabet::of_size(nxh)}, std::move(cells));

  IdentityProbeReport r;
  r.identities = transform_identities(joint);
  r.grid_points = n;
  r.distinct_indices = nu;
  r.distinct_reconstructions = nxh;
  r.bins = bins;
  r.h_x = entropy(joint, {kAxisX});
  r.h_u = entropy(joint, {kAxisU});
  r.h_xhat = entropy(joint, {kAxisXhat});
  r.h_x_given_xhat = conditional_entropy(joint, {kAxisX}, {kAxisXhat});
  r.residual_u_given_xhat = r.identities.residual_u_given_xhat;
  for (const auto& c : r.identities.identities) r.max_gap = std::max(r.max_gap, c.gap);
  return r;
}

IdentityProbeReport identity_probe(CodecModel& model, const ProbeSource& probe, std::size_t bins) {
  require(model.architecture().dim == probe.dim(), "probe dimension does not match the codec");
  return identity_probe(probe_codec(model), probe, bins);
}

nlohmann::json to_json(const IdentityProbeReport& r) {
  nlohmann::json doc = to_json(r.identities);
  doc["grid_points"] = r.grid_points;
  doc["distinct_indices"] = r.distinct_indices;
  doc["distinct_reconstructions"] = r.distinct_reconstructions;
  doc["bins"] = r.bins;
  doc["H_X"] = r.h_x;
  doc["H_U"] = r.h_u;
  doc["H_Xhat"] = r.h_xhat;
  doc["H_X_given_Xhat"] = r.h_x_given_xhat;
  doc["max_gap"] = r.max_gap;
  doc["pass"] = r.pass();
  return doc;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string num(double v, const char* fmt = nullptr) {
  if (std::isnan(v)) return "nan";
  if (fmt == nullptr) return format_number(v);
  char buf[48];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

double median_of(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::string report_header(const std::string& title, const ReportContext& ctx) {
  std::ostringstream os;
  os << "# " << title << "\n# command: " << ctx.command_line << "\n# config_hash: "
     << (ctx.config_hash.empty() ? "-" : ctx.config_hash) << "\n# seeds:";
  for (auto s : ctx.seeds) os << ' ' << s;
  if (ctx.seeds.empty()) os << " -";
  os << '\n';
  return os.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

const AlphaSweepRow& AlphaSweepTable::row(double alpha) const {
  for (const auto& r : rows) {
    if (r.alpha == alpha) return r;
  }
  fail(ErrorKind::kInvalidArgument, "alpha " + num(alpha, "%g") + " is not in the sweep");
}

const AlphaSweepRow& AlphaSweepTable::best_regularized() const {
  const AlphaSweepRow* best = nullptr;
  for (const auto& r : rows) {
    if (r.alpha > 0.0 && !std::isnan(r.median) && (best == nullptr || r.median < best->median)) {
      best = &r;
    }
  }
  if (best == nullptr) fail(ErrorKind::kInvalidArgument, "sweep has no regularized row with a BD-rate");
  return *best;
}

AlphaSweepTable alpha_sweep_report(const std::vector<RunRecord>& runs) {
  // (alpha, seed) -> lambda -> run
  std::map<std::pair<double, std::uint64_t>, std::map<double, const RunRecord*>> groups;
  std::set<double> alphas, lambdas;
  std::set<std::uint64_t> seeds;
  for (const auto& r : runs) {
    if (!r.ok() || r.rows.empty()) continue;
    groups[{r.alpha, r.seed}][r.lambda] = &r;
    alphas.insert(r.alpha);
    lambdas.insert(r.lambda);
    seeds.insert(r.seed);
  }
  require(alphas.count(0.0) != 0, "alpha sweep needs alpha = 0 anchor runs");

  AlphaSweepTable t;
  t.seeds.assign(seeds.begin(), seeds.end());
  t.lambdas.assign(lambdas.begin(), lambdas.end());
  auto curve_of = [&](double alpha, std::uint64_t seed) -> std::optional<RdCurve> {
    auto it = groups.find({alpha, seed});
    if (it == groups.end() || it->second.size() != lambdas.size()) return std::nullopt;
    std::vector<const RunRecord*> rs;
    for (const auto& [_, r] : it->second) {
      const double rate = r->final_row().rate_bpd;
      if (!(std::isfinite(rate) && rate > 0.0)) return std::nullopt;  // collapsed codec
      rs.push_back(r);
    }
    return curve_from_runs(rs);
  };
  for (double a : alphas) {
    AlphaSweepRow row;
    row.alpha = a;
    for (std::uint64_t s : t.seeds) {
      const auto anchor = curve_of(0.0, s);
      const auto test = curve_of(a, s);
      double bd = NAN;
      if (anchor && test && anchor->size() >= 4) {
        try {
          bd = bd_rate(*anchor, *test).bd_rate_percent;
        } catch (const Error&) {
          bd = NAN;
        }
      }
      row.per_seed.push_back(bd);
    }
    row.median = median_of(row.per_seed);
    t.rows.push_back(std::move(row));

    std::vector<RdPoint> pts;
    for (double l : t.lambdas) {
      std::vector<double> rates, quals;
      for (std::uint64_t s : t.seeds) {
        auto it = groups.find({a, s});
        if (it == groups.end() || it->second.count(l) == 0) continue;
        const MetricRow& m = it->second.at(l)->final_row();
        rates.push_back(m.rate_bpd);
        quals.push_back(m.quality_db);
      }
      if (rates.empty()) continue;
      const double rate = median_of(rates);
      if (std::isfinite(rate) && rate > 0.0) pts.push_back({rate, median_of(quals), {}});
    }
    t.curves.emplace_back(a, RdCurve(std::move(pts)));
  }
  return t;
}

std::string alpha_sweep_csv(const AlphaSweepTable& t, const ReportContext& ctx) {
  std::ostringstream os;
  os << report_header("alpha sweep: BD-rate (%) of each alpha against alpha = 0, per seed", ctx);
  os << "# reference (image scale, not asserted): alpha = 1 best at -1.24%\n";
  os << "alpha";
  for (auto s : t.seeds) os << ",bd_rate_seed_" << s;
  os << ",median\n";
  for (const auto& r : t.rows) {
    os << num(r.alpha);
    for (double v : r.per_seed) os << ',' << num(v);
    os << ',' << num(r.median) << '\n';
  }
  return os.str();
}

std::string alpha_sweep_svg(const AlphaSweepTable& t, const ReportContext& ctx) {
  std::vector<std::pair<std::string, RdCurve>> curves;
  for (const auto& [a, c] : t.curves) curves.emplace_back("alpha=" + num(a, "%g"), c);
  std::vector<std::string> notes;
  for (const auto& r : t.rows) {
    notes.push_back("alpha=" + num(r.alpha, "%g") + ": median BD-rate " + num(r.median, "%.3f") + "%");
  }
  notes.push_back("reference (image scale): alpha=1 best at -1.24%");
  notes.push_back("config " + (ctx.config_hash.empty() ? std::string("-") : ctx.config_hash));
  return rd_plot_svg(curves, "median R-D curves per alpha", notes);
}

std::vector<ShiftCase> default_shift_cases() {
  return {{"identity", {"identity", 0.0}},
          {"mean_shift", {"mean_shift", 1.0}},
          {"rotate", {"rotate", 1.0}},
          {"heavy_tail", {"heavy_tail", 1.0}},
          {"reweight", {"reweight", 1.0}}};
}

namespace {

RdCurve evaluate_curve(const std::vector<CodecModel*>& codecs, const ad::Tensor& x) {
  std::vector<RdPoint> pts;
  for (CodecModel* c : codecs) {
    const EvalMetrics m = evaluate_codec(*c, x);
    pts.push_back({m.rate_bpd, m.quality_db, {}});
  }
  return RdCurve(std::move(pts));
}

DomainShiftRow shift_row(const std::string& name, const VectorSource& source,
                         const std::vector<CodecModel*>& anchor,
                         const std::vector<CodecModel*>& regularized, std::uint64_t seed,
                         std::size_t samples) {
  Rng rng(derive_seed(seed, "domain-shift"));
  const ad::Tensor x = source.sample(rng, samples).x;
  DomainShiftRow row;
  row.name = name;
  row.domain = source.domain();
  row.anchor = evaluate_curve(anchor, x);
  row.test = evaluate_curve(regularized, x);
  try {
    row.bd_rate_percent = bd_rate(row.anchor, row.test).bd_rate_percent;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNoOverlap) throw;
    row.bd_rate_percent = NAN;
    row.note = "no quality overlap";
  }
  return row;
}

}  // namespace

DomainShiftTable domain_shift_report(const std::vector<CodecModel*>& anchor,
                                     const std::vector<CodecModel*>& regularized,
                                     const SourceConfig& base,
                                     const std::vector<ShiftCase>& shifts, std::uint64_t seed,
                                     std::size_t samples) {
  require(!anchor.empty() && !regularized.empty(), "domain shift needs anchor and regularized codecs");
  require(samples >= 1, "samples must be >= 1");
  const auto in_domain = make_source(base);
  for (const auto* group : {&anchor, &regularized}) {
    for (const CodecModel* c : *group) {
      require(c != nullptr, "null codec");
      if (c->architecture().dim != in_domain->dim()) {
        fail(ErrorKind::kInvalidArgument, "codec dimension " + std::to_string(c->architecture().dim) +
                                              " does not match source dimension " +
                                              std::to_string(in_domain->dim()));
      }
    }
  }
  DomainShiftTable t;
  t.in_domain = shift_row("in_domain", *in_domain, anchor, regularized, seed, samples);
  for (const auto& s : shifts) {
    const auto src = make_shifted_source(base, s.shift);
    require(src->dim() == in_domain->dim(), "shifted source changes the dimension");
    t.rows.push_back(shift_row(s.name, *src, anchor, regularized, seed, samples));
  }
  return t;
}

std::string domain_shift_csv(const DomainShiftTable& t, const ReportContext& ctx) {
  std::ostringstream os;
  os << report_header("domain shift: BD-rate (%) of the regularized codec against the anchor", ctx);
  os << "# reference (image scale, not asserted): attention model on pathology images, -2.38%\n";
  os << "shift,domain,bd_rate_percent,note\n";
  auto line = [&](const DomainShiftRow& r) {
    os << r.name << ',' << r.domain << ',' << num(r.bd_rate_percent) << ',' << r.note << '\n';
  };
  line(t.in_domain);
  for (const auto& r : t.rows) line(r);
  return os.str();
}

std::string curves_csv(const std::vector<std::pair<std::string, RdCurve>>& curves,
                       const ReportContext& ctx) {
  std::ostringstream os;
  os << report_header("rate-distortion points", ctx);
  os << "label,rate_bpd,quality_db,run\n";
  for (const auto& [label, c] : curves) {
    for (const auto& p : c.points()) {
      os << label << ',' << num(p.rate) << ',' << num(p.quality) << ','
         << (p.run_hash.empty() ? "-" : p.run_hash) << '\n';
    }
  }
  return os.str();
}

std::string rd_plot_svg(const std::vector<std::pair<std::string, RdCurve>>& curves,
                        const std::string& title, const std::vector<std::string>& notes) {
  constexpr double W = 720, H = 480, L = 70, R = 180, T = 40, B = 60;
  const double note_h = 16.0 * static_cast<double>(notes.size());
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& [_, c] : curves) {
    for (const auto& p : c.points()) {
      xmin = std::min(xmin, std::log10(p.rate));
      xmax = std::max(xmax, std::log10(p.rate));
      ymin = std::min(ymin, p.quality);
      ymax = std::max(ymax, p.quality);
    }
  }
  if (!(xmax > xmin)) { xmin -= 0.5; xmax += 0.5; }
  if (!(ymax > ymin)) { ymin -= 0.5; ymax += 0.5; }
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double lr) { return L + (lr - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double q) { return T + ph - (q - ymin) / (ymax - ymin) * ph; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H + note_h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << L << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n"
     << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double lr = xmin + (xmax - xmin) * i / 4.0;
    const double q = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << num(px(lr), "%.2f") << "\" y=\"" << T + ph + 18
       << "\" text-anchor=\"middle\">" << num(std::pow(10.0, lr), "%.3g") << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << num(py(q) + 4, "%.2f")
       << "\" text-anchor=\"end\">" << num(q, "%.2f") << "</text>\n";
  }
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 18
     << "\" text-anchor=\"middle\">rate (bits/dim, log scale)</text>\n"
     << "<text x=\"16\" y=\"" << T + ph / 2 << "\" transform=\"rotate(-90 16 " << T + ph / 2
     << ")\" text-anchor=\"middle\">quality (dB)</text>\n";
  std::size_t k = 0;
  for (const auto& [label, c] : curves) {
    const char* color = palette[k % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : c.points()) {
      os << num(px(std::log10(p.rate)), "%.2f") << ',' << num(py(p.quality), "%.2f") << ' ';
    }
    os << "\"/>\n";
    for (const auto& p : c.points()) {
      os << "<circle cx=\"" << num(px(std::log10(p.rate)), "%.2f") << "\" cy=\""
         << num(py(p.quality), "%.2f") << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = T + 14.0 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - R + 32
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << W - R + 38 << "\" y=\"" << ly << "\">" << label << "</text>\n";
    ++k;
  }
  for (std::size_t i = 0; i < notes.size(); ++i) {
    os << "<text x=\"" << L << "\" y=\"" << H + 16.0 * static_cast<double>(i) << "\">" << notes[i]
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace nicreg
