#pragma once

// Rate-distortion curves, Bjontegaard delta rate, the plug-in entropy probe
// for trained codecs, and the alpha-sweep and domain-shift reports.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nicreg/coding_models.hpp"
#include "nicreg/neural_codec.hpp"
#include "nicreg/sources.hpp"
#include "nicreg/trainer.hpp"

namespace nicreg {

struct RdPoint {
  double rate = 0.0;     // bits per dimension, > 0
  double quality = 0.0;  // dB
  std::string run_hash;
};

class RdCurve {
 public:
  RdCurve() = default;
  // Sorts by rate; rejects non-positive or non-finite rates.
  explicit RdCurve(std::vector<RdPoint> points);

  const std::vector<RdPoint>& points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }
  bool monotone() const;  // quality strictly increasing with rate

 private:
  std::vector<RdPoint> points_;
};

// Final-row curve of the completed runs, one point per run.
RdCurve curve_from_runs(const std::vector<const RunRecord*>& runs);

// Reads any CSV with rate_bpd and quality_db columns ('#' lines skipped).
RdCurve read_curve_csv(const std::filesystem::path& path);

struct CurveFit {
  std::array<double, 4> coefficients{};  // in t = (quality - center) / half_width
  std::size_t degree = 3;
  double rms_residual = 0.0;
  bool projected = false;  // monotone projection was applied
};

struct BdResult {
  double bd_rate_percent = 0.0;
  double overlap_low = 0.0;
  double overlap_high = 0.0;
  double center = 0.0;
  double half_width = 0.0;
  CurveFit anchor_fit;
  CurveFit test_fit;
  std::vector<std::string> warnings;
  std::string method = "least-squares cubic of log10(rate) over quality; exact integral";
};

// Negative means the test curve needs less rate at equal quality.
BdResult bd_rate(const RdCurve& anchor, const RdCurve& test);

// Evaluates a fitted polynomial at a quality value (for diagnostics and
// independent integration checks).
double evaluate_fit(const CurveFit& fit, const BdResult& frame, double quality);

nlohmann::json to_json(const BdResult& result);

// Pool-adjacent-violators projection onto non-decreasing sequences.
std::vector<double> isotonic_nondecreasing(const std::vector<double>& values);

// ---------------------------------------------------------------------------
// Identity probe

// Uniform law over a grid origin + sum_k t_k * direction_k (k <= 4 axes).
struct ProbeSource {
  std::vector<double> origin;
  std::vector<std::vector<double>> directions;
  std::vector<std::vector<double>> grid;  // per-axis t values

  std::size_t dim() const { return origin.size(); }
  std::size_t point_count() const;
  void validate() const;
  ad::Tensor points() const;  // point_count x dim, last axis fastest
};

// Grid along the leading principal axes of `source`, spanning +-2.5 standard
// deviations around the sample mean.
ProbeSource principal_probe(const VectorSource& source, std::size_t axes,
                            std::size_t points_per_axis, std::uint64_t seed,
                            std::size_t samples = 20000);

inline constexpr std::size_t kMaxProbePoints = std::size_t{1} << 20;

// Any deterministic codec: for a batch of inputs, the quantization indices
// (row-major, `latent` per row) and the reconstructions.
struct ProbeCodecOutput {
  std::vector<std::int64_t> indices;
  std::size_t latent = 0;
  ad::Tensor xhat;
};
using ProbeCodec = std::function<ProbeCodecOutput(const ad::Tensor& x)>;

ProbeCodec probe_codec(CodecModel& model);

struct IdentityProbeReport {
  IdentityReport identities;
  std::size_t grid_points = 0;
  std::size_t distinct_indices = 0;
  std::size_t distinct_reconstructions = 0;
  std::size_t bins = 0;
  double h_x = 0.0;
  double h_u = 0.0;
  double h_xhat = 0.0;
  double h_x_given_xhat = 0.0;
  double residual_u_given_xhat = 0.0;
  double max_gap = 0.0;

  bool pass() const { return identities.all_pass(); }
};

// Xhat is discretized per dimension into `bins` uniform cells over its
// observed range; the induced (X, U, Xhat) joint is enumerated exactly.
IdentityProbeReport identity_probe(const ProbeCodec& codec, const ProbeSource& probe,
                                   std::size_t bins);
IdentityProbeReport identity_probe(CodecModel& model, const ProbeSource& probe, std::size_t bins);

nlohmann::json to_json(const IdentityProbeReport& report);

// ---------------------------------------------------------------------------
// Reports

struct ReportContext {
  std::string command_line = "nicreg";
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
};

struct AlphaSweepRow {
  double alpha = 0.0;
  std::vector<double> per_seed;  // BD-rate percent per seed, NaN when unavailable
  double median = 0.0;
};

struct AlphaSweepTable {
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambdas;
  std::vector<AlphaSweepRow> rows;  // ascending alpha, alpha = 0 first
  // Median curves (over seeds) per alpha, for plotting.
  std::vector<std::pair<double, RdCurve>> curves;

  const AlphaSweepRow& row(double alpha) const;
  // Lowest median among alpha > 0 rows.
  const AlphaSweepRow& best_regularized() const;
};

// Runs must share the lambda grid; each (alpha, seed) group forms one curve,
// compared against the alpha = 0 curve of the same seed.
AlphaSweepTable alpha_sweep_report(const std::vector<RunRecord>& runs);

std::string alpha_sweep_csv(const AlphaSweepTable& table, const ReportContext& context);
std::string alpha_sweep_svg(const AlphaSweepTable& table, const ReportContext& context);

struct ShiftCase {
  std::string name;
  SourceShift shift;
};

// Identity plus the four shifted variants.
std::vector<ShiftCase> default_shift_cases();

struct DomainShiftRow {
  std::string name;
  std::string domain;
  double bd_rate_percent = 0.0;  // NaN when the curves do not overlap
  std::string note;
  RdCurve anchor;
  RdCurve test;
};

struct DomainShiftTable {
  DomainShiftRow in_domain;
  std::vector<DomainShiftRow> rows;
};

// Evaluates anchor and regularized codecs (one per lambda) on `samples`
// vectors from each shifted source and reports the regularized model's
// BD-rate against the anchor.
DomainShiftTable domain_shift_report(const std::vector<CodecModel*>& anchor,
                                     const std::vector<CodecModel*>& regularized,
                                     const SourceConfig& base,
                                     const std::vector<ShiftCase>& shifts,
                                     std::uint64_t seed, std::size_t samples = 4096);

std::string domain_shift_csv(const DomainShiftTable& table, const ReportContext& context);

// Generic curve table: label,rate_bpd,quality_db rows.
std::string curves_csv(const std::vector<std::pair<std::string, RdCurve>>& curves,
                       const ReportContext& context);
std::string rd_plot_svg(const std::vector<std::pair<std::string, RdCurve>>& curves,
                        const std::string& title, const std::vector<std::string>& notes);

std::string report_header(const std::string& title, const ReportContext& context);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace nicreg
