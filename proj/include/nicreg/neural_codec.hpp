#pragma once

// Toy transform codec: MLP analysis and synthesis transforms, uniform scalar
// quantization (additive uniform noise while training, rounding at eval) and
// a factorized Gaussian latent entropy model evaluated by CDF differences.

#include <cstddef>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "nicreg/diff_engine.hpp"
#include "nicreg/rng.hpp"
#include "nicreg/sources.hpp"

namespace nicreg {

inline constexpr double kLatentScaleFloor = 1e-6;

struct CodecArchitecture {
  std::size_t dim = 8;      // source dimension N
  std::size_t latent = 4;   // latent width M
  std::size_t hidden = 32;  // width of both hidden layers
  std::size_t hidden_layers = 2;
  // Fixed (untrained) normalizations: the analysis sees x / data_scale and
  // emits latent_scale * net(x); the synthesis mirrors both.
  double data_scale = 64.0;
  double latent_scale = 8.0;

  void validate() const;
};

nlohmann::json to_json(const CodecArchitecture& arch);
CodecArchitecture codec_architecture_from_json(const nlohmann::json& doc);

class CodecModel {
 public:
  CodecModel(const CodecArchitecture& arch, Rng& init);
  CodecModel(const CodecArchitecture& arch, ad::ParamStore params);

  const CodecArchitecture& architecture() const noexcept { return arch_; }
  ad::ParamStore& params() noexcept { return params_; }
  const ad::ParamStore& params() const noexcept { return params_; }

  ad::Var analysis(ad::Graph& g, ad::Var x, bool trainable);
  ad::Var synthesis(ad::Graph& g, ad::Var latent, bool trainable);
  // Per-dimension prior location and (floored) scale, as 1 x M rows.
  ad::Var prior_mean(ad::Graph& g, bool trainable);
  ad::Var prior_scale(ad::Graph& g, bool trainable);

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
  static CodecModel load(const std::filesystem::path& dir, nlohmann::json* header = nullptr);

 private:
  ad::Var mlp(ad::Graph& g, ad::Var h, const std::string& prefix, bool trainable);

  CodecArchitecture arch_;
  ad::ParamStore params_;
};

// Uniform(-0.5, 0.5) noise for the training surrogate. zero() is a test hook
// producing exact zeros.
class AunNoise {
 public:
  explicit AunNoise(Rng& rng) : rng_(&rng) {}
  static AunNoise zero() { return AunNoise(); }
  ad::Tensor draw(const ad::Shape& shape);

 private:
  AunNoise() = default;
  Rng* rng_ = nullptr;
};

struct RateTerm {
  ad::Var bits_per_vector;   // sum over latent dims, mean over the batch
  double bits_per_dim = 0.0;  // bits_per_vector / N
  std::size_t scale_clamped = 0;
};

struct CodecOutput {
  ad::Var y;       // analysis output
  ad::Var latent;  // y + noise (training) or round(y) (eval)
  ad::Var xhat;
  RateTerm rate;
  ad::Var distortion;  // E ||x - xhat||^2, summed over dims, mean over batch
  double mse = 0.0;    // per-element mean squared error
  bool training = true;
};

// Interval mass P(v - 1/2 < Y < v + 1/2) under N(mean, scale^2), evaluated
// in the lower tail to avoid cancellation.
double gaussian_interval_mass(double v, double mean, double scale);
double interval_rate_bits(double v, double mean, double scale);

// Ties-to-even rounding, with -0 normalized to +0.
double round_half_even(double v);

RateTerm rate_bits(CodecModel& model, ad::Graph& g, ad::Var latent, bool trainable);

CodecOutput encode_train(CodecModel& model, ad::Graph& g, ad::Var x, AunNoise& noise,
                         bool trainable = true);
CodecOutput encode_eval(CodecModel& model, ad::Graph& g, ad::Var x);

// rate + lambda * distortion, rate in bits per vector.
ad::Var rd_loss(const CodecOutput& out, double lambda);
double rd_loss_value(double rate_bits, double distortion, double lambda);

struct EvalMetrics {
  double rate_bpd = 0.0;
  double mse = 0.0;
  double quality_db = 0.0;  // -10 log10(mse)
};

// Eval-mode metrics over a whole batch, in fixed-size chunks.
EvalMetrics evaluate_codec(CodecModel& model, const ad::Tensor& x);
double quality_db(double mse);

}  // namespace nicreg
