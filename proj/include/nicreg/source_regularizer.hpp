#pragma once

// Conditional source model q(X | Xhat): a per-dimension Gaussian whose mean
// and scale come from an MLP over the reconstruction, optionally with a
// strictly causal context over the already-seen source dimensions.

#include <cstddef>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "nicreg/diff_engine.hpp"
#include "nicreg/neural_codec.hpp"
#include "nicreg/rng.hpp"

namespace nicreg {

inline constexpr double kSourceScaleFloor = 1e-4;

enum class ContextMode { kFactorized, kCausal };

std::string to_string(ContextMode mode);
ContextMode context_mode_from_string(const std::string& s);

struct SourceModelArchitecture {
  std::size_t dim = 8;
  std::size_t hidden = 32;
  ContextMode context = ContextMode::kFactorized;
  double data_scale = 64.0;

  void validate() const;
};

nlohmann::json to_json(const SourceModelArchitecture& arch);
SourceModelArchitecture source_architecture_from_json(const nlohmann::json& doc);

class SourceModel {
 public:
  struct Prediction {
    ad::Var mean;
    ad::Var scale;
  };

  SourceModel(const SourceModelArchitecture& arch, Rng& init);
  SourceModel(const SourceModelArchitecture& arch, ad::ParamStore params);

  const SourceModelArchitecture& architecture() const noexcept { return arch_; }
  ad::ParamStore& params() noexcept { return params_; }
  const ad::ParamStore& params() const noexcept { return params_; }

  // In causal mode, dimension i's parameters read xhat and x_0..x_{i-1} only.
  Prediction predict(ad::Graph& g, ad::Var xhat, ad::Var x, bool trainable);

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
  static SourceModel load(const std::filesystem::path& dir);

 private:
  ad::Var masked(ad::Graph& g, const std::string& name, const ad::Tensor& mask, bool trainable);

  SourceModelArchitecture arch_;
  ad::ParamStore params_;
  ad::Tensor input_mask_;   // dim x hidden
  ad::Tensor output_mask_;  // hidden x dim
};

// Mean over batch and dimensions of -log2 N(x; mean, scale^2).
ad::Var gaussian_nll_bits(ad::Var x, ad::Var mean, ad::Var scale);

// Differential NLL in bits per dimension (may be negative).
ad::Var source_nll(SourceModel& model, ad::Graph& g, ad::Var x, ad::Var xhat, bool trainable);

struct RegularizedLoss {
  ad::Var total;
  double rate_bits = 0.0;          // per vector
  double distortion = 0.0;         // E ||x - xhat||^2
  double regularizer_bits = 0.0;   // E[log2 q(x|xhat)], per vector (summed over dims)
  double lambda = 0.0;
  double alpha = 0.0;
};

// rate + lambda * D + alpha * E[log2 q(X|Xhat)]. The source model enters as a
// constant: only codec parameters receive gradients. With alpha == 0 the
// regularizer is not evaluated at all and the loss is exactly rd_loss.
RegularizedLoss regularized_loss(const CodecOutput& out, ad::Var x, SourceModel* model,
                                 double lambda, double alpha);

// Stage-two objective: N * source_nll on a detached reconstruction, with
// gradients reaching only the source model.
ad::Var source_model_step_loss(SourceModel& model, ad::Graph& g, const ad::Tensor& x,
                               const ad::Tensor& xhat_frozen);

}  // namespace nicreg
