#include "nicreg/source_regularizer.hpp"

#include <cmath>
#include <numbers>

#include "nicreg/errors.hpp"

namespace nicreg {

namespace {

ad::Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  ad::Tensor w({fan_in, fan_out});
  for (double& v : w.values()) v = limit * (2.0 * uniform01(rng) - 1.0);
  return w;
}

// Degree of context unit k, in 1..dim-1 (1-based source positions).
std::size_t unit_degree(std::size_t k, std::size_t dim) { return 1 + k % (dim - 1); }

}  // namespace

std::string to_string(ContextMode mode) {
  return mode == ContextMode::kCausal ? "causal" : "factorized";
}

ContextMode context_mode_from_string(const std::string& s) {
  if (s == "factorized") return ContextMode::kFactorized;
  if (s == "causal") return ContextMode::kCausal;
  fail(ErrorKind::kInvalidArgument, "unknown context mode '" + s + "'");
}

void SourceModelArchitecture::validate() const {
  require(dim >= 1 && hidden >= 1, "source model widths must be positive");
  require(data_scale > 0.0, "source model data_scale must be positive");
}

nlohmann::json to_json(const SourceModelArchitecture& a) {
  return {{"dim", a.dim}, {"hidden", a.hidden}, {"context", to_string(a.context)},
          {"data_scale", a.data_scale}};
}

SourceModelArchitecture source_architecture_from_json(const nlohmann::json& doc) {
  SourceModelArchitecture a;
  try {
    a.dim = doc.at("dim").get<std::size_t>();
    a.hidden = doc.at("hidden").get<std::size_t>();
    a.context = context_mode_from_string(doc.at("context").get<std::string>());
    a.data_scale = doc.at("data_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed source architecture: ") + e.what());
  }
  a.validate();
  return a;
}

namespace {

void build_masks(const SourceModelArchitecture& a, ad::Tensor& in, ad::Tensor& out) {
  in = ad::Tensor({a.dim, a.hidden}, 0.0);
  out = ad::Tensor({a.hidden, a.dim}, 0.0);
  if (a.dim < 2) return;
  for (std::size_t k = 0; k < a.hidden; ++k) {
    const std::size_t deg = unit_degree(k, a.dim);
    for (std::size_t j = 0; j < a.dim; ++j) {
      if (j + 1 <= deg) in.at(j, k) = 1.0;  // unit sees x_1..x_deg
      if (deg < j + 1) out.at(k, j) = 1.0;  // output j+1 sees units of lower degree
    }
  }
}

}  // namespace

SourceModel::SourceModel(const SourceModelArchitecture& arch, Rng& init) : arch_(arch) {
  arch_.validate();
  const std::size_t n = arch_.dim, h = arch_.hidden;
  params_.add("trunk.0.weight", glorot(init, n, h));
  params_.add("trunk.0.bias", ad::Tensor({1, h}, 0.0));
  params_.add("trunk.1.weight", glorot(init, h, h));
  params_.add("trunk.1.bias", ad::Tensor({1, h}, 0.0));
  params_.add("head.mean.weight", glorot(init, h, n));
  params_.add("head.mean.bias", ad::Tensor({1, n}, 0.0));
  params_.add("head.scale.weight", glorot(init, h, n));
  // softplus(-1.5) * data_scale: initial scale about a sixth of the data scale.
  params_.add("head.scale.bias", ad::Tensor({1, n}, -1.5));
  if (arch_.context == ContextMode::kCausal) {
    params_.add("context.weight", glorot(init, n, h));
    params_.add("context.bias", ad::Tensor({1, h}, 0.0));
    params_.add("context.mean.weight", glorot(init, h, n));
    params_.add("context.scale.weight", glorot(init, h, n));
  }
  build_masks(arch_, input_mask_, output_mask_);
}

SourceModel::SourceModel(const SourceModelArchitecture& arch, ad::ParamStore params)
    : arch_(arch), params_(std::move(params)) {
  arch_.validate();
  require(params_.contains("trunk.0.weight"), "source checkpoint lacks trunk parameters");
  require((arch_.context == ContextMode::kCausal) == params_.contains("context.weight"),
          "source checkpoint does not match its context mode");
  build_masks(arch_, input_mask_, output_mask_);
}

ad::Var SourceModel::masked(ad::Graph& g, const std::string& name, const ad::Tensor& mask,
                            bool trainable) {
  return ad::mul(g.param(params_, name, trainable), g.constant(mask));
}

SourceModel::Prediction SourceModel::predict(ad::Graph& g, ad::Var xhat, ad::Var x,
                                             bool trainable) {
  require(xhat.shape() == x.shape(), "x and xhat must have the same shape");
  require(xhat.value().cols() == arch_.dim, "source model input has the wrong dimension");
  const double inv = 1.0 / arch_.data_scale;
  auto dense = [&](ad::Var in, const std::string& name) {
    return ad::add(ad::matmul(in, g.param(params_, name + ".weight", trainable)),
                   g.param(params_, name + ".bias", trainable));
  };
  ad::Var h = ad::tanh(dense(ad::scale(xhat, inv), "trunk.0"));
  h = ad::tanh(dense(h, "trunk.1"));
  ad::Var mean_raw = dense(h, "head.mean");
  ad::Var scale_raw = dense(h, "head.scale");
  if (arch_.context == ContextMode::kCausal) {
    ad::Var c = ad::tanh(ad::add(
        ad::matmul(ad::scale(x, inv), masked(g, "context.weight", input_mask_, trainable)),
        g.param(params_, "context.bias", trainable)));
    mean_raw = ad::add(mean_raw, ad::matmul(c, masked(g, "context.mean.weight", output_mask_, trainable)));
    scale_raw = ad::add(scale_raw, ad::matmul(c, masked(g, "context.scale.weight", output_mask_, trainable)));
  }
  Prediction p;
  p.mean = ad::add(xhat, ad::scale(mean_raw, arch_.data_scale));
  p.scale = ad::clamp_min(ad::scale(ad::softplus(scale_raw), arch_.data_scale), kSourceScaleFloor);
  return p;
}

void SourceModel::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  header["kind"] = "source_model";
  header["architecture"] = to_json(arch_);
  ad::save_checkpoint(params_, header, dir);
}

SourceModel SourceModel::load(const std::filesystem::path& dir) {
  nlohmann::json h;
  ad::ParamStore params = ad::load_checkpoint(dir, &h);
  if (h.value("kind", "") != "source_model") {
    fail(ErrorKind::kIo, dir.string() + " is not a source model checkpoint");
  }
  return SourceModel(source_architecture_from_json(h.at("architecture")), std::move(params));
}

ad::Var gaussian_nll_bits(ad::Var x, ad::Var mean, ad::Var scale) {
  // -log N = 0.5 log(2 pi) + log sigma + (x - mu)^2 / (2 sigma^2), in nats.
  ad::Var z = ad::div(ad::sub(x, mean), scale);
  ad::Var nats = ad::add(ad::log(scale), ad::scale(ad::square(z), 0.5));
  ad::Var mean_nats = ad::add_scalar(ad::mean(nats), 0.5 * std::log(2.0 * std::numbers::pi));
  return ad::scale(mean_nats, 1.0 / std::numbers::ln2);
}

ad::Var source_nll(SourceModel& model, ad::Graph& g, ad::Var x, ad::Var xhat, bool trainable) {
  auto p = model.predict(g, xhat, x, trainable);
  if (!p.mean.value().all_finite() || !p.scale.value().all_finite()) {
    fail(ErrorKind::kModelDiverged, "source model produced non-finite parameters");
  }
  ad::Var nll = gaussian_nll_bits(x, p.mean, p.scale);
  if (!std::isfinite(nll.item())) fail(ErrorKind::kModelDiverged, "source NLL is not finite");
  return nll;
}

RegularizedLoss regularized_loss(const CodecOutput& out, ad::Var x, SourceModel* model,
                                 double lambda, double alpha) {
  require(alpha >= 0.0 && std::isfinite(alpha), "alpha must be finite and >= 0");
  RegularizedLoss r;
  r.lambda = lambda;
  r.alpha = alpha;
  r.total = rd_loss(out, lambda);
  r.rate_bits = out.rate.bits_per_vector.item();
  r.distortion = out.distortion.item();
  if (alpha == 0.0) return r;
  require(model != nullptr, "alpha > 0 needs a source model");
  ad::Graph& g = x.graph();
  ad::Var nll = source_nll(*model, g, x, out.xhat, false);
  const double dim = static_cast<double>(x.value().cols());
  ad::Var term = ad::scale(nll, -dim);  // E[log2 q(x|xhat)] per vector
  r.regularizer_bits = term.item();
  r.total = ad::add(r.total, ad::scale(term, alpha));
  return r;
}

ad::Var source_model_step_loss(SourceModel& model, ad::Graph& g, const ad::Tensor& x,
                               const ad::Tensor& xhat_frozen) {
  require(x.shape() == xhat_frozen.shape(), "x and xhat must have the same shape");
  ad::Var nll = source_nll(model, g, g.constant(x), g.constant(xhat_frozen), true);
  return ad::scale(nll, static_cast<double>(x.cols()));
}

}  // namespace nicreg
