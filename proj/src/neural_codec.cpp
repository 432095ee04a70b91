#include "nicreg/neural_codec.hpp"

#include <cmath>
#include <numbers>

#include "nicreg/errors.hpp"

namespace nicreg {

namespace {

double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

ad::Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  ad::Tensor w({fan_in, fan_out});
  for (double& v : w.values()) v = limit * (2.0 * uniform01(rng) - 1.0);
  return w;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

void CodecArchitecture::validate() const {
  require(dim >= 1 && latent >= 1 && hidden >= 1, "codec widths must be positive");
  require(hidden_layers >= 1, "codec needs at least one hidden layer");
  require(data_scale > 0.0 && latent_scale > 0.0, "codec scales must be positive");
}

nlohmann::json to_json(const CodecArchitecture& a) {
  return {{"dim", a.dim},
          {"latent", a.latent},
          {"hidden", a.hidden},
          {"hidden_layers", a.hidden_layers},
          {"activation", "tanh"},
          {"data_scale", a.data_scale},
          {"latent_scale", a.latent_scale}};
}

CodecArchitecture codec_architecture_from_json(const nlohmann::json& doc) {
  CodecArchitecture a;
  try {
    a.dim = doc.at("dim").get<std::size_t>();
    a.latent = doc.at("latent").get<std::size_t>();
    a.hidden = doc.at("hidden").get<std::size_t>();
    a.hidden_layers = doc.at("hidden_layers").get<std::size_t>();
    a.data_scale = doc.at("data_scale").get<double>();
    a.latent_scale = doc.at("latent_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed codec architecture: ") + e.what());
  }
  a.validate();
  return a;
}

CodecModel::CodecModel(const CodecArchitecture& arch, Rng& init) : arch_(arch) {
  arch_.validate();
  auto add_mlp = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    std::size_t width = in;
    for (std::size_t l = 0; l <= arch_.hidden_layers; ++l) {
      const std::size_t next = l == arch_.hidden_layers ? out : arch_.hidden;
      const std::string name = prefix + "." + std::to_string(l);
      params_.add(name + ".weight", glorot(init, width, next));
      params_.add(name + ".bias", ad::Tensor({1, next}, 0.0));
      width = next;
    }
  };
  add_mlp("analysis", arch_.dim, arch_.latent);
  add_mlp("synthesis", arch_.latent, arch_.dim);
  params_.add("prior.mean", ad::Tensor({1, arch_.latent}, 0.0));
  params_.add("prior.raw_scale", ad::Tensor({1, arch_.latent}, softplus_inverse(0.5)));
}

CodecModel::CodecModel(const CodecArchitecture& arch, ad::ParamStore params)
    : arch_(arch), params_(std::move(params)) {
  arch_.validate();
  require(params_.contains("prior.mean") && params_.contains("prior.raw_scale"),
          "codec checkpoint lacks latent prior parameters");
}

ad::Var CodecModel::mlp(ad::Graph& g, ad::Var h, const std::string& prefix, bool trainable) {
  for (std::size_t l = 0; l <= arch_.hidden_layers; ++l) {
    const std::string name = prefix + "." + std::to_string(l);
    h = ad::add(ad::matmul(h, g.param(params_, name + ".weight", trainable)),
                g.param(params_, name + ".bias", trainable));
    if (l < arch_.hidden_layers) h = ad::tanh(h);
  }
  return h;
}

ad::Var CodecModel::analysis(ad::Graph& g, ad::Var x, bool trainable) {
  require(x.value().cols() == arch_.dim, "analysis input has the wrong dimension");
  return ad::scale(mlp(g, ad::scale(x, 1.0 / arch_.data_scale), "analysis", trainable),
                   arch_.latent_scale);
}

ad::Var CodecModel::synthesis(ad::Graph& g, ad::Var latent, bool trainable) {
  require(latent.value().cols() == arch_.latent, "synthesis input has the wrong dimension");
  return ad::scale(mlp(g, ad::scale(latent, 1.0 / arch_.latent_scale), "synthesis", trainable),
                   arch_.data_scale);
}

ad::Var CodecModel::prior_mean(ad::Graph& g, bool trainable) {
  return ad::scale(g.param(params_, "prior.mean", trainable), arch_.latent_scale);
}

ad::Var CodecModel::prior_scale(ad::Graph& g, bool trainable) {
  ad::Var raw = g.param(params_, "prior.raw_scale", trainable);
  return ad::clamp_min(ad::scale(ad::softplus(raw), arch_.latent_scale), kLatentScaleFloor);
}

void CodecModel::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  header["kind"] = "codec";
  header["architecture"] = to_json(arch_);
  ad::save_checkpoint(params_, header, dir);
}

CodecModel CodecModel::load(const std::filesystem::path& dir, nlohmann::json* header) {
  nlohmann::json h;
  ad::ParamStore params = ad::load_checkpoint(dir, &h);
  if (h.value("kind", "") != "codec") fail(ErrorKind::kIo, dir.string() + " is not a codec checkpoint");
  CodecModel model(codec_architecture_from_json(h.at("architecture")), std::move(params));
  if (header != nullptr) *header = std::move(h);
  return model;
}

ad::Tensor AunNoise::draw(const ad::Shape& shape) {
  ad::Tensor eps(shape, 0.0);
  if (rng_ == nullptr) return eps;
  for (double& v : eps.values()) v = uniform01(*rng_) - 0.5;
  return eps;
}

double gaussian_interval_mass(double v, double mean, double scale) {
  require(scale > 0.0, "scale must be positive");
  const double s = v < mean ? 1.0 : -1.0;
  const double upper = (v + 0.5 - mean) / scale;
  const double lower = (v - 0.5 - mean) / scale;
  return s * (normal_cdf(s * upper) - normal_cdf(s * lower));
}

double interval_rate_bits(double v, double mean, double scale) {
  return -std::log2(gaussian_interval_mass(v, mean, scale));
}

double round_half_even(double v) { return std::nearbyint(v) + 0.0; }

RateTerm rate_bits(CodecModel& model, ad::Graph& g, ad::Var latent, bool trainable) {
  const ad::Tensor v = latent.value();  // graph storage may move as nodes are added
  const std::size_t rows = v.rows();
  const std::size_t cols = model.architecture().latent;
  require(v.rank() == 2 && v.cols() == cols, "latent has the wrong shape");
  ad::Var mean_row = model.prior_mean(g, trainable);
  ad::Var scale_row = model.prior_scale(g, trainable);

  RateTerm out;
  const ad::Tensor& raw = scale_row.value();
  for (double s : raw.values()) out.scale_clamped += s <= kLatentScaleFloor ? 1 : 0;

  ad::Var mu = ad::tile_rows(mean_row, rows);
  ad::Var sigma = ad::tile_rows(scale_row, rows);
  ad::Tensor sign({rows, cols});
  for (std::size_t i = 0; i < sign.size(); ++i) sign[i] = v[i] < mu.value()[i] ? 1.0 : -1.0;
  ad::Var s = g.constant(std::move(sign));

  ad::Var centered = ad::sub(latent, mu);
  ad::Var upper = ad::div(ad::add_scalar(centered, 0.5), sigma);
  ad::Var lower = ad::div(ad::add_scalar(centered, -0.5), sigma);
  ad::Var mass = ad::mul(s, ad::sub(ad::gaussian_cdf(ad::mul(s, upper)),
                                    ad::gaussian_cdf(ad::mul(s, lower))));
  ad::Var bits = ad::scale(ad::log(mass), -1.0 / std::numbers::ln2);
  out.bits_per_vector = ad::scale(ad::sum(bits), 1.0 / static_cast<double>(rows));
  out.bits_per_dim = out.bits_per_vector.item() / static_cast<double>(model.architecture().dim);
  return out;
}

namespace {

void finish(CodecOutput& out, ad::Var x, std::size_t dim) {
  const std::size_t rows = x.value().rows();
  out.distortion = ad::scale(ad::sum(ad::square(ad::sub(x, out.xhat))),
                             1.0 / static_cast<double>(rows));
  out.mse = out.distortion.item() / static_cast<double>(dim);
  if (!out.xhat.value().all_finite() || !std::isfinite(out.rate.bits_per_vector.item())) {
    fail(ErrorKind::kTrainingDiverged, "non-finite codec activations or rate");
  }
}

}  // namespace

CodecOutput encode_train(CodecModel& model, ad::Graph& g, ad::Var x, AunNoise& noise,
                         bool trainable) {
  CodecOutput out;
  out.training = true;
  out.y = model.analysis(g, x, trainable);
  if (!out.y.value().all_finite()) fail(ErrorKind::kTrainingDiverged, "non-finite analysis output");
  out.latent = ad::add(out.y, g.constant(noise.draw(out.y.shape())));
  out.xhat = model.synthesis(g, out.latent, trainable);
  out.rate = rate_bits(model, g, out.latent, trainable);
  finish(out, x, model.architecture().dim);
  return out;
}

CodecOutput encode_eval(CodecModel& model, ad::Graph& g, ad::Var x) {
  CodecOutput out;
  out.training = false;
  out.y = model.analysis(g, x, false);
  if (!out.y.value().all_finite()) fail(ErrorKind::kTrainingDiverged, "non-finite analysis output");
  ad::Tensor u = out.y.value();
  for (double& v : u.values()) v = round_half_even(v);
  out.latent = g.constant(std::move(u));
  out.xhat = model.synthesis(g, out.latent, false);
  out.rate = rate_bits(model, g, out.latent, false);
  finish(out, x, model.architecture().dim);
  return out;
}

ad::Var rd_loss(const CodecOutput& out, double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be finite and >= 0");
  return ad::add(out.rate.bits_per_vector, ad::scale(out.distortion, lambda));
}

double rd_loss_value(double rate_bits, double distortion, double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be finite and >= 0");
  return rate_bits + lambda * distortion;
}

double quality_db(double mse) { return -10.0 * std::log10(mse); }

EvalMetrics evaluate_codec(CodecModel& model, const ad::Tensor& x) {
  require(x.rank() == 2 && x.rows() > 0, "evaluation needs a non-empty batch");
  constexpr std::size_t kChunk = 1024;
  const std::size_t n = x.rows(), dim = x.cols();
  double rate_total = 0.0, sq_total = 0.0;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t rows = std::min(kChunk, n - begin);
    std::vector<double> chunk(x.values().begin() + static_cast<std::ptrdiff_t>(begin * dim),
                              x.values().begin() + static_cast<std::ptrdiff_t>((begin + rows) * dim));
    ad::Graph g;
    CodecOutput out = encode_eval(model, g, g.constant(ad::Tensor({rows, dim}, std::move(chunk))));
    rate_total += out.rate.bits_per_vector.item() * static_cast<double>(rows);
    sq_total += out.distortion.item() * static_cast<double>(rows);
  }
  EvalMetrics m;
  m.rate_bpd = rate_total / static_cast<double>(n * dim);
  m.mse = sq_total / static_cast<double>(n * dim);
  m.quality_db = quality_db(m.mse);
  return m;
}

}  // namespace nicreg
