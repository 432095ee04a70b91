#include "nicreg/sources.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nicreg/errors.hpp"

namespace nicreg {

namespace {

double standard_normal(Rng& rng) {
  // Box-Muller on the platform-independent uniform draw.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void check_keys(const nlohmann::json& doc, const std::set<std::string>& allowed, const char* what) {
  require(doc.is_object(), std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    require(allowed.count(key) != 0, std::string("unknown key '") + key + "' in " + what);
  }
}

class MixtureSource final : public VectorSource {
 public:
  MixtureSource(std::size_t dim, std::vector<MixtureComponent> comps, double noise)
      : dim_(dim), comps_(std::move(comps)), noise_(noise) {
    require(!comps_.empty(), "gauss_mix needs at least one component");
    double total = 0.0;
    for (const auto& c : comps_) {
      require(c.weight > 0.0, "mixture weights must be positive");
      require(c.mean.size() == dim_, "mixture mean has the wrong dimension");
      require(c.loading.size() == dim_, "mixture loading must have one row per dimension");
      for (const auto& row : c.loading) {
        require(row.size() == c.loading.front().size(), "mixture loading rows must match");
      }
      total += c.weight;
    }
    double acc = 0.0;
    for (const auto& c : comps_) {
      acc += c.weight / total;
      cumulative_.push_back(acc);
    }
    cumulative_.back() = 1.0;
  }

  std::size_t dim() const override { return dim_; }
  std::string domain() const override { return "gauss_mix"; }

  void sample_into(Rng& rng, std::span<double> out) const override {
    const double u = uniform01(rng);
    const auto k = static_cast<std::size_t>(
        std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
    const auto& c = comps_[std::min(k, comps_.size() - 1)];
    const std::size_t rank = c.loading.front().size();
    std::vector<double> z(rank);
    for (auto& v : z) v = standard_normal(rng);
    for (std::size_t i = 0; i < dim_; ++i) {
      double v = c.mean[i];
      for (std::size_t r = 0; r < rank; ++r) v += c.loading[i][r] * z[r];
      out[i] = v + noise_ * standard_normal(rng);
    }
  }

  const std::vector<MixtureComponent>& components() const { return comps_; }

 private:
  std::size_t dim_;
  std::vector<MixtureComponent> comps_;
  double noise_;
  std::vector<double> cumulative_;
};

class BananaSource final : public VectorSource {
 public:
  BananaSource(std::size_t dim, double noise) : dim_(dim), noise_(noise) {
    require(dim >= 2, "banana source needs dim >= 2");
  }
  std::size_t dim() const override { return dim_; }
  std::string domain() const override { return "banana"; }
  void sample_into(Rng& rng, std::span<double> out) const override {
    const double z1 = standard_normal(rng);
    const double z2 = standard_normal(rng);
    out[0] = 60.0 * z1;
    out[1] = 25.0 * z2 + 36.0 * (z1 * z1 - 1.0);
    for (std::size_t i = 2; i < dim_; ++i) out[i] = 15.0 * standard_normal(rng);
    for (std::size_t i = 0; i < dim_; ++i) out[i] += noise_ * standard_normal(rng);
  }

 private:
  std::size_t dim_;
  double noise_;
};

// Samples rows of a fixed table (raw vectors or image patches).
class TableSource final : public VectorSource {
 public:
  TableSource(std::size_t dim, std::vector<double> rows, std::string domain)
      : dim_(dim), rows_(std::move(rows)), domain_(std::move(domain)) {
    require(dim_ > 0 && !rows_.empty() && rows_.size() % dim_ == 0,
            "vector table must hold a whole number of rows");
  }
  std::size_t dim() const override { return dim_; }
  std::string domain() const override { return domain_; }
  void sample_into(Rng& rng, std::span<double> out) const override {
    const std::size_t n = rows_.size() / dim_;
    const std::size_t r = static_cast<std::size_t>(rng() % n);
    std::copy_n(rows_.begin() + static_cast<std::ptrdiff_t>(r * dim_), dim_, out.begin());
  }

 private:
  std::size_t dim_;
  std::vector<double> rows_;
  std::string domain_;
};

GrayImage synthetic_image(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synthetic-image"));
  GrayImage img{256, 256, std::vector<unsigned char>(256 * 256)};
  double fx[4], fy[4], ph[4], amp[4];
  for (int k = 0; k < 4; ++k) {
    fx[k] = 0.01 + 0.08 * uniform01(rng);
    fy[k] = 0.01 + 0.08 * uniform01(rng);
    ph[k] = 2.0 * std::numbers::pi * uniform01(rng);
    amp[k] = 20.0 + 30.0 * uniform01(rng);
  }
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      double v = 128.0 + 0.2 * (static_cast<double>(x) - 128.0);
      for (int k = 0; k < 4; ++k) {
        v += amp[k] * std::sin(fx[k] * static_cast<double>(x) + fy[k] * static_cast<double>(y) + ph[k]);
      }
      v += 4.0 * standard_normal(rng);
      img.pixels[y * img.width + x] = static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return img;
}

class ShiftedSource final : public VectorSource {
 public:
  ShiftedSource(std::unique_ptr<VectorSource> base, SourceShift shift, std::uint64_t seed)
      : base_(std::move(base)), shift_(std::move(shift)) {
    const std::size_t n = base_->dim();
    Rng rng(derive_seed(seed, "shift-" + shift_.kind));
    direction_.resize(n);
    double norm = 0.0;
    for (auto& v : direction_) {
      v = standard_normal(rng);
      norm += v * v;
    }
    for (auto& v : direction_) v /= std::sqrt(norm);
    for (std::size_t i = 0; i + 1 < n; i += 2) planes_.push_back({i, i + 1});
    if (n >= 3) planes_.push_back({0, n - 1});
  }

  std::size_t dim() const override { return base_->dim(); }
  std::string domain() const override { return base_->domain() + "+" + shift_.kind; }

  void sample_into(Rng& rng, std::span<double> out) const override {
    base_->sample_into(rng, out);
    const double m = shift_.magnitude;
    if (shift_.kind == "mean_shift") {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += 30.0 * m * direction_[i];
    } else if (shift_.kind == "rotate") {
      const double angle = 0.6 * m;
      const double c = std::cos(angle), s = std::sin(angle);
      for (const auto& [a, b] : planes_) {
        const double xa = out[a], xb = out[b];
        out[a] = c * xa - s * xb;
        out[b] = s * xa + c * xb;
      }
    } else if (shift_.kind == "heavy_tail") {
      // Student-t scale mixture with 4 degrees of freedom, variance matched.
      constexpr double nu = 4.0;
      double chi2 = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double z = standard_normal(rng);
        chi2 += z * z;
      }
      const double factor = std::pow(std::sqrt((nu - 2.0) / chi2), std::min(m, 1.0));
      for (auto& v : out) v *= factor;
    }
  }

 private:
  std::unique_ptr<VectorSource> base_;
  SourceShift shift_;
  std::vector<double> direction_;
  std::vector<std::pair<std::size_t, std::size_t>> planes_;
};

}  // namespace

void SourceBatch::validate() const {
  require(x.rank() == 2, "source batch must be a matrix");
  require(x.all_finite(), "source batch has non-finite entries");
}

SourceBatch VectorSource::sample(Rng& rng, std::size_t count) const {
  SourceBatch batch{ad::Tensor({count, dim()}), domain()};
  for (std::size_t r = 0; r < count; ++r) {
    sample_into(rng, batch.x.values().subspan(r * dim(), dim()));
  }
  return batch;
}

std::vector<MixtureComponent> default_mixture(std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "gauss-mix"));
  const std::size_t rank = std::min<std::size_t>(dim, 4);
  // Orthonormal basis of a random rank-dimensional subspace (Gram-Schmidt).
  std::vector<std::vector<double>> basis;
  while (basis.size() < rank) {
    std::vector<double> v(dim);
    for (auto& e : v) e = standard_normal(rng);
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * b[i];
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& e : v) e /= norm;
    basis.push_back(std::move(v));
  }
  const double mean_spread[4] = {40.0, 30.0, 24.0, 18.0};
  const double within[4] = {45.0, 35.0, 28.0, 20.0};
  std::vector<MixtureComponent> comps;
  for (int k = 0; k < 3; ++k) {
    MixtureComponent c;
    c.weight = 1.0;
    c.mean.assign(dim, 0.0);
    c.loading.assign(dim, std::vector<double>(rank, 0.0));
    for (std::size_t r = 0; r < rank; ++r) {
      const double a = mean_spread[r] * standard_normal(rng);
      const double tilt = 1.0 + 0.3 * (uniform01(rng) - 0.5);
      for (std::size_t i = 0; i < dim; ++i) {
        c.mean[i] += a * basis[r][i];
        c.loading[i][r] = within[r] * tilt * basis[r][i];
      }
    }
    comps.push_back(std::move(c));
  }
  return comps;
}

std::unique_ptr<VectorSource> make_source(const SourceConfig& config) {
  require(config.dim >= 1, "source dim must be >= 1");
  require(config.noise_std >= 0.0, "noise_std must be >= 0");
  if (config.kind == "gauss_mix") {
    auto comps = config.components.empty() ? default_mixture(config.dim, config.seed)
                                           : config.components;
    return std::make_unique<MixtureSource>(config.dim, std::move(comps), config.noise_std);
  }
  if (config.kind == "banana") return std::make_unique<BananaSource>(config.dim, config.noise_std);
  if (config.kind == "raw") {
    return std::make_unique<TableSource>(config.dim, read_raw_vectors(config.path, config.dim), "raw");
  }
  if (config.kind == "patches") {
    require(config.patch_width >= 1 && config.dim % config.patch_width == 0,
            "patch dim must be a multiple of patch_width");
    const GrayImage img = config.path.empty() ? synthetic_image(config.seed) : read_pgm(config.path);
    auto rows = extract_patches(img, config.patch_width, config.dim / config.patch_width);
    for (auto& v : rows) v -= 128.0;
    return std::make_unique<TableSource>(config.dim, std::move(rows), "patches");
  }
  fail(ErrorKind::kInvalidArgument, "unknown source kind '" + config.kind + "'");
}

std::unique_ptr<VectorSource> make_shifted_source(const SourceConfig& config,
                                                  const SourceShift& shift) {
  static const std::set<std::string> kinds{"identity", "mean_shift", "rotate", "heavy_tail",
                                           "reweight"};
  require(kinds.count(shift.kind) != 0, "unknown shift kind '" + shift.kind + "'");
  if (shift.kind == "identity") return make_source(config);
  if (shift.kind == "reweight") {
    require(config.kind == "gauss_mix", "reweight shift needs a gauss_mix source");
    SourceConfig c = config;
    if (c.components.empty()) c.components = default_mixture(c.dim, c.seed);
    c.components.front().weight *= 1.0 + 4.0 * shift.magnitude;
    return make_source(c);
  }
  return std::make_unique<ShiftedSource>(make_source(config), shift, config.seed);
}

SourceConfig source_config_from_json(const nlohmann::json& doc) {
  check_keys(doc, {"kind", "dim", "components", "noise_std", "seed", "path", "patch_width"},
             "source config");
  SourceConfig c;
  try {
    c.kind = doc.value("kind", c.kind);
    c.dim = doc.value("dim", c.dim);
    c.noise_std = doc.value("noise_std", c.noise_std);
    c.seed = doc.value("seed", c.seed);
    c.path = doc.value("path", c.path);
    c.patch_width = doc.value("patch_width", c.patch_width);
    if (doc.contains("components")) {
      for (const auto& comp : doc.at("components")) {
        check_keys(comp, {"weight", "mean", "loading"}, "mixture component");
        MixtureComponent m;
        m.weight = comp.value("weight", 1.0);
        comp.at("mean").get_to(m.mean);
        comp.at("loading").get_to(m.loading);
        c.components.push_back(std::move(m));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed source config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const SourceConfig& config) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& m : config.components) {
    comps.push_back({{"weight", m.weight}, {"mean", m.mean}, {"loading", m.loading}});
  }
  return {{"kind", config.kind},         {"dim", config.dim},   {"components", comps},
          {"noise_std", config.noise_std}, {"seed", config.seed}, {"path", config.path},
          {"patch_width", config.patch_width}};
}

std::vector<double> read_raw_vectors(const std::string& path, std::size_t dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % (dim * sizeof(double)) != 0) {
    fail(ErrorKind::kIo, path + " does not hold whole float64 vectors of dimension " +
                             std::to_string(dim));
  }
  std::vector<double> values(bytes.size() / sizeof(double));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &bytes[i * sizeof(double)], sizeof(bits));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

void write_raw_vectors(const std::string& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    fail(ErrorKind::kIo, "truncated PGM header in " + path);
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") fail(ErrorKind::kIo, path + " is not a PGM file");
  GrayImage img;
  img.width = std::stoul(token());
  img.height = std::stoul(token());
  const unsigned long maxval = std::stoul(token());
  if (maxval == 0 || maxval > 255) fail(ErrorKind::kIo, "only 8-bit PGM is supported");
  img.pixels.resize(img.width * img.height);
  if (magic == "P5") {
    in.get();
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  } else {
    for (auto& p : img.pixels) p = static_cast<unsigned char>(std::stoul(token()));
  }
  if (!in) fail(ErrorKind::kIo, "truncated PGM data in " + path);
  return img;
}

void write_pgm(const std::string& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
}

std::vector<double> extract_patches(const GrayImage& image, std::size_t width, std::size_t height) {
  require(width >= 1 && height >= 1, "patch size must be positive");
  std::vector<double> rows;
  for (std::size_t py = 0; py + height <= image.height; py += height) {
    for (std::size_t px = 0; px + width <= image.width; px += width) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          rows.push_back(image.pixels[(py + y) * image.width + px + x]);
        }
      }
    }
  }
  if (rows.empty()) fail(ErrorKind::kInvalidArgument, "image is smaller than one patch");
  return rows;
}

}  // namespace nicreg
