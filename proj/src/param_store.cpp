#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nicreg/diff_engine.hpp"
#include "nicreg/errors.hpp"
#include "nicreg/rng.hpp"

namespace nicreg::ad {

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  require(!name.empty(), "parameter name must be non-empty");
  require(!contains(name), "duplicate parameter name " + name);
  const Shape shape = init.shape();
  Parameter p{std::move(init), Tensor(shape, 0.0), Tensor(shape, 0.0), Tensor(shape, 0.0), 0};
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter " + name);
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) {
    for (double& g : p.grad.values()) g = 0.0;
  }
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void adam_step(ParamStore& params, const AdamOptions& options) {
  for (const auto& [name, p] : params.entries()) {
    if (!p.grad.all_finite()) {
      fail(ErrorKind::kTrainingDiverged, "non-finite gradient in parameter " + name);
    }
  }
  for (auto& [name, p] : params.entries()) {
    ++p.step;
    const double t = static_cast<double>(p.step);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      double& m = p.first_moment[i];
      double& v = p.second_moment[i];
      m = options.beta1 * m + (1.0 - options.beta1) * g;
      v = options.beta2 * v + (1.0 - options.beta2) * g * g;
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      p.value[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

namespace {

std::string blob_bytes(const Tensor& t) {
  std::string bytes(t.size() * sizeof(double), '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(&bytes[i * sizeof(double)], &bits, sizeof(bits));
  }
  return bytes;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

void save_checkpoint(const ParamStore& params, const nlohmann::json& header,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t index = 0;
  for (const auto& [name, p] : params.entries()) {
    const std::string file = "t" + std::to_string(index++) + ".bin";
    const std::string bytes = blob_bytes(p.value);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::kIo, "cannot write " + (dir / file).string());
    tensors.push_back({{"name", name},
                       {"shape", p.value.shape()},
                       {"file", file},
                       {"checksum", "fnv1a64:" + hex64(fnv1a64(bytes))}});
  }
  nlohmann::json manifest{{"format", "nicreg-params/1"},
                          {"byte_order", "little"},
                          {"dtype", "float64"},
                          {"header", header},
                          {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
}

ParamStore load_checkpoint(const std::filesystem::path& dir, nlohmann::json* header) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorKind::kIo, "cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "nicreg-params/1") {
    fail(ErrorKind::kIo, "unsupported checkpoint format in " + dir.string());
  }
  ParamStore store;
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<Shape>();
    const auto file = entry.at("file").get<std::string>();
    std::ifstream blob(dir / file, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
    if (bytes.size() != shape_size(shape) * sizeof(double)) {
      fail(ErrorKind::kIo, "tensor blob " + file + " has the wrong size");
    }
    if (entry.at("checksum").get<std::string>() != "fnv1a64:" + hex64(fnv1a64(bytes))) {
      fail(ErrorKind::kIo, "checksum mismatch for tensor " + entry.at("name").get<std::string>());
    }
    std::vector<double> values(shape_size(shape));
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &bytes[i * sizeof(double)], sizeof(bits));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      values[i] = std::bit_cast<double>(bits);
    }
    store.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
  }
  if (header != nullptr) *header = manifest.at("header");
  return store;
}

}  // namespace nicreg::ad
