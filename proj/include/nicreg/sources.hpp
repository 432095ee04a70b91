#pragma once

// Vector sources for desk-scale training: seeded synthetic distributions,
// raw float64 vector files and 8-bit PGM patch extraction, plus the
// distribution shifts used by the generalization study.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nicreg/diff_engine.hpp"
#include "nicreg/rng.hpp"

namespace nicreg {

// A batch of N-dimensional vectors, one per row.
struct SourceBatch {
  ad::Tensor x;
  std::string domain = "base";

  std::size_t size() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
  void validate() const;
};

struct MixtureComponent {
  double weight = 1.0;
  std::vector<double> mean;
  // dim x k loading matrix (row-major rows); sample = mean + loading * z.
  std::vector<std::vector<double>> loading;
};

struct SourceConfig {
  std::string kind = "gauss_mix";  // gauss_mix | banana | patches | raw
  std::size_t dim = 8;
  std::vector<MixtureComponent> components;  // empty: generated from seed
  double noise_std = 3.0;                    // isotropic noise added to every sample
  std::uint64_t seed = 1;
  std::string path;                          // patches (PGM) or raw (float64 vectors)
  std::size_t patch_width = 4;               // patches: dim = width * height
};

SourceConfig source_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SourceConfig& config);

// Desk analogues of the out-of-domain test sets.
struct SourceShift {
  std::string kind = "identity";  // identity | mean_shift | rotate | heavy_tail | reweight
  double magnitude = 1.0;
};

class VectorSource {
 public:
  virtual ~VectorSource() = default;
  virtual std::size_t dim() const = 0;
  virtual std::string domain() const = 0;
  virtual void sample_into(Rng& rng, std::span<double> out) const = 0;

  SourceBatch sample(Rng& rng, std::size_t count) const;
};

std::unique_ptr<VectorSource> make_source(const SourceConfig& config);
std::unique_ptr<VectorSource> make_shifted_source(const SourceConfig& config,
                                                  const SourceShift& shift);

// Default component set for a gauss_mix source with no explicit components.
std::vector<MixtureComponent> default_mixture(std::size_t dim, std::uint64_t seed);

// Headerless little-endian float64 vectors of dimension `dim`.
std::vector<double> read_raw_vectors(const std::string& path, std::size_t dim);
void write_raw_vectors(const std::string& path, std::span<const double> values);

// Binary (P5) or ASCII (P2) 8-bit PGM.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<unsigned char> pixels;
};
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);
// All non-overlapping width x height patches, row-major, as flat vectors.
std::vector<double> extract_patches(const GrayImage& image, std::size_t width, std::size_t height);

}  // namespace nicreg
