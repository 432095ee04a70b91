#pragma once

// Finite-alphabet direct and transform coding models as deterministic maps,
// the joint law each induces over (X, U, Xhat), and enumeration-exact checks
// of the entropy identities that tie latent entropy to conditional source
// entropy.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nicreg/info_core.hpp"
#include "nicreg/rng.hpp"

namespace nicreg {

inline constexpr std::size_t kAxisX = 0;
inline constexpr std::size_t kAxisU = 1;
inline constexpr std::size_t kAxisXhat = 2;

inline constexpr double kIdentityTolerance = 1e-10;

// Quantizer X -> U followed by an injective codebook U -> Xhat.
struct DirectCodecSpec {
  std::vector<double> source;          // pmf over X
  std::vector<std::size_t> quantizer;  // x -> u, one entry per source symbol
  std::vector<double> codebook;        // u -> reconstruction value, distinct values

  std::size_t index_count() const { return codebook.size(); }
  void validate() const;
};

// Analysis X -> Y, quantizer Y -> U, injective dequantizer U -> Yhat and a
// synthesis Yhat -> Xhat that may merge indices.
struct TransformCodecSpec {
  std::vector<double> source;
  std::vector<std::size_t> analysis;
  std::vector<std::size_t> quantizer;
  std::vector<std::size_t> dequantizer;
  std::vector<std::size_t> synthesis;
  std::size_t reconstruction_size = 1;

  std::size_t index_count() const { return dequantizer.size(); }
  void validate() const;
};

struct IdentityCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;
  bool pass = false;
};

struct IdentityReport {
  std::vector<IdentityCheck> identities;
  double residual_u_given_xhat = 0.0;  // H(U|Xhat)

  bool all_pass() const;
  const IdentityCheck& find(const std::string& name) const;
};

JointTable induced_joint(const DirectCodecSpec& spec);
JointTable induced_joint(const TransformCodecSpec& spec);

IdentityReport verify_direct_identities(const DirectCodecSpec& spec);

// Transform-coding identities on an (X, U, Xhat) joint of any deterministic
// codec. The two-argument form takes right-hand sides from `rhs_joint`.
IdentityReport transform_identities(const JointTable& joint);
IdentityReport transform_identities(const JointTable& joint, const JointTable& rhs_joint);

// `fault` is a test hook: when set, it mutates a copy of the spec after the
// left-hand sides are evaluated, so the right-hand sides see a different
// codec. A correct verifier must then report failures.
IdentityReport verify_transform_identities(
    const TransformCodecSpec& spec,
    const std::function<void(TransformCodecSpec&)>& fault = {});

// Generators: Dirichlet(1) source, random surjective quantizer, and (for
// transform specs) a synthesis that merges each adjacent index pair with
// probability 1/2.
DirectCodecSpec random_direct_spec(Rng& rng, std::size_t max_alphabet);
TransformCodecSpec random_transform_spec(Rng& rng, std::size_t max_alphabet);

struct BatchEntry {
  std::uint64_t spec_seed = 0;
  std::variant<DirectCodecSpec, TransformCodecSpec> spec;
  IdentityReport report;

  std::string kind() const;  // "direct" | "transform"
  nlohmann::json spec_json() const;
};

struct BatchOptions {
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  std::size_t max_alphabet = 64;
  unsigned jobs = 1;
  bool inject_fault = false;  // corrupts synthesis maps mid-check
};

// Verifies `count` random direct specs and `count` random transform specs.
// Entries are sorted by (kind, spec seed) so results do not depend on the
// number of workers.
std::vector<BatchEntry> verify_random_batch(const BatchOptions& options);

struct RateDistortionProbe {
  double bits = 0.0;  // upper bound on the minimum of I(X;Xhat)
  double expected_distortion = 0.0;
  std::vector<std::size_t> assignment;  // x -> reconstruction column
  bool upper_bound = true;
  std::size_t candidates_evaluated = 0;
};

// Searches deterministic quantizer/codebook pairs for the smallest I(X;Xhat)
// with E[d(X,Xhat)] <= max_distortion. `distortion` is row-major
// |X| x |Xhat|. Throws kNoFeasibleCodec when no codec meets the constraint.
RateDistortionProbe min_mutual_information_probe(const std::vector<double>& source,
                                                 const std::vector<double>& distortion,
                                                 std::size_t reconstruction_size,
                                                 double max_distortion,
                                                 std::uint64_t seed = 1);

nlohmann::json to_json(const DirectCodecSpec& spec);
nlohmann::json to_json(const TransformCodecSpec& spec);
nlohmann::json to_json(const IdentityReport& report);
DirectCodecSpec direct_spec_from_json(const nlohmann::json& doc);
TransformCodecSpec transform_spec_from_json(const nlohmann::json& doc);

}  // namespace nicreg
