#include "nicreg/coding_models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "nicreg/errors.hpp"
#include "numeric.hpp"

namespace nicreg {

namespace {

void validate_source(const std::vector<double>& source) {
  require(!source.empty(), "source alphabet must be non-empty");
  detail::CompensatedSum total;
  for (double p : source) {
    require(p >= 0.0 && std::isfinite(p), "source probabilities must be finite and >= 0");
    total.add(p);
  }
  if (std::abs(total.value() - 1.0) > kMassTolerance) {
    fail(ErrorKind::kInvariantViolation, "source pmf does not sum to 1");
  }
}

void validate_total_map(const std::vector<std::size_t>& map, std::size_t domain,
                        std::size_t codomain, const char* name) {
  require(map.size() == domain, std::string(name) + " must be defined on every symbol");
  for (std::size_t v : map) {
    require(v < codomain, std::string(name) + " maps outside its codomain");
  }
}

void check_cap(std::size_t x, std::size_t u, std::size_t xhat) {
  const double cells = static_cast<double>(x) * static_cast<double>(u) * static_cast<double>(xhat);
  if (cells > static_cast<double>(kMaxTableCells)) {
    fail(ErrorKind::kResourceLimit, "induced joint exceeds 2^24 cells");
  }
}

IdentityCheck make_check(std::string name, double lhs, double rhs) {
  IdentityCheck c{std::move(name), lhs, rhs, std::abs(lhs - rhs), false};
  c.pass = c.gap <= kIdentityTolerance;
  return c;
}

// Every Shannon quantity the identity reports need, from one joint.
struct CodecQuantities {
  double h_x, h_u, h_xhat;
  double h_x_given_xhat, h_u_given_xhat, h_xhat_given_x, h_xhat_given_u;
  double i_x_xhat;

  explicit CodecQuantities(const JointTable& t)
      : h_x(entropy(t, {kAxisX})),
        h_u(entropy(t, {kAxisU})),
        h_xhat(entropy(t, {kAxisXhat})),
        h_x_given_xhat(conditional_entropy(t, {kAxisX}, {kAxisXhat})),
        h_u_given_xhat(conditional_entropy(t, {kAxisU}, {kAxisXhat})),
        h_xhat_given_x(conditional_entropy(t, {kAxisXhat}, {kAxisX})),
        h_xhat_given_u(conditional_entropy(t, {kAxisXhat}, {kAxisU})),
        i_x_xhat(mutual_information(t, {kAxisX}, {kAxisXhat})) {}
};

std::vector<double> dirichlet_one(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& v : w) {
    v = -std::log1p(-uniform01(rng));
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {  // inclusive
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

// Random surjection from `domain` symbols onto `codomain` symbols.
std::vector<std::size_t> random_surjection(Rng& rng, std::size_t domain, std::size_t codomain) {
  std::vector<std::size_t> order(domain);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> map(domain);
  for (std::size_t i = 0; i < domain; ++i) {
    map[order[i]] = i < codomain ? i : uniform_index(rng, 0, codomain - 1);
  }
  return map;
}

}  // namespace

void DirectCodecSpec::validate() const {
  validate_source(source);
  require(!codebook.empty(), "codebook must be non-empty");
  validate_total_map(quantizer, source.size(), codebook.size(), "quantizer");
  std::set<double> distinct(codebook.begin(), codebook.end());
  require(distinct.size() == codebook.size(), "codebook must be injective");
  for (double c : codebook) require(std::isfinite(c), "codebook values must be finite");
}

void TransformCodecSpec::validate() const {
  validate_source(source);
  require(!quantizer.empty(), "latent alphabet must be non-empty");
  require(!dequantizer.empty(), "index alphabet must be non-empty");
  require(!synthesis.empty(), "dequantized alphabet must be non-empty");
  require(reconstruction_size >= 1, "reconstruction alphabet must be non-empty");
  validate_total_map(analysis, source.size(), quantizer.size(), "analysis");
  validate_total_map(quantizer, quantizer.size(), dequantizer.size(), "quantizer");
  validate_total_map(dequantizer, dequantizer.size(), synthesis.size(), "dequantizer");
  validate_total_map(synthesis, synthesis.size(), reconstruction_size, "synthesis");
  std::set<std::size_t> distinct(dequantizer.begin(), dequantizer.end());
  require(distinct.size() == dequantizer.size(), "dequantizer must be injective");
}

bool IdentityReport::all_pass() const {
  return std::all_of(identities.begin(), identities.end(),
                     [](const IdentityCheck& c) { return c.pass; });
}

const IdentityCheck& IdentityReport::find(const std::string& name) const {
  for (const auto& c : identities) {
    if (c.name == name) return c;
  }
  fail(ErrorKind::kInvalidArgument, "no identity named " + name);
}

JointTable induced_joint(const DirectCodecSpec& spec) {
  spec.validate();
  const std::size_t m = spec.codebook.size();
  check_cap(spec.source.size(), m, m);
  // Xhat symbols are the distinct reconstruction values in increasing order.
  std::vector<double> sorted = spec.codebook;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> xhat_of_u(m);
  for (std::size_t u = 0; u < m; ++u) {
    xhat_of_u[u] = static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), spec.codebook[u]) - sorted.begin());
  }
  std::vector<JointTable::Cell> cells;
  for (std::size_t x = 0; x < spec.source.size(); ++x) {
    const std::size_t u = spec.quantizer[x];
    cells.push_back({(x * m + u) * m + xhat_of_u[u], spec.source[x]});
  }
  return JointTable::from_cells(
      {Alphabet::of_size(spec.source.size()), Alphabet::of_size(m), Alphabet::of_size(m)},
      std::move(cells));
}

JointTable induced_joint(const TransformCodecSpec& spec) {
  spec.validate();
  const std::size_t m = spec.index_count();
  const std::size_t r = spec.reconstruction_size;
  check_cap(spec.source.size(), m, r);
  std::vector<JointTable::Cell> cells;
  for (std::size_t x = 0; x < spec.source.size(); ++x) {
    const std::size_t u = spec.quantizer[spec.analysis[x]];
    const std::size_t xhat = spec.synthesis[spec.dequantizer[u]];
    cells.push_back({(x * m + u) * r + xhat, spec.source[x]});
  }
  return JointTable::from_cells(
      {Alphabet::of_size(spec.source.size()), Alphabet::of_size(m), Alphabet::of_size(r)},
      std::move(cells));
}

IdentityReport verify_direct_identities(const DirectCodecSpec& spec) {
  const CodecQuantities q(induced_joint(spec));
  IdentityReport r;
  r.identities = {
      make_check("I(X;Xhat)=H(Xhat)", q.i_x_xhat, q.h_xhat),
      make_check("H(Xhat)=H(U)", q.h_xhat, q.h_u),
      make_check("H(U)=I(X;Xhat)", q.h_u, q.i_x_xhat),
      make_check("H(U)=H(X)-H(X|Xhat)", q.h_u, q.h_x - q.h_x_given_xhat),
      make_check("H(Xhat|X)=0", q.h_xhat_given_x, 0.0),
      make_check("H(Xhat|U)=0", q.h_xhat_given_u, 0.0),
      make_check("H(U|Xhat)=0", q.h_u_given_xhat, 0.0),
  };
  r.residual_u_given_xhat = q.h_u_given_xhat;
  return r;
}

IdentityReport transform_identities(const JointTable& joint, const JointTable& rhs_joint) {
  const CodecQuantities lhs(joint);
  const CodecQuantities rhs(rhs_joint);
  IdentityReport r;
  r.identities = {
      make_check("I(X;Xhat)=H(Xhat)", lhs.i_x_xhat, rhs.h_xhat),
      make_check("H(Xhat)=H(U)-H(U|Xhat)", lhs.h_xhat, rhs.h_u - rhs.h_u_given_xhat),
      make_check("H(U)=I(X;Xhat)+H(U|Xhat)", lhs.h_u, rhs.i_x_xhat + rhs.h_u_given_xhat),
      make_check("H(U)=H(X)-H(X|Xhat)+H(U|Xhat)", lhs.h_u,
                 rhs.h_x - rhs.h_x_given_xhat + rhs.h_u_given_xhat),
      make_check("H(Xhat|X)=0", lhs.h_xhat_given_x, 0.0),
      make_check("H(Xhat|U)=0", lhs.h_xhat_given_u, 0.0),
  };
  r.residual_u_given_xhat = lhs.h_u_given_xhat;
  return r;
}

IdentityReport transform_identities(const JointTable& joint) {
  return transform_identities(joint, joint);
}

IdentityReport verify_transform_identities(
    const TransformCodecSpec& spec, const std::function<void(TransformCodecSpec&)>& fault) {
  const JointTable joint = induced_joint(spec);
  if (!fault) return transform_identities(joint);
  TransformCodecSpec mutated = spec;
  fault(mutated);
  return transform_identities(joint, induced_joint(mutated));
}

DirectCodecSpec random_direct_spec(Rng& rng, std::size_t max_alphabet) {
  require(max_alphabet >= 1, "max_alphabet must be >= 1");
  const std::size_t n = uniform_index(rng, 1, max_alphabet);
  const std::size_t m = uniform_index(rng, 1, n);
  DirectCodecSpec spec;
  spec.source = dirichlet_one(rng, n);
  spec.quantizer = random_surjection(rng, n, m);
  std::vector<std::size_t> values(m);
  std::iota(values.begin(), values.end(), 0);
  std::shuffle(values.begin(), values.end(), rng);
  for (std::size_t v : values) spec.codebook.push_back(0.25 + 1.5 * static_cast<double>(v));
  return spec;
}

TransformCodecSpec random_transform_spec(Rng& rng, std::size_t max_alphabet) {
  require(max_alphabet >= 1, "max_alphabet must be >= 1");
  const std::size_t n = uniform_index(rng, 1, max_alphabet);
  const std::size_t ny = uniform_index(rng, 1, 2 * n);
  const std::size_t m = uniform_index(rng, 1, ny);
  const std::size_t nyhat = m + uniform_index(rng, 0, 4);

  TransformCodecSpec spec;
  spec.source = dirichlet_one(rng, n);
  spec.analysis.resize(n);
  for (auto& y : spec.analysis) y = uniform_index(rng, 0, ny - 1);
  spec.quantizer = random_surjection(rng, ny, m);

  std::vector<std::size_t> slots(nyhat);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  spec.dequantizer.assign(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(m));

  // Walk the indices in order, merging each with its predecessor w.p. 1/2.
  spec.synthesis.assign(nyhat, 0);
  std::size_t cls = 0;
  for (std::size_t u = 0; u < m; ++u) {
    if (u > 0 && uniform01(rng) >= 0.5) ++cls;
    spec.synthesis[spec.dequantizer[u]] = cls;
  }
  spec.reconstruction_size = cls + 1;
  for (std::size_t s = m; s < nyhat; ++s) {
    spec.synthesis[slots[s]] = uniform_index(rng, 0, cls);
  }
  return spec;
}

std::string BatchEntry::kind() const {
  return std::holds_alternative<DirectCodecSpec>(spec) ? "direct" : "transform";
}

nlohmann::json BatchEntry::spec_json() const {
  auto doc = std::visit([](const auto& s) { return to_json(s); }, spec);
  doc["kind"] = kind();
  doc["spec_seed"] = spec_seed;
  return doc;
}

std::vector<BatchEntry> verify_random_batch(const BatchOptions& options) {
  require(options.count >= 1, "count must be >= 1");
  const std::size_t total = 2 * options.count;
  std::vector<BatchEntry> entries(total);

  const auto corrupt = [](TransformCodecSpec& s) {
    std::fill(s.synthesis.begin(), s.synthesis.end(), 0);
  };
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < total; i += step) {
      const bool direct = i < options.count;
      const std::size_t k = direct ? i : i - options.count;
      BatchEntry& e = entries[i];
      e.spec_seed = derive_seed(options.seed, (direct ? "direct-" : "transform-") + std::to_string(k));
      Rng rng(e.spec_seed);
      if (direct) {
        auto s = random_direct_spec(rng, options.max_alphabet);
        e.report = verify_direct_identities(s);
        e.spec = std::move(s);
      } else {
        auto s = random_transform_spec(rng, options.max_alphabet);
        e.report = options.inject_fault ? verify_transform_identities(s, corrupt)
                                        : verify_transform_identities(s);
        e.spec = std::move(s);
      }
    }
  };
  const unsigned jobs = std::max(1u, options.jobs);
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  }
  std::stable_sort(entries.begin(), entries.end(), [](const BatchEntry& a, const BatchEntry& b) {
    if (a.spec.index() != b.spec.index()) return a.spec.index() < b.spec.index();
    return a.spec_seed < b.spec_seed;
  });
  return entries;
}

namespace {

struct Candidate {
  double bits;
  double distortion;
  std::vector<std::size_t> assignment;
};

class ProbeSearch {
 public:
  ProbeSearch(const std::vector<double>& p, const std::vector<double>& d, std::size_t r,
              double max_d)
      : p_(p), d_(d), n_(p.size()), r_(r), max_d_(max_d) {}

  // Gives each cell of `labels` its best reconstruction, then scores the
  // resulting deterministic codec. Cells sharing a reconstruction merge.
  void consider_partition(const std::vector<std::size_t>& labels, std::size_t cells) {
    std::vector<std::size_t> recon(cells, 0);
    for (std::size_t c = 0; c < cells; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < r_; ++j) {
        double cost = 0.0;
        for (std::size_t x = 0; x < n_; ++x) {
          if (labels[x] == c) cost += p_[x] * d_[x * r_ + j];
        }
        if (cost < best) {
          best = cost;
          recon[c] = j;
        }
      }
    }
    std::vector<std::size_t> assignment(n_);
    for (std::size_t x = 0; x < n_; ++x) assignment[x] = recon[labels[x]];
    consider_assignment(assignment);
  }

  void consider_assignment(const std::vector<std::size_t>& assignment) {
    ++evaluated_;
    double dist = 0.0;
    std::vector<double> q(r_, 0.0);
    for (std::size_t x = 0; x < n_; ++x) {
      dist += p_[x] * d_[x * r_ + assignment[x]];
      q[assignment[x]] += p_[x];
    }
    if (dist > max_d_ + 1e-12) return;
    double bits = 0.0;
    for (double v : q) {
      if (v > 0.0) bits -= v * std::log2(v);
    }
    bits = std::max(bits, 0.0);
    if (!best_ || bits < best_->bits - 1e-15) best_ = Candidate{bits, dist, assignment};
  }

  // Greedy pairwise merging of reconstruction cells while feasible.
  void refine() {
    if (!best_) return;
    bool improved = true;
    while (improved) {
      improved = false;
      const Candidate base = *best_;
      std::set<std::size_t> used(base.assignment.begin(), base.assignment.end());
      for (std::size_t a : used) {
        for (std::size_t b : used) {
          if (a >= b) continue;
          std::vector<std::size_t> labels(n_);
          for (std::size_t x = 0; x < n_; ++x) {
            const std::size_t j = base.assignment[x] == b ? a : base.assignment[x];
            labels[x] = static_cast<std::size_t>(std::distance(used.begin(), used.find(j)));
          }
          consider_partition(labels, used.size());
        }
      }
      improved = best_->bits < base.bits - 1e-15;
    }
  }

  const std::optional<Candidate>& best() const { return best_; }
  std::size_t evaluated() const { return evaluated_; }

 private:
  const std::vector<double>& p_;
  const std::vector<double>& d_;
  std::size_t n_, r_;
  double max_d_;
  std::optional<Candidate> best_;
  std::size_t evaluated_ = 0;
};

}  // namespace

RateDistortionProbe min_mutual_information_probe(const std::vector<double>& source,
                                                 const std::vector<double>& distortion,
                                                 std::size_t reconstruction_size,
                                                 double max_distortion, std::uint64_t seed) {
  validate_source(source);
  const std::size_t n = source.size();
  const std::size_t r = reconstruction_size;
  require(r >= 1, "reconstruction alphabet must be non-empty");
  require(n * r <= 4096, "probe limited to |X|*|Xhat| <= 4096");
  require(distortion.size() == n * r, "distortion matrix must be |X| x |Xhat|");
  for (double v : distortion) require(std::isfinite(v) && v >= 0.0, "distortion must be finite and >= 0");

  double floor = 0.0;
  for (std::size_t x = 0; x < n; ++x) {
    floor += source[x] * *std::min_element(distortion.begin() + static_cast<std::ptrdiff_t>(x * r),
                                           distortion.begin() + static_cast<std::ptrdiff_t>((x + 1) * r));
  }
  if (floor > max_distortion + 1e-12) {
    fail(ErrorKind::kNoFeasibleCodec, "no deterministic codec reaches distortion " +
                                          std::to_string(max_distortion));
  }

  ProbeSearch search(source, distortion, r, max_distortion);
  Rng rng(derive_seed(seed, "rd-probe"));

  // Grid family 1: nearest-neighbour quantizers for codebook subsets.
  const std::size_t subset_grid = r <= 12 ? (std::size_t{1} << r) - 1 : 4096;
  for (std::size_t s = 1; s <= subset_grid; ++s) {
    std::vector<bool> in(r, false);
    if (r <= 12) {
      for (std::size_t j = 0; j < r; ++j) in[j] = (s >> j) & 1U;
    } else {
      for (std::size_t j = 0; j < r; ++j) in[j] = uniform01(rng) < 0.5;
      in[rng() % r] = true;
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t x = 0; x < n; ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < r; ++j) {
        if (in[j] && distortion[x * r + j] < best) {
          best = distortion[x * r + j];
          assignment[x] = j;
        }
      }
    }
    search.consider_assignment(assignment);
  }

  // Grid family 2: partitions into runs of consecutive source symbols.
  const std::size_t cut_grid = n <= 16 ? (std::size_t{1} << (n - 1)) : 8192;
  for (std::size_t cuts = 0; cuts < cut_grid; ++cuts) {
    const std::uint64_t mask = n <= 16 ? cuts : rng();
    std::vector<std::size_t> labels(n);
    std::size_t cell = 0;
    for (std::size_t x = 0; x < n; ++x) {
      if (x > 0 && ((mask >> ((x - 1) % 64)) & 1U)) ++cell;
      labels[x] = cell;
    }
    search.consider_partition(labels, cell + 1);
  }

  // Randomized family: arbitrary labelings into k cells.
  for (int trial = 0; trial < 4000; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng() % n);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = static_cast<std::size_t>(rng() % k);
    search.consider_partition(labels, k);
  }

  search.refine();
  const auto& best = search.best();
  if (!best) {
    fail(ErrorKind::kNoFeasibleCodec, "search found no codec meeting the distortion bound");
  }
  return RateDistortionProbe{best->bits, best->distortion, best->assignment, true,
                             search.evaluated()};
}

nlohmann::json to_json(const DirectCodecSpec& spec) {
  return {{"source", spec.source}, {"quantizer", spec.quantizer}, {"codebook", spec.codebook}};
}

nlohmann::json to_json(const TransformCodecSpec& spec) {
  return {{"source", spec.source},
          {"analysis", spec.analysis},
          {"quantizer", spec.quantizer},
          {"dequantizer", spec.dequantizer},
          {"synthesis", spec.synthesis},
          {"reconstruction_size", spec.reconstruction_size}};
}

nlohmann::json to_json(const IdentityReport& report) {
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& c : report.identities) {
    ids.push_back({{"name", c.name}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"gap", c.gap}, {"pass", c.pass}});
  }
  return {{"identities", ids}, {"residual_H_U_given_Xhat", report.residual_u_given_xhat}};
}

DirectCodecSpec direct_spec_from_json(const nlohmann::json& doc) {
  try {
    DirectCodecSpec s;
    doc.at("source").get_to(s.source);
    doc.at("quantizer").get_to(s.quantizer);
    doc.at("codebook").get_to(s.codebook);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed direct codec spec: ") + e.what());
  }
}

TransformCodecSpec transform_spec_from_json(const nlohmann::json& doc) {
  try {
    TransformCodecSpec s;
    doc.at("source").get_to(s.source);
    doc.at("analysis").get_to(s.analysis);
    doc.at("quantizer").get_to(s.quantizer);
    doc.at("dequantizer").get_to(s.dequantizer);
    doc.at("synthesis").get_to(s.synthesis);
    doc.at("reconstruction_size").get_to(s.reconstruction_size);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed transform codec spec: ") + e.what());
  }
}

}  // namespace nicreg
