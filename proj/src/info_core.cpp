#include "nicreg/info_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>

#include <nlohmann/json.hpp>

#include "nicreg/errors.hpp"
#include "numeric.hpp"

namespace nicreg {

namespace {

constexpr std::uint64_t kMaxLogicalSize = std::uint64_t{1} << 62;

void check_subset(const JointTable& t, const AxisList& subset, const char* what) {
  std::set<std::size_t> seen;
  for (std::size_t a : subset) {
    require(a < t.rank(), std::string(what) + ": axis " + std::to_string(a) + " out of range");
    require(seen.insert(a).second, std::string(what) + ": duplicate axis");
  }
}

void check_disjoint(const AxisList& a, const AxisList& b) {
  for (std::size_t x : a) {
    require(std::find(b.begin(), b.end(), x) == b.end(),
            "axis sets must be disjoint");
  }
}

AxisList join(const AxisList& a, const AxisList& b) {
  AxisList out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

void Alphabet::validate() const {
  require(size >= 1, "alphabet size must be >= 1");
  if (labels.empty()) return;
  require(labels.size() == size, "alphabet labels must match its size");
  std::set<std::string> unique(labels.begin(), labels.end());
  require(unique.size() == labels.size(), "alphabet labels must be unique");
}

void JointTable::init_axes(std::vector<Alphabet> axes) {
  require(!axes.empty() && axes.size() <= 3, "joint table needs 1 to 3 axes");
  for (const auto& a : axes) a.validate();
  axes_ = std::move(axes);
  strides_.assign(axes_.size(), 1);
  std::uint64_t total = 1;
  for (std::size_t i = axes_.size(); i-- > 0;) {
    strides_[i] = total;
    if (axes_[i].size > kMaxLogicalSize / total) {
      fail(ErrorKind::kResourceLimit, "joint table axes too large");
    }
    total *= axes_[i].size;
  }
  logical_size_ = total;
}

JointTable::JointTable(std::vector<Alphabet> axes, const std::vector<double>& mass) {
  init_axes(std::move(axes));
  if (logical_size_ > kMaxTableCells) {
    fail(ErrorKind::kResourceLimit, "dense joint table exceeds 2^24 cells");
  }
  require(mass.size() == logical_size_, "mass length does not match axes");
  for (std::size_t i = 0; i < mass.size(); ++i) {
    const double m = mass[i];
    if (!(m >= 0.0) || !std::isfinite(m)) {
      fail(ErrorKind::kInvariantViolation, "negative or non-finite mass");
    }
    if (m > 0.0) cells_.push_back({i, m});
  }
  validate_mass();
}

JointTable JointTable::from_cells(std::vector<Alphabet> axes, std::vector<Cell> cells) {
  JointTable t;
  t.init_axes(std::move(axes));
  if (cells.size() > kMaxTableCells) {
    fail(ErrorKind::kResourceLimit, "sparse joint table exceeds 2^24 cells");
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const Cell& a, const Cell& b) { return a.index < b.index; });
  for (const Cell& c : cells) {
    require(c.index < t.logical_size_, "cell index out of range");
    if (!(c.mass >= 0.0) || !std::isfinite(c.mass)) {
      fail(ErrorKind::kInvariantViolation, "negative or non-finite mass");
    }
    if (c.mass == 0.0) continue;
    if (!t.cells_.empty() && t.cells_.back().index == c.index) {
      t.cells_.back().mass += c.mass;
    } else {
      t.cells_.push_back(c);
    }
  }
  t.validate_mass();
  return t;
}

void JointTable::validate_mass() const {
  detail::CompensatedSum total;
  for (const Cell& c : cells_) total.add(c.mass);
  if (std::abs(total.value() - 1.0) > kMassTolerance) {
    fail(ErrorKind::kInvariantViolation,
         "joint table mass sums to " + std::to_string(total.value()) + ", not 1");
  }
}

std::size_t JointTable::coordinate(std::uint64_t flat, std::size_t axis) const {
  return static_cast<std::size_t>((flat / strides_.at(axis)) % axes_[axis].size);
}

double JointTable::at(const std::vector<std::size_t>& coords) const {
  require(coords.size() == rank(), "coordinate rank mismatch");
  std::uint64_t flat = 0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    require(coords[i] < axes_[i].size, "coordinate out of range");
    flat += coords[i] * strides_[i];
  }
  auto it = std::lower_bound(cells_.begin(), cells_.end(), flat,
                             [](const Cell& c, std::uint64_t f) { return c.index < f; });
  return (it != cells_.end() && it->index == flat) ? it->mass : 0.0;
}

std::vector<double> JointTable::marginal_masses(const AxisList& subset) const {
  check_subset(*this, subset, "marginal");
  std::vector<std::pair<std::uint64_t, double>> keyed;
  keyed.reserve(cells_.size());
  for (const Cell& c : cells_) {
    std::uint64_t key = 0;
    for (std::size_t a : subset) key = key * axes_[a].size + coordinate(c.index, a);
    keyed.emplace_back(key, c.mass);
  }
  // Stable so that equal keys are summed in cell order: results are
  // reproducible bit-for-bit.
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> out;
  for (std::size_t i = 0; i < keyed.size();) {
    detail::CompensatedSum s;
    std::size_t j = i;
    for (; j < keyed.size() && keyed[j].first == keyed[i].first; ++j) s.add(keyed[j].second);
    out.push_back(s.value());
    i = j;
  }
  return out;
}

JointTable JointTable::marginal(const AxisList& subset) const {
  check_subset(*this, subset, "marginal");
  require(!subset.empty(), "marginal over an empty axis set");
  std::vector<Alphabet> axes;
  for (std::size_t a : subset) axes.push_back(axes_[a]);
  std::vector<Cell> cells;
  cells.reserve(cells_.size());
  for (const Cell& c : cells_) {
    std::uint64_t key = 0;
    for (std::size_t a : subset) key = key * axes_[a].size + coordinate(c.index, a);
    cells.push_back({key, c.mass});
  }
  return from_cells(std::move(axes), std::move(cells));
}

std::vector<double> JointTable::dense() const {
  if (logical_size_ > kMaxTableCells) {
    fail(ErrorKind::kResourceLimit, "dense view exceeds 2^24 cells");
  }
  std::vector<double> out(logical_size_, 0.0);
  for (const Cell& c : cells_) out[c.index] = c.mass;
  return out;
}

namespace {

double entropy_of_masses(const std::vector<double>& masses) {
  detail::CompensatedSum h;
  for (double p : masses) {
    if (p > 0.0) h.add(-p * std::log2(p));
  }
  return h.value();
}

}  // namespace

double entropy_of(const std::vector<double>& pmf) {
  detail::CompensatedSum total;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      fail(ErrorKind::kInvariantViolation, "negative or non-finite probability");
    }
    total.add(p);
  }
  if (std::abs(total.value() - 1.0) > kMassTolerance) {
    fail(ErrorKind::kInvariantViolation, "pmf does not sum to 1");
  }
  return entropy_of_masses(pmf);
}

double entropy(const JointTable& t, const AxisList& subset) {
  require(!subset.empty(), "entropy: axis subset must be non-empty");
  return entropy_of_masses(t.marginal_masses(subset));
}

double conditional_entropy(const JointTable& t, const AxisList& target, const AxisList& given) {
  require(!target.empty(), "conditional_entropy: target axes must be non-empty");
  check_subset(t, target, "conditional_entropy");
  check_subset(t, given, "conditional_entropy");
  check_disjoint(target, given);
  if (given.empty()) return entropy(t, target);
  return entropy(t, join(target, given)) - entropy(t, given);
}

double mutual_information(const JointTable& t, const AxisList& a, const AxisList& b) {
  require(!a.empty() && !b.empty(), "mutual_information: axis sets must be non-empty");
  check_subset(t, a, "mutual_information");
  check_subset(t, b, "mutual_information");
  check_disjoint(a, b);
  return entropy(t, a) - conditional_entropy(t, a, b);
}

nlohmann::json to_json(const JointTable& t) {
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& a : t.axes()) sizes.push_back(a.size);
  return {{"axes", sizes}, {"mass", t.dense()}};
}

JointTable joint_table_from_json(const nlohmann::json& doc) {
  try {
    std::vector<Alphabet> axes;
    for (const auto& s : doc.at("axes")) axes.push_back(Alphabet::of_size(s.get<std::size_t>()));
    return JointTable(std::move(axes), doc.at("mass").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed joint table JSON: ") + e.what());
  }
}

}  // namespace nicreg
