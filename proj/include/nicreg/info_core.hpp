#pragma once

// Exact Shannon quantities over finite joint distributions. All results are
// in bits; zero-mass cells contribute nothing (0 log 0 = 0).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace nicreg {

inline constexpr double kMassTolerance = 1e-12;
inline constexpr std::uint64_t kMaxTableCells = std::uint64_t{1} << 24;

struct Alphabet {
  std::size_t size = 1;
  std::vector<std::string> labels;  // empty, or exactly `size` unique names

  static Alphabet of_size(std::size_t n) { return Alphabet{n, {}}; }
  void validate() const;
};

using AxisList = std::vector<std::size_t>;

// Joint probability table over one to three finite axes.
//
// Storage is sparse: only nonzero cells are kept, keyed by their row-major
// flat index and sorted by it. A dense construction is capped at
// kMaxTableCells logical cells; a sparse construction is capped at
// kMaxTableCells stored cells. Tables are immutable once built.
class JointTable {
 public:
  struct Cell {
    std::uint64_t index;  // row-major over the axes
    double mass;
  };

  // Dense row-major mass; rejects tables that do not sum to one.
  JointTable(std::vector<Alphabet> axes, const std::vector<double>& mass);

  // Sparse construction; duplicate indices are merged by summation.
  static JointTable from_cells(std::vector<Alphabet> axes, std::vector<Cell> cells);

  std::size_t rank() const noexcept { return axes_.size(); }
  const Alphabet& axis(std::size_t i) const { return axes_.at(i); }
  const std::vector<Alphabet>& axes() const noexcept { return axes_; }
  std::uint64_t logical_size() const noexcept { return logical_size_; }
  const std::vector<Cell>& cells() const noexcept { return cells_; }

  double at(const std::vector<std::size_t>& coords) const;
  std::size_t coordinate(std::uint64_t flat, std::size_t axis) const;

  // Nonzero masses of the marginal over `subset`, ordered by marginal key.
  std::vector<double> marginal_masses(const AxisList& subset) const;

  // Full marginal as a dense table over `subset` (in the given order).
  JointTable marginal(const AxisList& subset) const;

  std::vector<double> dense() const;

 private:
  JointTable() = default;
  void init_axes(std::vector<Alphabet> axes);
  void validate_mass() const;

  std::vector<Alphabet> axes_;
  std::vector<std::uint64_t> strides_;
  std::uint64_t logical_size_ = 0;
  std::vector<Cell> cells_;
};

double entropy(const JointTable& t, const AxisList& subset);
double conditional_entropy(const JointTable& t, const AxisList& target, const AxisList& given);
double mutual_information(const JointTable& t, const AxisList& a, const AxisList& b);

// Entropy of a plain pmf; the pmf must sum to one.
double entropy_of(const std::vector<double>& pmf);

// {"axes": [sizes], "mass": [row-major]}
nlohmann::json to_json(const JointTable& t);
JointTable joint_table_from_json(const nlohmann::json& doc);

}  // namespace nicreg
