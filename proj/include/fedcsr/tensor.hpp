#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedcsr {

// All activations are stored as 2-D row-major matrices; a batch×T×d tensor is
// laid out as (batch·T)×d with the sequence index varying fastest.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Matrix& m);

/// Ordered collection of named parameter tensors.
///
/// Insertion order is preserved so that iteration (aggregation, checkpointing,
/// optimizer state) is deterministic.
class NamedTensors {
 public:
  using Entry = std::pair<std::string, Matrix>;

  Matrix& add(std::string name, Matrix value);

  [[nodiscard]] bool contains(const std::string& name) const;
  Matrix& at(const std::string& name);
  [[nodiscard]] const Matrix& at(const std::string& name) const;

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  [[nodiscard]] std::size_t num_scalars() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }

  /// Same names in the same order with the same shapes.
  [[nodiscard]] bool same_layout(const NamedTensors& other) const;

  /// Throws ShapeError naming the first mismatch.
  void require_same_layout(const NamedTensors& other, const std::string& context) const;

  [[nodiscard]] NamedTensors zeros_like() const;

  /// Copies the entries whose names start with `prefix` (prefix stripped).
  [[nodiscard]] NamedTensors with_prefix_stripped(const std::string& prefix) const;

  /// Appends all entries of `other` with `prefix` prepended to their names.
  void merge(const NamedTensors& other, const std::string& prefix);

  [[nodiscard]] bool all_finite() const;

  friend bool operator==(const NamedTensors& a, const NamedTensors& b);

 private:
  std::vector<Entry> entries_;
};

}  // namespace fedcsr
