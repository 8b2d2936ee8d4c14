#include "fedcsr/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace fedcsr {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Matrix& NamedTensors::add(std::string name, Matrix value) {
  if (contains(name)) throw ConfigError("duplicate tensor name: " + name);
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

bool NamedTensors::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.first == name; });
}

Matrix& NamedTensors::at(const std::string& name) {
  for (auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw std::out_of_range("no tensor named " + name);
}

const Matrix& NamedTensors::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw std::out_of_range("no tensor named " + name);
}

std::size_t NamedTensors::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.second.size());
  return n;
}

bool NamedTensors::same_layout(const NamedTensors& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.first != b.first || a.second.rows() != b.second.rows() ||
        a.second.cols() != b.second.cols()) {
      return false;
    }
  }
  return true;
}

void NamedTensors::require_same_layout(const NamedTensors& other,
                                       const std::string& context) const {
  if (entries_.size() != other.entries_.size()) {
    throw ShapeError(context + ": tensor count " + std::to_string(entries_.size()) + " vs " +
                     std::to_string(other.entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.first != b.first) {
      throw ShapeError(context + ": tensor name " + a.first + " vs " + b.first);
    }
    if (a.second.rows() != b.second.rows() || a.second.cols() != b.second.cols()) {
      throw ShapeError(context + ": tensor " + a.first + " shape " + shape_string(a.second) +
                       " vs " + shape_string(b.second));
    }
  }
}

NamedTensors NamedTensors::zeros_like() const {
  NamedTensors out;
  for (const auto& e : entries_) {
    out.add(e.first, Matrix::Zero(e.second.rows(), e.second.cols()));
  }
  return out;
}

NamedTensors NamedTensors::with_prefix_stripped(const std::string& prefix) const {
  NamedTensors out;
  for (const auto& e : entries_) {
    if (e.first.rfind(prefix, 0) == 0) out.add(e.first.substr(prefix.size()), e.second);
  }
  return out;
}

void NamedTensors::merge(const NamedTensors& other, const std::string& prefix) {
  for (const auto& e : other.entries_) add(prefix + e.first, e.second);
}

bool NamedTensors::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const Entry& e) { return e.second.allFinite(); });
}

bool operator==(const NamedTensors& a, const NamedTensors& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].second != b.entries_[i].second) return false;
  }
  return true;
}

}  // namespace fedcsr
