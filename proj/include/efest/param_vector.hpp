#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace efest {

/// Shape of a feedforward network: input size, hidden sizes, class count.
struct Layout {
  std::vector<std::uint32_t> dims;

  std::size_t param_count() const;
  std::size_t num_layers() const { return dims.empty() ? 0 : dims.size() - 1; }
  std::uint32_t input_dim() const { return dims.front(); }
  std::uint32_t num_classes() const { return dims.back(); }
  /// Offset of layer `l`'s first parameter (layers are 0-based, input excluded).
  std::size_t layer_offset(std::size_t l) const;

  /// Throws Configuration unless dims has length >= 2, no zero entries, final dim >= 2.
  void validate() const;

  friend bool operator==(const Layout&, const Layout&) = default;
};

/// Flat parameter-space vector (weights, deltas, gradients, GradSums).
///
/// Canonical ordering: neurons layer by layer, each neuron contributing its
/// incoming weights in input-index order followed by its bias. Arithmetic
/// between two vectors throws Errc::Layout when their layouts differ.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(Layout layout, std::vector<double> values);

  static ParamVector zeros(const Layout& layout);

  const Layout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double factor);

  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  Layout layout_;
  std::vector<double> values_;
};

ParamVector operator+(ParamVector a, const ParamVector& b);
ParamVector operator-(ParamVector a, const ParamVector& b);
ParamVector operator*(double factor, ParamVector v);

double dot(const ParamVector& a, const ParamVector& b);
double norm(const ParamVector& v);

/// after - before, elementwise.
ParamVector param_delta(const ParamVector& before, const ParamVector& after);

void require_same_layout(const ParamVector& a, const ParamVector& b, const char* context);

}  // namespace efest
