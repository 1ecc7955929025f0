#include "efest/param_vector.hpp"

#include <cmath>
#include <string>

#include "efest/error.hpp"

namespace efest {

std::size_t Layout::param_count() const {
  std::size_t total = 0;
  for (std::size_t l = 1; l < dims.size(); ++l)
    total += (static_cast<std::size_t>(dims[l - 1]) + 1) * dims[l];
  return total;
}

std::size_t Layout::layer_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < l; ++i) off += (static_cast<std::size_t>(dims[i]) + 1) * dims[i + 1];
  return off;
}

void Layout::validate() const {
  if (dims.size() < 2) fail(Errc::Configuration, "layout needs at least an input and an output layer");
  for (auto d : dims)
    if (d == 0) fail(Errc::Configuration, "layout has a zero-width layer");
  if (dims.back() < 2) fail(Errc::Configuration, "classifier needs at least two classes");
}

ParamVector::ParamVector(Layout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.param_count())
    fail(Errc::Layout, "parameter vector length " + std::to_string(values_.size()) +
                           " does not match layout parameter count " +
                           std::to_string(layout_.param_count()));
}

ParamVector ParamVector::zeros(const Layout& layout) {
  return ParamVector(layout, std::vector<double>(layout.param_count(), 0.0));
}

void require_same_layout(const ParamVector& a, const ParamVector& b, const char* context) {
  if (!a.same_layout(b)) fail(Errc::Layout, std::string(context) + ": parameter layouts differ");
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  require_same_layout(*this, other, "add");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  require_same_layout(*this, other, "subtract");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double factor) {
  for (double& v : values_) v *= factor;
  return *this;
}

ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
ParamVector operator*(double factor, ParamVector v) { return v *= factor; }

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_layout(a, b, "dot");
  const auto x = a.values();
  const auto y = b.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double norm(const ParamVector& v) {
  double acc = 0.0;
  for (double x : v.values()) acc += x * x;
  return std::sqrt(acc);
}

ParamVector param_delta(const ParamVector& before, const ParamVector& after) {
  require_same_layout(before, after, "param_delta");
  return after - before;
}

}  // namespace efest
