#pragma once

// Test-only reference computations. Nothing here calls into the network's
// forward/backward code: the forward pass is re-derived with plain loops
// straight from the canonical parameter layout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "efest/dataset.hpp"
#include "efest/param_vector.hpp"
#include "efest/regressor.hpp"

namespace oracle {

struct Outputs {
  std::vector<double> logits;
  std::vector<double> probs;
};

inline Outputs forward(const efest::Layout& layout, std::span<const double> w, std::span<const double> x) {
  std::vector<double> a(x.begin(), x.end());
  std::size_t pos = 0;
  Outputs out;
  for (std::size_t l = 0; l + 1 < layout.dims.size(); ++l) {
    const std::size_t fan_in = layout.dims[l];
    const std::size_t fan_out = layout.dims[l + 1];
    std::vector<double> z(fan_out);
    for (std::size_t j = 0; j < fan_out; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < fan_in; ++i) acc += w[pos + i] * a[i];
      acc += w[pos + fan_in];
      pos += fan_in + 1;
      z[j] = acc;
    }
    const bool last = l + 2 == layout.dims.size();
    if (!last)
      for (double& v : z) v = std::max(v, 0.0);
    a = std::move(z);
  }
  out.logits = a;
  const double m = *std::max_element(a.begin(), a.end());
  double total = 0.0;
  for (double v : a) total += std::exp(v - m);
  out.probs.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out.probs[k] = std::exp(a[k] - m) / total;
  return out;
}

// log p_k through log-sum-exp, so finite differences do not lose digits.
inline double log_prob(const efest::Layout& layout, std::span<const double> w, std::span<const double> x,
                       std::uint32_t k) {
  const auto out = forward(layout, w, x);
  const double m = *std::max_element(out.logits.begin(), out.logits.end());
  double total = 0.0;
  for (double v : out.logits) total += std::exp(v - m);
  return out.logits[k] - m - std::log(total);
}

inline std::uint32_t argmax(const std::vector<double>& p) {
  std::uint32_t best = 0;
  for (std::uint32_t k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

inline std::uint32_t second(const std::vector<double>& p) {
  const std::uint32_t f = argmax(p);
  std::uint32_t best = f == 0 ? 1 : 0;
  for (std::uint32_t k = 0; k < p.size(); ++k)
    if (k != f && p[k] > p[best]) best = k;
  return best;
}

/// Central difference of f at coordinate i with step h.
template <class F>
double central_difference(F&& f, std::vector<double> w, std::size_t i, double h = 1e-5) {
  const double orig = w[i];
  w[i] = orig + h;
  const double up = f(w);
  w[i] = orig - h;
  const double down = f(w);
  return (up - down) / (2.0 * h);
}

inline bool close(double got, double want, double rel, double abs) {
  return std::abs(got - want) <= abs || std::abs(got - want) <= rel * std::max(std::abs(got), std::abs(want));
}

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline double rel_err(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

/// Textbook OLS via raw sums: slope = (n Sxy - Sx Sy) / (n Sxx - Sx^2).
struct Line {
  double slope;
  double intercept;
  double r2;
};

inline Line ols(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  const double mean = sy / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (slope * xs[i] + intercept);
    ss_res += r * r;
    ss_tot += (ys[i] - mean) * (ys[i] - mean);
  }
  return {slope, intercept, ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot};
}

/// Quartile by the (n-1)p rule, written out independently of the library.
inline double quartile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace oracle
