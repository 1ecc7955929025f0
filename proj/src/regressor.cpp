#include "efest/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "efest/error.hpp"

namespace efest {

double quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) fail(Errc::EmptyInput, "quantile of an empty list");
  if (!(p >= 0.0 && p <= 1.0)) fail(Errc::Domain, "quantile level must lie in [0, 1]");
  if (!std::is_sorted(sorted.begin(), sorted.end())) fail(Errc::Domain, "quantile input must be sorted ascending");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  if (lo == hi) return sorted[lo];
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Fences tukey_fences(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double q1 = quantile(sorted, 0.25);
  const double q3 = quantile(sorted, 0.75);
  const double iqr = q3 - q1;
  return {q1 - 1.5 * iqr, q3 + 1.5 * iqr};
}

OutlierSplit filter_outliers(std::span<const EfSample> samples) {
  OutlierSplit out;
  if (samples.empty()) return out;
  std::vector<double> efs, deltas;
  efs.reserve(samples.size());
  deltas.reserve(samples.size());
  for (const auto& s : samples) {
    efs.push_back(s.ef);
    deltas.push_back(s.acc_delta);
  }
  const Fences ef_f = tukey_fences(efs);
  const Fences acc_f = tukey_fences(deltas);
  for (const auto& s : samples) {
    const bool outside = s.ef < ef_f.lower || s.ef > ef_f.upper || s.acc_delta < acc_f.lower ||
                         s.acc_delta > acc_f.upper;
    (outside ? out.removed : out.kept).push_back(s);
  }
  return out;
}

RegressionModel fit(std::span<const EfSample> samples) {
  if (samples.size() < 2)
    fail(Errc::InsufficientData, "linear regression needs at least two samples, got " + std::to_string(samples.size()));
  std::vector<EfSample> pts(samples.begin(), samples.end());
  std::sort(pts.begin(), pts.end(), [](const EfSample& a, const EfSample& b) {
    return a.ef != b.ef ? a.ef < b.ef : a.acc_delta < b.acc_delta;
  });
  for (const auto& p : pts)
    if (!std::isfinite(p.ef) || !std::isfinite(p.acc_delta)) fail(Errc::Domain, "regression sample is not finite");

  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : pts) {
    mx += p.ef;
    my += p.acc_delta;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : pts) {
    const double dx = p.ef - mx;
    const double dy = p.acc_delta - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) fail(Errc::DegenerateRegressor, "all EF values are identical");

  RegressionModel m;
  m.slope = sxy / sxx;
  m.intercept = my - m.slope * mx;
  if (!std::isfinite(m.slope) || !std::isfinite(m.intercept))
    fail(Errc::DegenerateRegressor, "regression coefficients are not finite");
  double ss_res = 0.0;
  for (const auto& p : pts) {
    const double r = p.acc_delta - predict(m, p.ef);
    ss_res += r * r;
  }
  // A constant response is reproduced exactly by the intercept.
  m.r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
  m.n_used = static_cast<std::uint32_t>(pts.size());
  m.klass = pts.front().klass;
  return m;
}

RegressionModel calibrate(std::span<const EfSample> samples, std::uint32_t klass, std::uint32_t round) {
  const OutlierSplit split = filter_outliers(samples);
  RegressionModel m = fit(split.kept);
  m.n_removed = static_cast<std::uint32_t>(split.removed.size());
  m.klass = klass;
  m.round = round;
  return m;
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) fail(Errc::InputShape, "pearson inputs differ in length");
  if (xs.size() < 2) return std::nullopt;
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace efest
