#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace efest {

/// One calibration point: the EF of update N_{round-1} -> N_round on a class's
/// evaluation set, paired with the accuracy change measured on that set.
struct EfSample {
  std::uint32_t round = 0;
  std::uint32_t klass = 0;
  double ef = 0.0;
  double acc_delta = 0.0;

  friend bool operator==(const EfSample&, const EfSample&) = default;
};

struct RegressionModel {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::uint32_t n_used = 0;
  std::uint32_t n_removed = 0;
  std::uint32_t klass = 0;
  std::uint32_t round = 0;
};

/// Linear interpolation at rank h = (n - 1) * p. `sorted` must be ascending.
double quantile(std::span<const double> sorted, double p);

struct Fences {
  double lower = 0.0;
  double upper = 0.0;
};

/// Q1 - 1.5 IQR and Q3 + 1.5 IQR of the (unsorted) values.
Fences tukey_fences(std::span<const double> values);

struct OutlierSplit {
  std::vector<EfSample> kept;
  std::vector<EfSample> removed;
};

/// Single-pass Tukey filter. Fences are computed separately for ef and for
/// acc_delta; a sample is dropped when either coordinate lies strictly outside
/// its fences. Input order is preserved in both outputs.
OutlierSplit filter_outliers(std::span<const EfSample> samples);

/// Ordinary least squares of acc_delta on ef with an intercept; r2 is computed
/// on the same samples. Samples are sorted internally, so the result does not
/// depend on input order.
RegressionModel fit(std::span<const EfSample> samples);

/// filter_outliers followed by fit on the kept samples.
RegressionModel calibrate(std::span<const EfSample> samples, std::uint32_t klass, std::uint32_t round);

inline double predict(const RegressionModel& model, double ef) { return model.slope * ef + model.intercept; }

/// Pearson correlation; empty when fewer than two points or either side has zero variance.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

}  // namespace efest
