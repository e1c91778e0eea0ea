#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace volterra::stats {

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
};

// Sample mean and standard error of the mean (n-1 denominator; se = 0 for n < 2).
MeanSE mean_se(std::span<const double> v);
// From running sums over n samples.
MeanSE mean_se_from_sums(double sum, double sum_sq, std::size_t n);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double slope_se = 0.0;
};

// Least squares y = a + b x.
SlopeFit linear_fit(std::span<const double> x, std::span<const double> y);
// Fit of log(y) against log(x); all entries must be positive.
SlopeFit loglog_fit(std::span<const double> x, std::span<const double> y);

}  // namespace volterra::stats
