#pragma once

// Standardized Precipitation Index.
//
// Monthly precipitation is summed over k-month windows. For every calendar
// month the aggregates are modelled by a zero-inflated Pearson Type III law
//
//     H(x) = q + (1 - q) * G(x),   q = P(aggregate == 0),
//
// where G is fitted to the nonzero aggregates by L-moments. The index is the
// standard-normal quantile of H, clamped to [-3.09, 3.09].

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "drought/common.hpp"

namespace drought::spi {

inline constexpr std::array<int, 5> kStandardWindows{1, 3, 6, 9, 12};
inline constexpr double kSpiBound = 3.09;
inline constexpr std::size_t kMinFitSamples = 20;
inline constexpr std::size_t kRecommendedRecordMonths = 240;

struct MonthlySeries {
  std::string region_id;
  YearMonth start;
  std::vector<double> values;  ///< mm, one per month, no gaps

  [[nodiscard]] YearMonth month_at(std::size_t i) const { return start.plus(static_cast<std::int64_t>(i)); }

  void validate() const {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i]) || values[i] < 0.0) {
        throw ValidationError("region " + region_id + ": invalid precipitation " + format_double(values[i]) + " at " +
                              month_at(i).to_string());
      }
    }
  }

  friend bool operator==(const MonthlySeries&, const MonthlySeries&) = default;
};

/// Rolling k-month sums; entry i covers months i-k+1..i. The first k-1 entries are undefined.
struct AggregateSeries {
  std::string region_id;
  YearMonth start;
  int window = 1;
  std::vector<std::optional<double>> values;
};

struct DistributionFit {
  int calendar_month = 1;
  int window = 1;
  double q_zero = 0.0;     ///< probability mass at zero
  double location = 0.0;  ///< Pearson III mean
  double scale = 1.0;     ///< Pearson III standard deviation
  double shape = 0.0;     ///< Pearson III skewness
  std::size_t n_fit = 0;
  bool zero_bound = false;  ///< lower bound pinned at 0 because the free fit excluded a sample

  friend bool operator==(const DistributionFit&, const DistributionFit&) = default;
};

struct SpiSeries {
  std::string region_id;
  YearMonth start;
  int window = 1;
  std::vector<std::optional<double>> values;
};

[[nodiscard]] inline bool is_standard_window(int k) {
  return std::find(kStandardWindows.begin(), kStandardWindows.end(), k) != kStandardWindows.end();
}

// ---------------------------------------------------------------------------
// Standard normal

[[nodiscard]] inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Inverse standard-normal CDF. Acklam's rational approximation (relative
/// error 1.15e-9) followed by one Halley step against erfc, which brings the
/// absolute error down to a few ulps over the clamped SPI range.
[[nodiscard]] inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x = 0.0;
  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// ---------------------------------------------------------------------------
// Pearson Type III

/// Sample L-moments l1, l2 and the L-skewness t3 = l3 / l2 from unbiased
/// probability-weighted moments.
struct LMoments {
  double l1 = 0.0;
  double l2 = 0.0;
  double t3 = 0.0;
};

[[nodiscard]] inline LMoments sample_lmoments(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double j = static_cast<double>(i);  // rank - 1
    b0 += x[i];
    b1 += x[i] * j / (n - 1.0);
    b2 += x[i] * j * (j - 1.0) / ((n - 1.0) * (n - 2.0));
  }
  b0 /= n;
  b1 /= n;
  b2 /= n;
  LMoments m;
  m.l1 = b0;
  m.l2 = 2.0 * b1 - b0;
  const double l3 = 6.0 * b2 - 6.0 * b1 + b0;
  m.t3 = m.l2 > 0.0 ? l3 / m.l2 : 0.0;
  return m;
}

/// Pearson III with lower bound 0 (a two-parameter gamma) matched to l1 and
/// l2/l1; returns (location, scale, skew).
[[nodiscard]] inline std::array<double, 3> zero_bound_fit(const LMoments& m) {
  const double cv = m.l2 / m.l1;
  double alpha = 0.0;
  if (cv < 0.5) {
    const double t = std::numbers::pi * cv * cv;
    alpha = (1.0 - 0.3080 * t) / (t * (1.0 + t * (-0.05812 + t * 0.01765)));
  } else {
    const double t = 1.0 - cv;
    alpha = t * (0.7213 - 0.5947 * t) / (1.0 + t * (-2.1817 + 1.2113 * t));
  }
  const double beta = m.l1 / alpha;
  const double root_alpha = std::sqrt(alpha);
  return {alpha * beta, beta * root_alpha, 2.0 / root_alpha};
}

/// Pearson III CDF in (location, scale, skew) form.
[[nodiscard]] inline double pearson3_cdf(double x, double location, double scale, double skew) {
  if (std::abs(skew) <= 1e-6) return normal_cdf((x - location) / scale);
  const double alpha = 4.0 / (skew * skew);
  const double beta = 0.5 * scale * std::abs(skew);
  const double xi = location - 2.0 * scale / skew;
  if (skew > 0.0) {
    const double y = (x - xi) / beta;
    return y <= 0.0 ? 0.0 : boost::math::gamma_p(alpha, y);
  }
  const double y = (xi - x) / beta;
  return y <= 0.0 ? 1.0 : boost::math::gamma_q(alpha, y);
}

/// Fitted CDF G of the nonzero part.
[[nodiscard]] inline double fitted_cdf(const DistributionFit& fit, double x) {
  return pearson3_cdf(x, fit.location, fit.scale, fit.shape);
}

/// Mixed CDF H(x) = q + (1 - q) G(x), with H(0) = q exactly.
[[nodiscard]] inline double mixed_cdf(const DistributionFit& fit, double x) {
  if (x <= 0.0) return fit.q_zero;
  return fit.q_zero + (1.0 - fit.q_zero) * fitted_cdf(fit, x);
}

/// Clamped standard-normal quantile of a cumulative probability.
[[nodiscard]] inline double standardize(double probability) {
  const double upper = normal_cdf(kSpiBound);
  const double lower = normal_cdf(-kSpiBound);
  if (probability >= upper) return kSpiBound;
  if (probability <= lower) return -kSpiBound;
  return std::clamp(normal_quantile(probability), -kSpiBound, kSpiBound);
}

// ---------------------------------------------------------------------------
// Operations

[[nodiscard]] inline AggregateSeries aggregate(const MonthlySeries& series, int window) {
  if (!is_standard_window(window)) {
    throw ValidationError("region " + series.region_id + ": unsupported SPI window " + std::to_string(window));
  }
  if (series.values.size() < static_cast<std::size_t>(window)) {
    throw ValidationError("region " + series.region_id + ": series of " + std::to_string(series.values.size()) +
                          " months is shorter than window " + std::to_string(window));
  }
  AggregateSeries out{series.region_id, series.start, window, {}};
  out.values.resize(series.values.size());
  // Each window is summed directly; a running sum would let rounding drift
  // make identical windows compare unequal.
  for (std::size_t i = static_cast<std::size_t>(window) - 1; i < series.values.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = i + 1 - static_cast<std::size_t>(window); j <= i; ++j) sum += series.values[j];
    out.values[i] = sum;
  }
  return out;
}

/// Fits the zero-inflated Pearson III law to the aggregates of one calendar
/// month and window.
[[nodiscard]] inline DistributionFit fit_month(std::span<const double> aggregates, int calendar_month, int window) {
  auto where = [&] {
    return "calendar month " + std::to_string(calendar_month) + ", window " + std::to_string(window);
  };
  if (aggregates.size() < kMinFitSamples) {
    throw NumericalError("fit failure (" + where() + "): " + std::to_string(aggregates.size()) +
                         " samples, at least " + std::to_string(kMinFitSamples) + " required");
  }
  std::vector<double> nonzero;
  std::size_t zeros = 0;
  for (double x : aggregates) {
    if (!std::isfinite(x) || x < 0.0) throw ValidationError("fit failure (" + where() + "): invalid aggregate");
    if (x == 0.0)
      ++zeros;
    else
      nonzero.push_back(x);
  }
  std::set<double> distinct(nonzero.begin(), nonzero.end());
  if (distinct.size() < 3) {
    throw NumericalError("fit failure (" + where() + "): fewer than 3 distinct nonzero aggregates");
  }

  DistributionFit fit;
  fit.calendar_month = calendar_month;
  fit.window = window;
  fit.n_fit = aggregates.size();
  fit.q_zero = static_cast<double>(zeros) / static_cast<double>(aggregates.size());

  const auto [lo_it, hi_it] = std::minmax_element(nonzero.begin(), nonzero.end());
  const double smallest = *lo_it;
  const double largest = *hi_it;

  // Hosking's rational approximations for the shape in terms of t3.
  const LMoments m = sample_lmoments(std::move(nonzero));
  if (!(m.l2 > 0.0)) throw NumericalError("fit failure (" + where() + "): zero L-scale");
  const double t = std::abs(m.t3);
  fit.location = m.l1;
  if (t <= 1e-6) {
    fit.scale = m.l2 * std::sqrt(std::numbers::pi);
    fit.shape = 0.0;
    return fit;
  }
  double alpha = 0.0;
  if (t < 1.0 / 3.0) {
    const double z = 3.0 * std::numbers::pi * t * t;
    alpha = (1.0 + 0.2906 * z) / (z * (1.0 + z * (0.1882 + 0.0442 * z)));
  } else {
    const double z = 1.0 - t;
    alpha = z * (0.36067 + z * (-0.59567 + z * 0.25361)) / (1.0 + z * (-2.78861 + z * (2.56096 - z * 0.77045)));
  }
  const double root_alpha = std::sqrt(alpha);
  const double beta = std::sqrt(std::numbers::pi) * m.l2 * std::exp(std::lgamma(alpha) - std::lgamma(alpha + 0.5));
  fit.scale = beta * root_alpha;
  fit.shape = m.t3 > 0.0 ? 2.0 / root_alpha : -2.0 / root_alpha;
  if (!std::isfinite(fit.scale) || !std::isfinite(fit.shape) || !(fit.scale > 0.0)) {
    throw NumericalError("fit failure (" + where() + "): non-finite parameters");
  }
  // Short records can put the fitted bound inside the sample, leaving observed
  // values with probability 0 or 1. Fall back to the member with bound 0.
  const double bound = fit.location - 2.0 * fit.scale / fit.shape;
  const bool covers = fit.shape > 0.0 ? bound < smallest : bound > largest;
  if (!covers) {
    const auto [location, scale, skew] = zero_bound_fit(m);
    fit.location = location;
    fit.scale = scale;
    fit.shape = skew;
    fit.zero_bound = true;
  }
  return fit;
}

/// Calendar-month fits (index 0 = January) for one aggregate series.
using MonthFits = std::array<std::optional<DistributionFit>, 12>;

[[nodiscard]] inline SpiSeries transform(const AggregateSeries& agg, const MonthFits& fits) {
  SpiSeries out{agg.region_id, agg.start, agg.window, {}};
  out.values.resize(agg.values.size());
  for (std::size_t i = 0; i < agg.values.size(); ++i) {
    if (!agg.values[i]) continue;
    const int month = agg.start.plus(static_cast<std::int64_t>(i)).month;
    const auto& fit = fits[static_cast<std::size_t>(month - 1)];
    if (!fit) {
      throw ValidationError("region " + agg.region_id + ": no distribution fit for calendar month " +
                            std::to_string(month) + ", window " + std::to_string(agg.window));
    }
    out.values[i] = standardize(mixed_cdf(*fit, *agg.values[i]));
  }
  return out;
}

/// Fits all twelve calendar months of an aggregate series. The whole record is
/// the calibration period.
[[nodiscard]] inline MonthFits fit_all_months(const AggregateSeries& agg) {
  std::array<std::vector<double>, 12> by_month;
  for (std::size_t i = 0; i < agg.values.size(); ++i) {
    if (!agg.values[i]) continue;
    by_month[static_cast<std::size_t>(agg.start.plus(static_cast<std::int64_t>(i)).month - 1)].push_back(
        *agg.values[i]);
  }
  MonthFits fits;
  for (int m = 1; m <= 12; ++m) {
    const auto& samples = by_month[static_cast<std::size_t>(m - 1)];
    if (samples.empty()) continue;
    try {
      fits[static_cast<std::size_t>(m - 1)] = fit_month(samples, m, agg.window);
    } catch (const NumericalError& e) {
      throw NumericalError("region " + agg.region_id + ": " + e.what());
    }
  }
  return fits;
}

[[nodiscard]] inline std::map<int, SpiSeries> compute_spi(const MonthlySeries& series, std::span<const int> windows) {
  series.validate();
  if (series.values.size() < kRecommendedRecordMonths) {
    log_warning("region " + series.region_id + ": " + std::to_string(series.values.size()) +
                " months supplied; a calibration record of at least " + std::to_string(kRecommendedRecordMonths) +
                " months (30 years preferred) is recommended");
  }
  std::map<int, SpiSeries> out;
  for (int k : windows) {
    auto agg = aggregate(series, k);
    out.emplace(k, transform(agg, fit_all_months(agg)));
  }
  return out;
}

}  // namespace drought::spi
