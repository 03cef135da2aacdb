#pragma once

// Student t distribution, one-sample and Welch t tests, t intervals.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "wordpref/error.hpp"

namespace wordpref::stats {

// Regularized incomplete beta I_x(a, b), continued fraction by modified Lentz.
inline double betainc(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("betainc: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - betainc(b, a, 1.0 - x);

  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  constexpr double tiny = 1e-300, eps = 1e-16;
  double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    f *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::fabs(delta - 1.0) < eps) break;
  }
  return std::exp(log_front) * f / a;
}

// P(|T| >= |t|) for T ~ t(df).
inline double t_two_sided_p(double t, double df) {
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  return std::min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)));
}

inline double t_cdf(double t, double df) {
  const double tail = 0.5 * t_two_sided_p(t, df);
  return t > 0.0 ? 1.0 - tail : tail;
}

// Inverse of t_cdf by bracketing and bisection to machine precision.
inline double t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("t_quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -t_quantile(1.0 - p, df);
  // Work with the upper tail so precision is not lost near p = 1.
  const double tail = 1.0 - p;
  auto upper = [&](double t) { return 0.5 * t_two_sided_p(t, df); };
  double lo = 0.0, hi = 1.0;
  while (upper(hi) > tail) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) return hi;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (upper(mid) > tail ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample variance (n - 1 denominator).
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

inline double sd(std::span<const double> v) { return std::sqrt(variance(v)); }

// Treats a spread below rounding noise of the data as exactly zero.
inline bool zero_spread(std::span<const double> v) {
  double scale = 1.0;
  for (double x : v) scale = std::max(scale, std::fabs(x));
  return sd(v) <= 1e-13 * scale;
}

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  bool zero_variance = false;
};

// Two-sided one-sample t test of mean(values) = 0. Zero spread gives p = 0
// for a nonzero mean and p = 1 for a zero mean, flagged.
inline TTest t_test_one_sample(std::span<const double> values) {
  if (values.size() < 2) throw InsufficientData("t test needs at least 2 values");
  TTest r;
  r.df = static_cast<double>(values.size() - 1);
  const double m = mean(values);
  if (zero_spread(values)) {
    r.zero_variance = true;
    double scale = 1.0;
    for (double x : values) scale = std::max(scale, std::fabs(x));
    if (std::fabs(m) <= 1e-13 * scale) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = m > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = m / (sd(values) / std::sqrt(static_cast<double>(values.size())));
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

// Welch's unequal-variance two-sample t test of mean(a) = mean(b).
inline TTest welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw InsufficientData("Welch test needs at least 2 values per group");
  const double va = variance(a) / static_cast<double>(a.size());
  const double vb = variance(b) / static_cast<double>(b.size());
  TTest r;
  const double diff = mean(a) - mean(b);
  if (va + vb == 0.0) {
    r.zero_variance = true;
    r.df = static_cast<double>(a.size() + b.size() - 2);
    r.t = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = diff / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) /
         (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// mean ± t_{(1+level)/2, n-1} · sd / √n
inline Interval t_interval(std::span<const double> values, double level = 0.95) {
  if (values.size() < 2) throw InsufficientData("interval undefined for fewer than 2 values");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0, 1)");
  const double m = mean(values);
  if (zero_spread(values)) return {m, m};
  const double n = static_cast<double>(values.size());
  const double half = t_quantile((1.0 + level) / 2.0, n - 1.0) * sd(values) / std::sqrt(n);
  return {m - half, m + half};
}

// Same interval with the spread taken from `spread_source` and the centre
// from `centre` (raw point estimate, demeaned variance).
inline Interval t_interval(double centre, std::span<const double> spread_source, double level) {
  if (spread_source.size() < 2) throw InsufficientData("interval undefined for fewer than 2 values");
  if (zero_spread(spread_source)) return {centre, centre};
  const double n = static_cast<double>(spread_source.size());
  const double half = t_quantile((1.0 + level) / 2.0, n - 1.0) * sd(spread_source) / std::sqrt(n);
  return {centre - half, centre + half};
}

}  // namespace wordpref::stats
