#include "advdial/common.hpp"

#include <cmath>
#include <cstdio>

namespace advdial {

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

std::size_t sample_categorical(const std::vector<double>& probs, Rng& rng) {
  if (probs.empty()) throw Error("EmptyDistribution");
  double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return probs.size() - 1;  // guard against rounding shortfall
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

namespace {

// Series expansion of P(s, x), valid for x < s + 1.
double gamma_p_series(double s, double x) {
  double sum = 1.0 / s;
  double term = sum;
  for (int n = 1; n < 500; ++n) {
    term *= x / (s + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + s * std::log(x) - std::lgamma(s));
}

// Continued fraction for Q(s, x) via modified Lentz, valid for x >= s + 1.
double gamma_q_cf(double s, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - s;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -i * (i - s);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return h * std::exp(-x + s * std::log(x) - std::lgamma(s));
}

}  // namespace

double gamma_p(double s, double x) {
  if (x < 0.0 || s <= 0.0) throw Error("InvalidGammaArgs");
  if (x == 0.0) return 0.0;
  if (x < s + 1.0) return gamma_p_series(s, x);
  return 1.0 - gamma_q_cf(s, x);
}

double chi2_sf(double stat, double df) {
  if (stat <= 0.0) return 1.0;
  return 1.0 - gamma_p(df / 2.0, stat / 2.0);
}

double chi2_gof_pvalue(const std::vector<double>& observed,
                       const std::vector<double>& expected) {
  if (observed.size() != expected.size() || observed.empty())
    throw Error("ShapeMismatch");
  // Pool cells whose expected count is below 5.
  double pooled_obs = 0.0, pooled_exp = 0.0;
  double stat = 0.0;
  int cells = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (expected[i] < 5.0) {
      pooled_obs += observed[i];
      pooled_exp += expected[i];
    } else {
      double d = observed[i] - expected[i];
      stat += d * d / expected[i];
      ++cells;
    }
  }
  if (pooled_exp > 0.0) {
    double d = pooled_obs - pooled_exp;
    stat += d * d / pooled_exp;
    ++cells;
  }
  if (cells < 2) return 1.0;
  return chi2_sf(stat, static_cast<double>(cells - 1));
}

}  // namespace advdial
