#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldpbench/error.hpp"
#include "ldpbench/io_util.hpp"
#include "ldpbench/metrics.hpp"

namespace ldpbench {

// ---------------------------------------------------------------------------
// Distribution functions
// ---------------------------------------------------------------------------

namespace detail {

/// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
      b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw Error("gamma_p: invalid arguments");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) {
    // series expansion
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 3e-14) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // continued fraction for Q(a, x)
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 3e-14) break;
  }
  const double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
  return 1.0 - q;
}

}  // namespace detail

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Two-sided p-value for a t statistic with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (df <= 0.0) throw Error("student_t_two_sided_p: df must be positive");
  return detail::incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

/// Survival function of the chi-square distribution.
inline double chi_square_sf(double x, double df) {
  if (df <= 0.0) throw Error("chi_square_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return 1.0 - detail::gamma_p(df / 2.0, x / 2.0);
}

// ---------------------------------------------------------------------------
// Design matrix and OLS
// ---------------------------------------------------------------------------

struct DesignMatrix {
  std::vector<double> x;  // n x p, row-major, first column is the constant
  std::vector<double> y;
  std::vector<std::string> column_names;
  std::size_t n = 0;
  std::size_t p = 0;

  double at(std::size_t row, std::size_t col) const { return x[row * p + col]; }
};

inline int mechanism_code(const std::string& mechanism) {
  if (mechanism == "word-mldp") return 1;
  if (mechanism == "token-temp") return 2;
  if (mechanism == "doc-vector") return 3;
  throw Error("mechanism_code: unknown mechanism: " + mechanism);
}

/// Builds the regression design: target is the average of the static and
/// adaptive relative gains; size and privacy-label support enter in logs;
/// mechanism and budget level enter as 1..3 codes.
inline DesignMatrix encode_design(std::span<const EvalRecord> records) {
  DesignMatrix d;
  d.column_names = {"constant",      "log_size",     "avg_words", "mechanism",
                    "epsilon_level", "util_labels",  "log_priv_labels"};
  d.p = d.column_names.size();
  d.n = records.size();
  d.x.reserve(d.n * d.p);
  d.y.reserve(d.n);
  for (const auto& r : records) {
    if (r.size == 0)
      throw Error("encode_design: record with zero size cannot enter a log transform");
    if (r.priv_labels == 0)
      throw Error("encode_design: record with zero privacy labels cannot enter a log transform");
    if (r.epsilon_level < 1 || r.epsilon_level > 3)
      throw Error("encode_design: epsilon_level outside {1,2,3}");
    d.x.push_back(1.0);
    d.x.push_back(std::log(static_cast<double>(r.size)));
    d.x.push_back(r.avg_words);
    d.x.push_back(static_cast<double>(mechanism_code(r.mechanism)));
    d.x.push_back(static_cast<double>(r.epsilon_level));
    d.x.push_back(static_cast<double>(r.util_labels));
    d.x.push_back(std::log(static_cast<double>(r.priv_labels)));
    d.y.push_back(0.5 * (r.gamma_static + r.gamma_adaptive));
  }
  return d;
}

struct CoefficientSummary {
  std::string name;
  double coef = 0.0;
  double std_err = 0.0;
  double t = 0.0;
  double p = 0.0;
};

struct RegressionSummary {
  std::vector<CoefficientSummary> coefficients;
  double r_squared = 0.0;
  std::size_t n = 0;
  std::size_t df_resid = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["r_squared"] = r_squared;
    j["n"] = n;
    j["df_resid"] = df_resid;
    j["coefficients"] = nlohmann::json::array();
    for (const auto& c : coefficients)
      j["coefficients"].push_back({{"name", c.name},
                                   {"coef", c.coef},
                                   {"std_err", c.std_err},
                                   {"t", c.t},
                                   {"p", c.p}});
    return j;
  }

  static RegressionSummary from_json(const nlohmann::json& j) {
    RegressionSummary s;
    s.r_squared = j.at("r_squared").get<double>();
    s.n = j.at("n").get<std::size_t>();
    s.df_resid = j.at("df_resid").get<std::size_t>();
    for (const auto& c : j.at("coefficients"))
      s.coefficients.push_back(CoefficientSummary{c.at("name").get<std::string>(),
                                                  c.at("coef").get<double>(),
                                                  c.at("std_err").get<double>(),
                                                  c.at("t").get<double>(),
                                                  c.at("p").get<double>()});
    return s;
  }
};

/// Ordinary least squares via Householder QR. Standard errors come from
/// sigma^2 (X'X)^-1 with sigma^2 = RSS / (n - p); p-values are two-sided
/// under the t distribution with n - p degrees of freedom.
inline RegressionSummary ols_fit(const DesignMatrix& design) {
  const std::size_t n = design.n, p = design.p;
  if (n <= p) throw Error("ols_fit: need more rows than columns");

  // Householder QR on a working copy; qty accumulates Q' y.
  std::vector<double> a = design.x;
  std::vector<double> qty = design.y;
  std::vector<double> col_norms(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += a[i * p + j] * a[i * p + j];
    col_norms[j] = std::sqrt(norm);
  }

  for (std::size_t k = 0; k < p; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += a[i * p + k] * a[i * p + k];
    norm = std::sqrt(norm);
    if (norm <= 1e-12 * std::max(1.0, col_norms[k]))
      throw Error("ols_fit: design matrix is rank deficient at column '" +
                  design.column_names[k] + "'");
    if (a[k * p + k] > 0.0) norm = -norm;
    std::vector<double> v(n - k);
    for (std::size_t i = k; i < n; ++i) v[i - k] = a[i * p + k];
    v[0] -= norm;
    double vnorm2 = 0.0;
    for (double value : v) vnorm2 += value * value;
    if (vnorm2 > 0.0) {
      for (std::size_t j = k; j < p; ++j) {
        double dot = 0.0;
        for (std::size_t i = k; i < n; ++i) dot += v[i - k] * a[i * p + j];
        const double factor = 2.0 * dot / vnorm2;
        for (std::size_t i = k; i < n; ++i) a[i * p + j] -= factor * v[i - k];
      }
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += v[i - k] * qty[i];
      const double factor = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) qty[i] -= factor * v[i - k];
    }
    a[k * p + k] = norm;
    for (std::size_t i = k + 1; i < n; ++i) a[i * p + k] = 0.0;
  }

  // Check the triangular diagonal before back substitution.
  for (std::size_t k = 0; k < p; ++k)
    if (std::abs(a[k * p + k]) <= 1e-10 * std::max(1.0, col_norms[k]))
      throw Error("ols_fit: design matrix is rank deficient at column '" +
                  design.column_names[k] + "'");

  std::vector<double> beta(p, 0.0);
  for (std::size_t kk = p; kk-- > 0;) {
    double acc = qty[kk];
    for (std::size_t j = kk + 1; j < p; ++j) acc -= a[kk * p + j] * beta[j];
    beta[kk] = acc / a[kk * p + kk];
  }

  double rss = 0.0;
  double y_mean = 0.0;
  for (double v : design.y) y_mean += v;
  y_mean /= static_cast<double>(n);
  double tss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double fitted = 0.0;
    for (std::size_t j = 0; j < p; ++j) fitted += design.at(i, j) * beta[j];
    const double resid = design.y[i] - fitted;
    rss += resid * resid;
    tss += (design.y[i] - y_mean) * (design.y[i] - y_mean);
  }

  const std::size_t df = n - p;
  const double sigma2 = rss / static_cast<double>(df);

  // (X'X)^-1 = R^-1 R^-T from the stored triangle.
  std::vector<double> rinv(p * p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    rinv[j * p + j] = 1.0 / a[j * p + j];
    for (std::size_t i = j; i-- > 0;) {
      double acc = 0.0;
      for (std::size_t k = i + 1; k <= j; ++k) acc += a[i * p + k] * rinv[k * p + j];
      rinv[i * p + j] = -acc / a[i * p + i];
    }
  }

  RegressionSummary summary;
  summary.n = n;
  summary.df_resid = df;
  summary.r_squared = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  for (std::size_t j = 0; j < p; ++j) {
    double var = 0.0;
    for (std::size_t k = j; k < p; ++k) var += rinv[j * p + k] * rinv[j * p + k];
    CoefficientSummary c;
    c.name = design.column_names[j];
    c.coef = beta[j];
    c.std_err = std::sqrt(sigma2 * var);
    c.t = c.coef / c.std_err;
    c.p = student_t_two_sided_p(c.t, static_cast<double>(df));
    summary.coefficients.push_back(std::move(c));
  }
  return summary;
}

/// Aligned text table in the style of a standard OLS summary.
inline std::string format_regression_table(const RegressionSummary& summary) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "R^2 = %.3f   (n = %zu, resid. df = %zu)\n",
                summary.r_squared, summary.n, summary.df_resid);
  out << line;
  std::snprintf(line, sizeof(line), "%-18s %12s %10s %9s %8s\n", "", "coef.", "std err", "t",
                "P>|t|");
  out << line;
  out << std::string(60, '-') << "\n";
  for (const auto& c : summary.coefficients) {
    std::snprintf(line, sizeof(line), "%-18s %12.4f %10.3f %9.3f %8.3f\n", c.name.c_str(),
                  c.coef, c.std_err, c.t, c.p);
    out << line;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Binning and rank tests
// ---------------------------------------------------------------------------

struct BinResult {
  std::vector<double> edges;        // n_bins + 1 ascending edges
  std::vector<int> labels;          // 1-based bin per input value
};

/// Equal-width bins over [min, max]. Intervals are right-closed; the first
/// bin also includes the minimum itself.
inline BinResult equal_width_bins(std::span<const double> values, std::size_t n_bins = 5) {
  if (n_bins == 0) throw Error("equal_width_bins: n_bins must be positive");
  if (values.empty()) throw Error("equal_width_bins: empty input");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    if (!std::isfinite(v)) throw Error("equal_width_bins: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) throw Error("equal_width_bins: all values are equal");

  BinResult result;
  result.edges.resize(n_bins + 1);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t i = 0; i <= n_bins; ++i)
    result.edges[i] = lo + static_cast<double>(i) * width;
  result.edges[n_bins] = hi;  // guard against accumulation drift

  result.labels.reserve(values.size());
  for (double v : values) {
    std::size_t bin = n_bins;
    for (std::size_t b = 1; b <= n_bins; ++b) {
      if (v <= result.edges[b]) {
        bin = b;
        break;
      }
    }
    result.labels.push_back(static_cast<int>(bin));
  }
  return result;
}

namespace detail {

struct RankedGroups {
  std::vector<double> rank_sums;
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  double tie_sum = 0.0;  // sum over tie groups of (t^3 - t)
};

inline RankedGroups rank_groups(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw Error("rank test: need at least 2 groups");
  RankedGroups r;
  r.rank_sums.assign(groups.size(), 0.0);
  std::vector<std::pair<double, std::size_t>> all;  // (value, group)
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw Error("rank test: group " + std::to_string(g) + " is empty");
    r.sizes.push_back(groups[g].size());
    for (double v : groups[g]) {
      if (!std::isfinite(v)) throw Error("rank test: non-finite observation");
      all.emplace_back(v, g);
    }
  }
  r.total = all.size();
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of i+1 .. j
    const auto t = static_cast<double>(j - i);
    if (j - i > 1) r.tie_sum += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) r.rank_sums[all[k].second] += avg_rank;
    i = j;
  }
  return r;
}

}  // namespace detail

struct KruskalWallisResult {
  double h = 0.0;
  double p = 0.0;
  std::size_t df = 0;
};

/// Kruskal-Wallis H with tie correction; p from the chi-square approximation.
inline KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  const detail::RankedGroups r = detail::rank_groups(groups);
  const auto n = static_cast<double>(r.total);
  double h = 0.0;
  for (std::size_t g = 0; g < r.rank_sums.size(); ++g)
    h += r.rank_sums[g] * r.rank_sums[g] / static_cast<double>(r.sizes[g]);
  h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
  const double correction = 1.0 - r.tie_sum / (n * n * n - n);
  if (correction <= 0.0)
    throw Error("kruskal_wallis: all observations identical, tie correction degenerates");
  h /= correction;
  KruskalWallisResult result;
  result.h = h;
  result.df = groups.size() - 1;
  result.p = chi_square_sf(h, static_cast<double>(result.df));
  return result;
}

/// Dunn's post-hoc pairwise comparisons on mean ranks with tie-corrected
/// pooled variance. Returns the symmetric matrix of two-sided p-values with
/// a unit diagonal. Unadjusted by default; `bonferroni` multiplies each
/// p-value by the number of pairs (clamped to 1).
inline std::vector<std::vector<double>> dunn_posthoc(
    std::span<const std::vector<double>> groups, bool bonferroni = false) {
  const detail::RankedGroups r = detail::rank_groups(groups);
  const auto n = static_cast<double>(r.total);
  const double base_var = n * (n + 1.0) / 12.0 - r.tie_sum / (12.0 * (n - 1.0));
  if (base_var <= 0.0)
    throw Error("dunn_posthoc: all observations identical, variance degenerates");

  const std::size_t k = groups.size();
  const double pairs = static_cast<double>(k * (k - 1)) / 2.0;
  std::vector<std::vector<double>> p(k, std::vector<double>(k, 1.0));
  for (std::size_t i = 0; i < k; ++i) {
    const double mean_i = r.rank_sums[i] / static_cast<double>(r.sizes[i]);
    for (std::size_t j = i + 1; j < k; ++j) {
      const double mean_j = r.rank_sums[j] / static_cast<double>(r.sizes[j]);
      const double se = std::sqrt(
          base_var * (1.0 / static_cast<double>(r.sizes[i]) +
                      1.0 / static_cast<double>(r.sizes[j])));
      const double z = (mean_i - mean_j) / se;
      double pv = 2.0 * (1.0 - normal_cdf(std::abs(z)));
      if (bonferroni) pv = std::min(1.0, pv * pairs);
      p[i][j] = pv;
      p[j][i] = pv;
    }
  }
  return p;
}

inline void save_posthoc_csv(const std::vector<std::vector<double>>& matrix,
                             const std::string& path) {
  std::string out;
  const std::size_t k = matrix.size();
  out += "bin";
  for (std::size_t j = 0; j < k; ++j) out += "," + std::to_string(j + 1);
  out += "\n";
  for (std::size_t i = 0; i < k; ++i) {
    out += std::to_string(i + 1);
    for (std::size_t j = 0; j < k; ++j) out += "," + format_real(matrix[i][j]);
    out += "\n";
  }
  write_file(path, out);
}

}  // namespace ldpbench
