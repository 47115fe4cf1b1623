#pragma once

// Independent oracles used to cross-check the library. These deliberately
// avoid the implementation paths they verify: ranks come from full sorts,
// regression from long-double normal equations, and noise laws from closed
// forms.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ldpbench/embeddings.hpp"

namespace oracles {

/// Exact pmf of min(|X|, L-1) for X two-sided geometric with parameter eps:
/// P(0) = (1-q)/(1+q), P(i) = 2*P(0)*q^i for 0 < i < L-1, tail mass at L-1.
inline std::vector<double> folded_clamped_pmf(double eps, std::size_t list_size) {
  const double q = std::exp(-eps);
  const double p0 = (1.0 - q) / (1.0 + q);
  std::vector<double> pmf(list_size, 0.0);
  pmf[0] = p0;
  for (std::size_t i = 1; i + 1 < list_size; ++i) pmf[i] = 2.0 * p0 * std::pow(q, i);
  if (list_size > 1)
    pmf[list_size - 1] = 2.0 * std::pow(q, list_size - 1) / (1.0 + q);
  return pmf;
}

/// Exact output-word distribution of the word mechanism for one input word:
/// the folded-clamped index pmf pushed through the word's neighbor list.
inline std::map<std::string, double> word_output_distribution(
    const ldpbench::NeighborIndex& index, const std::string& word, double eps,
    std::size_t list_size) {
  const std::vector<double> pmf = folded_clamped_pmf(eps, list_size);
  std::map<std::string, double> out;
  const auto& list = *index.find(word);
  for (std::size_t i = 0; i < list_size; ++i) out[index.words[list[i].row]] += pmf[i];
  return out;
}

/// Index of one word inside another word's neighbor list, or npos.
inline std::size_t neighbor_rank(const ldpbench::NeighborIndex& index,
                                 const std::string& word, const std::string& other) {
  const auto& list = *index.find(word);
  for (std::size_t i = 0; i < list.size(); ++i)
    if (index.words[list[i].row] == other) return i;
  return static_cast<std::size_t>(-1);
}

/// Rank of target among pool ids by a full sort on (distance, id).
inline std::size_t full_sort_rank(std::span<const double> query,
                                  const std::string& target_id,
                                  std::span<const std::pair<std::string, std::vector<double>>>
                                      pool) {
  std::vector<std::pair<double, std::string>> order;
  for (const auto& [id, vec] : pool) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < vec.size(); ++i)
      d2 += (vec[i] - query[i]) * (vec[i] - query[i]);
    order.emplace_back(d2, id);
  }
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i].second == target_id) return i + 1;
  return 0;
}

/// Long-double normal-equations OLS: beta = (X'X)^-1 X'y via Gauss-Jordan
/// with partial pivoting. Returns the coefficient vector.
inline std::vector<double> normal_equations_beta(std::span<const double> x,
                                                 std::span<const double> y, std::size_t n,
                                                 std::size_t p) {
  std::vector<long double> xtx(p * p, 0.0L), xty(p, 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < p; ++a) {
      xty[a] += static_cast<long double>(x[i * p + a]) * y[i];
      for (std::size_t b = 0; b < p; ++b)
        xtx[a * p + b] += static_cast<long double>(x[i * p + a]) * x[i * p + b];
    }
  }
  // augmented solve
  std::vector<long double> aug(p * (p + 1));
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < p; ++b) aug[a * (p + 1) + b] = xtx[a * p + b];
    aug[a * (p + 1) + p] = xty[a];
  }
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < p; ++r)
      if (std::abs(static_cast<double>(aug[r * (p + 1) + col])) >
          std::abs(static_cast<double>(aug[pivot * (p + 1) + col])))
        pivot = r;
    for (std::size_t c = 0; c <= p; ++c)
      std::swap(aug[col * (p + 1) + c], aug[pivot * (p + 1) + c]);
    const long double d = aug[col * (p + 1) + col];
    for (std::size_t c = 0; c <= p; ++c) aug[col * (p + 1) + c] /= d;
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const long double factor = aug[r * (p + 1) + col];
      for (std::size_t c = 0; c <= p; ++c)
        aug[r * (p + 1) + c] -= factor * aug[col * (p + 1) + c];
    }
  }
  std::vector<double> beta(p);
  for (std::size_t a = 0; a < p; ++a) beta[a] = static_cast<double>(aug[a * (p + 1) + p]);
  return beta;
}

/// Pearson chi-square statistic of observed counts against an exact pmf.
inline double chi_square_statistic(std::span<const std::size_t> observed,
                                   std::span<const double> pmf, std::size_t samples) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double expected = pmf[i] * static_cast<double>(samples);
    if (expected <= 0.0) continue;
    const double diff = static_cast<double>(observed[i]) - expected;
    stat += diff * diff / expected;
  }
  return stat;
}

}  // namespace oracles
