#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairlens/error.hpp"
#include "fairlens/interchange.hpp"
#include "fairlens/numkit.hpp"
#include "fairlens/rng.hpp"

namespace fairlens {

/// Two demographic sets (a1, a2) and two neutral-attribute sets (w1, w2).
struct WeatInputs {
  std::vector<Vector> a1;
  std::vector<Vector> a2;
  std::vector<Vector> w1;
  std::vector<Vector> w2;
};

struct WeatResult {
  double effect_size = 0.0;
  std::optional<double> p_value;
  std::optional<std::size_t> n_permutations_used;
  std::optional<bool> exact;
};

enum class PermutationMode {
  automatic,    // exhaustive when the partition count is small enough, else Monte Carlo
  exact,        // always exhaustive
  monte_carlo,  // always sampled
};

struct PermutationResult {
  double p_value = 1.0;
  bool exact = true;
  std::size_t n_used = 0;
};

/// Balanced partitions above this count are sampled instead of enumerated.
inline constexpr std::size_t kExhaustivePartitionLimit = 20'000;

/// Two statistics closer than this (relative to max(1, |t_obs|)) count as a tie. Sums over
/// the same values in a different order can differ in the last bits.
inline constexpr double kPermutationTieTolerance = 1e-12;

/// Mean cosine to w1 minus mean cosine to w2.
inline double association_score(std::span<const double> a, const std::vector<Vector>& w1,
                                const std::vector<Vector>& w2) {
  if (w1.empty() || w2.empty()) detail::fail(ErrorKind::invalid_argument, "association_score: empty attribute set");
  double s1 = 0.0;
  for (const auto& w : w1) s1 += cosine(a, w);
  double s2 = 0.0;
  for (const auto& w : w2) s2 += cosine(a, w);
  return s1 / static_cast<double>(w1.size()) - s2 / static_cast<double>(w2.size());
}

namespace detail {

inline void validate_weat(const WeatInputs& in) {
  if (in.a1.empty() || in.a2.empty() || in.w1.empty() || in.w2.empty()) {
    fail(ErrorKind::invalid_argument, "weat: every word set must be nonempty");
  }
  const std::size_t dim = in.a1.front().size();
  for (const auto* set : {&in.a1, &in.a2, &in.w1, &in.w2})
    for (const auto& v : *set) {
      if (v.size() != dim) fail(ErrorKind::shape_mismatch, "weat: embeddings have different dimensions");
      require_finite(v, "weat: embedding");
      if (norm(v) == 0.0) fail(ErrorKind::invalid_argument, "weat: zero-norm embedding");
    }
}

/// Association scores of a1 followed by a2.
inline Vector weat_scores(const WeatInputs& in) {
  Vector s;
  s.reserve(in.a1.size() + in.a2.size());
  for (const auto& a : in.a1) s.push_back(association_score(a, in.w1, in.w2));
  for (const auto& a : in.a2) s.push_back(association_score(a, in.w1, in.w2));
  return s;
}

inline double mean(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

/// C(n, k), saturating at `cap + 1` so callers can compare against a limit.
inline std::size_t binomial_capped(std::size_t n, std::size_t k, std::size_t cap) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 value = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    value = value * (n - k + i) / i;
    if (value > cap) return cap + 1;
  }
  return static_cast<std::size_t>(value);
}

}  // namespace detail

/// (mean_{a1} s - mean_{a2} s) / popstd_{a1 u a2} s.
inline double weat_effect_size(const WeatInputs& in) {
  detail::validate_weat(in);
  const Vector s = detail::weat_scores(in);
  const std::span<const double> all(s);
  const double m1 = detail::mean(all.first(in.a1.size()));
  const double m2 = detail::mean(all.subspan(in.a1.size()));
  const double m = detail::mean(all);
  double var = 0.0;
  for (double x : s) var += (x - m) * (x - m);
  var /= static_cast<double>(s.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) detail::fail(ErrorKind::degenerate, "weat_effect_size: all association scores are equal");
  return (m1 - m2) / sd;
}

/// One-sided permutation test of t = mean_{a1} s - mean_{a2} s over equal-size
/// re-partitions of a1 u a2.
///
/// Exhaustive mode counts partitions with t_perm >= t_obs (the observed split included)
/// and divides by C(2n, n). Monte Carlo mode draws `n_perm` random splits and returns
/// (1 + hits) / (1 + n_perm). Random splits come from a partial Fisher-Yates shuffle
/// driven by xoshiro256** seeded with `seed`.
inline PermutationResult weat_permutation_pvalue(const WeatInputs& in, std::size_t n_perm, std::uint64_t seed,
                                                 PermutationMode mode = PermutationMode::automatic) {
  detail::validate_weat(in);
  if (in.a1.size() != in.a2.size()) {
    detail::fail(ErrorKind::invalid_argument, "weat_permutation_pvalue: |A1| and |A2| must be equal");
  }
  if (n_perm == 0) detail::fail(ErrorKind::invalid_argument, "weat_permutation_pvalue: n_perm must be >= 1");

  const Vector s = detail::weat_scores(in);
  const std::size_t half = in.a1.size();
  const std::size_t total_n = s.size();
  double total = 0.0;
  for (double x : s) total += x;
  const auto statistic = [&](double subset_sum) {
    return (2.0 * subset_sum - total) / static_cast<double>(half);
  };

  double observed_sum = 0.0;
  for (std::size_t i = 0; i < half; ++i) observed_sum += s[i];
  const double t_obs = statistic(observed_sum);
  const double threshold = t_obs - kPermutationTieTolerance * std::max(1.0, std::abs(t_obs));

  const std::size_t partitions = detail::binomial_capped(total_n, half, kExhaustivePartitionLimit);
  const bool exhaustive = mode == PermutationMode::exact ||
                          (mode == PermutationMode::automatic && partitions <= kExhaustivePartitionLimit);

  if (exhaustive) {
    if (total_n > 62) detail::fail(ErrorKind::invalid_argument, "weat_permutation_pvalue: too many items to enumerate");
    // Walk all half-size subsets of {0..total_n-1} in lexicographic order.
    std::vector<std::size_t> pick(half);
    for (std::size_t i = 0; i < half; ++i) pick[i] = i;
    std::size_t hits = 0;
    std::size_t count = 0;
    for (;;) {
      double sum = 0.0;
      for (std::size_t idx : pick) sum += s[idx];
      if (statistic(sum) >= threshold) ++hits;
      ++count;
      std::size_t pos = half;
      while (pos > 0 && pick[pos - 1] == total_n - half + pos - 1) --pos;
      if (pos == 0) break;
      ++pick[pos - 1];
      for (std::size_t j = pos; j < half; ++j) pick[j] = pick[j - 1] + 1;
    }
    return {static_cast<double>(hits) / static_cast<double>(count), true, count};
  }

  Rng rng(seed);
  std::vector<std::size_t> order(total_n);
  std::size_t hits = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    for (std::size_t i = 0; i < total_n; ++i) order[i] = i;
    double sum = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(total_n - i));
      std::swap(order[i], order[j]);
      sum += s[order[i]];
    }
    if (statistic(sum) >= threshold) ++hits;
  }
  return {static_cast<double>(1 + hits) / static_cast<double>(1 + n_perm), false, n_perm};
}

struct PermutationOptions {
  std::size_t n_perm = 10'000;
  std::uint64_t seed = 0;
  PermutationMode mode = PermutationMode::automatic;
};

/// Effect size plus, when requested, the permutation p-value.
inline WeatResult weat(const WeatInputs& in, const std::optional<PermutationOptions>& permutation = {}) {
  WeatResult result;
  result.effect_size = weat_effect_size(in);
  if (permutation) {
    const auto p = weat_permutation_pvalue(in, permutation->n_perm, permutation->seed, permutation->mode);
    result.p_value = p.p_value;
    result.n_permutations_used = p.n_used;
    result.exact = p.exact;
  }
  return result;
}

/// Group labels used to pick the four WEAT sets out of embedding records.
struct WeatLabels {
  std::string a1 = "A1";
  std::string a2 = "A2";
  std::string w1 = "W1";
  std::string w2 = "W2";
};

/// Collects vectors by group label; records with other labels are ignored.
inline WeatInputs group_embeddings(std::span<const EmbeddingRecord> records, const WeatLabels& labels = {}) {
  WeatInputs in;
  std::optional<std::size_t> dim;
  for (const auto& r : records) {
    if (dim && r.vector.size() != *dim) {
      detail::fail(ErrorKind::shape_mismatch, "embedding '" + r.id + "' has dimension " +
                                                  std::to_string(r.vector.size()) + ", expected " +
                                                  std::to_string(*dim));
    }
    dim = r.vector.size();
    if (r.group == labels.a1) in.a1.push_back(r.vector);
    if (r.group == labels.a2) in.a2.push_back(r.vector);
    if (r.group == labels.w1) in.w1.push_back(r.vector);
    if (r.group == labels.w2) in.w2.push_back(r.vector);
  }
  return in;
}

}  // namespace fairlens
