#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fairlens/error.hpp"
#include "fairlens/gentext_metrics.hpp"
#include "fairlens/interchange.hpp"
#include "fairlens/numkit.hpp"

namespace fairlens {

// ---------------------------------------------------------------------------
// Counterfactual data augmentation
// ---------------------------------------------------------------------------

/// Bidirectional word pairs (he <-> she, ...). Words are stored lowercase and each word
/// may belong to at most one pair.
class CounterfactualLexicon {
 public:
  CounterfactualLexicon() = default;
  explicit CounterfactualLexicon(const std::vector<std::pair<std::string, std::string>>& pairs) {
    for (const auto& [a_raw, b_raw] : pairs) {
      std::string a = detail::lowercase(a_raw);
      std::string b = detail::lowercase(b_raw);
      if (a.empty() || b.empty()) detail::fail(ErrorKind::invalid_argument, "counterfactual pair with an empty word");
      if (a == b) detail::fail(ErrorKind::invalid_argument, "counterfactual pair maps '" + a + "' to itself");
      for (const auto& w : {a, b}) {
        if (swap_.count(w)) detail::fail(ErrorKind::invalid_argument, "word '" + w + "' appears in two pairs");
      }
      swap_.emplace(a, b);
      swap_.emplace(b, a);
      pairs_.emplace_back(std::move(a), std::move(b));
    }
  }

  /// Accepts [["he","she"], ...] or {"he": "she", ...}.
  static CounterfactualLexicon from_json(const json& j) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (j.is_object()) {
      for (const auto& [a, b] : j.items()) {
        if (!b.is_string()) detail::fail(ErrorKind::schema, "pair map values must be strings");
        pairs.emplace_back(a, b.get<std::string>());
      }
    } else if (j.is_array()) {
      for (const auto& p : j) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string()) {
          detail::fail(ErrorKind::schema, "pair list entries must be two-element string arrays");
        }
        pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
    } else {
      detail::fail(ErrorKind::schema, "pairs must be a JSON array or object");
    }
    return CounterfactualLexicon(pairs);
  }

  /// Counterpart of a lowercase word, or nullptr.
  const std::string* counterpart(const std::string& lower_word) const {
    const auto it = swap_.find(lower_word);
    return it == swap_.end() ? nullptr : &it->second;
  }

  const std::vector<std::pair<std::string, std::string>>& pairs() const noexcept { return pairs_; }

 private:
  std::unordered_map<std::string, std::string> swap_;
  std::vector<std::pair<std::string, std::string>> pairs_;
};

/// Swaps every lexicon word in one pass. A replacement keeps a leading capital when the
/// original word started with one; all other letters come out lowercase.
inline std::string flip_text(std::string_view text, const CounterfactualLexicon& lexicon) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (!detail::is_word_byte(static_cast<unsigned char>(text[i]))) {
      out += text[i++];
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && detail::is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    const std::string_view word = text.substr(start, i - start);
    const std::string* swap = lexicon.counterpart(detail::lowercase(word));
    if (!swap) {
      out += word;
      continue;
    }
    std::string replacement = *swap;
    if (word.front() >= 'A' && word.front() <= 'Z' && replacement.front() >= 'a' && replacement.front() <= 'z') {
      replacement.front() = static_cast<char>(replacement.front() - 'a' + 'A');
    }
    out += replacement;
  }
  return out;
}

enum class CdaMode { one_sided, two_sided };

/// one_sided: every text replaced by its flip. two_sided: all originals, then the flips
/// that differ from their original, in input order.
inline std::vector<std::string> cda_augment(std::span<const std::string> texts, const CounterfactualLexicon& lexicon,
                                            CdaMode mode) {
  std::vector<std::string> out;
  if (mode == CdaMode::one_sided) {
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(flip_text(t, lexicon));
    return out;
  }
  out.assign(texts.begin(), texts.end());
  for (const auto& t : texts) {
    std::string flipped = flip_text(t, lexicon);
    if (flipped != t) out.push_back(std::move(flipped));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bias subspace
// ---------------------------------------------------------------------------

struct BiasSubspace {
  std::vector<Vector> basis;  // orthonormal
  std::size_t dim = 0;
  Vector explained;  // eigenvalue of each basis vector

  json to_json() const {
    json j;
    j["dim"] = dim;
    j["basis"] = basis;
    j["explained"] = explained;
    return j;
  }

  static BiasSubspace from_json(const json& j) {
    BiasSubspace s;
    try {
      s.dim = j.at("dim").get<std::size_t>();
      s.basis = j.at("basis").get<std::vector<Vector>>();
      s.explained = j.at("explained").get<Vector>();
    } catch (const json::exception& e) {
      detail::fail(ErrorKind::schema, std::string("bias subspace: ") + e.what());
    }
    if (s.explained.size() != s.basis.size()) {
      detail::fail(ErrorKind::schema, "bias subspace: explained and basis lengths differ");
    }
    for (std::size_t i = 0; i < s.basis.size(); ++i) {
      if (s.basis[i].size() != s.dim) detail::fail(ErrorKind::shape_mismatch, "bias subspace: basis vector dimension");
      if (std::abs(norm(s.basis[i]) - 1.0) > 1e-12) detail::fail(ErrorKind::schema, "bias subspace: basis not unit-norm");
      for (std::size_t k = 0; k < i; ++k)
        if (std::abs(dot(s.basis[i], s.basis[k])) > 1e-10) {
          detail::fail(ErrorKind::schema, "bias subspace: basis not orthogonal");
        }
    }
    return s;
  }
};

/// PCA of counterfactual pair deviations. Each pair (x, y) contributes x - m and y - m,
/// m = (x + y) / 2; the covariance is uncentered and divided by the deviation count.
inline BiasSubspace fit_bias_subspace(std::span<const std::pair<Vector, Vector>> pairs, std::size_t n_components) {
  if (pairs.empty()) detail::fail(ErrorKind::invalid_argument, "fit_bias_subspace: no pairs");
  const std::size_t dim = pairs.front().first.size();
  if (dim == 0) detail::fail(ErrorKind::invalid_argument, "fit_bias_subspace: empty vectors");
  if (n_components == 0 || n_components > dim) {
    detail::fail(ErrorKind::invalid_argument, "fit_bias_subspace: need 1 <= n_components <= dim");
  }
  Matrix cov(dim, dim);
  for (const auto& [x, y] : pairs) {
    if (x.size() != dim || y.size() != dim) detail::fail(ErrorKind::shape_mismatch, "fit_bias_subspace: dimension mismatch");
    detail::require_finite(x, "fit_bias_subspace: embedding");
    detail::require_finite(y, "fit_bias_subspace: embedding");
    Vector dev(dim);
    for (std::size_t i = 0; i < dim; ++i) dev[i] = x[i] - 0.5 * (x[i] + y[i]);
    // y - m is -dev, so both deviations add the same outer product.
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) cov(i, j) += 2.0 * dev[i] * dev[j];
  }
  bool all_zero = true;
  const double count = 2.0 * static_cast<double>(pairs.size());
  for (double& c : cov.data()) {
    c /= count;
    all_zero = all_zero && c == 0.0;
  }
  if (all_zero) detail::fail(ErrorKind::degenerate, "fit_bias_subspace: all pairs are identical");

  BiasSubspace subspace;
  subspace.dim = dim;
  for (auto& pair : top_eigenvectors(cov, n_components)) {
    subspace.explained.push_back(pair.value);
    subspace.basis.push_back(std::move(pair.vector));
  }
  return subspace;
}

/// h minus its projection onto the subspace.
inline Vector project_out(std::span<const double> h, const BiasSubspace& subspace) {
  if (h.size() != subspace.dim) detail::fail(ErrorKind::shape_mismatch, "project_out: dimension mismatch");
  detail::require_finite(h, "project_out: vector");
  Vector out(h.begin(), h.end());
  for (const auto& v : subspace.basis) {
    const double c = dot(h, v);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= c * v[i];
  }
  return out;
}

/// true where the parameter name contains any of the substrings (case-sensitive).
inline std::vector<bool> select_unfrozen(std::span<const std::string> param_names,
                                         std::span<const std::string> substrings) {
  std::vector<bool> out;
  out.reserve(param_names.size());
  for (const auto& name : param_names) {
    bool keep = false;
    for (const auto& s : substrings) keep = keep || name.find(s) != std::string::npos;
    out.push_back(keep);
  }
  return out;
}

}  // namespace fairlens
