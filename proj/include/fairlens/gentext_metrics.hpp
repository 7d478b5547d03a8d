#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fairlens/error.hpp"
#include "fairlens/interchange.hpp"

namespace fairlens {

namespace detail {

// Bytes >= 0x80 belong to words so UTF-8 letters are never split apart.
inline bool is_word_byte(unsigned char c) noexcept {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline char ascii_lower(char c) noexcept { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = ascii_lower(c);
  return out;
}

}  // namespace detail

/// Lowercased runs of alphanumeric characters; everything else separates words.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !detail::is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && detail::is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.push_back(detail::lowercase(text.substr(start, i - start)));
  }
  return tokens;
}

/// Demographic groups and their associated words (stored lowercase).
class DemLexicon {
 public:
  DemLexicon() = default;
  explicit DemLexicon(const std::map<std::string, std::vector<std::string>>& groups) {
    for (const auto& [name, words] : groups) {
      if (words.empty()) detail::fail(ErrorKind::invalid_argument, "lexicon group '" + name + "' has no words");
      auto& dst = groups_[name];
      for (const auto& w : words) dst.push_back(detail::lowercase(w));
    }
  }

  /// {"group": ["word", ...], ...}
  static DemLexicon from_json(const json& j) {
    if (!j.is_object()) detail::fail(ErrorKind::schema, "lexicon must be a JSON object of word lists");
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& [name, words] : j.items()) {
      if (!words.is_array()) detail::fail(ErrorKind::schema, "lexicon group '" + name + "' must be a list");
      for (const auto& w : words) {
        if (!w.is_string()) detail::fail(ErrorKind::schema, "lexicon group '" + name + "' must contain strings");
        groups[name].push_back(w.get<std::string>());
      }
      if (words.empty()) groups[name];
    }
    return DemLexicon(groups);
  }

  const std::map<std::string, std::vector<std::string>>& groups() const noexcept { return groups_; }

 private:
  std::map<std::string, std::vector<std::string>> groups_;
};

using CountVector = std::map<std::string, std::int64_t>;

namespace detail {

using TokenCounts = std::unordered_map<std::string, std::int64_t>;

inline TokenCounts count_tokens(std::string_view text) {
  TokenCounts counts;
  for (auto& t : tokenize(text)) ++counts[t];
  return counts;
}

inline CountVector zero_counts(const DemLexicon& lexicon) {
  CountVector out;
  for (const auto& [name, words] : lexicon.groups()) out[name] = 0;
  return out;
}

inline void add_group_counts(CountVector& out, const DemLexicon& lexicon, const TokenCounts& counts) {
  for (const auto& [name, words] : lexicon.groups())
    for (const auto& w : words) {
      const auto it = counts.find(w);
      if (it != counts.end()) out[name] += it->second;
    }
}

}  // namespace detail

/// Demographic representation: per group, total occurrences of its words across all texts.
inline CountVector dem_rep(std::span<const std::string> texts, const DemLexicon& lexicon) {
  CountVector out = detail::zero_counts(lexicon);
  for (const auto& text : texts) detail::add_group_counts(out, lexicon, detail::count_tokens(text));
  return out;
}

/// Stereotypical association: like dem_rep, restricted to texts containing `target`.
inline CountVector stereo_assoc(std::span<const std::string> texts, const DemLexicon& lexicon,
                                std::string_view target) {
  const std::string needle = detail::lowercase(target);
  CountVector out = detail::zero_counts(lexicon);
  for (const auto& text : texts) {
    const auto counts = detail::count_tokens(text);
    if (counts.count(needle)) detail::add_group_counts(out, lexicon, counts);
  }
  return out;
}

enum class Distance { tv, kl };

/// Smoothing added to the reference inside the KL logarithm.
inline constexpr double kKlEpsilon = 1e-9;

/// Normalises counts to a distribution p and compares it with `reference` q:
/// tv = 0.5 * sum |p - q|, kl = sum p ln(p / (q + eps)).
inline double normalize_and_distance(const CountVector& counts, const std::map<std::string, double>& reference,
                                     Distance metric) {
  if (counts.size() != reference.size()) {
    detail::fail(ErrorKind::shape_mismatch, "reference distribution groups differ from the count groups");
  }
  double total = 0.0;
  double ref_total = 0.0;
  for (const auto& [group, n] : counts) {
    const auto it = reference.find(group);
    if (it == reference.end()) detail::fail(ErrorKind::shape_mismatch, "reference lacks group '" + group + "'");
    if (n < 0) detail::fail(ErrorKind::invalid_argument, "negative count for group '" + group + "'");
    if (!(it->second >= 0.0) || !std::isfinite(it->second)) {
      detail::fail(ErrorKind::not_distribution, "reference probability for '" + group + "' is invalid");
    }
    total += static_cast<double>(n);
    ref_total += it->second;
  }
  if (std::abs(ref_total - 1.0) > 1e-9) detail::fail(ErrorKind::not_distribution, "reference does not sum to 1");
  if (total == 0.0) detail::fail(ErrorKind::degenerate, "all counts are zero");

  double d = 0.0;
  for (const auto& [group, n] : counts) {
    const double p = static_cast<double>(n) / total;
    const double q = reference.at(group);
    if (metric == Distance::tv) {
      d += std::abs(p - q);
    } else if (p > 0.0) {
      d += p * std::log(p / (q + kKlEpsilon));
    }
  }
  return metric == Distance::tv ? 0.5 * d : d;
}

/// Fraction of completions containing at least one lexicon token, over all prompts.
inline double honest(std::span<const CompletionRecord> completions, std::span<const std::string> hurt_lexicon) {
  if (hurt_lexicon.empty()) detail::fail(ErrorKind::invalid_argument, "honest: hurt lexicon is empty");
  if (completions.empty()) detail::fail(ErrorKind::invalid_argument, "honest: no completion records");
  std::set<std::string> lexicon;
  for (const auto& w : hurt_lexicon) lexicon.insert(detail::lowercase(w));

  const std::size_t k = completions.front().completions.size();
  std::size_t hurtful = 0;
  for (const auto& record : completions) {
    if (record.completions.size() != k) {
      detail::fail(ErrorKind::invalid_argument, "honest: prompt '" + record.prompt_id + "' has " +
                                                    std::to_string(record.completions.size()) +
                                                    " completions, expected " + std::to_string(k));
    }
    for (const auto& text : record.completions) {
      for (const auto& token : tokenize(text)) {
        if (lexicon.count(token)) {
          ++hurtful;
          break;
        }
      }
    }
  }
  return static_cast<double>(hurtful) / static_cast<double>(completions.size() * k);
}

}  // namespace fairlens
