#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fairlens/embed_metrics.hpp"
#include "fairlens/error.hpp"
#include "fairlens/gentext_metrics.hpp"
#include "fairlens/interchange.hpp"
#include "fairlens/prob_metrics.hpp"

namespace fairlens {

inline constexpr const char* kToolName = "fairlens";
inline constexpr const char* kToolVersion = "0.1.0";

struct MetricRequest {
  std::string metric;
  json inputs = json::object();   // role -> path
  json options = json::object();
};

struct AuditSpec {
  std::vector<MetricRequest> metrics;
  std::filesystem::path base_dir;  // relative input paths resolve against this

  static AuditSpec from_json(const json& j, std::filesystem::path base_dir = {}) {
    if (!j.is_object() || !j.contains("metrics") || !j["metrics"].is_array()) {
      throw InputError(ErrorKind::schema, 0, "metrics", "audit spec must be an object with a \"metrics\" array");
    }
    AuditSpec spec;
    spec.base_dir = std::move(base_dir);
    for (const auto& m : j["metrics"]) {
      if (!m.is_object()) throw InputError(ErrorKind::schema, 0, "metrics", "each metric request must be an object");
      MetricRequest req;
      req.metric = m.value("metric", std::string());
      if (m.contains("inputs")) req.inputs = m["inputs"];
      if (m.contains("options")) req.options = m["options"];
      spec.metrics.push_back(std::move(req));
    }
    return spec;
  }

  static AuditSpec load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(ErrorKind::not_found, 0, "", "cannot open audit spec " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw InputError(ErrorKind::parse, 0, "", "audit spec is not valid JSON");
    return from_json(j, path.parent_path());
  }
};

struct MetricOutcome {
  std::size_t index = 0;
  std::string metric;
  bool ok = false;
  json inputs = json::object();  // role -> {path, fnv1a64}
  json result = json::object();
  std::string error;
  std::string error_kind;
};

struct MetricReport {
  std::vector<MetricOutcome> results;
  std::uint64_t seed = 0;
  std::optional<std::string> timestamp;

  bool all_failed() const {
    if (results.empty()) return false;
    for (const auto& r : results)
      if (r.ok) return false;
    return true;
  }

  json to_json() const {
    json j;
    j["provenance"] = {{"tool", kToolName},
                       {"version", kToolVersion},
                       {"seed", seed},
                       {"timestamp", timestamp ? json(*timestamp) : json(nullptr)}};
    j["results"] = json::array();
    for (const auto& r : results) {
      json entry = {{"index", r.index}, {"metric", r.metric}, {"inputs", r.inputs}};
      if (r.ok) {
        entry["status"] = "ok";
        entry["result"] = r.result;
      } else {
        entry["status"] = "error";
        entry["error"] = r.error;
        entry["error_kind"] = r.error_kind;
      }
      j["results"].push_back(std::move(entry));
    }
    return j;
  }
};

namespace detail {

inline std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
  return out;
}

/// Resolves and reads every input of one request, recording path and digest.
class RequestInputs {
 public:
  RequestInputs(const MetricRequest& req, const std::filesystem::path& base, json& provenance)
      : req_(req), base_(base), provenance_(provenance) {
    if (!req.inputs.is_object()) fail(ErrorKind::schema, "\"inputs\" must be an object of paths");
    std::set<std::string> seen;
    for (const auto& [role, path] : req.inputs.items()) {
      if (!path.is_string()) fail(ErrorKind::schema, "input '" + role + "' must be a path string");
      if (!seen.insert(path.get<std::string>()).second) {
        fail(ErrorKind::invalid_argument, "input path '" + path.get<std::string>() + "' is referenced twice");
      }
    }
  }

  bool has(const char* role) const { return req_.inputs.contains(role); }

  /// File contents of the named input.
  std::string read(const char* role) {
    if (!has(role)) fail(ErrorKind::invalid_argument, std::string("missing input '") + role + "'");
    const std::string rel = req_.inputs[role].get<std::string>();
    std::filesystem::path path(rel);
    if (path.is_relative()) path = base_ / path;
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::not_found, "cannot open input '" + std::string(role) + "': " + rel);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    provenance_[role] = {{"path", rel}, {"fnv1a64", fnv1a64_hex(bytes)}};
    return bytes;
  }

  std::vector<Record> records(const char* role) { return parse_records(read(role)); }

  json json_file(const char* role) {
    json j = json::parse(read(role), nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::parse, std::string("input '") + role + "' is not valid JSON");
    return j;
  }

  /// Nonblank lines of a text file.
  std::vector<std::string> lines(const char* role) {
    std::istringstream in(read(role));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
    }
    return out;
  }

 private:
  const MetricRequest& req_;
  const std::filesystem::path& base_;
  json& provenance_;
};

template <typename T>
T option(const json& options, const char* key, T fallback) {
  if (!options.is_object() || !options.contains(key)) return fallback;
  try {
    return options[key].get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::invalid_argument, std::string("option '") + key + "' has the wrong type");
  }
}

inline json counts_json(const CountVector& counts) {
  json j = json::object();
  for (const auto& [g, n] : counts) j[g] = n;
  return j;
}

inline json template_scores_json(const TemplateScores& s) {
  json per = json::array();
  for (const auto& t : s.per_template) per.push_back({{"template_id", t.template_id}, {"score", t.score}});
  return {{"mean", s.mean}, {"per_template", per}};
}

inline std::vector<std::string> corpus_texts(RequestInputs& in) {
  if (in.has("texts")) return in.lines("texts");
  if (in.has("completions")) {
    std::vector<std::string> texts;
    for (auto& c : records_of<CompletionRecord>(in.records("completions")))
      texts.insert(texts.end(), c.completions.begin(), c.completions.end());
    return texts;
  }
  fail(ErrorKind::invalid_argument, "needs a 'texts' or 'completions' input");
}

/// Adds the optional distance-to-reference fields of dem_rep / stereo_assoc.
inline void add_distance(json& result, const CountVector& counts, const json& options) {
  if (!options.is_object() || !options.contains("reference")) return;
  std::map<std::string, double> reference;
  try {
    reference = options["reference"].get<std::map<std::string, double>>();
  } catch (const json::exception&) {
    fail(ErrorKind::invalid_argument, "option 'reference' must map groups to probabilities");
  }
  const std::string metric = option<std::string>(options, "distance", "tv");
  if (metric != "tv" && metric != "kl") fail(ErrorKind::invalid_argument, "option 'distance' must be tv or kl");
  result["distance_metric"] = metric;
  result["distance"] = normalize_and_distance(counts, reference, metric == "tv" ? Distance::tv : Distance::kl);
}

inline json run_weat(RequestInputs& in, const json& opt, std::uint64_t seed) {
  WeatLabels labels;
  labels.a1 = option<std::string>(opt, "a1", labels.a1);
  labels.a2 = option<std::string>(opt, "a2", labels.a2);
  labels.w1 = option<std::string>(opt, "w1", labels.w1);
  labels.w2 = option<std::string>(opt, "w2", labels.w2);
  const auto records = records_of<EmbeddingRecord>(in.records("embeddings"));
  const WeatInputs inputs = group_embeddings(records, labels);

  json result;
  result["effect_size"] = weat_effect_size(inputs);
  result["sizes"] = {{"A1", inputs.a1.size()}, {"A2", inputs.a2.size()}, {"W1", inputs.w1.size()}, {"W2", inputs.w2.size()}};
  const std::string mode = option<std::string>(opt, "permutation", "auto");
  const bool balanced = inputs.a1.size() == inputs.a2.size();
  if (mode == "none" || (mode == "auto" && !balanced)) {
    result["p_value"] = nullptr;
    return result;
  }
  PermutationMode pm = PermutationMode::automatic;
  if (mode == "exact") {
    pm = PermutationMode::exact;
  } else if (mode == "monte_carlo") {
    pm = PermutationMode::monte_carlo;
  } else if (mode != "auto") {
    fail(ErrorKind::invalid_argument, "option 'permutation' must be auto, exact, monte_carlo or none");
  }
  const auto n_perm = option<std::size_t>(opt, "n_perm", 10'000);
  const auto p = weat_permutation_pvalue(inputs, n_perm, seed, pm);
  result["p_value"] = p.p_value;
  result["exact"] = p.exact;
  result["n_permutations_used"] = p.n_used;
  result["seed"] = seed;
  return result;
}

inline json run_pll(RequestInputs& in, PllScorer scorer) {
  const auto records = records_of<PllRecord>(in.records("pll"));
  const auto rate = pll_bias_rate(records, scorer);
  json pairs = json::array();
  for (const auto& p : rate.pairs) {
    pairs.push_back(
        {{"pair_id", p.pair_id}, {"score_stereo", p.score_stereo}, {"score_anti", p.score_anti}, {"biased", p.biased}});
  }
  return {{"bias_rate", rate.rate}, {"pairs", pairs}};
}

inline std::vector<std::string> hurt_lexicon(RequestInputs& in) {
  const std::string bytes = in.read("lexicon");
  json j = json::parse(bytes, nullptr, false);
  if (!j.is_discarded() && j.is_array()) {
    std::vector<std::string> words;
    for (const auto& w : j) {
      if (!w.is_string()) fail(ErrorKind::schema, "hurt lexicon must be a list of strings");
      words.push_back(w.get<std::string>());
    }
    return words;
  }
  std::istringstream lines(bytes);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(lines, line)) {
    for (auto& t : tokenize(line)) words.push_back(t);
  }
  return words;
}

inline json run_request(const MetricRequest& req, const std::filesystem::path& base, std::uint64_t seed,
                        json& provenance) {
  RequestInputs in(req, base, provenance);
  const json& opt = req.options;
  if (!opt.is_object()) fail(ErrorKind::schema, "\"options\" must be an object");
  const std::uint64_t request_seed = option<std::uint64_t>(opt, "seed", seed);

  if (req.metric == "weat") return run_weat(in, opt, request_seed);
  if (req.metric == "lpbs") return template_scores_json(lpbs(records_of<MaskedSlotRecord>(in.records("slots"))));
  if (req.metric == "cbs") return template_scores_json(cbs(records_of<MaskedSlotRecord>(in.records("slots"))));
  if (req.metric == "cps") return run_pll(in, PllScorer::cps);
  if (req.metric == "aul") return run_pll(in, PllScorer::aul);
  if (req.metric == "dem_rep" || req.metric == "stereo_assoc") {
    const auto texts = corpus_texts(in);
    const auto lexicon = DemLexicon::from_json(in.json_file("lexicon"));
    json result;
    CountVector counts;
    if (req.metric == "dem_rep") {
      counts = dem_rep(texts, lexicon);
    } else {
      const auto target = option<std::string>(opt, "target", "");
      if (target.empty()) fail(ErrorKind::invalid_argument, "stereo_assoc needs option 'target'");
      counts = stereo_assoc(texts, lexicon, target);
      result["target"] = target;
    }
    result["counts"] = counts_json(counts);
    result["n_texts"] = texts.size();
    add_distance(result, counts, opt);
    return result;
  }
  if (req.metric == "honest") {
    const auto completions = records_of<CompletionRecord>(in.records("completions"));
    const auto words = hurt_lexicon(in);
    const double score = honest(completions, words);
    const std::size_t k = completions.front().completions.size();
    if (opt.contains("k") && option<std::size_t>(opt, "k", k) != k) {
      fail(ErrorKind::invalid_argument, "completion files hold k=" + std::to_string(k) + ", option 'k' disagrees");
    }
    return {{"score", score}, {"k", k}, {"prompts", completions.size()}};
  }
  fail(ErrorKind::invalid_argument, "unknown metric '" + req.metric + "'");
}

}  // namespace detail

/// Runs every request, converting per-request failures into error entries.
inline MetricReport run_audit(const AuditSpec& spec, std::uint64_t seed, std::optional<std::string> timestamp = {}) {
  MetricReport report;
  report.seed = seed;
  report.timestamp = std::move(timestamp);
  for (std::size_t i = 0; i < spec.metrics.size(); ++i) {
    const auto& req = spec.metrics[i];
    MetricOutcome outcome;
    outcome.index = i;
    outcome.metric = req.metric;
    try {
      outcome.result = detail::run_request(req, spec.base_dir, seed, outcome.inputs);
      outcome.ok = true;
    } catch (const Error& e) {
      outcome.error = e.what();
      outcome.error_kind = to_string(e.kind());
    } catch (const json::exception& e) {
      outcome.error = e.what();
      outcome.error_kind = to_string(ErrorKind::parse);
    }
    report.results.push_back(std::move(outcome));
  }
  return report;
}

enum class ReportFormat { json, csv, md };

namespace detail {

inline std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

/// Leaves of a JSON tree as (dotted path, value) pairs in key order.
inline void flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (node.is_array()) {
    for (std::size_t i = 0; i < node.size(); ++i) flatten(node[i], prefix + "[" + std::to_string(i) + "]", out);
  } else {
    out.emplace_back(prefix, scalar_text(node));
  }
}

struct ReportRow {
  std::size_t index;
  std::string metric, status, name, value;
};

inline std::vector<ReportRow> report_rows(const MetricReport& report) {
  std::vector<ReportRow> rows;
  for (const auto& r : report.results) {
    if (!r.ok) {
      rows.push_back({r.index, r.metric, "error", "error", r.error});
      continue;
    }
    std::vector<std::pair<std::string, std::string>> leaves;
    flatten(r.result, "", leaves);
    for (auto& [name, value] : leaves) rows.push_back({r.index, r.metric, "ok", name, value});
  }
  return rows;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

}  // namespace detail

/// json: canonical (sorted keys, 2-space indent). csv/md: one row per result leaf.
inline std::string render_report(const MetricReport& report, ReportFormat format) {
  if (format == ReportFormat::json) return report.to_json().dump(2) + "\n";
  const auto rows = detail::report_rows(report);
  std::string out;
  if (format == ReportFormat::csv) {
    out = "index,metric,status,name,value\n";
    for (const auto& r : rows) {
      out += std::to_string(r.index) + "," + detail::csv_field(r.metric) + "," + r.status + "," +
             detail::csv_field(r.name) + "," + detail::csv_field(r.value) + "\n";
    }
    return out;
  }
  out = "| index | metric | status | name | value |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + std::to_string(r.index) + " | " + detail::md_cell(r.metric) + " | " + r.status + " | " +
           detail::md_cell(r.name) + " | " + detail::md_cell(r.value) + " |\n";
  }
  return out;
}

}  // namespace fairlens
