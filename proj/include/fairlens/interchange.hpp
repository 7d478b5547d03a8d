#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "fairlens/error.hpp"
#include "fairlens/numkit.hpp"
#include "json.hpp"

namespace fairlens {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Record kinds
// ---------------------------------------------------------------------------

/// One text item with its embedding and group label ("A1", "A2", "W1", "W2", ...).
struct EmbeddingRecord {
  std::string id;
  std::string group;
  std::string text;
  Vector vector;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

enum class PairVariant { stereo, anti };

/// Per-token natural-log probabilities of one sentence of a counterfactual pair.
/// `modified[i]` marks tokens that carry the demographic information.
struct PllRecord {
  std::string id;
  std::string pair_id;
  PairVariant variant = PairVariant::stereo;
  std::vector<std::string> tokens;
  Vector logprobs;
  std::vector<bool> modified;

  friend bool operator==(const PllRecord&, const PllRecord&) = default;
};

/// Target and prior log-probabilities of one attribute word in one template slot.
struct MaskedSlotRecord {
  std::string template_id;
  std::string target_word;
  std::int64_t group_index = 0;
  double logp_target = 0.0;
  double logp_prior = 0.0;

  friend bool operator==(const MaskedSlotRecord&, const MaskedSlotRecord&) = default;
};

struct CompletionRecord {
  std::string prompt_id;
  std::vector<std::string> completions;

  friend bool operator==(const CompletionRecord&, const CompletionRecord&) = default;
};

/// Row-stochastic attention weights of one head (query rows x key columns).
struct AttentionRecord {
  std::int64_t layer = 0;
  std::int64_t head = 0;
  Matrix weights;

  friend bool operator==(const AttentionRecord&, const AttentionRecord&) = default;
};

using Record = std::variant<EmbeddingRecord, PllRecord, MaskedSlotRecord, CompletionRecord, AttentionRecord>;

inline const char* kind_name(const Record& record) {
  static constexpr const char* names[] = {"embedding", "pll", "masked_slot", "completion", "attention"};
  return names[record.index()];
}

inline const char* to_string(PairVariant v) { return v == PairVariant::stereo ? "stereo" : "anti"; }

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void schema_error(std::size_t line, const std::string& field, const std::string& what) {
  throw InputError(ErrorKind::schema, line, field, "field '" + field + "': " + what);
}

inline const json& member(const json& obj, const char* field, std::size_t line) {
  const auto it = obj.find(field);
  if (it == obj.end()) schema_error(line, field, "missing");
  return *it;
}

inline std::string get_string(const json& obj, const char* field, std::size_t line) {
  const json& v = member(obj, field, line);
  if (!v.is_string()) schema_error(line, field, "expected a string");
  return v.get<std::string>();
}

inline double get_number(const json& v, const char* field, std::size_t line) {
  if (!v.is_number()) schema_error(line, field, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) schema_error(line, field, "non-finite number");
  return x;
}

inline std::int64_t get_integer(const json& obj, const char* field, std::size_t line) {
  const json& v = member(obj, field, line);
  if (!v.is_number_integer()) schema_error(line, field, "expected an integer");
  return v.get<std::int64_t>();
}

inline Vector get_numbers(const json& obj, const char* field, std::size_t line) {
  const json& v = member(obj, field, line);
  if (!v.is_array()) schema_error(line, field, "expected an array of numbers");
  Vector out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(get_number(x, field, line));
  return out;
}

inline std::vector<std::string> get_strings(const json& obj, const char* field, std::size_t line) {
  const json& v = member(obj, field, line);
  if (!v.is_array()) schema_error(line, field, "expected an array of strings");
  std::vector<std::string> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_string()) schema_error(line, field, "expected an array of strings");
    out.push_back(x.get<std::string>());
  }
  return out;
}

inline void validate(const EmbeddingRecord& r, std::size_t line) {
  if (r.vector.empty()) schema_error(line, "vector", "must be nonempty");
}

inline void validate(const PllRecord& r, std::size_t line) {
  if (r.logprobs.size() != r.tokens.size()) schema_error(line, "logprobs", "length differs from tokens");
  if (r.modified.size() != r.tokens.size()) schema_error(line, "modified", "length differs from tokens");
  for (double lp : r.logprobs)
    if (lp > 0.0) schema_error(line, "logprobs", "log-probabilities must be <= 0");
}

inline void validate(const MaskedSlotRecord& r, std::size_t line) {
  if (r.group_index < 0) schema_error(line, "group_index", "must be >= 0");
  if (r.logp_target > 0.0) schema_error(line, "logp_target", "log-probability must be <= 0");
  if (r.logp_prior > 0.0) schema_error(line, "logp_prior", "log-probability must be <= 0");
}

inline void validate(const CompletionRecord& r, std::size_t line) {
  if (r.completions.empty()) schema_error(line, "completions", "must contain at least one completion");
}

inline void validate(const AttentionRecord& r, std::size_t line) {
  if (r.weights.rows() == 0 || r.weights.cols() == 0) schema_error(line, "weights", "must be a nonempty matrix");
  for (std::size_t i = 0; i < r.weights.rows(); ++i) {
    double total = 0.0;
    for (double x : r.weights.row(i)) {
      if (x < 0.0) schema_error(line, "weights", "negative attention weight");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      schema_error(line, "weights", "row " + std::to_string(i) + " does not sum to 1");
    }
  }
}

}  // namespace detail

/// Decodes one interchange object. `line` is used for error messages only.
inline Record record_from_json(const json& obj, std::size_t line = 0) {
  using namespace detail;
  if (!obj.is_object()) throw InputError(ErrorKind::parse, line, "", "expected a JSON object");
  const std::string kind = get_string(obj, "kind", line);

  if (kind == "embedding") {
    EmbeddingRecord r{get_string(obj, "id", line), get_string(obj, "group", line),
                      get_string(obj, "text", line), get_numbers(obj, "vector", line)};
    validate(r, line);
    return r;
  }
  if (kind == "pll") {
    PllRecord r;
    r.id = get_string(obj, "id", line);
    r.pair_id = get_string(obj, "pair_id", line);
    const std::string variant = get_string(obj, "variant", line);
    if (variant == "stereo") {
      r.variant = PairVariant::stereo;
    } else if (variant == "anti") {
      r.variant = PairVariant::anti;
    } else {
      schema_error(line, "variant", "expected \"stereo\" or \"anti\"");
    }
    r.tokens = get_strings(obj, "tokens", line);
    r.logprobs = get_numbers(obj, "logprobs", line);
    const json& flags = member(obj, "modified", line);
    if (!flags.is_array()) schema_error(line, "modified", "expected an array of booleans");
    for (const auto& f : flags) {
      if (!f.is_boolean()) schema_error(line, "modified", "expected an array of booleans");
      r.modified.push_back(f.get<bool>());
    }
    validate(r, line);
    return r;
  }
  if (kind == "masked_slot") {
    MaskedSlotRecord r{get_string(obj, "template_id", line), get_string(obj, "target_word", line),
                       get_integer(obj, "group_index", line),
                       get_number(member(obj, "logp_target", line), "logp_target", line),
                       get_number(member(obj, "logp_prior", line), "logp_prior", line)};
    validate(r, line);
    return r;
  }
  if (kind == "completion") {
    CompletionRecord r{get_string(obj, "prompt_id", line), get_strings(obj, "completions", line)};
    validate(r, line);
    return r;
  }
  if (kind == "attention") {
    AttentionRecord r;
    r.layer = get_integer(obj, "layer", line);
    r.head = get_integer(obj, "head", line);
    const json& rows = member(obj, "weights", line);
    if (!rows.is_array()) schema_error(line, "weights", "expected an array of rows");
    std::vector<Vector> parsed;
    for (const auto& row : rows) {
      if (!row.is_array()) schema_error(line, "weights", "expected an array of rows");
      Vector values;
      for (const auto& x : row) values.push_back(get_number(x, "weights", line));
      if (!parsed.empty() && values.size() != parsed.front().size()) {
        schema_error(line, "weights", "rows have different lengths");
      }
      parsed.push_back(std::move(values));
    }
    r.weights = Matrix::from_rows(parsed);
    validate(r, line);
    return r;
  }
  throw InputError(ErrorKind::schema, line, "kind", "unknown record kind '" + kind + "'");
}

/// Streams records from NDJSON input, calling `sink(Record&&)` once per nonblank line.
/// Only the current line is held in memory.
template <typename Sink>
void for_each_record(std::istream& in, Sink&& sink) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json obj = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded()) throw InputError(ErrorKind::parse, line, "", "malformed JSON");
    sink(record_from_json(obj, line));
  }
}

inline std::vector<Record> parse_records(std::istream& in) {
  std::vector<Record> out;
  for_each_record(in, [&out](Record&& r) { out.push_back(std::move(r)); });
  return out;
}

inline std::vector<Record> parse_records(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_records(in);
}

inline std::vector<Record> read_records_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(ErrorKind::not_found, 0, "", "cannot open " + path.string());
  return parse_records(in);
}

/// Keeps only the records of kind T, in input order.
template <typename T>
std::vector<T> records_of(const std::vector<Record>& records) {
  std::vector<T> out;
  for (const auto& r : records)
    if (const T* p = std::get_if<T>(&r)) out.push_back(*p);
  return out;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

namespace detail {

/// Shortest decimal that parses back to the same double; integral values keep a ".0" like json::dump.
inline void append_number(std::string& out, double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  const std::string_view text(buf, static_cast<std::size_t>(res.ptr - buf));
  out.append(text);
  if (text.find_first_of(".eEn") == std::string_view::npos) out += ".0";
}

inline void append_string(std::string& out, const std::string& s) { out += json(s).dump(); }

inline void append_key(std::string& out, const char* key) {
  out += ",\"";
  out += key;
  out += "\":";
}

inline void append_numbers(std::string& out, std::span<const double> xs) {
  out += '[';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    append_number(out, xs[i]);
  }
  out += ']';
}

inline void append_strings(std::string& out, const std::vector<std::string>& xs) {
  out += '[';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    append_string(out, xs[i]);
  }
  out += ']';
}

}  // namespace detail

/// One NDJSON line (without the trailing newline). Keys appear in schema order.
inline std::string record_to_line(const Record& record) {
  using namespace detail;
  std::string out = "{\"kind\":\"";
  out += kind_name(record);
  out += '"';
  std::visit(
      [&out](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, EmbeddingRecord>) {
          append_key(out, "id"), append_string(out, r.id);
          append_key(out, "group"), append_string(out, r.group);
          append_key(out, "text"), append_string(out, r.text);
          append_key(out, "vector"), append_numbers(out, r.vector);
        } else if constexpr (std::is_same_v<T, PllRecord>) {
          append_key(out, "id"), append_string(out, r.id);
          append_key(out, "pair_id"), append_string(out, r.pair_id);
          append_key(out, "variant"), append_string(out, to_string(r.variant));
          append_key(out, "tokens"), append_strings(out, r.tokens);
          append_key(out, "logprobs"), append_numbers(out, r.logprobs);
          append_key(out, "modified");
          out += '[';
          for (std::size_t i = 0; i < r.modified.size(); ++i) {
            if (i) out += ',';
            out += r.modified[i] ? "true" : "false";
          }
          out += ']';
        } else if constexpr (std::is_same_v<T, MaskedSlotRecord>) {
          append_key(out, "template_id"), append_string(out, r.template_id);
          append_key(out, "target_word"), append_string(out, r.target_word);
          append_key(out, "group_index"), out += std::to_string(r.group_index);
          append_key(out, "logp_target"), append_number(out, r.logp_target);
          append_key(out, "logp_prior"), append_number(out, r.logp_prior);
        } else if constexpr (std::is_same_v<T, CompletionRecord>) {
          append_key(out, "prompt_id"), append_string(out, r.prompt_id);
          append_key(out, "completions"), append_strings(out, r.completions);
        } else {
          append_key(out, "layer"), out += std::to_string(r.layer);
          append_key(out, "head"), out += std::to_string(r.head);
          append_key(out, "weights");
          out += '[';
          for (std::size_t i = 0; i < r.weights.rows(); ++i) {
            if (i) out += ',';
            append_numbers(out, r.weights.row(i));
          }
          out += ']';
        }
      },
      record);
  out += '}';
  return out;
}

inline void write_records(std::ostream& out, std::span<const Record> records) {
  for (const auto& r : records) out << record_to_line(r) << '\n';
}

inline std::string write_records(std::span<const Record> records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_line(r);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset catalog
// ---------------------------------------------------------------------------

enum class DatasetFormat { csv, ndjson };
enum class DatasetSchema { counterfactual_pairs, prompts, annotated_sentences };

/// One concrete dataset configuration. `columns` maps canonical field names
/// (sentence_A, sentence_B, prompt, sentence, label) to the file's column names.
struct DatasetEntry {
  std::string path;
  DatasetFormat format = DatasetFormat::csv;
  DatasetSchema schema = DatasetSchema::prompts;
  std::map<std::string, std::string> columns;
};

struct Catalog {
  std::map<std::string, std::map<std::string, DatasetEntry>> datasets;
  std::filesystem::path base_dir;  // relative entry paths resolve against this

  static Catalog from_json(const json& manifest, std::filesystem::path base_dir = {});
  static Catalog load(const std::filesystem::path& manifest_path);
};

struct CounterfactualPair {
  std::string sentence_a;
  std::string sentence_b;
  friend bool operator==(const CounterfactualPair&, const CounterfactualPair&) = default;
};

struct PromptRow {
  std::string prompt;
  friend bool operator==(const PromptRow&, const PromptRow&) = default;
};

struct AnnotatedSentence {
  std::string sentence;
  std::string label;
  friend bool operator==(const AnnotatedSentence&, const AnnotatedSentence&) = default;
};

using DatasetRows =
    std::variant<std::vector<CounterfactualPair>, std::vector<PromptRow>, std::vector<AnnotatedSentence>>;

inline Catalog Catalog::from_json(const json& manifest, std::filesystem::path base_dir) {
  auto bad = [](const std::string& what) { throw InputError(ErrorKind::schema, 0, "datasets", "catalog: " + what); };
  if (!manifest.is_object() || !manifest.contains("datasets") || !manifest["datasets"].is_object()) {
    bad("expected an object with a \"datasets\" map");
  }
  Catalog catalog;
  catalog.base_dir = std::move(base_dir);
  for (const auto& [name, configs] : manifest["datasets"].items()) {
    if (!configs.is_object()) bad("dataset '" + name + "' must map config names to entries");
    auto& slot = catalog.datasets[name];
    for (const auto& [config, spec] : configs.items()) {
      const std::string where = name + "/" + config;
      if (!spec.is_object()) bad(where + " is not an object");
      DatasetEntry entry;
      if (!spec.contains("path") || !spec["path"].is_string() || spec["path"].get<std::string>().empty()) {
        bad(where + " needs a nonempty \"path\"");
      }
      entry.path = spec["path"].get<std::string>();
      const std::string format = spec.value("format", std::string("csv"));
      if (format == "csv") {
        entry.format = DatasetFormat::csv;
      } else if (format == "ndjson") {
        entry.format = DatasetFormat::ndjson;
      } else {
        bad(where + " has unknown format '" + format + "'");
      }
      const std::string schema = spec.value("schema", std::string());
      if (schema == "counterfactual_pairs") {
        entry.schema = DatasetSchema::counterfactual_pairs;
      } else if (schema == "prompts") {
        entry.schema = DatasetSchema::prompts;
      } else if (schema == "annotated_sentences") {
        entry.schema = DatasetSchema::annotated_sentences;
      } else {
        bad(where + " has unknown schema '" + schema + "'");
      }
      if (spec.contains("columns")) {
        if (!spec["columns"].is_object()) bad(where + " \"columns\" must be an object");
        for (const auto& [canonical, source] : spec["columns"].items()) {
          if (!source.is_string()) bad(where + " column mapping must be strings");
          entry.columns[canonical] = source.get<std::string>();
        }
      }
      slot.emplace(config, std::move(entry));
    }
  }
  return catalog;
}

inline Catalog Catalog::load(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw InputError(ErrorKind::not_found, 0, "", "cannot open catalog " + manifest_path.string());
  json manifest = json::parse(in, nullptr, false);
  if (manifest.is_discarded()) throw InputError(ErrorKind::parse, 0, "", "catalog is not valid JSON");
  return from_json(manifest, manifest_path.parent_path());
}

/// Without a name: sorted dataset names. With a name: sorted config names of that dataset.
inline std::vector<std::string> list_datasets(const Catalog& catalog, const std::optional<std::string>& name = {}) {
  std::vector<std::string> out;
  if (!name) {
    for (const auto& [dataset, configs] : catalog.datasets) out.push_back(dataset);
    return out;
  }
  const auto it = catalog.datasets.find(*name);
  if (it == catalog.datasets.end()) detail::fail(ErrorKind::not_found, "unknown dataset '" + *name + "'");
  for (const auto& [config, entry] : it->second) out.push_back(config);
  return out;
}

namespace detail {

/// RFC 4180 CSV: quoted fields may contain commas, doubled quotes and newlines.
/// Returns rows of fields; a trailing newline does not produce an empty row.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_started = false;
  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        row_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        row_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_started || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        field.clear();
        row.clear();
        row_started = false;
        break;
      default:
        field += c;
        row_started = true;
    }
  }
  if (quoted) throw InputError(ErrorKind::parse, rows.size() + 1, "", "unterminated quoted CSV field");
  if (row_started || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Uniform row access over CSV (header + rows) or NDJSON objects.
struct Table {
  std::optional<std::vector<std::string>> header;  // CSV only
  std::vector<std::map<std::string, std::string>> rows;
};

inline Table read_table(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(ErrorKind::not_found, 0, "", "dataset file not found: " + path.string());
  Table table;
  if (format == DatasetFormat::csv) {
    auto raw = parse_csv(in);
    if (raw.empty()) return table;
    const auto header = raw.front();
    table.header = header;
    for (std::size_t r = 1; r < raw.size(); ++r) {
      if (raw[r].size() != header.size()) {
        throw InputError(ErrorKind::schema, r + 1, "", "row has " + std::to_string(raw[r].size()) +
                                                            " fields, header has " + std::to_string(header.size()));
      }
      std::map<std::string, std::string> row;
      for (std::size_t c = 0; c < header.size(); ++c) row[header[c]] = raw[r][c];
      table.rows.push_back(std::move(row));
    }
    return table;
  }
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj = json::parse(text, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) throw InputError(ErrorKind::parse, line, "", "malformed JSON object");
    std::map<std::string, std::string> row;
    for (const auto& [key, value] : obj.items()) row[key] = value.is_string() ? value.get<std::string>() : value.dump();
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace detail

/// Reads a catalog entry into canonical typed rows. CSV row numbers in errors count the
/// header as row 1.
inline DatasetRows load_dataset(const Catalog& catalog, const std::string& name, const std::string& config) {
  const auto ds = catalog.datasets.find(name);
  if (ds == catalog.datasets.end()) detail::fail(ErrorKind::not_found, "unknown dataset '" + name + "'");
  const auto cfg = ds->second.find(config);
  if (cfg == ds->second.end()) {
    detail::fail(ErrorKind::not_found, "dataset '" + name + "' has no config '" + config + "'");
  }
  const DatasetEntry& entry = cfg->second;
  std::filesystem::path path(entry.path);
  if (path.is_relative()) path = catalog.base_dir / path;
  const detail::Table table = detail::read_table(path, entry.format);
  const std::size_t first_row = entry.format == DatasetFormat::csv ? 2 : 1;

  auto column = [&entry](const char* canonical) {
    const auto it = entry.columns.find(canonical);
    return it == entry.columns.end() ? std::string(canonical) : it->second;
  };
  auto require_columns = [&](std::initializer_list<std::string> cols) {
    if (!table.header) return;
    for (const auto& col : cols)
      if (std::find(table.header->begin(), table.header->end(), col) == table.header->end()) {
        throw InputError(ErrorKind::schema, 1, col, "missing required column '" + col + "'");
      }
  };
  auto cell = [&](std::size_t r, const std::string& col) -> const std::string& {
    const auto it = table.rows[r].find(col);
    if (it == table.rows[r].end()) {
      throw InputError(ErrorKind::schema, r + first_row, col, "missing required column '" + col + "'");
    }
    return it->second;
  };

  switch (entry.schema) {
    case DatasetSchema::counterfactual_pairs: {
      std::vector<CounterfactualPair> rows;
      const auto a = column("sentence_A"), b = column("sentence_B");
      require_columns({a, b});
      for (std::size_t r = 0; r < table.rows.size(); ++r) rows.push_back({cell(r, a), cell(r, b)});
      return rows;
    }
    case DatasetSchema::prompts: {
      std::vector<PromptRow> rows;
      const auto p = column("prompt");
      require_columns({p});
      for (std::size_t r = 0; r < table.rows.size(); ++r) rows.push_back({cell(r, p)});
      return rows;
    }
    case DatasetSchema::annotated_sentences: {
      std::vector<AnnotatedSentence> rows;
      const auto s = column("sentence"), l = column("label");
      require_columns({s, l});
      for (std::size_t r = 0; r < table.rows.size(); ++r) rows.push_back({cell(r, s), cell(r, l)});
      return rows;
    }
  }
  return {};
}

}  // namespace fairlens
