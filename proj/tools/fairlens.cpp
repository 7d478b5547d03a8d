// fairlens: batch bias audits, counterfactual augmentation, embedding debiasing and
// kernel gradient checks over interchange NDJSON files.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fairlens/fairlens.hpp"

namespace {

using namespace fairlens;

enum ExitCode : int { kOk = 0, kUsage = 1, kInput = 2, kTotalFailure = 3 };

std::optional<std::string> reproducible_timestamp() {
  const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
  if (!epoch || !*epoch) return std::nullopt;
  const std::time_t t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf);
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::not_found, "cannot write " + path);
  out << bytes;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(ErrorKind::not_found, 0, "", "cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InputError(ErrorKind::parse, 0, "", path + " is not valid JSON");
  return j;
}

int list_datasets_cmd(const std::string& catalog_path, const std::string& dataset) {
  const Catalog catalog = Catalog::load(catalog_path);
  const auto names = dataset.empty() ? list_datasets(catalog) : list_datasets(catalog, dataset);
  for (const auto& n : names) std::cout << n << '\n';
  return kOk;
}

int audit_cmd(const std::string& spec_path, const std::string& out_path, const std::string& format,
              std::uint64_t seed) {
  const AuditSpec spec = AuditSpec::load(spec_path);
  const MetricReport report = run_audit(spec, seed, reproducible_timestamp());
  const ReportFormat fmt = format == "csv" ? ReportFormat::csv : format == "md" ? ReportFormat::md : ReportFormat::json;
  write_file(out_path, render_report(report, fmt));
  for (const auto& r : report.results)
    if (!r.ok) std::cerr << "request " << r.index << " (" << r.metric << ") failed: " << r.error << '\n';
  return report.all_failed() ? kTotalFailure : kOk;
}

/// Text records are arbitrary JSON objects; the selected string fields are flipped.
int augment_cmd(const std::string& input, const std::string& pairs_path, const std::string& mode,
                const std::vector<std::string>& columns, const std::string& out_path) {
  const auto lexicon = CounterfactualLexicon::from_json(read_json_file(pairs_path));
  std::ifstream in(input, std::ios::binary);
  if (!in) throw InputError(ErrorKind::not_found, 0, "", "cannot open " + input);

  std::vector<json> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) throw InputError(ErrorKind::parse, line_no, "", "malformed JSON object");
    for (const auto& c : columns)
      if (!obj.contains(c) || !obj[c].is_string()) {
        throw InputError(ErrorKind::schema, line_no, c, "column '" + c + "' is missing or not a string");
      }
    records.push_back(std::move(obj));
  }

  auto flip = [&](const json& obj) {
    json out = obj;
    for (auto& [key, value] : out.items()) {
      const bool selected = columns.empty() ? value.is_string()
                                            : std::find(columns.begin(), columns.end(), key) != columns.end();
      if (selected) value = flip_text(value.get<std::string>(), lexicon);
    }
    return out;
  };

  std::string out;
  if (mode == "one-sided") {
    for (const auto& r : records) out += flip(r).dump() + "\n";
  } else {
    for (const auto& r : records) out += r.dump() + "\n";
    for (const auto& r : records) {
      const json f = flip(r);
      if (f != r) out += f.dump() + "\n";
    }
  }
  write_file(out_path, out);
  return kOk;
}

/// Pairs come from embedding records under exactly two group labels: the i-th record of
/// the first label (by first appearance) pairs with the i-th record of the second.
int debias_cmd(const std::string& pairs_path, std::size_t components, const std::string& input,
               const std::string& out_path, const std::string& subspace_out) {
  const auto pair_records = records_of<EmbeddingRecord>(read_records_file(pairs_path));
  std::vector<std::string> labels;
  std::map<std::string, std::vector<Vector>> by_label;
  for (const auto& r : pair_records) {
    if (!by_label.count(r.group)) labels.push_back(r.group);
    by_label[r.group].push_back(r.vector);
  }
  if (labels.size() != 2) {
    throw Error(ErrorKind::schema, "pairs file must use exactly two group labels, found " + std::to_string(labels.size()));
  }
  const auto& xs = by_label[labels[0]];
  const auto& ys = by_label[labels[1]];
  if (xs.size() != ys.size()) throw Error(ErrorKind::schema, "the two pair groups have different sizes");
  std::vector<std::pair<Vector, Vector>> pairs;
  for (std::size_t i = 0; i < xs.size(); ++i) pairs.emplace_back(xs[i], ys[i]);

  const BiasSubspace subspace = fit_bias_subspace(pairs, components);
  if (!subspace_out.empty()) write_file(subspace_out, subspace.to_json().dump(2) + "\n");

  std::vector<Record> out;
  for (auto& rec : read_records_file(input)) {
    auto* emb = std::get_if<EmbeddingRecord>(&rec);
    if (!emb) throw Error(ErrorKind::schema, std::string("input holds a non-embedding record (") + kind_name(rec) + ")");
    emb->vector = project_out(emb->vector, subspace);
    out.push_back(std::move(rec));
  }
  write_file(out_path, write_records(out));
  return kOk;
}

int grad_check_cmd(const std::string& kernel, std::size_t trials, std::uint64_t seed) {
  std::vector<std::string> kernels = kernel.empty() ? gradcheck::kernel_names() : std::vector<std::string>{kernel};
  bool ok = true;
  for (const auto& name : kernels) {
    const auto report = gradcheck::check_kernel(name, trials, seed);
    std::cout << (report.passed() ? "PASS " : "FAIL ") << name << " trials=" << report.trials
              << " failures=" << report.failures << " worst_rel_error=" << report.worst_error << '\n';
    ok = ok && report.passed();
  }
  return ok ? kOk : kTotalFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias audits and debiasing kernels for language-model outputs"};
  app.require_subcommand(1);

  std::string catalog_path = "datasets/catalog.json";
  std::string dataset;
  auto* list = app.add_subcommand("list-datasets", "List catalog datasets, or the configs of one dataset");
  list->add_option("--catalog", catalog_path, "Catalog manifest");
  list->add_option("--dataset", dataset, "Dataset whose configs to list");

  std::string spec_path, out_path, format = "json";
  std::uint64_t seed = 0;
  auto* audit = app.add_subcommand("audit", "Run the metric requests of an audit spec");
  audit->add_option("--spec", spec_path, "Audit spec JSON")->required();
  audit->add_option("--out", out_path, "Report output path")->required();
  audit->add_option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv", "md"}));
  audit->add_option("--seed", seed, "Seed for every randomised metric");

  std::string input, pairs_path, mode;
  std::vector<std::string> columns;
  auto* augment = app.add_subcommand("augment", "Counterfactual data augmentation of NDJSON text records");
  augment->add_option("--input", input, "Input NDJSON records")->required();
  augment->add_option("--pairs", pairs_path, "Counterfactual word pairs (JSON)")->required();
  augment->add_option("--mode", mode, "one-sided or two-sided")->required()->check(CLI::IsMember({"one-sided", "two-sided"}));
  augment->add_option("--columns", columns, "Fields to augment (default: all string fields)")->delimiter(',');
  augment->add_option("--out", out_path, "Output NDJSON")->required();

  std::string pairs_embeddings, subspace_out;
  std::size_t components = 1;
  auto* debias = app.add_subcommand("debias-embeddings", "Remove a fitted bias subspace from embeddings");
  debias->add_option("--pairs-embeddings", pairs_embeddings, "Embedding records of counterfactual pairs")->required();
  debias->add_option("--components", components, "Number of bias directions")->required()->check(CLI::PositiveNumber);
  debias->add_option("--input", input, "Embedding records to debias")->required();
  debias->add_option("--out", out_path, "Output NDJSON")->required();
  debias->add_option("--subspace-out", subspace_out, "Write the fitted subspace as JSON");

  std::string kernel;
  std::size_t trials = 100;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the loss kernel gradients");
  grad->add_option("--kernel", kernel, "Single kernel to check")->check(CLI::IsMember(gradcheck::kernel_names()));
  grad->add_option("--trials", trials, "Random points per kernel");
  grad->add_option("--seed", seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*list) return list_datasets_cmd(catalog_path, dataset);
    if (*audit) return audit_cmd(spec_path, out_path, format, seed);
    if (*augment) return augment_cmd(input, pairs_path, mode, columns, out_path);
    if (*debias) return debias_cmd(pairs_embeddings, components, input, out_path, subspace_out);
    if (*grad) return grad_check_cmd(kernel, trials, seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  }
  return kUsage;
}
