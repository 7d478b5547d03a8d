#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "fairlens/interchange.hpp"
#include "fairlens/rng.hpp"
#include "test_support.hpp"

using namespace fairlens;
using testing_support::fixture;

namespace {

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / ("fairlens_interchange_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

void write(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

template <typename F>
InputError capture(F&& f) {
  try {
    f();
  } catch (const InputError& e) {
    return e;
  }
  ADD_FAILURE() << "expected an InputError";
  return InputError(ErrorKind::parse, 0, "", "");
}

}  // namespace

TEST(Parse, SchemaExample) {
  const auto recs = parse_records(R"({"kind":"embedding","id":"a","group":"A1","text":"he","vector":[1,0]})");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(std::get<EmbeddingRecord>(recs[0]), (EmbeddingRecord{"a", "A1", "he", {1, 0}}));
}

TEST(Parse, EmptyInputAndBlankLines) {
  EXPECT_TRUE(parse_records("").empty());
  EXPECT_EQ(parse_records("\n\n  \n").size(), 0u);
}

TEST(Parse, ErrorsCarryLineAndField) {
  const std::string two = R"({"kind":"embedding","id":"a","group":"A1","text":"he","vector":[1,0]})" "\n";
  auto e = capture([&] { parse_records(two + R"({"kind":"bogus"})"); });
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.kind(), ErrorKind::schema);

  e = capture([&] { parse_records(two + "{not json\n"); });
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.kind(), ErrorKind::parse);

  e = capture([] { parse_records(R"({"kind":"pll","id":"x","pair_id":"p","variant":"stereo","tokens":["a"],"logprobs":[0.5],"modified":[false]})"); });
  EXPECT_EQ(e.field(), "logprobs");

  e = capture([] { parse_records(R"({"kind":"pll","id":"x","pair_id":"p","variant":"stereo","tokens":["a","b"],"logprobs":[-1],"modified":[false]})"); });
  EXPECT_EQ(e.line(), 1u);

  e = capture([] { parse_records(R"({"kind":"attention","layer":0,"head":0,"weights":[[0.5,0.4]]})"); });
  EXPECT_EQ(e.field(), "weights");

  e = capture([] { parse_records(R"({"kind":"masked_slot","template_id":"t","target_word":"w","group_index":-1,"logp_target":-1,"logp_prior":-1})"); });
  EXPECT_EQ(e.field(), "group_index");

  e = capture([] { parse_records(R"({"kind":"completion","prompt_id":"p","completions":[]})"); });
  EXPECT_EQ(e.field(), "completions");

  e = capture([] { parse_records(R"({"kind":"embedding","id":"a","group":"A1","text":"he","vector":[]})"); });
  EXPECT_EQ(e.field(), "vector");

  e = capture([] { parse_records(R"({"id":"a"})"); });
  EXPECT_EQ(e.field(), "kind");
}

TEST(Write, RoundTripFixtures) {
  for (const char* name : {"weat_2d.ndjson", "pll_four_token.ndjson", "pll_ten_pairs.ndjson", "slots_lpbs.ndjson",
                           "slots_cbs.ndjson", "honest_completions.ndjson"}) {
    const auto recs = read_records_file(fixture(name));
    ASSERT_FALSE(recs.empty()) << name;
    EXPECT_EQ(parse_records(write_records(recs)), recs) << name;
  }
  EXPECT_EQ(write_records(std::vector<Record>{}), "");
}

TEST(Write, EveryKindRoundTrips) {
  const std::vector<Record> recs{
      EmbeddingRecord{"e", "W1", "t\"q\"\n", {0.1, -0.0, 1e-300, 12345.678}},
      PllRecord{"p", "pair", PairVariant::anti, {"a", "b"}, {-0.25, 0.0}, {true, false}},
      MaskedSlotRecord{"t", "he", 3, -1.5, -0.75},
      CompletionRecord{"c", {"x", "y", "z"}},
      AttentionRecord{2, 1, Matrix{{0.25, 0.75}, {1.0, 0.0}}},
  };
  const std::string text = write_records(recs);
  EXPECT_EQ(parse_records(text), recs);
  EXPECT_EQ(write_records(parse_records(text)), text);
}

TEST(Write, ShortestRoundTripNumbers) {
  const std::string line = record_to_line(EmbeddingRecord{"a", "A1", "x", {0.1, 1.0 / 3.0, -0.0, 2.0}});
  EXPECT_NE(line.find("[0.1,0.3333333333333333,-0.0,2.0]"), std::string::npos) << line;
  EXPECT_EQ(line.rfind(R"({"kind":"embedding",)", 0), 0u);

  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    const double x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(40)) - 20.0);
    const auto back = std::get<EmbeddingRecord>(parse_records(record_to_line(EmbeddingRecord{"a", "g", "", {x}}))[0]);
    EXPECT_EQ(back.vector[0], x);
  }
}

TEST(Parse, StreamsAMillionLines) {
  std::string block;
  for (int i = 0; i < 1000; ++i) block += R"({"kind":"masked_slot","template_id":"t","target_word":"w","group_index":0,"logp_target":-1.5,"logp_prior":-0.5})" "\n";
  std::stringstream in;
  for (int i = 0; i < 1000; ++i) in << block;
  std::size_t count = 0;
  double sum = 0;
  for_each_record(in, [&](Record&& r) {
    ++count;
    sum += std::get<MaskedSlotRecord>(r).logp_target;
  });
  EXPECT_EQ(count, 1'000'000u);
  EXPECT_EQ(sum, -1.5e6);
}

TEST(Catalog, ListsFixtureDatasets) {
  const auto cat = Catalog::load(fixture("catalog/catalog.json"));
  EXPECT_EQ(list_datasets(cat), (std::vector<std::string>{"BBQ", "BUG"}));
  EXPECT_EQ(list_datasets(cat, "BUG"), (std::vector<std::string>{"full", "gold"}));
  try {
    list_datasets(cat, "nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_found);
  }
}

TEST(Catalog, LoadsTypedRows) {
  const auto cat = Catalog::load(fixture("catalog/catalog.json"));
  const auto gold = std::get<std::vector<CounterfactualPair>>(load_dataset(cat, "BUG", "gold"));
  ASSERT_EQ(gold.size(), 2u);
  EXPECT_EQ(gold[0], (CounterfactualPair{"He is a doctor.", "She is a doctor."}));
  EXPECT_EQ(gold[1], (CounterfactualPair{"The nurse said \"hello\" to him.", "The nurse said \"hello\" to her."}));
  const auto full = std::get<std::vector<CounterfactualPair>>(load_dataset(cat, "BUG", "full"));
  EXPECT_EQ(full, (std::vector<CounterfactualPair>{{"He ran.", "She ran."}}));
  EXPECT_TRUE(std::get<std::vector<AnnotatedSentence>>(load_dataset(cat, "BBQ", "ambig")).empty());
  EXPECT_THROW(load_dataset(cat, "BUG", "silver"), Error);
}

TEST(Catalog, SchemaErrors) {
  const auto dir = scratch_dir();
  write(dir / "empty.csv", "");
  write(dir / "wrong.csv", "sentence_A,other\nx,y\n");
  write(dir / "wrong_header_only.csv", "prompt_text\n");
  write(dir / "ragged.csv", "prompt\nx\ny,z\n");
  write(dir / "rows.ndjson", "{\"prompt\":\"hi\"}\n{\"other\":1}\n");
  const json manifest = {{"datasets",
                          {{"D",
                            {{"empty", {{"path", "empty.csv"}, {"format", "csv"}, {"schema", "prompts"}}},
                             {"wrong", {{"path", "wrong.csv"}, {"format", "csv"}, {"schema", "counterfactual_pairs"}}},
                             {"header", {{"path", "wrong_header_only.csv"}, {"format", "csv"}, {"schema", "prompts"}}},
                             {"ragged", {{"path", "ragged.csv"}, {"format", "csv"}, {"schema", "prompts"}}},
                             {"nd", {{"path", "rows.ndjson"}, {"format", "ndjson"}, {"schema", "prompts"}}},
                             {"gone", {{"path", "absent.csv"}, {"format", "csv"}, {"schema", "prompts"}}}}}}}};
  const auto cat = Catalog::from_json(manifest, dir);
  EXPECT_TRUE(std::get<std::vector<PromptRow>>(load_dataset(cat, "D", "empty")).empty());

  auto e = capture([&] { load_dataset(cat, "D", "wrong"); });
  EXPECT_EQ(e.kind(), ErrorKind::schema);
  EXPECT_EQ(e.field(), "sentence_B");
  e = capture([&] { load_dataset(cat, "D", "header"); });
  EXPECT_EQ(e.kind(), ErrorKind::schema);
  e = capture([&] { load_dataset(cat, "D", "ragged"); });
  EXPECT_EQ(e.line(), 3u);
  e = capture([&] { load_dataset(cat, "D", "nd"); });
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.field(), "prompt");
  e = capture([&] { load_dataset(cat, "D", "gone"); });
  EXPECT_EQ(e.kind(), ErrorKind::not_found);

  EXPECT_THROW(Catalog::from_json(json{{"datasets", {{"D", {{"c", {{"path", "x"}, {"format", "xml"}, {"schema", "prompts"}}}}}}}}), Error);
  EXPECT_THROW(Catalog::from_json(json::array()), Error);
  std::filesystem::remove_all(dir);
}

TEST(Catalog, BundledManifestNamesTableOneDatasets) {
  const auto cat = Catalog::load(std::string(FAIRLENS_FIXTURE_DIR) + "/../../datasets/catalog.json");
  const auto names = list_datasets(cat);
  for (const char* n : {"BBQ", "BEC-Pro", "BOLD", "BUG", "CrowS-Pairs", "GAP", "HolisticBias", "HONEST", "StereoSet",
                        "UnQover", "WinoBias", "WinoBias+", "WinoGender"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
  }
  EXPECT_EQ(list_datasets(cat, "BUG"), (std::vector<std::string>{"full", "gold"}));
}
