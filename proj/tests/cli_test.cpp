#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>

#include "fairlens/fairlens.hpp"
#include "test_support.hpp"

using namespace fairlens;
using testing_support::fixture;
using testing_support::slurp;

namespace {

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = "env -u SOURCE_DATE_EPOCH " + std::string(FAIRLENS_CLI) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("fairlens_cli_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string tmp(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const {
    std::ofstream(tmp(name), std::ios::binary) << text;
  }
  std::filesystem::path dir_;
};

}  // namespace

TEST_F(Cli, AuditMatchesGoldenTwice) {
  const std::string golden = slurp(fixture("audit_golden.json"));
  ASSERT_FALSE(golden.empty());
  for (const char* name : {"a.json", "b.json"}) {
    const auto r = run("audit --spec " + fixture("audit_spec.json") + " --out " + tmp(name) + " --seed 0");
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(slurp(tmp(name)), golden) << name;
  }
}

TEST_F(Cli, AuditFormatsAndSourceDateEpoch) {
  EXPECT_EQ(run("audit --spec " + fixture("audit_spec.json") + " --out " + tmp("r.csv") + " --format csv").code, 0);
  EXPECT_EQ(slurp(tmp("r.csv")).rfind("index,metric,status,name,value\n", 0), 0u);
  EXPECT_EQ(run("audit --spec " + fixture("audit_spec.json") + " --out " + tmp("r.md") + " --format md").code, 0);
  EXPECT_NE(slurp(tmp("r.md")).find("| index |"), std::string::npos);

  const std::string cmd = "SOURCE_DATE_EPOCH=0 " + std::string(FAIRLENS_CLI) + " audit --spec " + fixture("audit_spec.json") +
                          " --out " + tmp("t.json") + " 2>/dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_EQ(json::parse(slurp(tmp("t.json")))["provenance"]["timestamp"], "1970-01-01T00:00:00Z");
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("audit --spec").code, 1);
  EXPECT_EQ(run("augment --input x --pairs y --mode sideways --out z").code, 1);
  EXPECT_EQ(run("audit --spec " + tmp("absent.json") + " --out " + tmp("o.json")).code, 2);
  write("bad.json", "{ nope");
  EXPECT_EQ(run("audit --spec " + tmp("bad.json") + " --out " + tmp("o.json")).code, 2);
  write("empty.json", R"({"metrics":[]})");
  EXPECT_EQ(run("audit --spec " + tmp("empty.json") + " --out " + tmp("o.json")).code, 0);
  write("allfail.json", R"({"metrics":[{"metric":"weat","inputs":{"embeddings":"nowhere.ndjson"}}]})");
  EXPECT_EQ(run("audit --spec " + tmp("allfail.json") + " --out " + tmp("o.json")).code, 3);
  EXPECT_EQ(json::parse(slurp(tmp("o.json")))["results"][0]["status"], "error");
}

TEST_F(Cli, ListDatasets) {
  auto r = run("list-datasets --catalog " + fixture("catalog/catalog.json"));
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "BBQ\nBUG\n");
  r = run("list-datasets --catalog " + fixture("catalog/catalog.json") + " --dataset BUG");
  EXPECT_EQ(r.out, "full\ngold\n");
  EXPECT_EQ(run("list-datasets --catalog " + fixture("catalog/catalog.json") + " --dataset nope").code, 2);
}

TEST_F(Cli, AugmentModesAndColumns) {
  write("in.ndjson", "{\"text\":\"He likes her\",\"label\":\"he\",\"n\":1}\n{\"text\":\"the sky\",\"label\":\"x\",\"n\":2}\n");
  write("pairs.json", R"([["he","she"],["him","her"]])");
  EXPECT_EQ(run("augment --input " + tmp("in.ndjson") + " --pairs " + tmp("pairs.json") + " --mode two-sided --out " + tmp("two.ndjson")).code, 0);
  auto lines = testing_support::lines_of(tmp("two.ndjson"));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(json::parse(lines[2]), (json{{"text", "She likes him"}, {"label", "she"}, {"n", 1}}));

  EXPECT_EQ(run("augment --input " + tmp("in.ndjson") + " --pairs " + tmp("pairs.json") +
                " --mode one-sided --columns text --out " + tmp("one.ndjson")).code, 0);
  lines = testing_support::lines_of(tmp("one.ndjson"));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(json::parse(lines[0]), (json{{"text", "She likes him"}, {"label", "he"}, {"n", 1}}));

  EXPECT_EQ(run("augment --input " + tmp("in.ndjson") + " --pairs " + tmp("pairs.json") +
                " --mode one-sided --columns missing --out " + tmp("x.ndjson")).code, 2);
}

TEST_F(Cli, DebiasEmbeddings) {
  write("pairs.ndjson",
        "{\"kind\":\"embedding\",\"id\":\"he\",\"group\":\"m\",\"text\":\"he\",\"vector\":[2,0,1]}\n"
        "{\"kind\":\"embedding\",\"id\":\"she\",\"group\":\"f\",\"text\":\"she\",\"vector\":[0,0,1]}\n");
  write("in.ndjson", "{\"kind\":\"embedding\",\"id\":\"x\",\"group\":\"g\",\"text\":\"doctor\",\"vector\":[3,4,5]}\n");
  EXPECT_EQ(run("debias-embeddings --pairs-embeddings " + tmp("pairs.ndjson") + " --components 1 --input " + tmp("in.ndjson") +
                " --out " + tmp("out.ndjson") + " --subspace-out " + tmp("sub.json")).code, 0);
  const auto out = records_of<EmbeddingRecord>(read_records_file(tmp("out.ndjson")));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].vector, (Vector{0, 4, 5}));
  const auto sub = BiasSubspace::from_json(json::parse(slurp(tmp("sub.json"))));
  EXPECT_EQ(sub.dim, 3u);
  EXPECT_EQ(run("debias-embeddings --pairs-embeddings " + tmp("in.ndjson") + " --components 1 --input " + tmp("in.ndjson") +
                " --out " + tmp("o.ndjson")).code, 2);
}

TEST_F(Cli, GradCheck) {
  auto r = run("grad-check --trials 10 --seed 3");
  EXPECT_EQ(r.code, 0);
  for (const auto& k : gradcheck::kernel_names()) EXPECT_NE(r.out.find("PASS " + k + " "), std::string::npos) << r.out;
  r = run("grad-check --kernel eat --trials 5");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("PASS eat ", 0), 0u);
  EXPECT_EQ(run("grad-check --kernel nope").code, 1);
}
