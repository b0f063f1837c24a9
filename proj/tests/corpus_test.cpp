#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sinlg/corpus.hpp"
#include "support/oracles.hpp"

using namespace sinlg;
using sinlg::testing::bfs_oracle;
using sinlg::testing::span_link_oracle;

namespace {

std::string sample_line(std::size_t candidates, std::size_t labels, std::size_t positive = 0) {
  nlohmann::json j;
  j["persona"] = {"i like tea"};
  j["context"] = {"hello"};
  std::vector<std::string> c(candidates, "reply");
  std::vector<int> l(labels, 0);
  if (positive < labels) l[positive] = 1;
  j["candidates"] = c;
  j["labels"] = l;
  return j.dump();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

SynthConfig small_config() {
  SynthConfig c;
  c.train_dialogues = 30;
  c.dev_dialogues = 10;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sinlg_corpus_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("parse a two-line dataset") {
  std::istringstream in(sample_line(20, 20, 3) + "\n\n" + sample_line(20, 20, 0) + "\n");
  auto data = parse_dataset(in, 20);
  REQUIRE(data.size() == 2);
  CHECK(data[0].positive_index() == 3);
  CHECK(data[1].candidates.size() == 20);
  CHECK(data[0].persona == std::vector<std::string>{"i like tea"});
}

TEST_CASE("label count mismatch names the line") {
  std::istringstream in(sample_line(20, 20) + "\n" + sample_line(20, 19) + "\n");
  try {
    parse_dataset(in, 20);
    FAIL("expected a DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("malformed samples are rejected") {
  for (std::string line : {std::string("not json"), sample_line(20, 20, 99), sample_line(5, 5),
                           std::string(R"({"persona":[],"context":[],"candidates":["a","b"],"labels":[1,1]})"),
                           std::string(R"({"persona":[],"context":[],"candidates":["a","b"],"labels":[1,2]})"),
                           std::string(R"({"context":[],"candidates":["a","b"],"labels":[1,0]})")}) {
    CAPTURE(line);
    std::istringstream in(line);
    CHECK_THROWS_AS(parse_dataset(in, 20), DatasetError);
  }
}

TEST_CASE("empty file is an empty dataset") {
  const auto dir = temp_dir("empty");
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "empty.jsonl").string();
  std::ofstream(path).close();
  CHECK(load_dataset(path).empty());
  CHECK_THROWS_AS(load_dataset((dir / "missing.jsonl").string()), DatasetError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic corpus is deterministic") {
  const auto a = temp_dir("a");
  const auto b = temp_dir("b");
  write_corpus(synth_generate(small_config()), a.string());
  write_corpus(synth_generate(small_config()), b.string());
  for (const char* f : {"train.jsonl", "dev.jsonl", "kg.tsv"}) {
    CAPTURE(f);
    const std::string x = read_file((a / f).string());
    CHECK_FALSE(x.empty());
    CHECK(x == read_file((b / f).string()));
  }
  SynthConfig other = small_config();
  other.seed = 8;
  write_corpus(synth_generate(other), b.string());
  CHECK(read_file((a / "train.jsonl").string()) != read_file((b / "train.jsonl").string()));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("synthetic round-trip keeps counts and labels") {
  const auto dir = temp_dir("roundtrip");
  const SynthCorpus corpus = synth_generate(small_config());
  write_corpus(corpus, dir.string());
  const auto train = load_dataset((dir / "train.jsonl").string(), 20);
  const auto dev = load_dataset((dir / "dev.jsonl").string(), 20);
  REQUIRE(train.size() == corpus.train.size());
  REQUIRE(dev.size() == corpus.dev.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(std::accumulate(train[i].labels.begin(), train[i].labels.end(), 0) == 1);
    CHECK(train[i].labels == corpus.train[i].labels);
    CHECK(train[i].candidates == corpus.train[i].candidates);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("every positive is KG-connected to the persona") {
  const SynthConfig config = small_config();
  const SynthCorpus corpus = synth_generate(config);
  std::istringstream in(corpus.kg_tsv);
  const KnowledgeGraph graph = KnowledgeGraph::parse_edge_list(in);
  const std::size_t hops = 1;
  std::size_t paraphrase_only = 0;
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    const MrsSample& s = corpus.train[i];
    REQUIRE(s.candidates.size() == config.candidates);
    REQUIRE(std::accumulate(s.labels.begin(), s.labels.end(), 0) == 1);
    const auto persona = span_link_oracle(s.persona, graph);
    const auto response = span_link_oracle({s.candidates[s.positive_index()]}, graph);
    REQUIRE_FALSE(response.empty());
    bool connected = false;
    bool shared = false;
    for (ConceptId r : response) {
      const auto reach = bfs_oracle(graph, {r}, 2 * hops);
      for (ConceptId p : persona) {
        connected = connected || reach.contains(p);
        shared = shared || p == r;
      }
    }
    CHECK(connected);
    CHECK(shared == !corpus.train_paraphrase_only[i]);
    paraphrase_only += corpus.train_paraphrase_only[i] ? 1 : 0;
    // Distractors mention no persona group.
    for (std::size_t c = 0; c < s.candidates.size(); ++c) {
      if (c == s.positive_index()) continue;
      for (ConceptId r : span_link_oracle({s.candidates[c]}, graph)) {
        CHECK_FALSE(persona.contains(r));
      }
    }
  }
  const double fraction = static_cast<double>(paraphrase_only) / static_cast<double>(corpus.train.size());
  CHECK(fraction > config.paraphrase_fraction - 0.1);
  CHECK(fraction < config.paraphrase_fraction + 0.1);
}

TEST_CASE("synth config validation and JSON") {
  SynthConfig c = small_config();
  CHECK(SynthConfig::from_json(c.to_json()).to_json() == c.to_json());
  SynthConfig bad = c;
  bad.n_concepts = 4;
  CHECK_THROWS_AS(synth_generate(bad), DatasetError);
  bad = c;
  bad.paraphrase_fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), DatasetError);
  bad = c;
  bad.candidates = 1;
  CHECK_THROWS_AS(bad.validate(), DatasetError);
  auto j = c.to_json();
  j["unknown"] = 1;
  CHECK_THROWS_AS(SynthConfig::from_json(j), DatasetError);
}
