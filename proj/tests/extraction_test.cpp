#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "sinlg/extraction.hpp"
#include "support/oracles.hpp"

using namespace sinlg;
using sinlg::testing::parse_graph;

namespace {

const std::vector<std::string> kWordPool = {"ice", "cream", "red", "apple", "tree", "cold", "sky", "blue"};

std::string random_words(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  std::uniform_int_distribution<std::size_t> len(lo, hi);
  std::uniform_int_distribution<std::size_t> pick(0, kWordPool.size() - 1);
  std::string out;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += kWordPool[pick(rng)];
  }
  return out;
}

ConceptEmbeddingTable random_table(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<double> data(rows * dim);
  for (auto& v : data) v = nd(rng);
  return ConceptEmbeddingTable::from_rows(dim, data);
}

ConceptEmbeddingTable golden_table() {
  // apple fruit tree red color blue sky ice-cream dessert cream cold winter
  return ConceptEmbeddingTable::from_rows(2, {1, 0, 0.5, 0, 0, 1, -1, 0, 0, 0, 0, 0, 0, 0, 2, 0, 1, 1, 0.25, 0,
                                              -0.5, 0, 0, -1});
}

MrsSample golden_sample() {
  return {{"i like ice cream"}, {"what about an apple"}, {"too cold for me"}, {1}};
}

struct TinyWorld {
  KnowledgeGraph graph;
  Vocabulary vocab;
  EncoderModel model;
  ScorerSnapshot snapshot;
  ConceptEmbeddingTable table;
  std::unique_ptr<ConceptLexicon> lexicon;

  ExtractionContext context() const { return {&graph, lexicon.get(), &vocab, &snapshot, &table}; }
};

TinyWorld make_world() {
  TinyWorld w;
  w.graph = KnowledgeGraph::load_edge_list(SINLG_TEST_DATA_DIR "/golden_kg.tsv");
  std::vector<std::string> texts = {"i like ice cream", "what about an apple", "too cold for me", "the sky is blue"};
  for (const auto& n : w.graph.concepts().names()) texts.push_back(n);
  w.vocab = Vocabulary::from_texts(texts);
  EncoderConfig cfg;
  cfg.vocab_size = w.vocab.size();
  cfg.d_model = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.max_seq_len = 64;
  w.model = EncoderModel(cfg, 3);
  w.snapshot = ScorerSnapshot(w.model);
  w.table = ConceptEmbeddingTable::build(w.snapshot, w.vocab, w.graph);
  w.lexicon = std::make_unique<ConceptLexicon>(w.graph);
  return w;
}

void check_structure(const SubgraphSpec& spec, const KnowledgeGraph& graph, std::span<const ConceptId> linked,
                     std::size_t k) {
  REQUIRE(spec.concepts.size() <= k);
  CHECK(spec.node_count() == spec.concepts.size() + 1);
  REQUIRE(spec.super_edges.size() == spec.concepts.size());
  std::set<ConceptId> kept;
  for (std::size_t i = 0; i < spec.concepts.size(); ++i) {
    kept.insert(spec.concepts[i].id);
    CHECK(spec.super_edges[i].concept_index == i);
    CHECK(spec.super_edges[i].relation == graph.relation_count());
    CHECK(std::memcmp(&spec.super_edges[i].weight, &spec.concepts[i].score, sizeof(double)) == 0);
  }
  CHECK(kept.size() == spec.concepts.size());
  for (const auto& e : spec.kg_edges) {
    CHECK(kept.contains(e.head));
    CHECK(kept.contains(e.tail));
  }
  const std::set<ConceptId> linked_set(linked.begin(), linked.end());
  for (ConceptId c : linked) {
    const bool pruned = std::find(spec.pruned_linked.begin(), spec.pruned_linked.end(), c) != spec.pruned_linked.end();
    CHECK((kept.contains(c) || pruned));
  }
  for (const auto& sc : spec.concepts) {
    CHECK((sc.origin == ConceptOrigin::kLinked) == linked_set.contains(sc.id));
  }
}

}  // namespace

TEST_CASE("link_entities takes the longest match") {
  auto g = parse_graph("r\tice\tcream\nr\tice cream\tcream\n");
  ConceptLexicon lex(g);
  std::vector<std::string> text = {"i like ice cream"};
  CHECK(link_entities(text, lex) == std::vector<ConceptId>{*g.find_concept("ice cream")});
  std::vector<std::string> none = {"nothing here"};
  CHECK(link_entities(none, lex).empty());
}

TEST_CASE("link_entities agrees with the exhaustive span oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::ostringstream tsv;
    for (int e = 0; e < 12; ++e) tsv << "r\t" << random_words(rng, 1, 3) << "\t" << random_words(rng, 1, 3) << "\n";
    auto g = parse_graph(tsv.str());
    ConceptLexicon lex(g);
    std::vector<std::string> utterances;
    for (int u = 0; u < 3; ++u) utterances.push_back(random_words(rng, 0, 10));
    auto got = link_entities(utterances, lex);
    auto oracle = sinlg::testing::span_link_oracle(utterances, g);
    CHECK(std::set<ConceptId>(got.begin(), got.end()) == oracle);
    CHECK(std::is_sorted(got.begin(), got.end()));
  }
}

TEST_CASE("score_concepts") {
  auto table = ConceptEmbeddingTable::from_rows(2, {0, 1, 1, 0});
  std::vector<double> h = {1, 0};
  std::vector<ConceptId> ids = {0, 1};
  auto s = score_concepts(h, ids, ConceptOrigin::kExpanded, table);
  CHECK(s[0].score == 0.0);
  CHECK(s[1].score == 1.0);
  std::vector<ConceptId> missing = {2};
  CHECK_THROWS_AS(score_concepts(h, missing, ConceptOrigin::kLinked, table), ExtractionError);

  std::mt19937_64 rng(5);
  auto big = random_table(rng, 40, 6);
  std::vector<double> ctx(6);
  std::normal_distribution<double> nd;
  for (auto& v : ctx) v = nd(rng);
  std::vector<ConceptId> cand(30);
  for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = static_cast<ConceptId>(i + 5);
  auto scored = score_concepts(ctx, cand, ConceptOrigin::kLinked, big);
  REQUIRE(scored.size() == 30);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    double ref = 0;
    for (std::size_t j = 0; j < 6; ++j) ref += ctx[j] * big.row(cand[i])[j];
    CHECK(scored[i].id == cand[i]);
    CHECK(scored[i].score == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("rank_and_prune") {
  std::vector<ScoredConcept> five = {{4, ConceptOrigin::kExpanded, 0.1}, {1, ConceptOrigin::kExpanded, 0.9},
                                     {3, ConceptOrigin::kExpanded, -2}, {0, ConceptOrigin::kExpanded, 0.5},
                                     {2, ConceptOrigin::kExpanded, 0.3}};
  auto kept = rank_and_prune(five, 200);
  REQUIRE(kept.size() == 5);
  CHECK(kept[0].id == 1);
  CHECK(kept[4].id == 3);

  std::vector<ScoredConcept> ties = {{9, ConceptOrigin::kExpanded, 1}, {2, ConceptOrigin::kExpanded, 1},
                                     {5, ConceptOrigin::kExpanded, 1}};
  auto t = rank_and_prune(ties, 2);
  REQUIRE(t.size() == 2);
  CHECK(t[0].id == 2);
  CHECK(t[1].id == 5);
  CHECK(rank_and_prune(ties, 0).empty());

  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> coarse(0, 50);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ScoredConcept> pool(500);
    std::vector<ConceptId> ids(500);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = {ids[i], ConceptOrigin::kExpanded, coarse(rng) / 7.0};
    CHECK(rank_and_prune(pool, 200) == sinlg::testing::selection_prune_oracle(pool, 200));
  }
}

TEST_CASE("hand-traced subgraph on the 12-node graph") {
  auto g = KnowledgeGraph::load_edge_list(SINLG_TEST_DATA_DIR "/golden_kg.tsv");
  REQUIRE(g.concept_count() == 12);
  ConceptLexicon lex(g);
  auto linked = link_entities(golden_sample(), 0, lex);
  CHECK(linked == std::vector<ConceptId>{0, 7, 10});
  std::vector<double> h = {1, 0.5};
  ExtractionConfig cfg;
  cfg.max_nodes = 6;
  cfg.hops = 1;
  auto spec = assemble_subgraph(h, linked, g, golden_table(), cfg);
  std::ifstream in(SINLG_TEST_DATA_DIR "/golden_subgraph.json");
  const auto golden = nlohmann::json::parse(in);
  CHECK(subgraph_to_json(spec, g, 0, 0) == golden);
  check_structure(spec, g, linked, 6);

  SUBCASE("linked concepts beyond the budget are reported") {
    cfg.max_nodes = 2;
    auto small = assemble_subgraph(h, linked, g, golden_table(), cfg);
    REQUIRE(small.concepts.size() == 2);
    CHECK(small.concepts[0].id == 7);
    CHECK(small.concepts[1].id == 0);
    CHECK(small.pruned_linked == std::vector<ConceptId>{10});
    CHECK(small.kg_edges.empty());
    check_structure(small, g, linked, 2);
  }
  SUBCASE("no linked concepts gives a lone super node") {
    auto lone = assemble_subgraph(h, {}, g, golden_table(), cfg);
    CHECK(lone.node_count() == 1);
    CHECK(lone.kg_edges.empty());
    CHECK(lone.super_edges.empty());
  }
}

TEST_CASE("build_subgraph end to end") {
  auto w = make_world();
  ExtractionConfig cfg;
  cfg.max_nodes = 5;
  cfg.hops = 2;
  cfg.max_seq_len = 64;
  const MrsSample sample = {{"i like ice cream"}, {"what about an apple"}, {"too cold for me", "the sky is blue"}, {1, 0}};
  const auto before = kg_access_count();
  auto spec = build_subgraph(sample, 0, w.context(), &w.model, cfg);
  CHECK(kg_access_count() > before);
  check_structure(spec, w.graph, link_entities(sample, 0, *w.lexicon), 5);
  CHECK(spec.concepts.size() == 5);
  CHECK(spec.super_seed == encode(w.model, trans_a(sample, 0, w.vocab, 64)));

  auto h_ctx = w.snapshot.encode(trans_a(sample, 0, w.vocab, 64));
  for (const auto& sc : spec.concepts) {
    double ref = 0;
    for (std::size_t j = 0; j < h_ctx.size(); ++j) ref += h_ctx[j] * w.table.row(sc.id)[j];
    CHECK(sc.score == doctest::Approx(ref).epsilon(1e-12));
  }

  auto again = build_subgraph(sample, 0, w.context(), &w.model, cfg);
  CHECK(again == spec);
  auto unseeded = build_subgraph(sample, 0, w.context(), nullptr, cfg);
  CHECK(unseeded.super_seed.empty());
  CHECK(unseeded.concepts == spec.concepts);

  auto x = initial_embeddings(spec, w.table);
  CHECK(x.rows() == spec.node_count());
  CHECK(x.cols() == 8);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(x.at(0, j) == spec.super_seed[j]);
    CHECK(x.at(1, j) == w.table.row(spec.concepts[0].id)[j]);
  }

  MrsSample plain = {{"nothing"}, {"at all"}, {"here"}, {1}};
  auto lone = build_subgraph(plain, 0, w.context(), &w.model, cfg);
  CHECK(lone.node_count() == 1);
  CHECK(lone.super_edges.empty());
  CHECK_THROWS_AS(build_subgraph(sample, 7, w.context(), &w.model, cfg), std::exception);
}
