#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sinlg/gnn.hpp"
#include "support/gradcheck.hpp"

using namespace sinlg;

namespace {

constexpr std::size_t kRelations = 4;

GnnConfig small_config(std::size_t input_dim, std::size_t hidden, std::size_t layers) {
  GnnConfig c;
  c.layers = layers;
  c.hidden = hidden;
  c.input_dim = input_dim;
  c.relations = kRelations;
  c.type_dim = 3;
  c.relation_dim = 3;
  c.score_dim = 2;
  c.attention_dim = 4;
  return c;
}

ConceptEmbeddingTable random_table(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<double> data(rows * dim);
  for (auto& v : data) v = nd(rng);
  return ConceptEmbeddingTable::from_rows(dim, data);
}

// Random spec over concept ids [0, universe): `n` kept concepts, random
// origins and scores, random KG edges among them.
SubgraphSpec random_spec(std::mt19937_64& rng, std::size_t universe, std::size_t n, std::size_t kg_edges,
                         std::size_t input_dim) {
  std::vector<ConceptId> ids(universe);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.5);
  SubgraphSpec spec;
  spec.super_relation = kRelations;
  for (std::size_t i = 0; i < n; ++i) {
    spec.concepts.push_back({ids[i], coin(rng) ? ConceptOrigin::kLinked : ConceptOrigin::kExpanded, nd(rng)});
    spec.super_edges.push_back({i, kRelations, spec.concepts[i].score});
  }
  if (n > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::uniform_int_distribution<RelationId> rel(0, kRelations - 1);
    std::uniform_real_distribution<double> w(0.1, 2.0);
    for (std::size_t e = 0; e < kg_edges; ++e) {
      spec.kg_edges.push_back({spec.concepts[pick(rng)].id, rel(rng), spec.concepts[pick(rng)].id, w(rng)});
    }
  }
  for (std::size_t j = 0; j < input_dim; ++j) spec.super_seed.push_back(nd(rng));
  return spec;
}

SubgraphSpec permuted(const SubgraphSpec& spec, std::mt19937_64& rng) {
  SubgraphSpec out = spec;
  std::vector<std::size_t> order(spec.concepts.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  out.concepts.clear();
  out.super_edges.clear();
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.concepts.push_back(spec.concepts[order[i]]);
    out.super_edges.push_back({i, spec.super_relation, spec.concepts[order[i]].score});
  }
  std::shuffle(out.kg_edges.begin(), out.kg_edges.end(), rng);
  std::shuffle(out.super_edges.begin(), out.super_edges.end(), rng);
  return out;
}

}  // namespace

TEST_CASE("message graph doubles every edge") {
  std::mt19937_64 rng(1);
  auto spec = random_spec(rng, 20, 6, 5, 4);
  auto g = message_graph(spec);
  std::size_t self_loops = 0;
  for (const auto& e : spec.kg_edges) self_loops += e.head == e.tail;
  CHECK(g.nodes == 7);
  CHECK(g.src.size() == 2 * spec.kg_edges.size() - self_loops + 2 * spec.super_edges.size());
  CHECK(g.node_type[0] == static_cast<std::size_t>(NodeType::kSuper));
  for (std::size_t e = 0; e < g.src.size(); ++e) {
    if (g.src[e] == 0 || g.dst[e] == 0) CHECK(g.relation[e] == kRelations);
  }
  SubgraphSpec broken = spec;
  broken.kg_edges.push_back({999, 0, spec.concepts[0].id, 1.0});
  CHECK_THROWS_AS(message_graph(broken), GnnError);
}

TEST_CASE("attention is a distribution over each neighbourhood") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto cfg = small_config(5, 5, 2);
    auto params = GnnParams::create(cfg, rng);
    auto table = random_table(rng, 30, 5);
    auto spec = random_spec(rng, 30, 1 + trial % 8, trial % 6, 5);
    auto g = message_graph(spec);
    Tape tape(false);
    Var h = initial_features(spec, tape.constant(1, 5, spec.super_seed), table, params);
    auto alpha = attention_weights(h, g, params, 0);
    std::vector<double> per_node(g.nodes, 0.0);
    for (std::size_t e = 0; e < alpha.size(); ++e) {
      CHECK(alpha[e] >= 0.0);
      per_node[g.dst[e]] += alpha[e];
    }
    for (std::size_t v = 0; v < g.nodes; ++v) CHECK(per_node[v] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("a single neighbour passes its message unchanged") {
  std::mt19937_64 rng(3);
  auto cfg = small_config(4, 4, 1);
  auto params = GnnParams::create(cfg, rng);
  auto table = random_table(rng, 3, 4);
  SubgraphSpec spec;
  spec.super_relation = kRelations;
  spec.concepts = {{2, ConceptOrigin::kLinked, 0.7}};
  spec.super_edges = {{0, kRelations, 0.7}};
  spec.super_seed = {0.1, -0.4, 0.9, 0.3};
  Tape tape(false);
  Var h = initial_features(spec, tape.constant(1, 4, spec.super_seed), table, params);
  auto alpha = attention_weights(h, message_graph(spec), params, 0);
  CHECK(alpha == std::vector<double>{1.0, 1.0});
  Var out = gat_layer(h, message_graph(spec), params, 0);
  // Each node's aggregate is the other node's feature row.
  const std::vector<std::size_t> swap = {1, 0};
  Var expected = tanh(add(matmul(concat_cols(h, gather_rows(h, swap)), tape.param(params.layers[0].w_out)),
                          tape.param(params.layers[0].b_out)));
  auto a = out.value();
  auto b = expected.value();
  CHECK(std::vector<double>(a.begin(), a.end()) == std::vector<double>(b.begin(), b.end()));
}

TEST_CASE("h_X is invariant to node and edge order") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    auto cfg = small_config(6, 5, 3);
    auto params = GnnParams::create(cfg, rng);
    auto table = random_table(rng, 40, 6);
    auto spec = random_spec(rng, 40, 2 + trial % 10, 3 + trial % 7, 6);
    auto base = propagate(spec, table, params);
    for (int p = 0; p < 3; ++p) {
      auto other = propagate(permuted(spec, rng), table, params);
      REQUIRE(other.size() == base.size());
      for (std::size_t j = 0; j < base.size(); ++j) CHECK(std::abs(other[j] - base[j]) <= 1e-10);
    }
  }
}

TEST_CASE("propagate boundary cases") {
  std::mt19937_64 rng(5);
  auto table = random_table(rng, 10, 6);
  auto spec = random_spec(rng, 10, 4, 3, 6);

  SUBCASE("zero layers return the bridged seed") {
    auto params = GnnParams::create(small_config(6, 3, 0), rng);
    auto h = propagate(spec, table, params);
    REQUIRE(h.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0;
      for (std::size_t i = 0; i < 6; ++i) ref += spec.super_seed[i] * params.bridge.at(i, j);
      CHECK(h[j] == doctest::Approx(ref).epsilon(1e-12));
    }
    auto same = GnnParams::create(small_config(6, 6, 0), rng);
    CHECK_FALSE(same.has_bridge());
    CHECK(propagate(spec, table, same) == spec.super_seed);
  }
  SUBCASE("lone super node uses only its own path") {
    auto params = GnnParams::create(small_config(6, 6, 2), rng);
    SubgraphSpec lone;
    lone.super_relation = kRelations;
    lone.super_seed = spec.super_seed;
    auto h = propagate(lone, table, params);
    std::vector<double> ref = lone.super_seed;
    for (std::size_t l = 0; l < 2; ++l) {
      std::vector<double> next(6);
      for (std::size_t j = 0; j < 6; ++j) {
        double s = params.layers[l].b_out.data[j];
        for (std::size_t i = 0; i < 6; ++i) s += ref[i] * params.layers[l].w_out.at(i, j);
        next[j] = std::tanh(s);
      }
      ref = next;
    }
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(std::isfinite(h[j]));
      CHECK(h[j] == doctest::Approx(ref[j]).epsilon(1e-12));
    }
  }
  SUBCASE("default hidden size") {
    GnnConfig cfg;
    cfg.input_dim = 6;
    cfg.relations = kRelations;
    cfg.layers = 1;
    auto params = GnnParams::create(cfg, rng);
    CHECK(propagate(spec, table, params).size() == 200);
    CHECK(GnnConfig{}.layers == 5);
  }
  SUBCASE("shape errors") {
    auto params = GnnParams::create(small_config(6, 6, 1), rng);
    Tape tape(false);
    Var bad = tape.constant(Tensor::zeros({3, 6}));
    CHECK_THROWS_AS(gat_layer(bad, message_graph(spec), params, 0), GnnError);
    CHECK_THROWS_AS(gat_layer(bad, message_graph(spec), params, 4), GnnError);
    SubgraphSpec wrong_seed = spec;
    wrong_seed.super_seed.pop_back();
    CHECK_THROWS_AS(propagate(wrong_seed, table, params), GnnError);
  }
}

TEST_CASE("zeroing super-edge scores changes h_X") {
  std::mt19937_64 rng(6);
  auto params = GnnParams::create(small_config(6, 5, 2), rng);
  auto table = random_table(rng, 12, 6);
  auto spec = random_spec(rng, 12, 5, 4, 6);
  auto zeroed = spec;
  for (auto& e : zeroed.super_edges) e.weight = 0.0;
  CHECK(propagate(spec, table, params) != propagate(zeroed, table, params));
}

TEST_CASE("gradients of h_X match finite differences") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    auto params = GnnParams::create(small_config(4, 3, 2), rng);
    auto table = random_table(rng, 10, 4);
    auto spec = random_spec(rng, 10, 3 + trial, 2 + trial, 4);
    Tensor seed = Tensor::row(spec.super_seed);
    Tensor probe = sinlg::testing::random_tensor(rng, {3, 1});
    std::vector<Tensor*> tensors{&seed};
    for (auto& [name, t] : params.named_parameters()) tensors.push_back(t);
    auto r = sinlg::testing::check_gradients(
        [&](Tape& t) { return sum(matmul(propagate(spec, t.param(seed), table, params), t.constant(probe))); },
        tensors);
    CHECK_MESSAGE(r.ok, r.where);
  }
}
