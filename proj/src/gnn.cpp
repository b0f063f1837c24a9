#include "sinlg/gnn.hpp"

#include <cmath>
#include <unordered_map>

namespace sinlg {

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  std::vector<double> data(rows * cols);
  for (double& v : data) v = dist(rng);
  return Tensor({rows, cols}, std::move(data), true);
}

Tensor zeros_param(std::size_t rows, std::size_t cols) { return Tensor::zeros({rows, cols}, true); }

// Attention logits, one per message edge (E x 1).
Var edge_logits(Var features, const MessageGraph& g, const GnnParams& params, std::size_t layer_index) {
  Tape& tape = *features.tape();
  const GnnLayerParams& p = params.layers[layer_index];
  const std::size_t edges = g.src.size();
  std::vector<std::size_t> src_type(edges);
  for (std::size_t e = 0; e < edges; ++e) src_type[e] = g.node_type[g.src[e]];
  Var neighbor = gather_rows(features, g.src);
  Var type = gather_rows(tape.param(params.type_emb), src_type);
  Var rel = gather_rows(tape.param(params.rel_emb), g.relation);
  Var score = add(matmul(tape.constant(edges, 1, g.score), tape.param(p.score_w)), tape.param(p.score_b));
  Var x = concat_cols(concat_cols(neighbor, type), concat_cols(rel, score));
  return matmul(tanh(matmul(x, tape.param(p.w_att))), tape.param(p.a));
}

void check_features(Var features, const MessageGraph& g, const GnnParams& params, std::size_t layer_index) {
  if (layer_index >= params.layers.size()) throw GnnError("gnn: layer index out of range");
  if (features.rows() != g.nodes || features.cols() != params.config().hidden) {
    throw GnnError("gnn: features are " + std::to_string(features.rows()) + "x" + std::to_string(features.cols()) +
                   ", expected " + std::to_string(g.nodes) + "x" + std::to_string(params.config().hidden));
  }
  for (std::size_t r : g.relation) {
    if (r >= params.rel_emb.rows()) throw GnnError("gnn: relation id " + std::to_string(r) + " has no embedding");
  }
}

}  // namespace

void GnnConfig::validate() const {
  if (hidden == 0 || input_dim == 0 || type_dim == 0 || relation_dim == 0 || score_dim == 0 || attention_dim == 0) {
    throw GnnError("gnn: dimensions must be positive");
  }
}

GnnParams GnnParams::create(const GnnConfig& config, std::mt19937_64& rng) {
  config.validate();
  GnnParams p;
  p.config_ = config;
  if (config.input_dim != config.hidden) p.bridge = random_matrix(rng, config.input_dim, config.hidden);
  p.type_emb = random_matrix(rng, kNodeTypeCount, config.type_dim);
  p.rel_emb = random_matrix(rng, config.relations + 1, config.relation_dim);
  const std::size_t att_in = config.hidden + config.type_dim + config.relation_dim + config.score_dim;
  for (std::size_t l = 0; l < config.layers; ++l) {
    GnnLayerParams layer;
    layer.w_att = random_matrix(rng, att_in, config.attention_dim);
    layer.a = random_matrix(rng, config.attention_dim, 1);
    layer.score_w = random_matrix(rng, 1, config.score_dim);
    layer.score_b = zeros_param(1, config.score_dim);
    layer.w_out = random_matrix(rng, 2 * config.hidden, config.hidden);
    layer.b_out = zeros_param(1, config.hidden);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor*>> GnnParams::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (has_bridge()) out.emplace_back("gnn.bridge", &bridge);
  out.emplace_back("gnn.type_emb", &type_emb);
  out.emplace_back("gnn.rel_emb", &rel_emb);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    GnnLayerParams& L = layers[l];
    const std::string p = "gnn.layer" + std::to_string(l) + ".";
    for (auto [name, t] : std::initializer_list<std::pair<const char*, Tensor*>>{{"w_att", &L.w_att},
                                                                                 {"a", &L.a},
                                                                                 {"score_w", &L.score_w},
                                                                                 {"score_b", &L.score_b},
                                                                                 {"w_out", &L.w_out},
                                                                                 {"b_out", &L.b_out}}) {
      out.emplace_back(p + name, t);
    }
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> GnnParams::named_parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<GnnParams*>(this)->named_parameters()) out.emplace_back(name, t);
  return out;
}

MessageGraph message_graph(const SubgraphSpec& spec) {
  MessageGraph g;
  g.nodes = spec.node_count();
  g.node_type.assign(g.nodes, static_cast<std::size_t>(NodeType::kSuper));
  std::unordered_map<ConceptId, std::size_t> node_of;
  for (std::size_t i = 0; i < spec.concepts.size(); ++i) {
    g.node_type[i + 1] = static_cast<std::size_t>(spec.concepts[i].origin == ConceptOrigin::kLinked
                                                      ? NodeType::kLinked
                                                      : NodeType::kExpanded);
    node_of.emplace(spec.concepts[i].id, i + 1);
  }
  auto push = [&](std::size_t s, std::size_t d, std::size_t r, double w) {
    g.src.push_back(s);
    g.dst.push_back(d);
    g.relation.push_back(r);
    g.score.push_back(w);
  };
  for (const Edge& e : spec.kg_edges) {
    auto h = node_of.find(e.head);
    auto t = node_of.find(e.tail);
    if (h == node_of.end() || t == node_of.end()) throw GnnError("gnn: edge endpoint is not a subgraph node");
    push(h->second, t->second, e.relation, e.weight);
    if (h->second != t->second) push(t->second, h->second, e.relation, e.weight);
  }
  for (const SuperEdge& e : spec.super_edges) {
    push(0, e.concept_index + 1, e.relation, e.weight);
    push(e.concept_index + 1, 0, e.relation, e.weight);
  }
  return g;
}

std::vector<double> attention_weights(Var features, const MessageGraph& graph, const GnnParams& params,
                                      std::size_t layer_index) {
  check_features(features, graph, params, layer_index);
  if (graph.src.empty()) return {};
  Var alpha = segment_softmax(edge_logits(features, graph, params, layer_index), graph.dst, graph.nodes);
  auto v = alpha.value();
  return {v.begin(), v.end()};
}

Var gat_layer(Var features, const MessageGraph& graph, const GnnParams& params, std::size_t layer_index) {
  check_features(features, graph, params, layer_index);
  Tape& tape = *features.tape();
  const GnnLayerParams& p = params.layers[layer_index];
  const std::size_t hidden = params.config().hidden;
  Var aggregate;
  if (graph.src.empty()) {
    aggregate = tape.constant(Tensor::zeros({graph.nodes, hidden}));
  } else {
    Var alpha = segment_softmax(edge_logits(features, graph, params, layer_index), graph.dst, graph.nodes);
    Var messages = scale_rows(gather_rows(features, graph.src), alpha);
    aggregate = scatter_add_rows(messages, graph.dst, graph.nodes);
  }
  return tanh(add(matmul(concat_cols(features, aggregate), tape.param(p.w_out)), tape.param(p.b_out)));
}

Var initial_features(const SubgraphSpec& spec, Var seed, const ConceptEmbeddingTable& table,
                     const GnnParams& params) {
  Tape& tape = *seed.tape();
  const std::size_t in = params.config().input_dim;
  if (seed.rows() != 1 || seed.cols() != in) throw GnnError("gnn: super seed must be 1 x input_dim");
  Var x = seed;
  if (!spec.concepts.empty()) {
    if (table.dim() != in) throw GnnError("gnn: concept embeddings do not match input_dim");
    std::vector<double> rows;
    rows.reserve(spec.concepts.size() * in);
    for (const auto& sc : spec.concepts) {
      auto r = table.row(sc.id);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    x = concat_rows(seed, tape.constant(spec.concepts.size(), in, std::move(rows)));
  }
  return params.has_bridge() ? matmul(x, tape.param(params.bridge)) : x;
}

Var propagate_all(const SubgraphSpec& spec, Var seed, const ConceptEmbeddingTable& table, const GnnParams& params) {
  const MessageGraph graph = message_graph(spec);
  Var h = initial_features(spec, seed, table, params);
  for (std::size_t l = 0; l < params.layers.size(); ++l) h = gat_layer(h, graph, params, l);
  return h;
}

Var propagate(const SubgraphSpec& spec, Var seed, const ConceptEmbeddingTable& table, const GnnParams& params) {
  return slice_rows(propagate_all(spec, seed, table, params), 0, 1);
}

std::vector<double> propagate(const SubgraphSpec& spec, const ConceptEmbeddingTable& table, const GnnParams& params) {
  Tape tape(false);
  Var seed = tape.constant(1, spec.super_seed.size(), spec.super_seed);
  auto v = propagate(spec, seed, table, params).value();
  return {v.begin(), v.end()};
}

}  // namespace sinlg
