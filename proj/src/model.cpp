#include "sinlg/model.hpp"

#include <array>

namespace sinlg {

namespace {

constexpr std::array<std::pair<Variant, const char*>, 6> kVariantNames{{{Variant::kPlmOnly, "plm"},
                                                                        {Variant::kS0, "s0"},
                                                                        {Variant::kS1, "s1"},
                                                                        {Variant::kS2, "s2"},
                                                                        {Variant::kS3, "s3"},
                                                                        {Variant::kSinlg, "sinlg"}}};

void require_knowledge(const SinlgModel& model, const RowKnowledge& k) {
  if (!needs_subgraph(model.variant())) return;
  if (!k.spec || !k.table) {
    throw ModelError("variant " + variant_name(model.variant()) + " needs a SubgraphSpec and concept table");
  }
  if (model.variant() == Variant::kS0 && !k.graph) throw ModelError("variant s0 needs the knowledge graph");
}

TokenSequence input_sequence(const SinlgModel& model, const MrsSample& sample, std::size_t candidate,
                             std::size_t max_seq_len, const RowKnowledge& k) {
  if (model.variant() == Variant::kS0) {
    const auto segments = knowledge_segments(*k.spec, *k.graph, model.config().s0_concepts);
    return trans_a(sample, candidate, model.vocab(), max_seq_len, segments);
  }
  return trans_a(sample, candidate, model.vocab(), max_seq_len);
}

Var concept_mean(const SubgraphSpec& spec, const ConceptEmbeddingTable& table, Tape& tape, std::size_t dim) {
  if (spec.concepts.empty()) return tape.constant(Tensor::zeros({1, dim}));
  if (table.dim() != dim) throw ModelError("concept embeddings do not match the encoder dimension");
  std::vector<double> rows;
  rows.reserve(spec.concepts.size() * dim);
  for (const auto& sc : spec.concepts) {
    auto r = table.row(sc.id);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return mean_rows(tape.constant(spec.concepts.size(), dim, std::move(rows)));
}

Var gnn_output(const SinlgModel& model, const RowKnowledge& k, Var h) {
  return propagate(*k.spec, h, *k.table, model.gnn);
}

// Probability path shared by training and inference; `h_out` receives h'.
Var predict_row(const SinlgModel& model, const MrsSample& sample, std::size_t candidate, std::size_t max_seq_len,
                const RowKnowledge& k, Tape& tape, Var* h_out) {
  const TokenSequence seq = input_sequence(model, sample, candidate, max_seq_len, k);
  Var h = encode(model.encoder, seq, tape);
  if (h_out) *h_out = h;
  switch (model.variant()) {
    case Variant::kS1:
      return predict(model.pool_head, concat_cols(h, concept_mean(*k.spec, *k.table, tape, model.encoder.dim())));
    case Variant::kS3:
      return predict(model.concat_head, concat_cols(h, gnn_output(model, k, h)));
    default:
      return predict(model.encoder.head, h);
  }
}

}  // namespace

std::string variant_name(Variant v) {
  for (const auto& [variant, name] : kVariantNames)
    if (variant == v) return name;
  throw ModelError("unknown variant");
}

Variant parse_variant(const std::string& name) {
  for (const auto& [variant, n] : kVariantNames)
    if (name == n) return variant;
  throw ModelError("unknown variant '" + name + "' (expected plm, s0, s1, s2, s3 or sinlg)");
}

bool needs_subgraph(Variant v) { return v != Variant::kPlmOnly; }

bool needs_knowledge_at_inference(Variant v) { return v == Variant::kS0 || v == Variant::kS1 || v == Variant::kS3; }

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ModelError("alpha must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw ModelError("epsilon must be positive");
}

SinlgModel::SinlgModel(const ModelConfig& config, Vocabulary vocab) : config_(config), vocab_(std::move(vocab)) {
  if (config_.encoder.vocab_size == 0) config_.encoder.vocab_size = vocab_.size();
  if (config_.encoder.vocab_size != vocab_.size()) throw ModelError("encoder vocab_size differs from the vocabulary");
  config_.gnn.input_dim = config_.encoder.d_model;
  encoder = EncoderModel(config_.encoder, config_.seed);
  snapshot_ = ScorerSnapshot(encoder);
  std::mt19937_64 rng(config_.seed ^ 0x9e3779b97f4a7c15ull);
  gnn = GnnParams::create(config_.gnn, rng);
  concat_head = PredictionHead::create(config_.encoder.d_model + config_.gnn.hidden, rng);
  pool_head = PredictionHead::create(2 * config_.encoder.d_model, rng);
}

std::vector<std::pair<std::string, Tensor*>> SinlgModel::named_parameters() {
  auto out = encoder.named_parameters();
  for (auto& p : gnn.named_parameters()) out.push_back(p);
  out.emplace_back("concat_head.w", &concat_head.w);
  out.emplace_back("concat_head.b", &concat_head.b);
  out.emplace_back("pool_head.w", &pool_head.w);
  out.emplace_back("pool_head.b", &pool_head.b);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> SinlgModel::named_parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<SinlgModel*>(this)->named_parameters()) out.emplace_back(name, t);
  return out;
}

Var cosine_loss(Var h_prime, Var h_x, double epsilon) {
  if (h_prime.rows() * h_prime.cols() != h_x.rows() * h_x.cols()) {
    throw ModelError("cosine loss: dimensions differ (" + std::to_string(h_prime.cols()) + " vs " +
                     std::to_string(h_x.cols()) + ")");
  }
  return scale(cosine(h_prime, h_x, epsilon), -1.0);
}

Var bce_loss(double label, Var y_hat) {
  if (label != 0.0 && label != 1.0) throw ModelError("label must be 0 or 1");
  return bce(y_hat, label);
}

Var combined_loss(const LossWeights& weights, Var l_bce, Var l_cos) {
  weights.validate();
  if (weights.alpha == 1.0) return l_bce;
  if (weights.alpha == 0.0) return l_cos;
  return add(scale(l_bce, weights.alpha), scale(l_cos, 1.0 - weights.alpha));
}

double combined_loss(const LossWeights& weights, double l_bce, double l_cos) {
  weights.validate();
  if (weights.alpha == 1.0) return l_bce;
  if (weights.alpha == 0.0) return l_cos;
  return weights.alpha * l_bce + (1.0 - weights.alpha) * l_cos;
}

RowForward forward_row(const SinlgModel& model, const MrsSample& sample, std::size_t candidate, double label,
                       const RowKnowledge& knowledge, const RowOptions& options, Tape& tape) {
  require_knowledge(model, knowledge);
  RowForward out;
  Var h;
  out.probability = predict_row(model, sample, candidate, options.max_seq_len, knowledge, tape, &h);
  out.bce = bce_loss(label, out.probability);
  if (model.variant() == Variant::kS2) {
    out.cos = cosine_loss(h, concept_mean(*knowledge.spec, *knowledge.table, tape, model.encoder.dim()),
                          options.loss.epsilon);
  } else if (model.variant() == Variant::kSinlg) {
    Var hx = gnn_output(model, knowledge, h);
    if (options.stop_grad_gnn_target) {
      auto v = hx.value();
      hx = tape.constant(1, v.size(), std::vector<double>(v.begin(), v.end()));
    }
    Var anchor = model.gnn.has_bridge() ? matmul(h, tape.param(model.gnn.bridge)) : h;
    out.cos = cosine_loss(anchor, hx, options.loss.epsilon);
  }
  out.loss = out.cos ? combined_loss(options.loss, out.bce, *out.cos) : out.bce;
  return out;
}

double score_candidate(const SinlgModel& model, const MrsSample& sample, std::size_t candidate,
                       std::size_t max_seq_len, const RowKnowledge& knowledge) {
  if (needs_knowledge_at_inference(model.variant())) require_knowledge(model, knowledge);
  Tape tape(false);
  const RowKnowledge none;
  const RowKnowledge& used = needs_knowledge_at_inference(model.variant()) ? knowledge : none;
  return predict_row(model, sample, candidate, max_seq_len, used, tape, nullptr).item();
}

double score_candidate_online(const SinlgModel& model, const MrsSample& sample, std::size_t candidate,
                              std::size_t max_seq_len, const RowKnowledge& knowledge) {
  if (!knowledge.spec || !knowledge.table) throw ModelError("online scoring needs a SubgraphSpec and concept table");
  Tape tape(false);
  Var h = encode(model.encoder, trans_a(sample, candidate, model.vocab(), max_seq_len), tape);
  return predict(model.concat_head, concat_cols(h, gnn_output(model, knowledge, h))).item();
}

std::vector<std::string> knowledge_segments(const SubgraphSpec& spec, const KnowledgeGraph& graph, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < spec.concepts.size() && out.size() < count; ++i) {
    out.push_back(graph.concepts().name(spec.concepts[i].id));
  }
  return out;
}

}  // namespace sinlg
