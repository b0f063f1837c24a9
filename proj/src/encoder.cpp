#include "sinlg/encoder.hpp"

#include <cmath>
#include <cstring>

namespace sinlg {

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(rows * cols);
  for (double& v : data) v = dist(rng);
  return Tensor({rows, cols}, std::move(data), true);
}

Tensor filled(std::size_t rows, std::size_t cols, double value) {
  return Tensor({rows, cols}, std::vector<double>(rows * cols, value), true);
}

Var affine_norm(Var x, Tape& tape, const Tensor& gain, const Tensor& bias) {
  return add(mul(layernorm(x), tape.param(gain)), tape.param(bias));
}

// Runs one pre-norm block. With `first_row_only`, queries and the residual
// stream are restricted to position 0 (keys and values still span the whole
// sequence), which is all the final layer needs for the CLS state.
Var encoder_block(const EncoderLayer& layer, const EncoderConfig& cfg, Var x, std::span<const int> mask,
                  bool first_row_only, Tape& tape) {
  const std::size_t head_dim = cfg.d_model / cfg.heads;
  Var normed = affine_norm(x, tape, layer.ln1_gain, layer.ln1_bias);
  Var query_src = first_row_only ? slice_rows(normed, 0, 1) : normed;
  Var residual = first_row_only ? slice_rows(x, 0, 1) : x;
  Var q = matmul(query_src, tape.param(layer.wq));
  Var k = matmul(normed, tape.param(layer.wk));
  Var v = matmul(normed, tape.param(layer.wv));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Var qh = slice_cols(q, h * head_dim, head_dim);
    Var kh = slice_cols(k, h * head_dim, head_dim);
    Var vh = slice_cols(v, h * head_dim, head_dim);
    Var attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
    Var out = matmul(attn, vh);
    heads = h == 0 ? out : concat_cols(heads, out);
  }
  Var attended = add(matmul(heads, tape.param(layer.wo)), tape.param(layer.bo));
  Var mid = add(residual, attended);
  Var f = affine_norm(mid, tape, layer.ln2_gain, layer.ln2_bias);
  Var hidden = relu(add(matmul(f, tape.param(layer.w1)), tape.param(layer.b1)));
  Var ff = add(matmul(hidden, tape.param(layer.w2)), tape.param(layer.b2));
  return add(mid, ff);
}

void fnv_mix(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kReservedCount)) {
    throw EncoderError("encoder: vocabulary must contain regular tokens");
  }
  if (d_model == 0 || heads == 0 || ffn_dim == 0 || max_seq_len < 3) throw EncoderError("encoder: invalid sizes");
  if (d_model % heads != 0) throw EncoderError("encoder: head count must divide d_model");
}

PredictionHead PredictionHead::create(std::size_t in_dim, std::mt19937_64& rng) {
  return {random_matrix(rng, in_dim, 1, 1.0 / std::sqrt(static_cast<double>(in_dim))), filled(1, 1, 0.0)};
}

EncoderModel::EncoderModel(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.d_model;
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  token_embedding = random_matrix(rng, config_.vocab_size, d, 1.0);
  position_embedding = random_matrix(rng, config_.max_seq_len, d, 0.1);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    EncoderLayer layer;
    layer.ln1_gain = filled(1, d, 1.0);
    layer.ln1_bias = filled(1, d, 0.0);
    layer.wq = random_matrix(rng, d, d, proj);
    layer.wk = random_matrix(rng, d, d, proj);
    layer.wv = random_matrix(rng, d, d, proj);
    layer.wo = random_matrix(rng, d, d, proj);
    layer.bo = filled(1, d, 0.0);
    layer.ln2_gain = filled(1, d, 1.0);
    layer.ln2_bias = filled(1, d, 0.0);
    layer.w1 = random_matrix(rng, d, config_.ffn_dim, proj);
    layer.b1 = filled(1, config_.ffn_dim, 0.0);
    layer.w2 = random_matrix(rng, config_.ffn_dim, d, 1.0 / std::sqrt(static_cast<double>(config_.ffn_dim)));
    layer.b2 = filled(1, d, 0.0);
    layers.push_back(std::move(layer));
  }
  final_gain = filled(1, d, 1.0);
  final_bias = filled(1, d, 0.0);
  head = PredictionHead::create(d, rng);
}

std::vector<std::pair<std::string, Tensor*>> EncoderModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out{{"token_embedding", &token_embedding},
                                                   {"position_embedding", &position_embedding}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    EncoderLayer& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    for (auto [name, t] : std::initializer_list<std::pair<const char*, Tensor*>>{
             {"ln1_gain", &L.ln1_gain}, {"ln1_bias", &L.ln1_bias}, {"wq", &L.wq}, {"wk", &L.wk},
             {"wv", &L.wv}, {"wo", &L.wo}, {"bo", &L.bo}, {"ln2_gain", &L.ln2_gain},
             {"ln2_bias", &L.ln2_bias}, {"w1", &L.w1}, {"b1", &L.b1}, {"w2", &L.w2}, {"b2", &L.b2}}) {
      out.emplace_back(p + name, t);
    }
  }
  out.emplace_back("final_gain", &final_gain);
  out.emplace_back("final_bias", &final_bias);
  out.emplace_back("head.w", &head.w);
  out.emplace_back("head.b", &head.b);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> EncoderModel::named_parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<EncoderModel*>(this)->named_parameters()) out.emplace_back(name, t);
  return out;
}

Var encode(const EncoderModel& model, const TokenSequence& seq, Tape& tape) {
  const EncoderConfig& cfg = model.config();
  if (seq.empty()) throw EncoderError("encode: empty sequence");
  if (seq.size() > cfg.max_seq_len) throw EncoderError("encode: sequence longer than max_seq_len");
  if (seq.mask.size() != seq.size()) throw EncoderError("encode: mask length differs from token count");
  std::vector<std::size_t> token_rows(seq.size());
  std::vector<std::size_t> positions(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) throw EncoderError("encode: token id out of range");
    token_rows[i] = static_cast<std::size_t>(id);
    positions[i] = i;
  }
  Var x = add(gather_rows(tape.param(model.token_embedding), token_rows),
              gather_rows(tape.param(model.position_embedding), positions));
  if (model.layers.empty()) x = slice_rows(x, 0, 1);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    x = encoder_block(model.layers[l], cfg, x, seq.mask, l + 1 == model.layers.size(), tape);
  }
  return affine_norm(x, tape, model.final_gain, model.final_bias);
}

std::vector<double> encode(const EncoderModel& model, const TokenSequence& seq) {
  Tape tape(false);
  Var h = encode(model, seq, tape);
  return {h.value().begin(), h.value().end()};
}

Var predict(const PredictionHead& head, Var features) {
  if (features.rows() != 1 || features.cols() != head.input_dim()) {
    throw EncoderError("predict: feature length differs from head input size");
  }
  Tape& tape = *features.tape();
  return sigmoid(add(matmul(features, tape.param(head.w)), tape.param(head.b)));
}

double predict(const PredictionHead& head, std::span<const double> features) {
  if (features.size() != head.input_dim()) throw EncoderError("predict: feature length differs from head input size");
  double logit = head.b.data[0];
  for (std::size_t i = 0; i < features.size(); ++i) logit += features[i] * head.w.data[i];
  if (logit >= 0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

double predict(const EncoderModel& model, std::span<const double> h_prime) { return predict(model.head, h_prime); }

TokenSequence trans_a(const MrsSample& sample, std::size_t candidate_index, const Vocabulary& vocab,
                      std::size_t max_seq_len, std::span<const std::string> extra_segments, TruncationLog* log) {
  if (candidate_index >= sample.candidates.size()) throw EncoderError("trans_a: candidate index out of range");
  if (max_seq_len < 3) throw EncoderError("trans_a: max_seq_len too small");
  auto segment_stream = [&](const auto& utterances) {
    std::vector<TokenId> out;
    for (const auto& u : utterances) {
      auto ids = vocab.encode_words(u);
      out.insert(out.end(), ids.begin(), ids.end());
      out.push_back(Vocabulary::kSep);
    }
    return out;
  };
  std::vector<TokenId> persona = segment_stream(sample.persona);
  std::vector<TokenId> context = segment_stream(sample.context);
  std::vector<TokenId> response = vocab.encode_words(sample.candidates[candidate_index]);
  std::vector<TokenId> extra = segment_stream(extra_segments);

  TruncationLog local;
  std::size_t total = 1 + persona.size() + context.size() + response.size() + 1 + extra.size();
  if (total > max_seq_len) {
    std::size_t excess = total - max_seq_len;
    const std::size_t from_context = std::min(excess, context.size());
    context.erase(context.begin(), context.begin() + static_cast<std::ptrdiff_t>(from_context));
    local.dropped_context_tokens = from_context;
    excess -= from_context;
    const std::size_t from_extra = std::min(excess, extra.size());
    extra.resize(extra.size() - from_extra);
    excess -= from_extra;
    const std::size_t from_persona = std::min(excess, persona.size());
    persona.erase(persona.begin(), persona.begin() + static_cast<std::ptrdiff_t>(from_persona));
    local.dropped_persona_tokens = from_persona;
    excess -= from_persona;
    // Only reachable when the response alone exceeds the window.
    response.resize(response.size() - std::min(excess, response.size()));
    local.dropped_response_tokens = excess;
  }
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kCls);
  seq.ids.insert(seq.ids.end(), persona.begin(), persona.end());
  seq.ids.insert(seq.ids.end(), context.begin(), context.end());
  seq.ids.insert(seq.ids.end(), response.begin(), response.end());
  seq.ids.push_back(Vocabulary::kSep);
  seq.ids.insert(seq.ids.end(), extra.begin(), extra.end());
  seq.mask.assign(seq.ids.size(), 1);
  if (log) *log = local;
  return seq;
}

std::vector<double> encode_concept(const ScorerSnapshot& snapshot, const Vocabulary& vocab, std::string_view phrase) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kCls);
  for (TokenId id : vocab.encode_words(phrase)) seq.ids.push_back(id);
  seq.ids.push_back(Vocabulary::kSep);
  const std::size_t limit = snapshot.model().config().max_seq_len;
  if (seq.ids.size() > limit) {
    seq.ids.resize(limit - 1);
    seq.ids.push_back(Vocabulary::kSep);
  }
  seq.mask.assign(seq.ids.size(), 1);
  return snapshot.encode(seq);
}

ConceptEmbeddingTable ConceptEmbeddingTable::build(const ScorerSnapshot& snapshot, const Vocabulary& vocab,
                                                   const KnowledgeGraph& graph) {
  ConceptEmbeddingTable table;
  table.rows_ = graph.concept_count();
  table.dim_ = snapshot.model().dim();
  table.data_.reserve(table.rows_ * table.dim_);
  for (std::size_t c = 0; c < table.rows_; ++c) {
    auto e = encode_concept(snapshot, vocab, graph.concepts().name(static_cast<ConceptId>(c)));
    table.data_.insert(table.data_.end(), e.begin(), e.end());
  }
  return table;
}

ConceptEmbeddingTable ConceptEmbeddingTable::from_rows(std::size_t dim, std::vector<double> data) {
  if (dim == 0 || data.size() % dim != 0) throw EncoderError("concept embedding rows do not match dimension");
  ConceptEmbeddingTable table;
  table.dim_ = dim;
  table.rows_ = data.size() / dim;
  table.data_ = std::move(data);
  return table;
}

std::span<const double> ConceptEmbeddingTable::row(ConceptId c) const {
  if (!contains(c)) throw EncoderError("concept embedding table has no entry for concept " + std::to_string(c));
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(c) * dim_, dim_);
}

std::uint64_t parameter_fingerprint(const EncoderModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : model.named_parameters()) {
    fnv_mix(h, name.data(), name.size());
    fnv_mix(h, t->data.data(), t->data.size() * sizeof(double));
  }
  return h;
}

}  // namespace sinlg
