#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sinlg/kg_store.hpp"
#include "sinlg/numerics.hpp"
#include "sinlg/sample.hpp"
#include "sinlg/vocabulary.hpp"

namespace sinlg {

class EncoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_dim = 128;
  std::size_t max_seq_len = 512;

  void validate() const;
};

// y = sigmoid(x . w + b)
struct PredictionHead {
  Tensor w;  // in x 1
  Tensor b;  // 1 x 1

  static PredictionHead create(std::size_t in_dim, std::mt19937_64& rng);
  std::size_t input_dim() const { return w.rows(); }
};

struct EncoderLayer {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

// Token + position embeddings, a pre-norm self-attention stack and a
// prediction head. The CLS position's final state is the sequence summary.
class EncoderModel {
 public:
  EncoderModel() = default;
  EncoderModel(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  std::size_t dim() const { return config_.d_model; }

  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;

  Tensor token_embedding;
  Tensor position_embedding;
  std::vector<EncoderLayer> layers;
  Tensor final_gain, final_bias;
  PredictionHead head;

 private:
  EncoderConfig config_;
};

// Runs the stack on `seq` (PAD positions masked out of attention) and
// returns the 1 x d CLS state.
Var encode(const EncoderModel& model, const TokenSequence& seq, Tape& tape);
std::vector<double> encode(const EncoderModel& model, const TokenSequence& seq);

Var predict(const PredictionHead& head, Var features);
double predict(const PredictionHead& head, std::span<const double> features);
double predict(const EncoderModel& model, std::span<const double> h_prime);

struct TruncationLog {
  std::size_t dropped_context_tokens = 0;
  std::size_t dropped_persona_tokens = 0;
  std::size_t dropped_response_tokens = 0;
};

// [CLS] p1 [SEP] ... [SEP] u1 [SEP] ... [SEP] r [SEP] (extra segments follow
// the response, each closed by [SEP]). Over-long inputs lose context tokens
// from the front first, then persona tokens from the front.
TokenSequence trans_a(const MrsSample& sample, std::size_t candidate_index, const Vocabulary& vocab,
                      std::size_t max_seq_len, std::span<const std::string> extra_segments = {},
                      TruncationLog* log = nullptr);

// Frozen copy of the encoder taken before fine-tuning; used for concept
// scoring and concept embeddings.
class ScorerSnapshot {
 public:
  ScorerSnapshot() = default;
  explicit ScorerSnapshot(const EncoderModel& model)
      : model_(std::make_shared<const EncoderModel>(model)) {}

  const EncoderModel& model() const { return *model_; }
  bool valid() const { return model_ != nullptr; }
  std::vector<double> encode(const TokenSequence& seq) const { return sinlg::encode(*model_, seq); }

 private:
  std::shared_ptr<const EncoderModel> model_;
};

// [CLS] phrase [SEP] through the snapshot.
std::vector<double> encode_concept(const ScorerSnapshot& snapshot, const Vocabulary& vocab, std::string_view phrase);

// Snapshot embedding for every concept of a graph, computed once.
class ConceptEmbeddingTable {
 public:
  ConceptEmbeddingTable() = default;
  static ConceptEmbeddingTable build(const ScorerSnapshot& snapshot, const Vocabulary& vocab,
                                     const KnowledgeGraph& graph);
  // Row-major `rows x dim` values supplied directly.
  static ConceptEmbeddingTable from_rows(std::size_t dim, std::vector<double> data);

  std::size_t size() const { return rows_; }
  std::size_t dim() const { return dim_; }
  bool contains(ConceptId c) const { return c < rows_; }
  std::span<const double> row(ConceptId c) const;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

// FNV-1a over the raw bytes of every parameter; used to assert that frozen
// weights stay untouched.
std::uint64_t parameter_fingerprint(const EncoderModel& model);

}  // namespace sinlg
