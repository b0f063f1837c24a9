#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sinlg/encoder.hpp"
#include "sinlg/extraction.hpp"
#include "sinlg/gnn.hpp"
#include "sinlg/numerics.hpp"
#include "sinlg/sample.hpp"
#include "sinlg/vocabulary.hpp"

namespace sinlg {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { kPlmOnly, kS0, kS1, kS2, kS3, kSinlg };

// plm | s0 | s1 | s2 | s3 | sinlg
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
// Every variant except PLM_ONLY consumes SubgraphSpecs during training.
bool needs_subgraph(Variant v);
// Variants whose predictions need extracted knowledge at inference time.
bool needs_knowledge_at_inference(Variant v);

struct LossWeights {
  double alpha = 0.5;
  double epsilon = 1e-8;

  void validate() const;
};

struct ModelConfig {
  Variant variant = Variant::kSinlg;
  EncoderConfig encoder;
  GnnConfig gnn;  // input_dim follows encoder.d_model
  std::size_t s0_concepts = 5;  // concept phrases appended to the input under S0
  std::uint64_t seed = 0;
};

// Encoder, GNN and the two fusion heads, plus the frozen scorer snapshot
// taken at initialization.
class SinlgModel {
 public:
  SinlgModel() = default;
  SinlgModel(const ModelConfig& config, Vocabulary vocab);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ScorerSnapshot& snapshot() const { return snapshot_; }
  Variant variant() const { return config_.variant; }

  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;

  EncoderModel encoder;
  GnnParams gnn;
  PredictionHead concat_head;  // h' (+) h_X
  PredictionHead pool_head;    // h' (+) mean concept embedding

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  ScorerSnapshot snapshot_;
};

// -cos(h', h_X)
Var cosine_loss(Var h_prime, Var h_x, double epsilon = 1e-8);
Var bce_loss(double label, Var y_hat);
// alpha * l_bce + (1 - alpha) * l_cos; the boundaries pass through exactly.
Var combined_loss(const LossWeights& weights, Var l_bce, Var l_cos);
double combined_loss(const LossWeights& weights, double l_bce, double l_cos);

struct RowOptions {
  LossWeights loss;
  std::size_t max_seq_len = 512;
  bool stop_grad_gnn_target = false;
};

struct RowForward {
  Var probability;
  Var bce;
  std::optional<Var> cos;
  Var loss;
};

// Extracted knowledge for one (sample, candidate) row.
struct RowKnowledge {
  const SubgraphSpec* spec = nullptr;
  const ConceptEmbeddingTable* table = nullptr;
  const KnowledgeGraph* graph = nullptr;  // S0 reads concept phrases from it
};

// Training-time forward of one (sample, candidate, label) row. Every variant
// except PLM_ONLY requires `knowledge`.
RowForward forward_row(const SinlgModel& model, const MrsSample& sample, std::size_t candidate, double label,
                       const RowKnowledge& knowledge, const RowOptions& options, Tape& tape);

// Matching score without a tape. For PLM_ONLY, S2 and SINLG this reads only
// the encoder and its head.
double score_candidate(const SinlgModel& model, const MrsSample& sample, std::size_t candidate,
                       std::size_t max_seq_len, const RowKnowledge& knowledge = {});

// Scoring used by the online pipeline: sigmoid over h' (+) h_X with the
// concat head, whatever the variant.
double score_candidate_online(const SinlgModel& model, const MrsSample& sample, std::size_t candidate,
                              std::size_t max_seq_len, const RowKnowledge& knowledge);

// Top concept phrases of a spec, best first, for the S0 input.
std::vector<std::string> knowledge_segments(const SubgraphSpec& spec, const KnowledgeGraph& graph, std::size_t count);

}  // namespace sinlg
