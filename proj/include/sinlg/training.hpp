#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sinlg/evaluation.hpp"
#include "sinlg/extraction.hpp"
#include "sinlg/model.hpp"

namespace sinlg {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Moments are keyed by parameter name;
// tensors without a gradient are skipped.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const AdamWConfig& config) : config_(config) {}

  void step(const std::vector<std::pair<std::string, Tensor*>>& params);
  std::uint64_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

  nlohmann::json to_json() const;
  static AdamW from_json(const nlohmann::json& j);

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

struct TrainConfig {
  ModelConfig model;
  AdamWConfig optimizer;
  LossWeights loss;
  ExtractionConfig extraction;  // max_nodes (K), hops, max_seq_len
  std::size_t batch_size = 64;
  std::size_t epochs = 3;
  std::uint64_t seed = 0;
  bool stop_grad_gnn_target = false;
  // Negatives drawn per sample and epoch; 0 trains on every candidate.
  std::size_t train_negatives = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainingRow {
  std::size_t sample = 0;
  std::size_t candidate = 0;
  int label = 0;
};

// Pre-extracted knowledge for a dataset: specs[sample][candidate].
struct KnowledgeCache {
  const KnowledgeGraph* graph = nullptr;
  std::shared_ptr<const ConceptEmbeddingTable> table;
  std::vector<std::vector<SubgraphSpec>> specs;

  RowKnowledge row(std::size_t sample, std::size_t candidate) const;
};

// Builds the concept table from the model's snapshot unless one is given.
KnowledgeCache extract_dataset(const std::vector<MrsSample>& dataset, const KnowledgeGraph& graph,
                               const SinlgModel& model, const ExtractionConfig& config,
                               std::shared_ptr<const ConceptEmbeddingTable> table = nullptr);

struct StepStats {
  double loss = 0.0;
  double bce = 0.0;
  double cos = 0.0;
  std::size_t rows = 0;
};

struct TrainState {
  SinlgModel model;
  AdamW optimizer;
};

// One optimizer update on the mean loss of `batch`.
StepStats train_step(TrainState& state, const std::vector<MrsSample>& dataset,
                     const std::vector<TrainingRow>& batch, const KnowledgeCache* knowledge,
                     const TrainConfig& config);

// Every (sample, candidate) pair as a labelled row.
std::vector<TrainingRow> dataset_rows(const std::vector<MrsSample>& dataset);

struct TrainResult {
  TrainConfig config;  // as run, with KG-derived sizes filled in
  TrainState state;
  std::vector<nlohmann::json> log;  // one object per epoch
};

// Builds the vocabulary from the training texts and KG phrases, initializes
// the model and runs `epochs` passes. Dev metrics are logged per epoch when a
// dev set is given. The log lines are also appended to `log_path` if set.
TrainResult train(const TrainConfig& config, const std::vector<MrsSample>& train_set,
                  const std::vector<MrsSample>& dev_set, const KnowledgeGraph& graph,
                  const std::string& log_path = "");

Vocabulary build_vocabulary(const std::vector<MrsSample>& dataset, const KnowledgeGraph& graph);

// Dev metrics using pre-extracted knowledge where the variant needs it.
EvalReport evaluate_cached(const SinlgModel& model, const std::vector<MrsSample>& dataset,
                           const KnowledgeCache* knowledge, std::size_t max_seq_len);

// The model section of the stored config is taken from state.model.
void save_checkpoint(const std::string& path, const TrainState& state, const TrainConfig& config);

struct Checkpoint {
  TrainConfig config;
  TrainState state;
  std::string config_hash;
};

Checkpoint load_checkpoint(const std::string& path);

std::string config_hash(const TrainConfig& config);

}  // namespace sinlg
