#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sinlg/encoder.hpp"
#include "sinlg/extraction.hpp"
#include "sinlg/numerics.hpp"

namespace sinlg {

class GnnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NodeType : std::size_t { kSuper = 0, kLinked = 1, kExpanded = 2 };
inline constexpr std::size_t kNodeTypeCount = 3;

struct GnnConfig {
  std::size_t layers = 5;
  std::size_t hidden = 200;
  std::size_t input_dim = 0;   // encoder dimension; bridged when != hidden
  std::size_t relations = 0;   // KG relation count; one more id is the super relation
  std::size_t type_dim = 16;
  std::size_t relation_dim = 16;
  std::size_t score_dim = 8;
  std::size_t attention_dim = 32;

  void validate() const;
};

struct GnnLayerParams {
  Tensor w_att;    // (hidden + type + relation + score) x attention
  Tensor a;        // attention x 1
  Tensor score_w;  // 1 x score
  Tensor score_b;  // 1 x score
  Tensor w_out;    // 2 hidden x hidden
  Tensor b_out;    // 1 x hidden
};

class GnnParams {
 public:
  GnnParams() = default;
  static GnnParams create(const GnnConfig& config, std::mt19937_64& rng);

  const GnnConfig& config() const { return config_; }
  bool has_bridge() const { return !bridge.data.empty(); }

  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;

  Tensor bridge;    // input_dim x hidden, empty when the dimensions agree
  Tensor type_emb;  // 3 x type
  Tensor rel_emb;   // (relations + 1) x relation
  std::vector<GnnLayerParams> layers;

 private:
  GnnConfig config_;
};

// Directed message edges of a SubgraphSpec. KG edges and super edges are
// both used in each direction.
struct MessageGraph {
  std::size_t nodes = 0;
  std::vector<std::size_t> src, dst;
  std::vector<std::size_t> relation;
  std::vector<double> score;
  std::vector<std::size_t> node_type;  // per node
};

MessageGraph message_graph(const SubgraphSpec& spec);

// Attention weights of one layer, one per message edge (for inspection).
std::vector<double> attention_weights(Var features, const MessageGraph& graph, const GnnParams& params,
                                      std::size_t layer_index);

// One propagation step: features is nodes x hidden.
Var gat_layer(Var features, const MessageGraph& graph, const GnnParams& params, std::size_t layer_index);

// Initial node features: `seed` (1 x input_dim) for the super node and the
// table rows of the kept concepts as constants, bridged to the hidden size.
Var initial_features(const SubgraphSpec& spec, Var seed, const ConceptEmbeddingTable& table,
                     const GnnParams& params);

// All final node features, nodes x hidden.
Var propagate_all(const SubgraphSpec& spec, Var seed, const ConceptEmbeddingTable& table, const GnnParams& params);
// Final super-node feature h_X, 1 x hidden.
Var propagate(const SubgraphSpec& spec, Var seed, const ConceptEmbeddingTable& table, const GnnParams& params);
// Untaped h_X seeded with spec.super_seed.
std::vector<double> propagate(const SubgraphSpec& spec, const ConceptEmbeddingTable& table, const GnnParams& params);

}  // namespace sinlg
