#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sinlg/encoder.hpp"
#include "sinlg/kg_store.hpp"
#include "sinlg/sample.hpp"

namespace sinlg {

class ExtractionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Number of entity-linking, neighbour-expansion and concept-scoring calls made
// in this process. Query-online-free inference asserts it does not move.
std::uint64_t kg_access_count();

enum class ConceptOrigin { kLinked, kExpanded };

struct ScoredConcept {
  ConceptId id = 0;
  ConceptOrigin origin = ConceptOrigin::kExpanded;
  double score = 0.0;

  bool operator==(const ScoredConcept&) const = default;
};

struct SuperEdge {
  std::size_t concept_index = 0;  // position in SubgraphSpec::concepts
  RelationId relation = 0;
  double weight = 0.0;

  bool operator==(const SuperEdge&) const = default;
};

// Score-weighted subgraph around one (sample, candidate) pair. Node 0 is the
// super node; node i + 1 is concepts[i].
struct SubgraphSpec {
  std::vector<ScoredConcept> concepts;
  std::vector<Edge> kg_edges;
  std::vector<SuperEdge> super_edges;
  RelationId super_relation = 0;
  // Initial super-node embedding. Concept initial embeddings are the rows of
  // the shared ConceptEmbeddingTable for `concepts`, resolved on demand.
  std::vector<double> super_seed;
  // Linked concepts that did not fit into the node budget.
  std::vector<ConceptId> pruned_linked;

  std::size_t node_count() const { return concepts.size() + 1; }
  bool operator==(const SubgraphSpec&) const = default;
};

struct ExtractionConfig {
  std::size_t max_nodes = 200;
  std::size_t hops = 2;
  std::size_t max_seq_len = 512;
};

// Greedy longest-match scan over the words of each utterance. Returns the set
// of matched concepts, ascending.
std::vector<ConceptId> link_entities(std::span<const std::string> utterances, const ConceptLexicon& lexicon);
std::vector<ConceptId> link_entities(const MrsSample& sample, std::size_t candidate_index,
                                     const ConceptLexicon& lexicon);

// Concepts within `hops` of the linked set, minus the linked set itself.
std::vector<ConceptId> expand_neighbors(const KnowledgeGraph& graph, std::span<const ConceptId> linked,
                                        std::size_t hops);

// score_j = h_ctx . table[v_j]
std::vector<ScoredConcept> score_concepts(std::span<const double> h_ctx, std::span<const ConceptId> candidates,
                                          ConceptOrigin origin, const ConceptEmbeddingTable& table);

// Descending score, ties by ascending concept id, at most `k` kept.
std::vector<ScoredConcept> rank_and_prune(std::vector<ScoredConcept> scored, std::size_t k);

struct ExtractionContext {
  const KnowledgeGraph* graph = nullptr;
  const ConceptLexicon* lexicon = nullptr;
  const Vocabulary* vocab = nullptr;
  const ScorerSnapshot* snapshot = nullptr;
  const ConceptEmbeddingTable* table = nullptr;
};

// Expand, score, prune and wire up the super node for an already linked
// concept set. super_seed is left empty.
SubgraphSpec assemble_subgraph(std::span<const double> h_ctx, std::span<const ConceptId> linked,
                               const KnowledgeGraph& graph, const ConceptEmbeddingTable& table,
                               const ExtractionConfig& config);

// Full pipeline for one candidate: trans_a, encode, link, expand, score,
// prune, induce edges, attach the super node. Concept scores come from the
// snapshot; the super seed is h' from `model`, or left empty when `model` is
// null (training substitutes its own taped h').
SubgraphSpec build_subgraph(const MrsSample& sample, std::size_t candidate_index, const ExtractionContext& ctx,
                            const EncoderModel* model, const ExtractionConfig& config);

// Initial node features (super seed first, then concept rows) as a dense
// node_count x dim matrix.
Tensor initial_embeddings(const SubgraphSpec& spec, const ConceptEmbeddingTable& table);

nlohmann::json subgraph_to_json(const SubgraphSpec& spec, const KnowledgeGraph& graph, std::size_t sample_index,
                                std::size_t candidate_index, bool with_seed = false);

}  // namespace sinlg
