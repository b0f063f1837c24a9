#include "sinlg/extraction.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "sinlg/vocabulary.hpp"

namespace sinlg {

namespace {

std::atomic<std::uint64_t> g_kg_accesses{0};

void touch_kg() { g_kg_accesses.fetch_add(1, std::memory_order_relaxed); }

bool rank_before(const ScoredConcept& a, const ScoredConcept& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

const char* origin_name(ConceptOrigin o) { return o == ConceptOrigin::kLinked ? "linked" : "expanded"; }

}  // namespace

std::uint64_t kg_access_count() { return g_kg_accesses.load(std::memory_order_relaxed); }

std::vector<ConceptId> link_entities(std::span<const std::string> utterances, const ConceptLexicon& lexicon) {
  touch_kg();
  std::vector<ConceptId> found;
  for (const std::string& utterance : utterances) {
    const auto words = split_words(utterance);
    const std::span<const std::string> all(words);
    std::size_t i = 0;
    while (i < words.size()) {
      std::size_t matched = 0;
      const std::size_t longest = std::min(lexicon.max_phrase_tokens(), words.size() - i);
      for (std::size_t len = longest; len >= 1; --len) {
        if (auto c = lexicon.lookup(all.subspan(i, len))) {
          found.push_back(*c);
          matched = len;
          break;
        }
      }
      i += matched ? matched : 1;
    }
  }
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  return found;
}

std::vector<ConceptId> link_entities(const MrsSample& sample, std::size_t candidate_index,
                                     const ConceptLexicon& lexicon) {
  if (candidate_index >= sample.candidates.size()) {
    throw ExtractionError("candidate index " + std::to_string(candidate_index) + " out of range");
  }
  std::vector<std::string> utterances = sample.persona;
  utterances.insert(utterances.end(), sample.context.begin(), sample.context.end());
  utterances.push_back(sample.candidates[candidate_index]);
  return link_entities(utterances, lexicon);
}

std::vector<ConceptId> expand_neighbors(const KnowledgeGraph& graph, std::span<const ConceptId> linked,
                                        std::size_t hops) {
  touch_kg();
  auto reach = graph.k_hop_neighbors(linked, hops);
  std::vector<ConceptId> sorted_linked(linked.begin(), linked.end());
  std::sort(sorted_linked.begin(), sorted_linked.end());
  std::vector<ConceptId> out;
  std::set_difference(reach.begin(), reach.end(), sorted_linked.begin(), sorted_linked.end(),
                      std::back_inserter(out));
  return out;
}

std::vector<ScoredConcept> score_concepts(std::span<const double> h_ctx, std::span<const ConceptId> candidates,
                                          ConceptOrigin origin, const ConceptEmbeddingTable& table) {
  touch_kg();
  if (!candidates.empty() && h_ctx.size() != table.dim()) {
    throw ExtractionError("context vector has dimension " + std::to_string(h_ctx.size()) + ", table has " +
                          std::to_string(table.dim()));
  }
  std::vector<ScoredConcept> out;
  out.reserve(candidates.size());
  for (ConceptId c : candidates) {
    if (!table.contains(c)) throw ExtractionError("no embedding for concept " + std::to_string(c));
    const auto row = table.row(c);
    double s = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) s += h_ctx[i] * row[i];
    if (!std::isfinite(s)) throw ExtractionError("non-finite score for concept " + std::to_string(c));
    out.push_back({c, origin, s});
  }
  return out;
}

std::vector<ScoredConcept> rank_and_prune(std::vector<ScoredConcept> scored, std::size_t k) {
  std::sort(scored.begin(), scored.end(), rank_before);
  if (scored.size() > k) scored.resize(k);
  return scored;
}

SubgraphSpec assemble_subgraph(std::span<const double> h_ctx, std::span<const ConceptId> linked,
                               const KnowledgeGraph& graph, const ConceptEmbeddingTable& table,
                               const ExtractionConfig& config) {
  SubgraphSpec spec;
  spec.super_relation = static_cast<RelationId>(graph.relation_count());

  const auto expanded = expand_neighbors(graph, linked, config.hops);
  auto linked_ranked = rank_and_prune(score_concepts(h_ctx, linked, ConceptOrigin::kLinked, table),
                                      std::numeric_limits<std::size_t>::max());
  if (linked_ranked.size() > config.max_nodes) {
    for (std::size_t i = config.max_nodes; i < linked_ranked.size(); ++i) {
      spec.pruned_linked.push_back(linked_ranked[i].id);
    }
    std::sort(spec.pruned_linked.begin(), spec.pruned_linked.end());
    linked_ranked.resize(config.max_nodes);
  }
  // Pruned linked concepts are not re-admitted as expanded ones.
  std::vector<ConceptId> expand_only;
  for (ConceptId c : expanded) {
    if (!std::binary_search(spec.pruned_linked.begin(), spec.pruned_linked.end(), c)) expand_only.push_back(c);
  }
  auto expanded_ranked = rank_and_prune(score_concepts(h_ctx, expand_only, ConceptOrigin::kExpanded, table),
                                        config.max_nodes - linked_ranked.size());

  spec.concepts = std::move(linked_ranked);
  spec.concepts.insert(spec.concepts.end(), expanded_ranked.begin(), expanded_ranked.end());
  std::sort(spec.concepts.begin(), spec.concepts.end(), rank_before);

  std::vector<ConceptId> kept;
  kept.reserve(spec.concepts.size());
  for (const auto& sc : spec.concepts) kept.push_back(sc.id);
  spec.kg_edges = graph.induced_edges(kept);
  spec.super_edges.reserve(spec.concepts.size());
  for (std::size_t i = 0; i < spec.concepts.size(); ++i) {
    spec.super_edges.push_back({i, spec.super_relation, spec.concepts[i].score});
  }
  return spec;
}

SubgraphSpec build_subgraph(const MrsSample& sample, std::size_t candidate_index, const ExtractionContext& ctx,
                            const EncoderModel* model, const ExtractionConfig& config) {
  if (!ctx.graph || !ctx.lexicon || !ctx.vocab || !ctx.snapshot || !ctx.table || !ctx.snapshot->valid()) {
    throw ExtractionError("extraction context is incomplete");
  }
  const TokenSequence seq = trans_a(sample, candidate_index, *ctx.vocab, config.max_seq_len);
  const auto h_ctx = ctx.snapshot->encode(seq);
  const auto linked = link_entities(sample, candidate_index, *ctx.lexicon);
  SubgraphSpec spec = assemble_subgraph(h_ctx, linked, *ctx.graph, *ctx.table, config);
  if (model) spec.super_seed = encode(*model, seq);
  return spec;
}

Tensor initial_embeddings(const SubgraphSpec& spec, const ConceptEmbeddingTable& table) {
  const std::size_t dim = spec.super_seed.empty() ? table.dim() : spec.super_seed.size();
  if (!spec.concepts.empty() && table.dim() != dim) {
    throw ExtractionError("super seed and concept embeddings differ in dimension");
  }
  Tensor out = Tensor::zeros({spec.node_count(), dim});
  std::copy(spec.super_seed.begin(), spec.super_seed.end(), out.data.begin());
  for (std::size_t i = 0; i < spec.concepts.size(); ++i) {
    const auto row = table.row(spec.concepts[i].id);
    std::copy(row.begin(), row.end(), out.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
  }
  return out;
}

nlohmann::json subgraph_to_json(const SubgraphSpec& spec, const KnowledgeGraph& graph, std::size_t sample_index,
                                std::size_t candidate_index, bool with_seed) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& sc : spec.concepts) {
    concepts.push_back({{"id", sc.id},
                        {"name", graph.concepts().name(sc.id)},
                        {"origin", origin_name(sc.origin)},
                        {"score", sc.score}});
  }
  nlohmann::json kg_edges = nlohmann::json::array();
  for (const auto& e : spec.kg_edges) {
    kg_edges.push_back({{"head", graph.concepts().name(e.head)},
                        {"relation", graph.relations().name(e.relation)},
                        {"tail", graph.concepts().name(e.tail)},
                        {"weight", e.weight}});
  }
  nlohmann::json super_edges = nlohmann::json::array();
  for (const auto& e : spec.super_edges) {
    super_edges.push_back({{"node", e.concept_index + 1}, {"weight", e.weight}});
  }
  nlohmann::json pruned = nlohmann::json::array();
  for (ConceptId c : spec.pruned_linked) pruned.push_back(graph.concepts().name(c));
  nlohmann::json out = {{"sample", sample_index},         {"candidate", candidate_index},
                        {"nodes", spec.node_count()},     {"concepts", concepts},
                        {"kg_edges", kg_edges},           {"super_relation", spec.super_relation},
                        {"super_edges", super_edges},     {"pruned_linked", pruned}};
  if (with_seed) out["super_seed"] = spec.super_seed;
  return out;
}

}  // namespace sinlg
