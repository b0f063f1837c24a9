#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace sinlg {

using ConceptId = std::uint32_t;
using RelationId = std::uint32_t;

class KgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lowercase, '_' and '-' become spaces, whitespace runs collapse, trimmed.
std::string normalize_phrase(std::string_view phrase);

// Dense string <-> id table.
class InternTable {
 public:
  std::uint32_t intern(const std::string& name);
  std::optional<std::uint32_t> find(const std::string& name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Edge {
  ConceptId head = 0;
  RelationId relation = 0;
  ConceptId tail = 0;
  double weight = 1.0;

  bool operator==(const Edge&) const = default;
};

struct LoadReport {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::size_t relations = 0;
  std::size_t duplicates = 0;

  nlohmann::json to_json() const;
};

// Multi-relational graph; immutable once built.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  // Parses `relation<TAB>head<TAB>tail[<TAB>weight]` lines. Blank lines are
  // skipped; duplicate (head, relation, tail) triples keep the first weight.
  static KnowledgeGraph load_edge_list(const std::string& path, LoadReport* report = nullptr);
  static KnowledgeGraph parse_edge_list(std::istream& in, LoadReport* report = nullptr);

  const InternTable& concepts() const { return concepts_; }
  const InternTable& relations() const { return relations_; }
  std::size_t concept_count() const { return concepts_.size(); }
  std::size_t relation_count() const { return relations_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  // Incident edge indices in both directions, ascending.
  std::span<const std::size_t> incident(ConceptId c) const;
  std::optional<ConceptId> find_concept(std::string_view phrase) const;

  // Everything within `hops` undirected steps of the seeds, seeds included,
  // sorted ascending.
  std::vector<ConceptId> k_hop_neighbors(std::span<const ConceptId> seeds, std::size_t hops) const;
  // Edges whose endpoints are both in `nodes`, in edge-list order.
  std::vector<Edge> induced_edges(std::span<const ConceptId> nodes) const;

  LoadReport report() const;
  // Rebuilds adjacency from the edge list; used by consistency checks.
  std::vector<std::vector<std::size_t>> rebuild_adjacency() const;

 private:
  void finalize();

  InternTable concepts_;
  InternTable relations_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> adjacency_;
};

// Maps normalized phrases (as space-joined word tokens) to concepts.
class ConceptLexicon {
 public:
  explicit ConceptLexicon(const KnowledgeGraph& graph);

  std::optional<ConceptId> lookup(std::span<const std::string> words) const;
  std::size_t max_phrase_tokens() const { return max_tokens_; }
  std::size_t size() const { return phrases_.size(); }
  const std::unordered_map<std::string, ConceptId>& entries() const { return phrases_; }

 private:
  std::unordered_map<std::string, ConceptId> phrases_;
  std::size_t max_tokens_ = 0;
};

}  // namespace sinlg
