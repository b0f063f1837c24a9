#include "sinlg/kg_store.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "sinlg/vocabulary.hpp"

namespace sinlg {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

struct TripleHash {
  std::size_t operator()(const std::tuple<ConceptId, RelationId, ConceptId>& t) const {
    auto [h, r, tl] = t;
    return (static_cast<std::size_t>(h) * 1000003u) ^ (static_cast<std::size_t>(r) * 7919u) ^ tl;
  }
};

}  // namespace

std::string normalize_phrase(std::string_view phrase) {
  std::string out;
  bool pending_space = false;
  for (char raw : phrase) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch) || raw == '_' || raw == '-') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

std::uint32_t InternTable::intern(const std::string& name) {
  if (auto it = ids_.find(name); it != ids_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.push_back(name);
  ids_.emplace(name, id);
  return id;
}

std::optional<std::uint32_t> InternTable::find(const std::string& name) const {
  if (auto it = ids_.find(name); it != ids_.end()) return it->second;
  return std::nullopt;
}

nlohmann::json LoadReport::to_json() const {
  return {{"nodes", nodes}, {"edges", edges}, {"relations", relations}, {"duplicates", duplicates}};
}

KnowledgeGraph KnowledgeGraph::load_edge_list(const std::string& path, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw KgError("cannot read knowledge graph file: " + path);
  return parse_edge_list(in, report);
}

KnowledgeGraph KnowledgeGraph::parse_edge_list(std::istream& in, LoadReport* report) {
  KnowledgeGraph g;
  std::unordered_set<std::tuple<ConceptId, RelationId, ConceptId>, TripleHash> seen;
  std::size_t duplicates = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 3 || fields.size() > 4) {
      throw KgError("line " + std::to_string(line_no) + ": expected 3 or 4 tab-separated fields, got " +
                    std::to_string(fields.size()));
    }
    const std::string relation = normalize_phrase(fields[0]);
    const std::string head = normalize_phrase(fields[1]);
    const std::string tail = normalize_phrase(fields[2]);
    if (relation.empty() || head.empty() || tail.empty()) {
      throw KgError("line " + std::to_string(line_no) + ": empty relation or concept");
    }
    double weight = 1.0;
    if (fields.size() == 4) {
      std::string text(fields[3]);
      std::istringstream ws(text);
      if (!(ws >> weight) || !(ws >> std::ws).eof() || !std::isfinite(weight) || weight < 0) {
        throw KgError("line " + std::to_string(line_no) + ": weight must be a finite non-negative number");
      }
    }
    const ConceptId h = g.concepts_.intern(head);
    const ConceptId t = g.concepts_.intern(tail);
    const RelationId r = g.relations_.intern(relation);
    if (!seen.emplace(h, r, t).second) {
      ++duplicates;
      continue;
    }
    g.edges_.push_back({h, r, t, weight});
  }
  g.finalize();
  if (report) {
    *report = g.report();
    report->duplicates = duplicates;
  }
  return g;
}

void KnowledgeGraph::finalize() { adjacency_ = rebuild_adjacency(); }

std::vector<std::vector<std::size_t>> KnowledgeGraph::rebuild_adjacency() const {
  std::vector<std::vector<std::size_t>> adj(concepts_.size());
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    adj[edges_[i].head].push_back(i);
    if (edges_[i].tail != edges_[i].head) adj[edges_[i].tail].push_back(i);
  }
  return adj;
}

std::span<const std::size_t> KnowledgeGraph::incident(ConceptId c) const {
  if (c >= adjacency_.size()) throw KgError("unknown concept id " + std::to_string(c));
  return adjacency_[c];
}

std::optional<ConceptId> KnowledgeGraph::find_concept(std::string_view phrase) const {
  return concepts_.find(normalize_phrase(phrase));
}

std::vector<ConceptId> KnowledgeGraph::k_hop_neighbors(std::span<const ConceptId> seeds, std::size_t hops) const {
  std::vector<char> visited(concepts_.size(), 0);
  std::vector<ConceptId> frontier;
  for (ConceptId s : seeds) {
    if (s >= concepts_.size()) throw KgError("unknown seed concept id " + std::to_string(s));
    if (!visited[s]) {
      visited[s] = 1;
      frontier.push_back(s);
    }
  }
  for (std::size_t step = 0; step < hops && !frontier.empty(); ++step) {
    std::vector<ConceptId> next;
    for (ConceptId c : frontier) {
      for (std::size_t e : adjacency_[c]) {
        const Edge& edge = edges_[e];
        const ConceptId other = edge.head == c ? edge.tail : edge.head;
        if (!visited[other]) {
          visited[other] = 1;
          next.push_back(other);
        }
      }
    }
    frontier = std::move(next);
  }
  std::vector<ConceptId> out;
  for (std::size_t c = 0; c < visited.size(); ++c) {
    if (visited[c]) out.push_back(static_cast<ConceptId>(c));
  }
  return out;
}

std::vector<Edge> KnowledgeGraph::induced_edges(std::span<const ConceptId> nodes) const {
  std::vector<char> member(concepts_.size(), 0);
  for (ConceptId c : nodes) {
    if (c >= concepts_.size()) throw KgError("unknown concept id " + std::to_string(c));
    member[c] = 1;
  }
  std::set<std::size_t> picked;
  for (ConceptId c : nodes) {
    for (std::size_t e : adjacency_[c]) {
      if (member[edges_[e].head] && member[edges_[e].tail]) picked.insert(e);
    }
  }
  std::vector<Edge> out;
  out.reserve(picked.size());
  for (std::size_t e : picked) out.push_back(edges_[e]);
  return out;
}

LoadReport KnowledgeGraph::report() const {
  LoadReport r;
  r.nodes = concepts_.size();
  r.edges = edges_.size();
  r.relations = relations_.size();
  return r;
}

ConceptLexicon::ConceptLexicon(const KnowledgeGraph& graph) {
  for (std::size_t c = 0; c < graph.concept_count(); ++c) {
    auto words = split_words(graph.concepts().name(static_cast<ConceptId>(c)));
    if (words.empty()) continue;
    max_tokens_ = std::max(max_tokens_, words.size());
    phrases_.emplace(join_words(words), static_cast<ConceptId>(c));
  }
}

std::optional<ConceptId> ConceptLexicon::lookup(std::span<const std::string> words) const {
  if (auto it = phrases_.find(join_words(words)); it != phrases_.end()) return it->second;
  return std::nullopt;
}

}  // namespace sinlg
