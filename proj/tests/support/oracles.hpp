#pragma once

// Independent reference implementations used to cross-check the library.

#include <algorithm>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sinlg/extraction.hpp"
#include "sinlg/kg_store.hpp"
#include "sinlg/vocabulary.hpp"

namespace sinlg::testing {

// Every node gets a self edge so all `nodes` names are interned.
inline std::string random_graph_tsv(std::mt19937_64& rng, int nodes, int edges) {
  std::uniform_int_distribution<int> pick(0, nodes - 1);
  std::uniform_int_distribution<int> rel(0, 3);
  std::ostringstream os;
  for (int n = 0; n < nodes; ++n) os << "self\tn" << n << "\tn" << n << "\n";
  for (int e = 0; e < edges; ++e) os << "r" << rel(rng) << "\tn" << pick(rng) << "\tn" << pick(rng) << "\n";
  return os.str();
}

inline KnowledgeGraph parse_graph(const std::string& text, LoadReport* report = nullptr) {
  std::istringstream in(text);
  return KnowledgeGraph::parse_edge_list(in, report);
}

// Queue BFS scanning the whole edge list at every step.
inline std::set<ConceptId> bfs_oracle(const KnowledgeGraph& g, const std::vector<ConceptId>& seeds, std::size_t k) {
  std::vector<int> dist(g.concept_count(), -1);
  std::queue<ConceptId> q;
  for (auto s : seeds) {
    if (dist[s] < 0) {
      dist[s] = 0;
      q.push(s);
    }
  }
  while (!q.empty()) {
    auto c = q.front();
    q.pop();
    if (static_cast<std::size_t>(dist[c]) == k) continue;
    for (const Edge& e : g.edges()) {
      ConceptId other;
      if (e.head == c) other = e.tail;
      else if (e.tail == c) other = e.head;
      else continue;
      if (dist[other] < 0) {
        dist[other] = dist[c] + 1;
        q.push(other);
      }
    }
  }
  std::set<ConceptId> out;
  for (std::size_t c = 0; c < dist.size(); ++c)
    if (dist[c] >= 0) out.insert(static_cast<ConceptId>(c));
  return out;
}

// Enumerates every (start, length) span, compares words against every lexicon
// phrase, then walks left to right taking the longest span at each start.
inline std::set<ConceptId> span_link_oracle(const std::vector<std::string>& utterances,
                                            const KnowledgeGraph& graph) {
  std::vector<std::pair<std::vector<std::string>, ConceptId>> phrases;
  for (std::size_t c = 0; c < graph.concept_count(); ++c) {
    phrases.emplace_back(split_words(graph.concepts().name(static_cast<ConceptId>(c))), static_cast<ConceptId>(c));
  }
  std::set<ConceptId> out;
  for (const auto& u : utterances) {
    const auto words = split_words(u);
    const std::size_t n = words.size();
    // best[i] = (length, concept) of the longest span starting at i.
    std::vector<std::pair<std::size_t, ConceptId>> best(n, {0, 0});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j <= n; ++j) {
        std::vector<std::string> span(words.begin() + static_cast<long>(i), words.begin() + static_cast<long>(j));
        for (const auto& [p, c] : phrases) {
          if (!p.empty() && p == span && j - i > best[i].first) best[i] = {j - i, c};
        }
      }
    }
    std::size_t i = 0;
    while (i < n) {
      if (best[i].first) {
        out.insert(best[i].second);
        i += best[i].first;
      } else {
        ++i;
      }
    }
  }
  return out;
}

// Repeated linear-scan selection of the best remaining concept.
inline std::vector<ScoredConcept> selection_prune_oracle(std::vector<ScoredConcept> pool, std::size_t k) {
  std::vector<ScoredConcept> out;
  while (out.size() < k && !pool.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      const bool higher = pool[i].score > pool[best].score;
      const bool tie_lower_id = pool[i].score == pool[best].score && pool[i].id < pool[best].id;
      if (higher || tie_lower_id) best = i;
    }
    out.push_back(pool[best]);
    pool.erase(pool.begin() + static_cast<long>(best));
  }
  return out;
}

}  // namespace sinlg::testing
