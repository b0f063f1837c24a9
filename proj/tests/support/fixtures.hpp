#pragma once

// Small synthetic corpus and model settings shared by the training-level tests.

#include <sstream>

#include "sinlg/corpus.hpp"
#include "sinlg/kg_store.hpp"
#include "sinlg/training.hpp"

namespace sinlg::testing {

struct TinyCorpus {
  SynthCorpus corpus;
  KnowledgeGraph graph;
};

inline TinyCorpus tiny_corpus(std::size_t train_dialogues = 10, std::size_t dev_dialogues = 4,
                              std::uint64_t seed = 7) {
  SynthConfig sc;
  sc.seed = seed;
  sc.train_dialogues = train_dialogues;
  sc.dev_dialogues = dev_dialogues;
  sc.min_turns = 3;
  sc.max_turns = 4;
  sc.n_concepts = 40;
  sc.vocab_size = 6;
  sc.persona_size = 2;
  sc.context_window = 1;
  sc.noise_edges = 8;
  sc.candidates = 6;
  TinyCorpus t;
  t.corpus = synth_generate(sc);
  std::istringstream in(t.corpus.kg_tsv);
  t.graph = KnowledgeGraph::parse_edge_list(in);
  return t;
}

inline TrainConfig tiny_train_config(Variant variant, std::uint64_t seed = 3) {
  TrainConfig c;
  c.model.variant = variant;
  c.seed = seed;
  c.epochs = 1;
  c.batch_size = 8;
  c.train_negatives = 2;
  c.model.encoder.d_model = 8;
  c.model.encoder.layers = 1;
  c.model.encoder.heads = 2;
  c.model.encoder.ffn_dim = 16;
  c.model.gnn.layers = 2;
  c.model.gnn.hidden = 6;
  c.model.gnn.type_dim = 2;
  c.model.gnn.relation_dim = 2;
  c.model.gnn.score_dim = 2;
  c.model.gnn.attention_dim = 3;
  c.model.s0_concepts = 2;
  c.extraction.max_nodes = 12;
  c.extraction.hops = 1;
  c.extraction.max_seq_len = 40;
  c.optimizer.lr = 3e-3;
  return c;
}

}  // namespace sinlg::testing
