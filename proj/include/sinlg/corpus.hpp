#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sinlg/sample.hpp"

namespace sinlg {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One JSON object per line: {persona, context, candidates, labels}. Every line
// must carry exactly one positive label. Errors name the offending line.
std::vector<MrsSample> load_dataset(const std::string& path, std::size_t expected_candidates = 0);
std::vector<MrsSample> parse_dataset(std::istream& in, std::size_t expected_candidates = 0);
void save_dataset(const std::string& path, const std::vector<MrsSample>& samples);
nlohmann::json sample_to_json(const MrsSample& sample);

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t train_dialogues = 300;
  std::size_t dev_dialogues = 60;
  std::size_t min_turns = 6;
  std::size_t max_turns = 8;
  std::size_t vocab_size = 1;           // filler words
  std::size_t n_concepts = 80;          // surface forms, grouped into paraphrase groups
  std::size_t forms_per_group = 4;
  std::size_t n_relations = 3;          // paraphrase, is_a, related_to
  std::size_t n_categories = 10;
  std::size_t noise_edges = 40;
  std::size_t persona_size = 2;
  std::size_t candidates = 20;
  std::size_t context_window = 1;       // most recent utterances kept as context
  double paraphrase_fraction = 0.6;     // positives using a different surface form than the persona

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthCorpus {
  std::vector<MrsSample> train;
  std::vector<MrsSample> dev;
  std::string kg_tsv;
  // Per sample: whether the positive only shares a paraphrase (not a token)
  // with the persona.
  std::vector<bool> train_paraphrase_only;
  std::vector<bool> dev_paraphrase_only;
};

SynthCorpus synth_generate(const SynthConfig& config);

// Writes train.jsonl, dev.jsonl and kg.tsv into `dir`.
void write_corpus(const SynthCorpus& corpus, const std::string& dir);

}  // namespace sinlg
