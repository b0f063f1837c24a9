#include "sinlg/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace sinlg {

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* field, std::size_t line) {
  auto it = j.find(field);
  if (it == j.end()) throw DatasetError("line " + std::to_string(line) + ": missing field '" + field + "'");
  if (!it->is_array()) throw DatasetError("line " + std::to_string(line) + ": '" + field + "' must be an array");
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string() || v.get<std::string>().empty()) {
      throw DatasetError("line " + std::to_string(line) + ": '" + field + "' must hold non-empty strings");
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

MrsSample parse_sample(const std::string& text, std::size_t line, std::size_t expected_candidates) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw DatasetError("line " + std::to_string(line) + ": expected a JSON object");
  MrsSample s;
  s.persona = string_list(j, "persona", line);
  s.context = string_list(j, "context", line);
  s.candidates = string_list(j, "candidates", line);
  auto labels = j.find("labels");
  if (labels == j.end() || !labels->is_array()) {
    throw DatasetError("line " + std::to_string(line) + ": 'labels' must be an array");
  }
  for (const auto& v : *labels) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      throw DatasetError("line " + std::to_string(line) + ": labels must be 0 or 1");
    }
    s.labels.push_back(v.get<int>());
  }
  if (s.candidates.empty()) throw DatasetError("line " + std::to_string(line) + ": no candidates");
  if (s.labels.size() != s.candidates.size()) {
    throw DatasetError("line " + std::to_string(line) + ": " + std::to_string(s.labels.size()) + " labels for " +
                       std::to_string(s.candidates.size()) + " candidates");
  }
  if (std::count(s.labels.begin(), s.labels.end(), 1) != 1) {
    throw DatasetError("line " + std::to_string(line) + ": exactly one label must be 1");
  }
  if (expected_candidates && s.candidates.size() != expected_candidates) {
    throw DatasetError("line " + std::to_string(line) + ": expected " + std::to_string(expected_candidates) +
                       " candidates, found " + std::to_string(s.candidates.size()));
  }
  return s;
}

// Pronounceable pseudo-words, unique and in a seeded order.
std::vector<std::string> pseudo_words(std::mt19937_64& rng, std::size_t syllables) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::vector<std::string> syl;
  for (char c : consonants)
    for (char v : vowels) syl.push_back(std::string{c, v});
  std::vector<std::string> words = syl;
  for (std::size_t s = 1; s < syllables; ++s) {
    std::vector<std::string> next;
    for (const auto& w : words)
      for (const auto& x : syl) next.push_back(w + x);
    words = std::move(next);
  }
  std::shuffle(words.begin(), words.end(), rng);
  return words;
}

struct Turn {
  std::vector<std::string> context;
  std::string response;
  std::size_t group = 0;
  bool paraphrase = false;
};

struct Dialogue {
  std::vector<std::string> persona;
  std::set<std::size_t> groups;
  std::vector<Turn> turns;
};

class Generator {
 public:
  explicit Generator(const SynthConfig& c) : cfg_(c), rng_(c.seed) {
    auto words = pseudo_words(rng_, 2);
    const std::size_t groups = cfg_.n_concepts / cfg_.forms_per_group;
    forms_.resize(groups);
    std::size_t next = 0;
    for (auto& g : forms_)
      for (std::size_t f = 0; f < cfg_.forms_per_group; ++f) g.push_back(words[next++]);
    fillers_.assign(words.begin() + static_cast<long>(next), words.begin() + static_cast<long>(next + cfg_.vocab_size));
    auto long_words = pseudo_words(rng_, 3);
    categories_.assign(long_words.begin(), long_words.begin() + static_cast<long>(cfg_.n_categories));
  }

  std::string kg_tsv() {
    std::ostringstream os;
    for (const auto& g : forms_) {
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = i + 1; j < g.size(); ++j) os << "paraphrase\t" << g[i] << '\t' << g[j] << '\n';
    }
    if (!categories_.empty()) {
      for (std::size_t g = 0; g < forms_.size(); ++g)
        for (const auto& f : forms_[g]) os << "is_a\t" << f << '\t' << categories_[g % categories_.size()] << '\n';
    }
    std::uniform_int_distribution<std::size_t> group(0, forms_.size() - 1);
    std::uniform_int_distribution<std::size_t> form(0, cfg_.forms_per_group - 1);
    for (std::size_t e = 0; e < cfg_.noise_edges; ++e) {
      const std::size_t a = group(rng_);
      std::size_t b = group(rng_);
      while (b == a) b = group(rng_);
      const std::size_t rel = 2 + e % (cfg_.n_relations - 2);
      os << (rel == 2 ? std::string("related_to") : "relation_" + std::to_string(rel)) << '\t'
         << forms_[a][form(rng_)] << '\t' << forms_[b][form(rng_)] << "\t0.5\n";
    }
    return os.str();
  }

  Dialogue dialogue() {
    Dialogue d;
    std::vector<std::size_t> all(forms_.size());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng_);
    std::vector<std::size_t> persona_groups(all.begin(), all.begin() + static_cast<long>(cfg_.persona_size));
    std::vector<std::size_t> persona_form(cfg_.persona_size);
    std::uniform_int_distribution<std::size_t> pick_form(0, cfg_.forms_per_group - 1);
    for (std::size_t i = 0; i < cfg_.persona_size; ++i) {
      persona_form[i] = pick_form(rng_);
      d.groups.insert(persona_groups[i]);
      d.persona.push_back(sentence(forms_[persona_groups[i]][persona_form[i]], 2, 4));
    }
    std::uniform_int_distribution<std::size_t> turns(cfg_.min_turns, cfg_.max_turns);
    std::uniform_int_distribution<std::size_t> pick_persona(0, cfg_.persona_size - 1);
    std::bernoulli_distribution paraphrase(cfg_.paraphrase_fraction);
    std::vector<std::string> history;
    std::size_t previous = cfg_.persona_size;
    const std::size_t n = turns(rng_);
    for (std::size_t t = 0; t < n; ++t) {
      history.push_back(sentence("", 3, 5));
      std::size_t p = pick_persona(rng_);
      while (p == previous && cfg_.persona_size > 1) p = pick_persona(rng_);
      previous = p;
      Turn turn;
      turn.group = persona_groups[p];
      turn.paraphrase = paraphrase(rng_);
      std::size_t f = persona_form[p];
      if (turn.paraphrase) {
        std::uniform_int_distribution<std::size_t> other(0, cfg_.forms_per_group - 2);
        f = other(rng_);
        if (f >= persona_form[p]) ++f;
      }
      turn.response = sentence(forms_[turn.group][f], 2, 4);
      const std::size_t keep = std::min(cfg_.context_window, history.size());
      turn.context.assign(history.end() - static_cast<long>(keep), history.end());
      history.push_back(turn.response);
      d.turns.push_back(std::move(turn));
    }
    return d;
  }

  void assemble(const std::vector<Dialogue>& dialogues, std::vector<MrsSample>& out, std::vector<bool>& paraphrase) {
    struct Pooled {
      std::size_t dialogue;
      std::size_t group;
      const std::string* text;
    };
    std::vector<Pooled> pool;
    for (std::size_t d = 0; d < dialogues.size(); ++d)
      for (const auto& t : dialogues[d].turns) pool.push_back({d, t.group, &t.response});
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::uniform_int_distribution<std::size_t> slot(0, cfg_.candidates - 1);
    for (std::size_t d = 0; d < dialogues.size(); ++d) {
      const Dialogue& dlg = dialogues[d];
      for (const auto& t : dlg.turns) {
        MrsSample s;
        s.persona = dlg.persona;
        s.context = t.context;
        std::set<const std::string*> used;
        std::size_t attempts = 0;
        while (s.candidates.size() + 1 < cfg_.candidates) {
          if (++attempts > 100000) throw DatasetError("synth: cannot find enough distractors");
          const Pooled& c = pool[pick(rng_)];
          if (c.dialogue == d || dlg.groups.contains(c.group) || !used.insert(c.text).second) continue;
          s.candidates.push_back(*c.text);
        }
        const std::size_t pos = slot(rng_);
        s.candidates.insert(s.candidates.begin() + static_cast<long>(pos), t.response);
        s.labels.assign(cfg_.candidates, 0);
        s.labels[pos] = 1;
        out.push_back(std::move(s));
        paraphrase.push_back(t.paraphrase);
      }
    }
  }

 private:
  std::string sentence(const std::string& concept_form, std::size_t lo, std::size_t hi) {
    std::uniform_int_distribution<std::size_t> len(lo, hi);
    std::uniform_int_distribution<std::size_t> word(0, fillers_.size() - 1);
    std::vector<std::string> words;
    const std::size_t n = len(rng_);
    for (std::size_t i = 0; i < n; ++i) words.push_back(fillers_[word(rng_)]);
    if (!concept_form.empty()) {
      std::uniform_int_distribution<std::size_t> at(0, words.size());
      words.insert(words.begin() + static_cast<long>(at(rng_)), concept_form);
    }
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
    return out;
  }

  SynthConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::string>> forms_;
  std::vector<std::string> fillers_;
  std::vector<std::string> categories_;
};

}  // namespace

std::vector<MrsSample> parse_dataset(std::istream& in, std::size_t expected_candidates) {
  std::vector<MrsSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_sample(line, line_no, expected_candidates));
  }
  return out;
}

std::vector<MrsSample> load_dataset(const std::string& path, std::size_t expected_candidates) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot read dataset " + path);
  auto out = parse_dataset(in, expected_candidates);
  if (out.empty()) std::cerr << "warning: dataset " << path << " is empty\n";
  return out;
}

nlohmann::json sample_to_json(const MrsSample& s) {
  return {{"persona", s.persona}, {"context", s.context}, {"candidates", s.candidates}, {"labels", s.labels}};
}

void save_dataset(const std::string& path, const std::vector<MrsSample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DatasetError("cannot write dataset " + path);
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
  if (!out) throw DatasetError("failed writing dataset " + path);
}

void SynthConfig::validate() const {
  if (train_dialogues == 0 || min_turns == 0 || max_turns < min_turns || vocab_size == 0 || candidates < 2 ||
      persona_size == 0 || context_window == 0) {
    throw DatasetError("synth: counts must be positive and min_turns <= max_turns");
  }
  if (forms_per_group < 2) throw DatasetError("synth: forms_per_group must be at least 2");
  if (n_relations < 3) throw DatasetError("synth: n_relations must be at least 3");
  if (!(paraphrase_fraction >= 0.0 && paraphrase_fraction <= 1.0)) {
    throw DatasetError("synth: paraphrase_fraction must lie in [0, 1]");
  }
  const std::size_t groups = n_concepts / forms_per_group;
  if (groups < 2 * persona_size) throw DatasetError("synth: too few concepts for the persona size");
  if (n_concepts + vocab_size > 70 * 70) throw DatasetError("synth: vocabulary too large for the word generator");
  if (n_categories > 70 * 70 * 70) throw DatasetError("synth: too many categories");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"seed", seed},
          {"train_dialogues", train_dialogues},
          {"dev_dialogues", dev_dialogues},
          {"min_turns", min_turns},
          {"max_turns", max_turns},
          {"vocab_size", vocab_size},
          {"n_concepts", n_concepts},
          {"forms_per_group", forms_per_group},
          {"n_relations", n_relations},
          {"n_categories", n_categories},
          {"noise_edges", noise_edges},
          {"persona_size", persona_size},
          {"candidates", candidates},
          {"context_window", context_window},
          {"paraphrase_fraction", paraphrase_fraction}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DatasetError("synth config must be a JSON object");
  SynthConfig c;
  const nlohmann::json defaults = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw DatasetError("unknown synth config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (auto it = j.find(key); it != j.end()) field = it->get<std::decay_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("train_dialogues", c.train_dialogues);
    get("dev_dialogues", c.dev_dialogues);
    get("min_turns", c.min_turns);
    get("max_turns", c.max_turns);
    get("vocab_size", c.vocab_size);
    get("n_concepts", c.n_concepts);
    get("forms_per_group", c.forms_per_group);
    get("n_relations", c.n_relations);
    get("n_categories", c.n_categories);
    get("noise_edges", c.noise_edges);
    get("persona_size", c.persona_size);
    get("candidates", c.candidates);
    get("context_window", c.context_window);
    get("paraphrase_fraction", c.paraphrase_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

SynthCorpus synth_generate(const SynthConfig& config) {
  config.validate();
  Generator gen(config);
  SynthCorpus corpus;
  corpus.kg_tsv = gen.kg_tsv();
  std::vector<Dialogue> train, dev;
  for (std::size_t i = 0; i < config.train_dialogues; ++i) train.push_back(gen.dialogue());
  for (std::size_t i = 0; i < config.dev_dialogues; ++i) dev.push_back(gen.dialogue());
  gen.assemble(train, corpus.train, corpus.train_paraphrase_only);
  if (!dev.empty()) gen.assemble(dev, corpus.dev, corpus.dev_paraphrase_only);
  return corpus;
}

void write_corpus(const SynthCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(dir + "/train.jsonl", corpus.train);
  save_dataset(dir + "/dev.jsonl", corpus.dev);
  std::ofstream kg(dir + "/kg.tsv", std::ios::trunc);
  if (!kg) throw DatasetError("cannot write " + dir + "/kg.tsv");
  kg << corpus.kg_tsv;
}

}  // namespace sinlg
