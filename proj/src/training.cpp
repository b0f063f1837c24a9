#include "sinlg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

namespace sinlg {

namespace {

constexpr const char* kCheckpointFormat = "sinlg-checkpoint-1";

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape}, {"data", t.data}}; }

void load_tensor(const nlohmann::json& j, const std::string& name, Tensor& t) {
  auto shape = j.at("shape").get<Shape>();
  auto data = j.at("data").get<std::vector<double>>();
  if (shape != t.shape || data.size() != t.data.size()) {
    throw TrainingError("checkpoint tensor " + name + " does not match the model shape");
  }
  t.data = std::move(data);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<TrainingRow> epoch_rows(const std::vector<MrsSample>& dataset, std::size_t negatives,
                                    std::mt19937_64& rng) {
  if (negatives == 0) return dataset_rows(dataset);
  std::vector<TrainingRow> rows;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    std::vector<std::size_t> neg;
    for (std::size_t c = 0; c < dataset[s].candidates.size(); ++c) {
      if (dataset[s].labels[c] == 1) rows.push_back({s, c, 1});
      else neg.push_back(c);
    }
    std::shuffle(neg.begin(), neg.end(), rng);
    for (std::size_t i = 0; i < std::min(negatives, neg.size()); ++i) rows.push_back({s, neg[i], 0});
  }
  return rows;
}

}  // namespace

void AdamW::step(const std::vector<std::pair<std::string, Tensor*>>& params) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& [name, tensor] : params) {
    if (!tensor->grad) continue;
    const std::vector<double>& g = *tensor->grad;
    Moments& mo = moments_[name];
    if (mo.m.size() != g.size()) {
      mo.m.assign(g.size(), 0.0);
      mo.v.assign(g.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      mo.m[i] = config_.beta1 * mo.m[i] + (1.0 - config_.beta1) * g[i];
      mo.v[i] = config_.beta2 * mo.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = mo.m[i] / c1;
      const double v_hat = mo.v[i] / c2;
      double& p = tensor->data[i];
      p -= config_.lr * config_.weight_decay * p;
      p -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

nlohmann::json AdamW::to_json() const {
  nlohmann::json moments = nlohmann::json::object();
  for (const auto& [name, mo] : moments_) moments[name] = {{"m", mo.m}, {"v", mo.v}};
  return {{"lr", config_.lr},         {"beta1", config_.beta1},
          {"beta2", config_.beta2},   {"epsilon", config_.epsilon},
          {"weight_decay", config_.weight_decay}, {"step", step_},
          {"moments", moments}};
}

AdamW AdamW::from_json(const nlohmann::json& j) {
  AdamWConfig c;
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  AdamW opt(c);
  opt.step_ = j.at("step").get<std::uint64_t>();
  for (const auto& [name, mo] : j.at("moments").items()) {
    opt.moments_[name] = {mo.at("m").get<std::vector<double>>(), mo.at("v").get<std::vector<double>>()};
  }
  return opt;
}

void TrainConfig::validate() const {
  loss.validate();
  if (batch_size == 0) throw TrainingError("batch_size must be positive");
  if (!(optimizer.lr >= 0.0) || !(optimizer.weight_decay >= 0.0)) {
    throw TrainingError("learning rate and weight decay must be non-negative");
  }
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw TrainingError("Adam betas must lie in [0, 1)");
  }
  if (!(optimizer.epsilon > 0.0)) throw TrainingError("Adam epsilon must be positive");
  if (extraction.max_seq_len < 3) throw TrainingError("max_seq_len must be at least 3");
}

nlohmann::json TrainConfig::to_json() const {
  const EncoderConfig& e = model.encoder;
  const GnnConfig& g = model.gnn;
  return {{"variant", variant_name(model.variant)},
          {"seed", seed},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", optimizer.lr},
          {"weight_decay", optimizer.weight_decay},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"adam_epsilon", optimizer.epsilon},
          {"alpha", loss.alpha},
          {"epsilon", loss.epsilon},
          {"max_nodes", extraction.max_nodes},
          {"hops", extraction.hops},
          {"max_seq_len", extraction.max_seq_len},
          {"d_model", e.d_model},
          {"layers", e.layers},
          {"heads", e.heads},
          {"ffn_dim", e.ffn_dim},
          {"gnn_layers", g.layers},
          {"gnn_hidden", g.hidden},
          {"gnn_type_dim", g.type_dim},
          {"gnn_relation_dim", g.relation_dim},
          {"gnn_score_dim", g.score_dim},
          {"gnn_attention_dim", g.attention_dim},
          {"s0_concepts", model.s0_concepts},
          {"stop_grad_gnn_target", stop_grad_gnn_target},
          {"train_negatives", train_negatives}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw TrainingError("training config must be a JSON object");
  static const std::set<std::string> known = {
      "variant",    "seed",        "epochs",        "batch_size",      "lr",           "weight_decay",
      "beta1",      "beta2",       "adam_epsilon",  "alpha",           "epsilon",      "max_nodes",
      "hops",       "max_seq_len", "d_model",       "layers",          "heads",        "ffn_dim",
      "gnn_layers", "gnn_hidden",  "gnn_type_dim",  "gnn_relation_dim", "gnn_score_dim", "gnn_attention_dim",
      "s0_concepts", "stop_grad_gnn_target", "train_negatives"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw TrainingError("unknown training config key '" + key + "'");
  }
  TrainConfig c;
  try {
    if (auto it = j.find("variant"); it != j.end()) c.model.variant = parse_variant(it->get<std::string>());
    read_field(j, "seed", c.seed);
    read_field(j, "epochs", c.epochs);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "lr", c.optimizer.lr);
    read_field(j, "weight_decay", c.optimizer.weight_decay);
    read_field(j, "beta1", c.optimizer.beta1);
    read_field(j, "beta2", c.optimizer.beta2);
    read_field(j, "adam_epsilon", c.optimizer.epsilon);
    read_field(j, "alpha", c.loss.alpha);
    read_field(j, "epsilon", c.loss.epsilon);
    read_field(j, "max_nodes", c.extraction.max_nodes);
    read_field(j, "hops", c.extraction.hops);
    read_field(j, "max_seq_len", c.extraction.max_seq_len);
    read_field(j, "d_model", c.model.encoder.d_model);
    read_field(j, "layers", c.model.encoder.layers);
    read_field(j, "heads", c.model.encoder.heads);
    read_field(j, "ffn_dim", c.model.encoder.ffn_dim);
    read_field(j, "gnn_layers", c.model.gnn.layers);
    read_field(j, "gnn_hidden", c.model.gnn.hidden);
    read_field(j, "gnn_type_dim", c.model.gnn.type_dim);
    read_field(j, "gnn_relation_dim", c.model.gnn.relation_dim);
    read_field(j, "gnn_score_dim", c.model.gnn.score_dim);
    read_field(j, "gnn_attention_dim", c.model.gnn.attention_dim);
    read_field(j, "s0_concepts", c.model.s0_concepts);
    read_field(j, "stop_grad_gnn_target", c.stop_grad_gnn_target);
    read_field(j, "train_negatives", c.train_negatives);
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_hash(const TrainConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config.to_json().dump())));
  return buf;
}

RowKnowledge KnowledgeCache::row(std::size_t sample, std::size_t candidate) const {
  if (sample >= specs.size() || candidate >= specs[sample].size()) {
    throw TrainingError("no SubgraphSpec for sample " + std::to_string(sample) + " candidate " +
                        std::to_string(candidate));
  }
  return {&specs[sample][candidate], table.get(), graph};
}

KnowledgeCache extract_dataset(const std::vector<MrsSample>& dataset, const KnowledgeGraph& graph,
                               const SinlgModel& model, const ExtractionConfig& config,
                               std::shared_ptr<const ConceptEmbeddingTable> table) {
  KnowledgeCache cache;
  cache.graph = &graph;
  cache.table = table ? std::move(table)
                      : std::make_shared<const ConceptEmbeddingTable>(
                            ConceptEmbeddingTable::build(model.snapshot(), model.vocab(), graph));
  const ConceptLexicon lexicon(graph);
  const ExtractionContext ctx{&graph, &lexicon, &model.vocab(), &model.snapshot(), cache.table.get()};
  cache.specs.resize(dataset.size());
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    cache.specs[s].reserve(dataset[s].candidates.size());
    for (std::size_t c = 0; c < dataset[s].candidates.size(); ++c) {
      cache.specs[s].push_back(build_subgraph(dataset[s], c, ctx, nullptr, config));
    }
  }
  return cache;
}

std::vector<TrainingRow> dataset_rows(const std::vector<MrsSample>& dataset) {
  std::vector<TrainingRow> rows;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    for (std::size_t c = 0; c < dataset[s].candidates.size(); ++c) rows.push_back({s, c, dataset[s].labels[c]});
  }
  return rows;
}

StepStats train_step(TrainState& state, const std::vector<MrsSample>& dataset,
                     const std::vector<TrainingRow>& batch, const KnowledgeCache* knowledge,
                     const TrainConfig& config) {
  if (batch.empty()) throw TrainingError("empty batch");
  if (needs_subgraph(state.model.variant()) && !knowledge) {
    throw TrainingError("variant " + variant_name(state.model.variant()) + " needs extracted subgraphs");
  }
  auto params = state.model.named_parameters();
  for (auto& [name, t] : params) t->grad.reset();
  const RowOptions options{config.loss, config.extraction.max_seq_len, config.stop_grad_gnn_target};
  const double inv = 1.0 / static_cast<double>(batch.size());
  StepStats stats;
  for (const TrainingRow& row : batch) {
    Tape tape;
    const RowKnowledge k = knowledge ? knowledge->row(row.sample, row.candidate) : RowKnowledge{};
    RowForward f = forward_row(state.model, dataset.at(row.sample), row.candidate, row.label, k, options, tape);
    stats.loss += f.loss.item() * inv;
    stats.bce += f.bce.item() * inv;
    if (f.cos) stats.cos += f.cos->item() * inv;
    tape.backward(scale(f.loss, inv));
  }
  stats.rows = batch.size();
  state.optimizer.step(params);
  return stats;
}

Vocabulary build_vocabulary(const std::vector<MrsSample>& dataset, const KnowledgeGraph& graph) {
  std::vector<std::string> texts;
  for (const auto& s : dataset) {
    texts.insert(texts.end(), s.persona.begin(), s.persona.end());
    texts.insert(texts.end(), s.context.begin(), s.context.end());
    texts.insert(texts.end(), s.candidates.begin(), s.candidates.end());
  }
  const auto& names = graph.concepts().names();
  texts.insert(texts.end(), names.begin(), names.end());
  return Vocabulary::from_texts(texts);
}

EvalReport evaluate_cached(const SinlgModel& model, const std::vector<MrsSample>& dataset,
                           const KnowledgeCache* knowledge, std::size_t max_seq_len) {
  if (!needs_knowledge_at_inference(model.variant())) return evaluate(model, dataset, max_seq_len);
  if (!knowledge) throw TrainingError("variant " + variant_name(model.variant()) + " needs dev subgraphs");
  std::vector<RankResult> results;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    std::vector<double> scores(dataset[s].candidates.size());
    for (std::size_t c = 0; c < scores.size(); ++c) {
      scores[c] = score_candidate(model, dataset[s], c, max_seq_len, knowledge->row(s, c));
    }
    results.push_back(rank_from_scores(s, std::move(scores), dataset[s].positive_index()));
  }
  return summarize(results, false, 0);
}

TrainResult train(const TrainConfig& config, const std::vector<MrsSample>& train_set,
                  const std::vector<MrsSample>& dev_set, const KnowledgeGraph& graph,
                  const std::string& log_path) {
  config.validate();
  TrainResult result;
  result.config = config;
  ModelConfig& mc = result.config.model;
  mc.seed = config.seed;
  mc.encoder.vocab_size = 0;
  mc.encoder.max_seq_len = config.extraction.max_seq_len;
  mc.gnn.relations = graph.relation_count();
  result.state.model = SinlgModel(mc, build_vocabulary(train_set, graph));
  mc = result.state.model.config();
  result.state.optimizer = AdamW(config.optimizer);

  const Variant variant = mc.variant;
  std::optional<KnowledgeCache> train_knowledge, dev_knowledge;
  if (needs_subgraph(variant)) {
    train_knowledge = extract_dataset(train_set, graph, result.state.model, config.extraction);
    if (needs_knowledge_at_inference(variant) && !dev_set.empty()) {
      dev_knowledge = extract_dataset(dev_set, graph, result.state.model, config.extraction, train_knowledge->table);
    }
  } else if (needs_knowledge_at_inference(variant)) {
    throw TrainingError("inconsistent variant requirements");
  }

  std::ofstream log_file;
  if (!log_path.empty()) {
    log_file.open(log_path, std::ios::trunc);
    if (!log_file) throw TrainingError("cannot write training log " + log_path);
  }

  std::mt19937_64 rng(config.seed);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto rows = epoch_rows(train_set, config.train_negatives, rng);
    std::shuffle(rows.begin(), rows.end(), rng);
    StepStats total;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < rows.size(); begin += config.batch_size) {
      const std::size_t end = std::min(rows.size(), begin + config.batch_size);
      const std::vector<TrainingRow> batch(rows.begin() + static_cast<long>(begin),
                                           rows.begin() + static_cast<long>(end));
      StepStats s = train_step(result.state, train_set, batch, train_knowledge ? &*train_knowledge : nullptr,
                               result.config);
      const double w = static_cast<double>(s.rows);
      total.loss += s.loss * w;
      total.bce += s.bce * w;
      total.cos += s.cos * w;
      total.rows += s.rows;
      ++steps;
    }
    const double denom = total.rows ? static_cast<double>(total.rows) : 1.0;
    nlohmann::json entry = {{"epoch", epoch},
                            {"variant", variant_name(variant)},
                            {"loss", total.loss / denom},
                            {"bce", total.bce / denom},
                            {"cos", total.cos / denom},
                            {"rows", total.rows},
                            {"steps", steps}};
    if (!dev_set.empty()) {
      entry["dev"] = evaluate_cached(result.state.model, dev_set, dev_knowledge ? &*dev_knowledge : nullptr,
                                     config.extraction.max_seq_len)
                         .to_json();
    }
    if (log_file) log_file << entry.dump() << '\n' << std::flush;
    result.log.push_back(std::move(entry));
  }
  return result;
}

void save_checkpoint(const std::string& path, const TrainState& state, const TrainConfig& config) {
  TrainConfig stored = config;
  stored.model = state.model.config();
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : state.model.named_parameters()) params[name] = tensor_json(*t);
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"config", stored.to_json()},
                      {"config_hash", config_hash(stored)},
                      {"relations", stored.model.gnn.relations},
                      {"vocab", state.model.vocab().regular_tokens()},
                      {"snapshot_fingerprint", parameter_fingerprint(state.model.snapshot().model())},
                      {"params", params},
                      {"optimizer", state.optimizer.to_json()}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw TrainingError("cannot write checkpoint " + path);
  out << j.dump() << '\n';
  if (!out) throw TrainingError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrainingError("cannot read checkpoint " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) throw TrainingError("unrecognized checkpoint format in " + path);
  Checkpoint cp;
  cp.config = TrainConfig::from_json(j.at("config"));
  cp.config_hash = j.at("config_hash").get<std::string>();
  if (cp.config_hash != config_hash(cp.config)) throw TrainingError("checkpoint config hash mismatch");
  ModelConfig mc = cp.config.model;
  mc.seed = cp.config.seed;
  mc.encoder.vocab_size = 0;
  mc.encoder.max_seq_len = cp.config.extraction.max_seq_len;
  mc.gnn.relations = j.at("relations").get<std::size_t>();
  cp.state.model = SinlgModel(mc, Vocabulary(j.at("vocab").get<std::vector<std::string>>()));
  if (parameter_fingerprint(cp.state.model.snapshot().model()) != j.at("snapshot_fingerprint").get<std::uint64_t>()) {
    throw TrainingError("checkpoint scorer snapshot does not match its initialization");
  }
  const auto& params = j.at("params");
  for (auto& [name, t] : cp.state.model.named_parameters()) {
    auto it = params.find(name);
    if (it == params.end()) throw TrainingError("checkpoint is missing tensor " + name);
    load_tensor(*it, name, *t);
  }
  cp.state.optimizer = AdamW::from_json(j.at("optimizer"));
  cp.config.model = cp.state.model.config();
  return cp;
}

}  // namespace sinlg
