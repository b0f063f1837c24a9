#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "sinlg/corpus.hpp"
#include "sinlg/evaluation.hpp"
#include "sinlg/training.hpp"

namespace sinlg::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
  if (!out) throw UsageError("failed writing " + path);
}

void merge_into(nlohmann::json& base, const nlohmann::json& over) {
  for (const auto& [k, v] : over.items()) base[k] = v;
}

struct GlobalFlags {
  std::uint64_t seed = 0;
  std::string config;
  std::size_t max_seq_len = 512;
  std::size_t max_nodes = 200;
  double alpha = 0.5;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* config_opt = nullptr;
  CLI::Option* seq_opt = nullptr;
  CLI::Option* nodes_opt = nullptr;
  CLI::Option* alpha_opt = nullptr;
};

// Config file, then --config, then the explicit global flags.
nlohmann::json layered_config(const std::string& file, const GlobalFlags& g) {
  nlohmann::json j = nlohmann::json::object();
  if (!file.empty()) merge_into(j, load_config(file));
  if (g.config_opt->count()) merge_into(j, load_config(g.config));
  if (g.seed_opt->count()) j["seed"] = g.seed;
  return j;
}

TrainConfig train_config(const std::string& file, const GlobalFlags& g, const std::string& variant = "") {
  nlohmann::json j = TrainConfig{}.to_json();
  merge_into(j, layered_config(file, g));
  if (g.seq_opt->count()) j["max_seq_len"] = g.max_seq_len;
  if (g.nodes_opt->count()) j["max_nodes"] = g.max_nodes;
  if (g.alpha_opt->count()) j["alpha"] = g.alpha;
  if (!variant.empty()) j["variant"] = variant;
  return TrainConfig::from_json(j);
}

struct DataPaths {
  std::string dir = ".";
  std::string train, dev, kg;

  std::string train_path() const { return train.empty() ? dir + "/train.jsonl" : train; }
  std::string dev_path() const { return dev.empty() ? dir + "/dev.jsonl" : dev; }
  std::string kg_path() const { return kg.empty() ? dir + "/kg.tsv" : kg; }
};

void add_data_options(CLI::App* cmd, DataPaths& paths) {
  cmd->add_option("--data", paths.dir, "directory holding train.jsonl, dev.jsonl and kg.tsv")->capture_default_str();
  cmd->add_option("--train", paths.train, "training set (overrides --data)");
  cmd->add_option("--dev", paths.dev, "dev set (overrides --data)");
  cmd->add_option("--kg", paths.kg, "knowledge graph TSV (overrides --data)");
}

// Scores a dataset the way the variant is served: encoder only where the
// variant allows, full extraction otherwise.
EvalReport evaluate_model(const SinlgModel& model, const std::vector<MrsSample>& dataset,
                          const KnowledgeGraph* graph, const ExtractionConfig& extraction) {
  if (!needs_knowledge_at_inference(model.variant())) return evaluate(model, dataset, extraction.max_seq_len);
  if (!graph) throw UsageError("variant " + variant_name(model.variant()) + " needs --kg at evaluation");
  const auto table = ConceptEmbeddingTable::build(model.snapshot(), model.vocab(), *graph);
  const ConceptLexicon lexicon(*graph);
  const ExtractionContext ctx{graph, &lexicon, &model.vocab(), &model.snapshot(), &table};
  return evaluate(model, dataset, extraction.max_seq_len, &ctx, &extraction);
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_kg_build(const std::string& tsv, std::ostream& out) {
  LoadReport report;
  const KnowledgeGraph graph = KnowledgeGraph::load_edge_list(tsv, &report);
  nlohmann::json j = report.to_json();
  j["lexicon_phrases"] = ConceptLexicon(graph).size();
  nlohmann::json rel = nlohmann::json::array();
  for (const auto& name : graph.relations().names()) rel.push_back(name);
  j["relation_names"] = rel;
  out << j.dump() << '\n';
  return 0;
}

int cmd_synth(const std::string& file, const GlobalFlags& g, const std::string& out_dir, std::ostream& out) {
  const SynthConfig config = SynthConfig::from_json(layered_config(file, g));
  const SynthCorpus corpus = synth_generate(config);
  write_corpus(corpus, out_dir);
  std::size_t para = 0;
  for (bool b : corpus.train_paraphrase_only) para += b ? 1 : 0;
  for (bool b : corpus.dev_paraphrase_only) para += b ? 1 : 0;
  const std::size_t total = corpus.train.size() + corpus.dev.size();
  out << nlohmann::json{{"out", out_dir},
                        {"train_samples", corpus.train.size()},
                        {"dev_samples", corpus.dev.size()},
                        {"paraphrase_only_fraction", total ? static_cast<double>(para) / total : 0.0},
                        {"config", config.to_json()}}
             .dump()
      << '\n';
  return 0;
}

int cmd_extract(const std::string& dataset_path, const std::string& kg_path, const std::string& file,
                const GlobalFlags& g, const std::string& out_path, bool with_seed, std::ostream& out) {
  TrainConfig config = train_config(file, g);
  const auto dataset = load_dataset(dataset_path);
  const KnowledgeGraph graph = KnowledgeGraph::load_edge_list(kg_path);
  ModelConfig mc = config.model;
  mc.seed = config.seed;
  mc.encoder.max_seq_len = config.extraction.max_seq_len;
  mc.gnn.relations = graph.relation_count();
  const SinlgModel model(mc, build_vocabulary(dataset, graph));
  const auto table = ConceptEmbeddingTable::build(model.snapshot(), model.vocab(), graph);
  const ConceptLexicon lexicon(graph);
  const ExtractionContext ctx{&graph, &lexicon, &model.vocab(), &model.snapshot(), &table};
  std::ofstream file_out(out_path, std::ios::trunc);
  if (!file_out) throw UsageError("cannot write " + out_path);
  std::size_t specs = 0, nodes = 0;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    for (std::size_t c = 0; c < dataset[s].candidates.size(); ++c) {
      const SubgraphSpec spec =
          build_subgraph(dataset[s], c, ctx, with_seed ? &model.encoder : nullptr, config.extraction);
      file_out << subgraph_to_json(spec, graph, s, c, with_seed).dump() << '\n';
      ++specs;
      nodes += spec.node_count();
    }
  }
  out << nlohmann::json{{"out", out_path},
                        {"specs", specs},
                        {"mean_nodes", specs ? static_cast<double>(nodes) / specs : 0.0}}
             .dump()
      << '\n';
  return 0;
}

int cmd_train(const std::string& file, const GlobalFlags& g, const std::string& variant, const DataPaths& paths,
              const std::string& checkpoint, const std::string& log_path, std::ostream& out) {
  const TrainConfig config = train_config(file, g, variant);
  const auto train_set = load_dataset(paths.train_path());
  const auto dev_set = std::filesystem::exists(paths.dev_path()) ? load_dataset(paths.dev_path())
                                                                 : std::vector<MrsSample>{};
  const KnowledgeGraph graph = KnowledgeGraph::load_edge_list(paths.kg_path());
  TrainResult result = train(config, train_set, dev_set, graph, log_path);
  save_checkpoint(checkpoint, result.state, result.config);
  for (const auto& line : result.log) out << line.dump() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_path, const std::string& kg_path,
             const GlobalFlags& g, const std::string& out_path, std::ostream& out) {
  if (!std::filesystem::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
  Checkpoint cp = load_checkpoint(checkpoint);
  ExtractionConfig extraction = cp.config.extraction;
  if (g.nodes_opt->count()) extraction.max_nodes = g.max_nodes;
  const auto dataset = load_dataset(dataset_path);
  std::optional<KnowledgeGraph> graph;
  if (!kg_path.empty()) graph = KnowledgeGraph::load_edge_list(kg_path);
  const EvalReport report = evaluate_model(cp.state.model, dataset, graph ? &*graph : nullptr, extraction);
  nlohmann::json j = report.to_json();
  j["variant"] = variant_name(cp.state.model.variant());
  j["config_hash"] = cp.config_hash;
  if (!out_path.empty()) write_text(out_path, j.dump() + "\n");
  out << j.dump() << '\n';
  return 0;
}

int cmd_bench(const std::string& checkpoint, const std::string& dataset_path, const std::string& kg_path,
              const GlobalFlags& g, std::size_t instances, std::size_t repetitions, std::size_t warmup,
              std::ostream& out) {
  if (!std::filesystem::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
  Checkpoint cp = load_checkpoint(checkpoint);
  ExtractionConfig extraction = cp.config.extraction;
  if (g.nodes_opt->count()) extraction.max_nodes = g.max_nodes;
  auto dataset = load_dataset(dataset_path);
  if (instances > 0 && dataset.size() > instances) dataset.resize(instances);
  const KnowledgeGraph graph = KnowledgeGraph::load_edge_list(kg_path);
  const SinlgModel& model = cp.state.model;
  const auto table = ConceptEmbeddingTable::build(model.snapshot(), model.vocab(), graph);
  const ConceptLexicon lexicon(graph);
  const ExtractionContext ctx{&graph, &lexicon, &model.vocab(), &model.snapshot(), &table};
  const LatencyReport report = latency_bench(model, dataset, ctx, extraction, repetitions, warmup);
  nlohmann::json j = report.to_json();
  j["variant"] = variant_name(model.variant());
  out << j.dump() << '\n';
  return 0;
}

int cmd_sweep(const std::string& file, const GlobalFlags& g, const std::string& param, const std::string& values,
              const std::string& variant, const DataPaths& paths, const std::string& table_path, std::ostream& out) {
  if (param != "alpha" && param != "max_nodes") throw UsageError("--param must be alpha or max_nodes");
  const auto items = split_values(values);
  if (items.empty()) throw UsageError("--values needs at least one value");
  const auto train_set = load_dataset(paths.train_path());
  const auto dev_set = load_dataset(paths.dev_path());
  if (dev_set.empty()) throw UsageError("sweep needs a non-empty dev set");
  const KnowledgeGraph graph = KnowledgeGraph::load_edge_list(paths.kg_path());
  const TrainConfig base = train_config(file, g, variant);
  std::ostringstream table;
  table << param << "\tR@1\tR@2\tR@5\tMRR\n";
  for (const auto& item : items) {
    nlohmann::json j = base.to_json();
    try {
      if (param == "alpha") j["alpha"] = std::stod(item);
      else j["max_nodes"] = std::stoul(item);
    } catch (const std::exception&) {
      throw UsageError("bad value '" + item + "' for " + param);
    }
    const TrainConfig config = TrainConfig::from_json(j);
    TrainResult result = train(config, train_set, {}, graph);
    const EvalReport report = evaluate_model(result.state.model, dev_set, &graph, config.extraction);
    nlohmann::json row = report.to_json();
    row["param"] = param;
    row["value"] = j[param];
    row["variant"] = variant_name(config.model.variant);
    out << row.dump() << '\n';
    table << j[param].dump() << '\t' << report.r_at_1 << '\t' << report.r_at_2 << '\t' << report.r_at_5 << '\t'
          << report.mrr << '\n';
  }
  if (!table_path.empty()) write_text(table_path, table.str());
  return 0;
}

}  // namespace

nlohmann::json parse_config_text(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) return nlohmann::json::object();
  if (t.front() == '{') {
    try {
      return nlohmann::json::parse(t);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  nlohmann::json j = nlohmann::json::object();
  std::string line;
  std::istringstream in(t);
  while (std::getline(in, line)) {
    std::istringstream parts(line);
    std::string pair;
    while (std::getline(parts, pair, ',')) {
      pair = trim(pair);
      if (pair.empty() || pair.front() == '#') break;
      const auto eq = pair.find('=');
      if (eq == std::string::npos) throw UsageError("config entry '" + pair + "' is not key=value");
      const std::string key = trim(pair.substr(0, eq));
      const std::string value = trim(pair.substr(eq + 1));
      if (key.empty()) throw UsageError("config entry '" + pair + "' has no key");
      try {
        j[key] = nlohmann::json::parse(value);
      } catch (const nlohmann::json::exception&) {
        j[key] = value;
      }
    }
  }
  return j;
}

nlohmann::json load_config(const std::string& spec) {
  std::error_code ec;
  if (std::filesystem::is_regular_file(spec, ec)) return parse_config_text(read_text(spec));
  return parse_config_text(spec);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Persona-grounded response selection with knowledge-guided training", "sinlg"};
  app.require_subcommand(1);
  GlobalFlags g;
  g.seed_opt = app.add_option("--seed", g.seed, "random seed");
  g.config_opt = app.add_option("--config", g.config, "extra config: key=value pairs, JSON, or a file");
  g.seq_opt = app.add_option("--max-seq-len", g.max_seq_len, "token budget per input")->capture_default_str();
  g.nodes_opt = app.add_option("--max-nodes", g.max_nodes, "concepts kept per subgraph")->capture_default_str();
  g.alpha_opt = app.add_option("--alpha", g.alpha, "loss weight of the matching term")->capture_default_str();
  app.fallthrough();

  std::string positional_a, positional_b, positional_c, log_path, variant, train_log, param, values;
  std::string synth_out = "corpus", checkpoint_out = "checkpoint.json";
  bool with_seed = false;
  std::size_t instances = 20, repetitions = 5, warmup = 3;
  DataPaths paths;

  auto* kg = app.add_subcommand("kg", "knowledge graph utilities");
  kg->require_subcommand(1);
  auto* kg_build = kg->add_subcommand("build", "load a TSV edge list and report its size");
  kg_build->add_option("tsv", positional_a, "edge list")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("config", positional_a, "synth config (JSON or key=value)");
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();

  auto* extract = app.add_subcommand("extract", "extract subgraphs for every candidate");
  extract->add_option("dataset", positional_a)->required();
  extract->add_option("kg", positional_b)->required();
  extract->add_option("--out", log_path, "output JSONL")->required();
  extract->add_option("--model-config", positional_c, "training config for the scorer encoder");
  extract->add_flag("--with-seed", with_seed, "include the super-node seed");

  auto* train_cmd = app.add_subcommand("train", "train one variant");
  train_cmd->add_option("config", positional_a, "training config (JSON or key=value)");
  train_cmd->add_option("--variant", variant, "plm|s0|s1|s2|s3|sinlg");
  add_data_options(train_cmd, paths);
  train_cmd->add_option("--out", checkpoint_out, "checkpoint path")->capture_default_str();
  train_cmd->add_option("--log", train_log, "per-epoch JSONL log");

  auto* eval = app.add_subcommand("eval", "rank candidates and report R@k and MRR");
  eval->add_option("checkpoint", positional_a)->required();
  eval->add_option("dataset", positional_b)->required();
  eval->add_option("--kg", positional_c, "knowledge graph, needed by s0, s1 and s3");
  eval->add_option("--out", log_path, "also write the report here");

  auto* bench = app.add_subcommand("bench", "time QO-free against online inference");
  bench->add_option("checkpoint", positional_a)->required();
  bench->add_option("dataset", positional_b)->required();
  bench->add_option("kg", positional_c)->required();
  bench->add_option("--instances", instances, "instances timed (0 = all)")->capture_default_str();
  bench->add_option("--repetitions", repetitions, "timed runs per instance")->capture_default_str();
  bench->add_option("--warmup", warmup, "untimed runs before timing")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "train and evaluate once per parameter value");
  sweep->add_option("config", positional_a, "training config (JSON or key=value)");
  sweep->add_option("--param", param, "alpha|max_nodes")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--variant", variant, "plm|s0|s1|s2|s3|sinlg");
  add_data_options(sweep, paths);
  sweep->add_option("--table", log_path, "write a TSV result table");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (kg_build->parsed()) return cmd_kg_build(positional_a, out);
    if (synth->parsed()) return cmd_synth(positional_a, g, synth_out, out);
    if (extract->parsed()) return cmd_extract(positional_a, positional_b, positional_c, g, log_path, with_seed, out);
    if (train_cmd->parsed()) return cmd_train(positional_a, g, variant, paths, checkpoint_out, train_log, out);
    if (eval->parsed()) return cmd_eval(positional_a, positional_b, positional_c, g, log_path, out);
    if (bench->parsed()) return cmd_bench(positional_a, positional_b, positional_c, g, instances, repetitions, warmup, out);
    if (sweep->parsed()) return cmd_sweep(positional_a, g, param, values, variant, paths, log_path, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace sinlg::cli
