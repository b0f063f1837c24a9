#include "sinlg/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace sinlg {

namespace {

std::size_t require_positive(const MrsSample& sample, std::size_t sample_id) {
  const std::size_t pos = sample.positive_index();
  if (pos >= sample.candidates.size()) {
    throw EvaluationError("sample " + std::to_string(sample_id) + " has no positive candidate");
  }
  return pos;
}

template <typename F>
double seconds_of(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(stop - start).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

nlohmann::json stats_json(const LatencyStats& s) {
  return {{"average", s.average}, {"worst", s.worst}, {"best", s.best}};
}

RankResult online_ranking(const SinlgModel& model, const MrsSample& sample, std::size_t sample_id,
                          const ExtractionContext& ctx, const ExtractionConfig& config) {
  std::vector<double> scores(sample.candidates.size());
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const SubgraphSpec spec = build_subgraph(sample, c, ctx, &model.encoder, config);
    scores[c] = score_candidate_online(model, sample, c, config.max_seq_len, {&spec, ctx.table, ctx.graph});
  }
  return rank_from_scores(sample_id, std::move(scores), require_positive(sample, sample_id));
}

}  // namespace

RankResult rank_from_scores(std::size_t sample, std::vector<double> scores, std::size_t positive) {
  if (positive >= scores.size()) throw EvaluationError("positive index out of range");
  RankResult r;
  r.sample = sample;
  r.positive = positive;
  r.rank = 1;
  const double target = scores[positive];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw EvaluationError("non-finite candidate score");
    if (scores[i] > target || (scores[i] == target && i < positive)) ++r.rank;
  }
  r.scores = std::move(scores);
  return r;
}

RankResult rank_candidates(const SinlgModel& model, const MrsSample& sample, std::size_t sample_id,
                           std::size_t max_seq_len) {
  const std::uint64_t before = kg_access_count();
  std::vector<double> scores(sample.candidates.size());
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const auto h = encode(model.encoder, trans_a(sample, c, model.vocab(), max_seq_len));
    scores[c] = predict(model.encoder.head, h);
  }
  if (kg_access_count() != before) {
    throw EvaluationError("query-online-free inference accessed the knowledge graph");
  }
  return rank_from_scores(sample_id, std::move(scores), require_positive(sample, sample_id));
}

RankResult rank_candidates_online(const SinlgModel& model, const MrsSample& sample, std::size_t sample_id,
                                  const ExtractionContext& ctx, const ExtractionConfig& config) {
  std::vector<double> scores(sample.candidates.size());
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const SubgraphSpec spec = build_subgraph(sample, c, ctx, nullptr, config);
    scores[c] = score_candidate(model, sample, c, config.max_seq_len, {&spec, ctx.table, ctx.graph});
  }
  return rank_from_scores(sample_id, std::move(scores), require_positive(sample, sample_id));
}

double r_at_k(const std::vector<RankResult>& results, std::size_t n, std::size_t k) {
  if (results.empty()) throw EvaluationError("no results to score");
  if (k < 1 || k > n) throw EvaluationError("k must lie in [1, n]");
  std::size_t hits = 0;
  for (const auto& r : results) {
    if (r.scores.size() != n) {
      throw EvaluationError("sample " + std::to_string(r.sample) + " has " + std::to_string(r.scores.size()) +
                            " candidates, expected " + std::to_string(n));
    }
    if (r.rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mrr(const std::vector<RankResult>& results) {
  if (results.empty()) throw EvaluationError("no results to score");
  double total = 0.0;
  for (const auto& r : results) {
    if (r.rank == 0) throw EvaluationError("rank must be at least 1");
    total += 1.0 / static_cast<double>(r.rank);
  }
  return total / static_cast<double>(results.size());
}

nlohmann::json EvalReport::to_json() const {
  const std::string n = std::to_string(n_candidates);
  return {{"R" + n + "@1", r_at_1}, {"R" + n + "@2", r_at_2}, {"R" + n + "@5", r_at_5}, {"MRR", mrr},
          {"n_samples", n_samples}, {"n_candidates", n_candidates}, {"qo_free", qo_free},
          {"kg_accesses", kg_accesses}};
}

EvalReport summarize(const std::vector<RankResult>& results, bool qo_free, std::uint64_t kg_accesses) {
  EvalReport r;
  r.qo_free = qo_free;
  r.kg_accesses = kg_accesses;
  r.n_samples = results.size();
  if (results.empty()) return r;
  r.n_candidates = results.front().scores.size();
  const std::size_t n = r.n_candidates;
  r.r_at_1 = r_at_k(results, n, 1);
  r.r_at_2 = r_at_k(results, n, std::min<std::size_t>(2, n));
  r.r_at_5 = r_at_k(results, n, std::min<std::size_t>(5, n));
  r.mrr = sinlg::mrr(results);
  return r;
}

EvalReport evaluate(const SinlgModel& model, const std::vector<MrsSample>& dataset, std::size_t max_seq_len,
                    const ExtractionContext* ctx, const ExtractionConfig* config) {
  const bool online = needs_knowledge_at_inference(model.variant());
  if (online && (!ctx || !config)) {
    throw EvaluationError("variant " + variant_name(model.variant()) + " needs the knowledge graph at inference");
  }
  const std::uint64_t before = kg_access_count();
  std::vector<RankResult> results;
  results.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    results.push_back(online ? rank_candidates_online(model, dataset[i], i, *ctx, *config)
                             : rank_candidates(model, dataset[i], i, max_seq_len));
  }
  const std::uint64_t accesses = kg_access_count() - before;
  if (!online && accesses != 0) throw EvaluationError("query-online-free evaluation accessed the knowledge graph");
  return summarize(results, !online, accesses);
}

LatencyStats latency_stats(const std::vector<double>& seconds) {
  if (seconds.empty()) throw EvaluationError("no timings");
  LatencyStats s;
  s.best = *std::min_element(seconds.begin(), seconds.end());
  s.worst = *std::max_element(seconds.begin(), seconds.end());
  double total = 0.0;
  for (double t : seconds) total += t;
  s.average = std::clamp(total / static_cast<double>(seconds.size()), s.best, s.worst);
  return s;
}

nlohmann::json LatencyReport::to_json() const {
  return {{"instances", instances},
          {"repetitions", repetitions},
          {"warmup", warmup},
          {"qo_free", stats_json(qo_free)},
          {"online", stats_json(online)},
          {"ratio", ratio}};
}

LatencyReport latency_bench(const SinlgModel& model, const std::vector<MrsSample>& dataset,
                            const ExtractionContext& ctx, const ExtractionConfig& config, std::size_t repetitions,
                            std::size_t warmup) {
  if (dataset.empty()) throw EvaluationError("latency benchmark needs at least one instance");
  if (repetitions == 0) throw EvaluationError("repetitions must be positive");
  LatencyReport report;
  report.instances = dataset.size();
  report.repetitions = repetitions;
  report.warmup = warmup;
  for (std::size_t w = 0; w < warmup; ++w) {
    rank_candidates(model, dataset.front(), 0, config.max_seq_len);
    online_ranking(model, dataset.front(), 0, ctx, config);
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    std::vector<double> qo(repetitions), on(repetitions);
    for (std::size_t r = 0; r < repetitions; ++r) {
      qo[r] = seconds_of([&] { rank_candidates(model, dataset[i], i, config.max_seq_len); });
      on[r] = seconds_of([&] { online_ranking(model, dataset[i], i, ctx, config); });
    }
    report.qo_free_seconds.push_back(median(std::move(qo)));
    report.online_seconds.push_back(median(std::move(on)));
  }
  report.qo_free = latency_stats(report.qo_free_seconds);
  report.online = latency_stats(report.online_seconds);
  report.ratio = report.online.average / report.qo_free.average;
  return report;
}

}  // namespace sinlg
