#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "sinlg/extraction.hpp"
#include "sinlg/model.hpp"
#include "sinlg/sample.hpp"

namespace sinlg {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RankResult {
  std::size_t sample = 0;
  std::vector<double> scores;
  std::size_t positive = 0;
  std::size_t rank = 0;  // 1-based rank of the ground-truth candidate
};

// rank = #(strictly higher scores) + #(equal scores at a lower index) + 1
RankResult rank_from_scores(std::size_t sample, std::vector<double> scores, std::size_t positive);

// Encoder-only inference: trans_a -> encode -> predict with the encoder head
// for every candidate. Fails hard if the KG-access counter moves.
RankResult rank_candidates(const SinlgModel& model, const MrsSample& sample, std::size_t sample_id,
                           std::size_t max_seq_len);

// Variant-specific scoring with knowledge extracted for every candidate.
RankResult rank_candidates_online(const SinlgModel& model, const MrsSample& sample, std::size_t sample_id,
                                  const ExtractionContext& ctx, const ExtractionConfig& config);

// Fraction of results whose ground truth ranks within the top k of n.
double r_at_k(const std::vector<RankResult>& results, std::size_t n, std::size_t k);
double mrr(const std::vector<RankResult>& results);

struct EvalReport {
  std::size_t n_samples = 0;
  std::size_t n_candidates = 0;
  double r_at_1 = 0.0;
  double r_at_2 = 0.0;
  double r_at_5 = 0.0;
  double mrr = 0.0;
  bool qo_free = true;
  std::uint64_t kg_accesses = 0;

  nlohmann::json to_json() const;
};

EvalReport summarize(const std::vector<RankResult>& results, bool qo_free, std::uint64_t kg_accesses);

// Encoder-only for PLM_ONLY, S2 and SINLG; S0, S1 and S3 need `ctx`.
EvalReport evaluate(const SinlgModel& model, const std::vector<MrsSample>& dataset, std::size_t max_seq_len,
                    const ExtractionContext* ctx = nullptr, const ExtractionConfig* config = nullptr);

struct LatencyStats {
  double average = 0.0;
  double worst = 0.0;
  double best = 0.0;
};

struct LatencyReport {
  std::size_t instances = 0;
  std::size_t repetitions = 0;
  std::size_t warmup = 0;
  std::vector<double> qo_free_seconds;  // per instance, median of repetitions
  std::vector<double> online_seconds;
  LatencyStats qo_free;
  LatencyStats online;
  double ratio = 0.0;  // online average / QO-free average

  nlohmann::json to_json() const;
};

LatencyStats latency_stats(const std::vector<double>& seconds);

// Times encoder-only ranking against the online pipeline (extraction, GNN
// and concat-head scoring for every candidate) on each instance.
LatencyReport latency_bench(const SinlgModel& model, const std::vector<MrsSample>& dataset,
                            const ExtractionContext& ctx, const ExtractionConfig& config, std::size_t repetitions,
                            std::size_t warmup = 3);

}  // namespace sinlg
