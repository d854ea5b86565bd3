#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stepsteer/backend/toy_model.hpp"
#include "stepsteer/intervention.hpp"
#include "stepsteer/json_io.hpp"
#include "stepsteer/probe.hpp"
#include "stepsteer/prompts.hpp"
#include "stepsteer/steer.hpp"
#include "stepsteer/trace.hpp"

namespace stepsteer {

Json policy_to_json(const SteerPolicy& policy);

// Aggregate step-level verification metrics, in percent. A rate is nullopt
// when its class is absent, and F1 is nullopt unless both rates exist.
struct MetricSummary {
  std::optional<double> tnr;
  std::optional<double> tpr;
  std::optional<double> f1;

  std::size_t n_correct = 0;
  std::size_t n_erroneous = 0;
  std::size_t true_accept = 0;       // TA
  std::size_t false_reject = 0;      // FR, over-critical
  std::size_t true_reject = 0;       // TR
  std::size_t false_accept = 0;      // FA, under-critical
  std::size_t inaccurate_step = 0;
  std::size_t unparseable_correct = 0;
  std::size_t unparseable_erroneous = 0;

  Json to_json() const;
};

// 2 * tpr * tnr / (tpr + tnr), and 0 when both are 0.
double harmonic_f1(double tnr, double tpr) noexcept;

// `results` holds (prediction, first_error) pairs. Throws EmptyEval.
MetricSummary compute_metrics(std::span<const std::pair<Verdict, int>> results);

// Most frequent parseable verdict; ties go to the smallest value, so -1
// beats any index. Unparseable when nothing parses.
Verdict majority_vote(std::span<const Verdict> verdicts);

struct FlopsEstimate {
  std::uint64_t active_params = 0;
  std::uint64_t inference_tokens = 0;
  // Exactly 2 * M * T; throws ConfigError on 64-bit overflow.
  std::uint64_t flops() const;
  double tflops() const { return static_cast<double>(flops()) / 1e12; }
};

FlopsEstimate estimate_flops(std::uint64_t active_params, std::uint64_t inference_tokens);

// Per-sample record of an evaluation run.
struct EvalRow {
  std::string sample_id;
  int first_error = -1;
  Verdict prediction;
  Outcome outcome = Outcome::Unparseable;
  std::optional<double> q;
  Direction direction = Direction::None;
  std::vector<Verdict> votes;  // one per consistency rollout
  std::vector<std::string> texts;
  std::size_t generated_tokens = 0;
  std::size_t delimiters = 0;
  std::size_t interventions = 0;

  Json to_json() const;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  MetricSummary metrics;
  FlopsEstimate flops;
  std::size_t total_delimiters = 0;
  std::size_t total_interventions = 0;
  Json config = Json::object();

  Json to_json() const;
  // TNR, TPR, F1, TFLOPs per sample, one decimal place for the rates.
  std::string to_csv() const;
};

struct EvalOptions {
  SteerPolicy policy;
  SteeringSet vectors;
  std::optional<ProbeFile> probe;
  std::size_t n_consistency = 1;
  std::uint64_t seed = 0;
  PromptKind prompt = PromptKind::Basic;
  std::size_t max_tokens = 96;
  // Greedy decoding for single runs unless set; consistency runs need a
  // positive temperature to produce distinct traces.
  double temperature = 0.0;
  double top_p = 1.0;
};

// Throws ConfigError when the selected variant lacks the probe or vectors it
// needs, before any generation.
void validate_eval_options(const EvalOptions& options, const BackendDescriptor& backend);

/// Scores, routes, generates with gated interventions and labels every
/// sample. Rollout r of sample i uses seed
/// derive_seed(seed + r, SeedStream::Consistency, i), so an N-rollout run
/// replays the single-rollout runs with seeds seed .. seed + N - 1. FLOPs
/// count every generated token of every rollout.
EvalReport run_eval(std::span<const LabeledSample> samples, const EvalOptions& options,
                    const ToyModel& model);

// Metrics from recorded rollouts (majority vote per sample), no generation.
EvalReport evaluate_recorded(std::span<const LabeledSample> samples,
                             std::span<const RolloutRecord> rollouts,
                             std::uint64_t active_params = 0);

// Mean of per-run F1 and F1 of the mean rates, for multi-run summaries.
struct MultiRunSummary {
  std::optional<double> mean_f1;
  std::optional<double> f1_of_mean_rates;
  std::optional<double> mean_tnr;
  std::optional<double> mean_tpr;
};
MultiRunSummary summarize_runs(std::span<const MetricSummary> runs);

}  // namespace stepsteer
