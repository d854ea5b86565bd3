#include "stepsteer/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "stepsteer/error.hpp"
#include "stepsteer/random.hpp"

namespace stepsteer {

namespace {

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json verdict_json(const Verdict& v) { return v ? Json(*v) : Json(nullptr); }

double pct(std::size_t hits, std::size_t total) {
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

std::string one_decimal(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v);
  return buf;
}

bool needs_routing(const SteerPolicy& p) {
  return (p.variant == Variant::Uni || p.variant == Variant::Bi) && p.sample_adaptive;
}

}  // namespace

Json policy_to_json(const SteerPolicy& p) {
  return Json{{"variant", std::string(to_string(p.variant))},
              {"layers", p.layers},
              {"alpha_strict", p.alpha_strict},
              {"alpha_lenient", p.alpha_lenient},
              {"tau_low", p.tau_low},
              {"tau_high", p.tau_high},
              {"rho_strict", p.rho_strict},
              {"rho_lenient", p.rho_lenient},
              {"sample_adaptive", p.sample_adaptive},
              {"delimiter_adaptive", p.delimiter_adaptive}};
}

Json MetricSummary::to_json() const {
  return Json{{"tnr", optional_number(tnr)},
              {"tpr", optional_number(tpr)},
              {"f1", optional_number(f1)},
              {"n_correct", n_correct},
              {"n_erroneous", n_erroneous},
              {"true_accept", true_accept},
              {"false_reject", false_reject},
              {"true_reject", true_reject},
              {"false_accept", false_accept},
              {"inaccurate_step", inaccurate_step},
              {"unparseable_correct", unparseable_correct},
              {"unparseable_erroneous", unparseable_erroneous}};
}

double harmonic_f1(double tnr, double tpr) noexcept {
  if (tnr + tpr == 0.0) return 0.0;
  return 2.0 * tpr * tnr / (tpr + tnr);
}

MetricSummary compute_metrics(std::span<const std::pair<Verdict, int>> results) {
  if (results.empty()) throw Error(ErrorCode::EmptyEval, "no evaluation results");
  MetricSummary m;
  for (const auto& [prediction, first_error] : results) {
    const Outcome o = label_outcome(prediction, first_error);
    if (first_error == -1) {
      ++m.n_correct;
      if (o == Outcome::TA) ++m.true_accept;
      if (o == Outcome::FR) ++m.false_reject;
      if (o == Outcome::Unparseable) ++m.unparseable_correct;
    } else {
      ++m.n_erroneous;
      if (o == Outcome::TR) ++m.true_reject;
      if (o == Outcome::FA) ++m.false_accept;
      if (o == Outcome::InaccurateStep) ++m.inaccurate_step;
      if (o == Outcome::Unparseable) ++m.unparseable_erroneous;
    }
  }
  if (m.n_correct > 0) m.tpr = pct(m.true_accept, m.n_correct);
  if (m.n_erroneous > 0) m.tnr = pct(m.true_reject, m.n_erroneous);
  if (m.tpr && m.tnr) m.f1 = harmonic_f1(*m.tnr, *m.tpr);
  return m;
}

Verdict majority_vote(std::span<const Verdict> verdicts) {
  std::map<int, std::size_t> counts;
  for (const auto& v : verdicts) {
    if (v) ++counts[*v];
  }
  Verdict best;
  std::size_t best_count = 0;
  // Ascending key order makes the first maximum the smallest value.
  for (const auto& [value, count] : counts) {
    if (count > best_count) {
      best = value;
      best_count = count;
    }
  }
  return best;
}

std::uint64_t FlopsEstimate::flops() const {
  if (active_params == 0 || inference_tokens == 0) return 0;
  const std::uint64_t limit = UINT64_MAX / 2;
  if (active_params > limit / inference_tokens) {
    throw Error(ErrorCode::ConfigError, "FLOPs estimate overflows 64 bits");
  }
  return 2 * active_params * inference_tokens;
}

FlopsEstimate estimate_flops(std::uint64_t active_params, std::uint64_t inference_tokens) {
  return FlopsEstimate{active_params, inference_tokens};
}

Json EvalRow::to_json() const {
  Json vote_list = Json::array();
  for (const auto& v : votes) vote_list.push_back(verdict_json(v));
  return Json{{"sample_id", sample_id},
              {"first_error", first_error},
              {"prediction", verdict_json(prediction)},
              {"outcome", std::string(to_string(outcome))},
              {"q", optional_number(q)},
              {"direction", std::string(to_string(direction))},
              {"votes", vote_list},
              {"generated_tokens", generated_tokens},
              {"delimiters", delimiters},
              {"interventions", interventions},
              {"texts", texts}};
}

Json EvalReport::to_json() const {
  Json row_list = Json::array();
  for (const auto& r : rows) row_list.push_back(r.to_json());
  const double per_sample = rows.empty() ? 0.0 : flops.tflops() / static_cast<double>(rows.size());
  return Json{{"config", config},
              {"aggregates", metrics.to_json()},
              {"flops",
               {{"active_params", flops.active_params},
                {"inference_tokens", flops.inference_tokens},
                {"flops", flops.flops()},
                {"tflops_per_sample", per_sample}}},
              {"delimiters", total_delimiters},
              {"interventions", total_interventions},
              {"rows", row_list}};
}

std::string EvalReport::to_csv() const {
  const double per_sample = rows.empty() ? 0.0 : flops.tflops() / static_cast<double>(rows.size());
  char tflops_buf[32];
  std::snprintf(tflops_buf, sizeof tflops_buf, "%.6g", per_sample);
  return "TNR,TPR,F1,TFLOPs\n" + one_decimal(metrics.tnr) + "," + one_decimal(metrics.tpr) + "," +
         one_decimal(metrics.f1) + "," + tflops_buf + "\n";
}

void validate_eval_options(const EvalOptions& options, const BackendDescriptor& backend) {
  options.policy.validate();
  if (options.n_consistency == 0) throw Error(ErrorCode::ConfigError, "n_consistency must be at least 1");
  for (int l : options.policy.layers) {
    if (l >= backend.n_layers) {
      throw Error(ErrorCode::ConfigError, "layer " + std::to_string(l) + " outside the backend's " +
                                              std::to_string(backend.n_layers) + " layers");
    }
  }
  if (needs_routing(options.policy)) {
    if (!options.probe) throw Error(ErrorCode::ConfigError, "variant requires a probe file");
    if (options.probe->weights.input_dim() != static_cast<std::size_t>(backend.hidden_dim)) {
      throw Error(ErrorCode::ConfigError, "probe input dimension does not match the backend");
    }
    if (options.probe->layer < 0 || options.probe->layer >= backend.n_layers) {
      throw Error(ErrorCode::ConfigError, "probe layer outside the backend");
    }
  }
  require_vectors_for(options.policy, options.vectors, backend.hidden_dim);
}

EvalReport run_eval(std::span<const LabeledSample> samples, const EvalOptions& options,
                    const ToyModel& model) {
  const BackendDescriptor desc = model.descriptor();
  validate_eval_options(options, desc);
  if (samples.empty()) throw Error(ErrorCode::EmptyEval, "no samples to evaluate");

  EvalReport report;
  std::uint64_t tokens = 0;
  std::vector<std::pair<Verdict, int>> results;

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const LabeledSample& sample = samples[i];
    EvalRow row;
    row.sample_id = sample.sample_id;
    row.first_error = sample.first_error;

    const std::vector<int> prompt = model.tokenize(render_prompt(options.prompt, sample).flattened());
    if (options.probe) {
      const int layer = options.probe->layer;
      const auto states = model.prompt_states(prompt, std::span<const int>(&layer, 1));
      row.q = probe_forward(pool(std::span<const Vector>(states.at(layer)), options.probe->pooling),
                            options.probe->weights);
    }
    row.direction = route(row.q.value_or(0.0), options.policy);

    for (std::size_t r = 0; r < options.n_consistency; ++r) {
      GenerateOptions gen;
      gen.max_tokens = options.max_tokens;
      gen.temperature = options.temperature;
      gen.top_p = options.top_p;
      gen.seed = derive_seed(options.seed + r, SeedStream::Consistency, i);
      gen.sample_id = sample.sample_id;
      gen.rollout_id = static_cast<int>(r);
      if (row.direction != Direction::None) gen.tap_layers = options.policy.layers;

      DelimiterSteerer steerer(options.policy, options.vectors, row.direction);
      Intervenor hook;
      if (row.direction != Direction::None) {
        hook = [&steerer](const DelimiterEvent& e) { return steerer(e); };
      }
      const GenerationResult out = model.generate(prompt, gen, hook);
      row.votes.push_back(parse_verdict(out.text));
      row.texts.push_back(out.text);
      row.generated_tokens += out.generated_tokens();
      row.delimiters += out.n_delimiters;
      row.interventions += out.n_interventions;
    }
    row.prediction = majority_vote(row.votes);
    row.outcome = label_outcome(row.prediction, sample.first_error);
    tokens += row.generated_tokens;
    report.total_delimiters += row.delimiters;
    report.total_interventions += row.interventions;
    results.emplace_back(row.prediction, sample.first_error);
    report.rows.push_back(std::move(row));
  }

  report.metrics = compute_metrics(results);
  report.flops = estimate_flops(desc.active_params, tokens);
  return report;
}

EvalReport evaluate_recorded(std::span<const LabeledSample> samples,
                             std::span<const RolloutRecord> rollouts, std::uint64_t active_params) {
  if (samples.empty()) throw Error(ErrorCode::EmptyEval, "no samples to evaluate");
  std::map<std::string, std::vector<const RolloutRecord*>> by_sample;
  for (const auto& r : rollouts) by_sample[r.sample_id].push_back(&r);

  EvalReport report;
  std::vector<std::pair<Verdict, int>> results;
  for (const auto& sample : samples) {
    EvalRow row;
    row.sample_id = sample.sample_id;
    row.first_error = sample.first_error;
    if (auto it = by_sample.find(sample.sample_id); it != by_sample.end()) {
      for (const RolloutRecord* r : it->second) {
        row.votes.push_back(r->verdict);
        row.texts.push_back(r->raw_text);
        row.delimiters += count_delimiters(r->raw_text);
      }
    }
    row.prediction = majority_vote(row.votes);
    row.outcome = label_outcome(row.prediction, sample.first_error);
    report.total_delimiters += row.delimiters;
    results.emplace_back(row.prediction, sample.first_error);
    report.rows.push_back(std::move(row));
  }
  report.metrics = compute_metrics(results);
  report.flops = estimate_flops(active_params, 0);
  return report;
}

MultiRunSummary summarize_runs(std::span<const MetricSummary> runs) {
  MultiRunSummary s;
  double f1_sum = 0.0, tnr_sum = 0.0, tpr_sum = 0.0;
  std::size_t f1_n = 0, tnr_n = 0, tpr_n = 0;
  for (const auto& r : runs) {
    if (r.f1) { f1_sum += *r.f1; ++f1_n; }
    if (r.tnr) { tnr_sum += *r.tnr; ++tnr_n; }
    if (r.tpr) { tpr_sum += *r.tpr; ++tpr_n; }
  }
  if (f1_n > 0) s.mean_f1 = f1_sum / static_cast<double>(f1_n);
  if (tnr_n > 0) s.mean_tnr = tnr_sum / static_cast<double>(tnr_n);
  if (tpr_n > 0) s.mean_tpr = tpr_sum / static_cast<double>(tpr_n);
  if (s.mean_tnr && s.mean_tpr) s.f1_of_mean_rates = harmonic_f1(*s.mean_tnr, *s.mean_tpr);
  return s;
}

}  // namespace stepsteer
