#include "stepsteer/record.hpp"

#include "stepsteer/error.hpp"
#include "stepsteer/random.hpp"

namespace stepsteer {

Json RecordOptions::to_json() const {
  return Json{{"n_rollouts", n_rollouts},       {"temperature", temperature},
              {"top_p", top_p},                 {"max_tokens", max_tokens},
              {"seed", seed},                   {"tap_layers", tap_layers},
              {"prompt", std::string(to_string(prompt))}};
}

RecordResult record_rollouts(std::span<const LabeledSample> samples, const ToyModel& model,
                             const RecordOptions& options) {
  if (options.n_rollouts == 0 || options.n_rollouts > (1u << 20)) {
    throw Error(ErrorCode::ConfigError, "n_rollouts must lie in [1, 2^20]");
  }
  RecordResult result;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const LabeledSample& sample = samples[i];
    const std::vector<int> prompt = model.tokenize(render_prompt(options.prompt, sample).flattened());
    for (std::size_t r = 0; r < options.n_rollouts; ++r) {
      GenerateOptions gen;
      gen.max_tokens = options.max_tokens;
      gen.temperature = options.temperature;
      gen.top_p = options.top_p;
      gen.seed = derive_seed(options.seed, SeedStream::Rollout, (std::uint64_t{i} << 20) | r);
      gen.tap_layers = options.tap_layers;
      gen.sample_id = sample.sample_id;
      gen.rollout_id = static_cast<int>(r);
      GenerationResult out = model.generate(prompt, gen);
      result.generated_tokens += out.generated_tokens();
      result.rollouts.push_back(
          RolloutRecord{sample.sample_id, static_cast<int>(r), out.text, parse_verdict(out.text)});
      for (auto& e : out.events) result.events.push_back(std::move(e));
    }
  }
  return result;
}

}  // namespace stepsteer
