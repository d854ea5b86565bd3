#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stepsteer/backend/records.hpp"
#include "stepsteer/backend/toy_model.hpp"
#include "stepsteer/prompts.hpp"

namespace stepsteer {

// Sampling defaults follow the contrastive recording setup: 16 traces per
// problem at temperature 0.7, top-p 0.8.
struct RecordOptions {
  std::size_t n_rollouts = 16;
  double temperature = 0.7;
  double top_p = 0.8;
  std::size_t max_tokens = 96;
  std::uint64_t seed = 0;
  std::vector<int> tap_layers;
  PromptKind prompt = PromptKind::Basic;

  Json to_json() const;
};

struct RecordResult {
  std::vector<RolloutRecord> rollouts;
  std::vector<DelimiterEvent> events;
  std::uint64_t generated_tokens = 0;
};

/// Samples un-steered verification traces and the delimiter states of the
/// tapped layers. Rollout r of sample i uses seed
/// derive_seed(seed, SeedStream::Rollout, i * 2^20 + r).
RecordResult record_rollouts(std::span<const LabeledSample> samples, const ToyModel& model,
                             const RecordOptions& options);

}  // namespace stepsteer
