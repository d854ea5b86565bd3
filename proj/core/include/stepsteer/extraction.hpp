#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "stepsteer/backend/records.hpp"
#include "stepsteer/steer.hpp"
#include "stepsteer/trace.hpp"

namespace stepsteer {

struct Rollout {
  int rollout_id = 0;
  VerificationTrace trace;  // verdict filled
};

// All sampled verification traces for one labelled sample.
struct RolloutSet {
  LabeledSample sample;
  std::vector<Rollout> rollouts;
};

// Groups rollout records under their samples, preserving sample order.
// Samples with no rollouts are dropped; rollouts of unknown samples throw
// ParseError.
std::vector<RolloutSet> assemble_rollout_sets(const std::vector<LabeledSample>& samples,
                                              const std::vector<RolloutRecord>& rollouts);

// Delimiter-token states addressed by (sample, rollout, layer, delimiter
// index). The delimiter index of a record is its rank by token position
// among the records of the same (sample, rollout, layer).
class StateIndex {
 public:
  StateIndex() = default;
  explicit StateIndex(const std::vector<StateRecord>& records);

  const StateRecord* find(const std::string& sample_id, int rollout_id, int layer,
                          std::size_t delimiter_index) const;
  std::size_t size() const noexcept { return n_records_; }

 private:
  std::map<std::tuple<std::string, int, int>, std::vector<StateRecord>> by_trace_;
  std::size_t n_records_ = 0;
};

// Erroneous sample: kept iff some rollout accepts everything (-1) and some
// rollout names the true first error. Correct sample: kept iff some rollout
// accepts and some rollout rejects.
bool filter_contrastive_samples(const RolloutSet& rollouts);

// A collected delimiter state with the provenance needed to audit it.
struct CollectedState {
  HiddenState state;
  std::string sample_id;
  int rollout_id = 0;
  Verdict verdict;
  std::size_t paragraph_index = 0;
  std::size_t delimiter_index = 0;
};

struct CollectStats {
  std::size_t collected = 0;
  std::size_t not_found = 0;       // no paragraph passed marker + cue checks
  std::size_t paragraph_zero = 0;  // located paragraph has no preceding delimiter
  std::size_t missing_record = 0;  // located delimiter has no recorded state

  CollectStats& operator+=(const CollectStats& o) noexcept;
};

// Step the TA role is localized at for a fully correct sample: the most
// frequent rejection index among its rollouts (smallest on ties).
std::optional<int> lenient_reference_step(const RolloutSet& rollouts);

/// Delimiter states that precede the paragraphs playing `role` in the
/// rollouts of one sample.
///
/// FA/TR use the true first error; FR uses each rollout's predicted step;
/// TA uses lenient_reference_step. Rollouts whose paragraph cannot be
/// localized, that land on paragraph 0, or whose state record is missing
/// are skipped and counted in `stats`.
std::vector<CollectedState> collect_states(const RolloutSet& rollouts, const StateIndex& index,
                                           int layer, Role role, const CueTable& cues,
                                           CollectStats* stats = nullptr);

struct RoleSets {
  std::vector<CollectedState> ta, fa, tr, fr;

  std::vector<CollectedState>& of(Role r);
  const std::vector<CollectedState>& of(Role r) const;
};

struct CorpusOptions {
  std::size_t max_erroneous = 500;
  std::size_t max_correct = 500;
};

// Per-layer contrast sets. add_sample may be called concurrently.
class ContrastCorpus {
 public:
  ContrastCorpus() = default;
  ContrastCorpus(ContrastCorpus&& other) noexcept;
  ContrastCorpus& operator=(ContrastCorpus&& other) noexcept;
  // Collects the sample's states at every layer. The sample is kept only if
  // it passes the retention filter and yields both of its roles at every
  // layer. Returns whether it was kept.
  bool add_sample(const RolloutSet& rollouts, const StateIndex& index,
                  std::span<const int> layers, const CueTable& cues);

  // States for one role, sorted by provenance so results do not depend on
  // insertion order.
  std::vector<HiddenState> states(int layer, Role role) const;
  std::vector<CollectedState> collected(int layer, Role role) const;

  std::size_t retained_erroneous() const;
  std::size_t retained_correct() const;
  std::size_t rejected_by_filter() const;
  std::size_t unlocalized() const;
  CollectStats stats() const;
  std::vector<int> layers() const;

  // Direct insertion, used by tests and by callers that assemble sets
  // themselves.
  void insert(int layer, Role role, CollectedState state);

 private:
  mutable std::mutex mu_;
  std::map<int, RoleSets> sets_;
  std::size_t retained_erroneous_ = 0;
  std::size_t retained_correct_ = 0;
  std::size_t rejected_by_filter_ = 0;
  std::size_t unlocalized_ = 0;
  CollectStats stats_;
};

// Walks samples in order, adding until the per-class caps are reached.
ContrastCorpus build_corpus(const std::vector<RolloutSet>& sets, const StateIndex& index,
                            std::span<const int> layers, const CueTable& cues,
                            const CorpusOptions& options = {});

/// strict = mean(H_TR) - mean(H_FA); lenient = mean(H_TA) - mean(H_FR).
/// Throws EmptyContrastSet naming the first empty set.
std::pair<SteeringVector, SteeringVector> extract_direction_pair(const ContrastCorpus& corpus,
                                                                 int layer);
SteeringVector extract_direction(const ContrastCorpus& corpus, int layer, DirectionKind kind);

Json steering_vector_to_json(const SteeringVector& v);
SteeringVector steering_vector_from_json(const Json& obj);
void save_steering_vector(const SteeringVector& v, const std::filesystem::path& path,
                          const Json& config = Json());
SteeringVector load_steering_vector(const std::filesystem::path& path);

// Conventional file name inside a vectors directory, e.g. "strict_L22.json".
std::string steering_vector_filename(DirectionKind kind, int layer);

}  // namespace stepsteer
