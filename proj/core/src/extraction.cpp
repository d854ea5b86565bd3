#include "stepsteer/extraction.hpp"

#include <algorithm>
#include <unordered_map>

#include "stepsteer/error.hpp"

namespace stepsteer {

std::vector<RolloutSet> assemble_rollout_sets(const std::vector<LabeledSample>& samples,
                                              const std::vector<RolloutRecord>& rollouts) {
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<RolloutSet> sets;
  sets.reserve(samples.size());
  for (const auto& s : samples) {
    if (!slot.emplace(s.sample_id, sets.size()).second) {
      throw Error(ErrorCode::ParseError, "duplicate sample_id '" + s.sample_id + "'");
    }
    sets.push_back(RolloutSet{s, {}});
  }
  for (const auto& r : rollouts) {
    auto it = slot.find(r.sample_id);
    if (it == slot.end()) {
      throw Error(ErrorCode::ParseError, "rollout for unknown sample '" + r.sample_id + "'");
    }
    Rollout rollout{r.rollout_id, segment_trace(r.raw_text)};
    rollout.trace.verdict = r.verdict;
    sets[it->second].rollouts.push_back(std::move(rollout));
  }
  std::erase_if(sets, [](const RolloutSet& s) { return s.rollouts.empty(); });
  return sets;
}

StateIndex::StateIndex(const std::vector<StateRecord>& records) {
  for (const auto& r : records) {
    by_trace_[{r.sample_id, r.rollout_id, r.layer}].push_back(r);
  }
  for (auto& [key, list] : by_trace_) {
    std::stable_sort(list.begin(), list.end(), [](const StateRecord& a, const StateRecord& b) {
      return a.token_position < b.token_position;
    });
  }
  n_records_ = records.size();
}

const StateRecord* StateIndex::find(const std::string& sample_id, int rollout_id, int layer,
                                    std::size_t delimiter_index) const {
  auto it = by_trace_.find({sample_id, rollout_id, layer});
  if (it == by_trace_.end() || delimiter_index >= it->second.size()) return nullptr;
  return &it->second[delimiter_index];
}

bool filter_contrastive_samples(const RolloutSet& rollouts) {
  const int first_error = rollouts.sample.first_error;
  bool accepts = false;
  bool rejects = false;
  for (const auto& r : rollouts.rollouts) {
    const Verdict v = r.trace.verdict;
    if (!v) continue;
    if (*v == -1) accepts = true;
    if (first_error >= 0 ? *v == first_error : *v >= 0) rejects = true;
  }
  return accepts && rejects;
}

CollectStats& CollectStats::operator+=(const CollectStats& o) noexcept {
  collected += o.collected;
  not_found += o.not_found;
  paragraph_zero += o.paragraph_zero;
  missing_record += o.missing_record;
  return *this;
}

std::optional<int> lenient_reference_step(const RolloutSet& rollouts) {
  std::map<int, int> counts;
  for (const auto& r : rollouts.rollouts) {
    if (r.trace.verdict && *r.trace.verdict >= 0) ++counts[*r.trace.verdict];
  }
  std::optional<int> best;
  int best_count = 0;
  for (const auto& [step, count] : counts) {
    if (count > best_count) {
      best = step;
      best_count = count;
    }
  }
  return best;
}

std::vector<CollectedState> collect_states(const RolloutSet& rollouts, const StateIndex& index,
                                           int layer, Role role, const CueTable& cues,
                                           CollectStats* stats) {
  CollectStats local;
  std::vector<CollectedState> out;
  const LabeledSample& sample = rollouts.sample;
  const bool erroneous = !sample.fully_correct();

  std::optional<int> ta_step;
  if (role == Role::TA && !erroneous) ta_step = lenient_reference_step(rollouts);

  for (const auto& r : rollouts.rollouts) {
    const Verdict v = r.trace.verdict;
    if (!v) continue;

    std::optional<int> step;
    CueClass target = CueClass::Acceptance;
    switch (role) {
      case Role::FA:
        if (erroneous && *v == -1) step = sample.first_error;
        break;
      case Role::TR:
        if (erroneous && *v == sample.first_error) {
          step = sample.first_error;
          target = CueClass::Rejection;
        }
        break;
      case Role::TA:
        if (!erroneous && *v == -1) step = ta_step;
        break;
      case Role::FR:
        if (!erroneous && *v >= 0) {
          step = *v;
          target = CueClass::Rejection;
        }
        break;
      case Role::Unlabeled:
        break;
    }
    if (!step) continue;

    const auto paragraph = locate_verification_paragraph(r.trace, *step, target, cues);
    if (!paragraph) {
      ++local.not_found;
      continue;
    }
    if (*paragraph == 0) {
      ++local.paragraph_zero;
      continue;
    }
    const std::size_t delimiter = *paragraph - 1;
    const StateRecord* rec = index.find(sample.sample_id, r.rollout_id, layer, delimiter);
    if (rec == nullptr) {
      ++local.missing_record;
      continue;
    }
    CollectedState c;
    c.state = HiddenState{layer, rec->token_position, rec->vector, role};
    c.sample_id = sample.sample_id;
    c.rollout_id = r.rollout_id;
    c.verdict = v;
    c.paragraph_index = *paragraph;
    c.delimiter_index = delimiter;
    out.push_back(std::move(c));
    ++local.collected;
  }
  if (stats != nullptr) *stats += local;
  return out;
}

std::vector<CollectedState>& RoleSets::of(Role r) {
  switch (r) {
    case Role::TA: return ta;
    case Role::FA: return fa;
    case Role::TR: return tr;
    case Role::FR: return fr;
    case Role::Unlabeled: break;
  }
  throw Error(ErrorCode::ConfigError, "unlabeled states have no contrast set");
}

const std::vector<CollectedState>& RoleSets::of(Role r) const {
  return const_cast<RoleSets*>(this)->of(r);
}

bool ContrastCorpus::add_sample(const RolloutSet& rollouts, const StateIndex& index,
                                std::span<const int> layers, const CueTable& cues) {
  if (!filter_contrastive_samples(rollouts)) {
    std::lock_guard lock(mu_);
    ++rejected_by_filter_;
    return false;
  }
  const bool erroneous = !rollouts.sample.fully_correct();
  const Role accept_role = erroneous ? Role::FA : Role::TA;
  const Role reject_role = erroneous ? Role::TR : Role::FR;

  CollectStats local;
  std::map<int, std::pair<std::vector<CollectedState>, std::vector<CollectedState>>> found;
  bool complete = !layers.empty();
  for (int layer : layers) {
    auto accepted = collect_states(rollouts, index, layer, accept_role, cues, &local);
    auto rejected = collect_states(rollouts, index, layer, reject_role, cues, &local);
    if (accepted.empty() || rejected.empty()) complete = false;
    found[layer] = {std::move(accepted), std::move(rejected)};
  }

  std::lock_guard lock(mu_);
  stats_ += local;
  if (!complete) {
    ++unlocalized_;
    return false;
  }
  for (auto& [layer, pair] : found) {
    auto& sets = sets_[layer];
    auto& acc = sets.of(accept_role);
    auto& rej = sets.of(reject_role);
    std::move(pair.first.begin(), pair.first.end(), std::back_inserter(acc));
    std::move(pair.second.begin(), pair.second.end(), std::back_inserter(rej));
  }
  if (erroneous) {
    ++retained_erroneous_;
  } else {
    ++retained_correct_;
  }
  return true;
}

void ContrastCorpus::insert(int layer, Role role, CollectedState state) {
  std::lock_guard lock(mu_);
  state.state.layer = layer;
  state.state.role = role;
  sets_[layer].of(role).push_back(std::move(state));
}

std::vector<CollectedState> ContrastCorpus::collected(int layer, Role role) const {
  std::lock_guard lock(mu_);
  auto it = sets_.find(layer);
  if (it == sets_.end()) return {};
  std::vector<CollectedState> out = it->second.of(role);
  std::sort(out.begin(), out.end(), [](const CollectedState& a, const CollectedState& b) {
    return std::tie(a.sample_id, a.rollout_id, a.state.position) <
           std::tie(b.sample_id, b.rollout_id, b.state.position);
  });
  return out;
}

std::vector<HiddenState> ContrastCorpus::states(int layer, Role role) const {
  std::vector<HiddenState> out;
  for (auto& c : collected(layer, role)) out.push_back(std::move(c.state));
  return out;
}

std::size_t ContrastCorpus::retained_erroneous() const {
  std::lock_guard lock(mu_);
  return retained_erroneous_;
}

std::size_t ContrastCorpus::retained_correct() const {
  std::lock_guard lock(mu_);
  return retained_correct_;
}

std::size_t ContrastCorpus::rejected_by_filter() const {
  std::lock_guard lock(mu_);
  return rejected_by_filter_;
}

ContrastCorpus::ContrastCorpus(ContrastCorpus&& other) noexcept {
  std::lock_guard lock(other.mu_);
  sets_ = std::move(other.sets_);
  retained_erroneous_ = other.retained_erroneous_;
  retained_correct_ = other.retained_correct_;
  rejected_by_filter_ = other.rejected_by_filter_;
  unlocalized_ = other.unlocalized_;
  stats_ = other.stats_;
}

ContrastCorpus& ContrastCorpus::operator=(ContrastCorpus&& other) noexcept {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  sets_ = std::move(other.sets_);
  retained_erroneous_ = other.retained_erroneous_;
  retained_correct_ = other.retained_correct_;
  rejected_by_filter_ = other.rejected_by_filter_;
  unlocalized_ = other.unlocalized_;
  stats_ = other.stats_;
  return *this;
}

std::size_t ContrastCorpus::unlocalized() const {
  std::lock_guard lock(mu_);
  return unlocalized_;
}

CollectStats ContrastCorpus::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::vector<int> ContrastCorpus::layers() const {
  std::lock_guard lock(mu_);
  std::vector<int> out;
  for (const auto& entry : sets_) out.push_back(entry.first);
  return out;
}

ContrastCorpus build_corpus(const std::vector<RolloutSet>& sets, const StateIndex& index,
                            std::span<const int> layers, const CueTable& cues,
                            const CorpusOptions& options) {
  ContrastCorpus corpus;
  for (const auto& s : sets) {
    const bool erroneous = !s.sample.fully_correct();
    if (erroneous && corpus.retained_erroneous() >= options.max_erroneous) continue;
    if (!erroneous && corpus.retained_correct() >= options.max_correct) continue;
    corpus.add_sample(s, index, layers, cues);
  }
  return corpus;
}

namespace {

const char* set_name(Role r) {
  switch (r) {
    case Role::TA: return "H_TA";
    case Role::FA: return "H_FA";
    case Role::TR: return "H_TR";
    case Role::FR: return "H_FR";
    case Role::Unlabeled: break;
  }
  return "H_?";
}

SteeringVector contrast(const ContrastCorpus& corpus, int layer, Role positive, Role negative,
                        DirectionKind kind) {
  const auto pos = corpus.states(layer, positive);
  const auto neg = corpus.states(layer, negative);
  for (const auto& [states, role] : {std::pair{&pos, positive}, std::pair{&neg, negative}}) {
    if (states->empty()) {
      throw Error(ErrorCode::EmptyContrastSet, std::string(set_name(role)) + " is empty at layer " +
                                                   std::to_string(layer));
    }
  }
  SteeringVector v = build_steering_vector(pos, neg, kind);
  v.layer = layer;
  return v;
}

}  // namespace

SteeringVector extract_direction(const ContrastCorpus& corpus, int layer, DirectionKind kind) {
  if (kind == DirectionKind::Strict) {
    return contrast(corpus, layer, Role::TR, Role::FA, DirectionKind::Strict);
  }
  return contrast(corpus, layer, Role::TA, Role::FR, DirectionKind::Lenient);
}

std::pair<SteeringVector, SteeringVector> extract_direction_pair(const ContrastCorpus& corpus,
                                                                 int layer) {
  auto strict = extract_direction(corpus, layer, DirectionKind::Strict);
  auto lenient = extract_direction(corpus, layer, DirectionKind::Lenient);
  return {std::move(strict), std::move(lenient)};
}

Json steering_vector_to_json(const SteeringVector& v) {
  return Json{{"kind", std::string(to_string(v.kind))},
              {"layer", v.layer},
              {"n_positive", v.n_positive},
              {"n_negative", v.n_negative},
              {"direction", vector_to_json(v.direction)}};
}

SteeringVector steering_vector_from_json(const Json& obj) {
  SteeringVector v;
  const auto kind = json_field<std::string>(obj, "kind", "steering vector");
  const auto parsed = direction_kind_from_string(kind);
  if (!parsed) throw_parse_error("steering vector: unknown kind '" + kind + "'");
  v.kind = *parsed;
  v.layer = json_field<int>(obj, "layer", "steering vector");
  v.n_positive = json_field<std::size_t>(obj, "n_positive", "steering vector");
  v.n_negative = json_field<std::size_t>(obj, "n_negative", "steering vector");
  if (!obj.contains("direction")) throw_parse_error("steering vector: missing field 'direction'");
  v.direction = vector_from_json(obj.at("direction"), "direction");
  if (v.direction.empty() || !all_finite(v.direction)) {
    throw_parse_error("steering vector: direction must be a non-empty finite array");
  }
  if (v.n_positive < 1 || v.n_negative < 1) {
    throw_parse_error("steering vector: counts must be at least 1");
  }
  return v;
}

void save_steering_vector(const SteeringVector& v, const std::filesystem::path& path,
                          const Json& config) {
  Json j = steering_vector_to_json(v);
  if (!config.is_null()) j["config"] = config;
  write_text_file(path, dump_json(j) + "\n");
}

SteeringVector load_steering_vector(const std::filesystem::path& path) {
  return steering_vector_from_json(read_json_file(path));
}

std::string steering_vector_filename(DirectionKind kind, int layer) {
  return std::string(to_string(kind)) + "_L" + std::to_string(layer) + ".json";
}

}  // namespace stepsteer
