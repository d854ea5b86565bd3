#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stepsteer/json_io.hpp"
#include "stepsteer/steer.hpp"
#include "stepsteer/trace.hpp"

namespace stepsteer {

// States of one generated delimiter token, keyed by layer.
struct DelimiterEvent {
  std::string sample_id;
  int rollout_id = 0;
  std::int64_t token_position = 0;
  std::map<int, Vector> states;
  std::optional<Role> role;

  bool operator==(const DelimiterEvent&) const = default;
};

// Per-layer replacement states for one delimiter; empty means pass-through.
struct InterventionDecision {
  std::map<int, Vector> replacements;

  bool pass() const noexcept { return replacements.empty(); }
};

// One line of the hidden-state record file.
struct StateRecord {
  std::string sample_id;
  int rollout_id = 0;
  std::int64_t token_position = 0;
  int layer = 0;
  std::optional<Role> role;
  Vector vector;
};

Json state_record_to_json(const StateRecord& r);
StateRecord state_record_from_json(const Json& obj);

// One record per (event, layer), layers ascending.
std::vector<StateRecord> flatten_events(const std::vector<DelimiterEvent>& events);

// One line per (event, layer), layers ascending.
void replay_store(const std::vector<DelimiterEvent>& events,
                  const std::filesystem::path& path, const Json& config = Json::object());
// Consecutive lines sharing (sample_id, rollout_id, token_position) form one
// event. Malformed lines throw ParseError with the line number.
std::vector<DelimiterEvent> replay_load(const std::filesystem::path& path);
std::vector<DelimiterEvent> replay_parse(std::string_view text);

std::vector<StateRecord> load_state_records(const std::filesystem::path& path);

// One line of the rollout trace file.
struct RolloutRecord {
  std::string sample_id;
  int rollout_id = 0;
  std::string raw_text;
  Verdict verdict;
};

Json rollout_record_to_json(const RolloutRecord& r);
RolloutRecord rollout_record_from_json(const Json& obj);
std::vector<RolloutRecord> load_rollouts(const std::filesystem::path& path);
void store_rollouts(const std::vector<RolloutRecord>& rollouts,
                    const std::filesystem::path& path, const Json& config = Json::object());

}  // namespace stepsteer
