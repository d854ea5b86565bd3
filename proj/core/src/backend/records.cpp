#include "stepsteer/backend/records.hpp"

#include "stepsteer/error.hpp"

namespace stepsteer {

Json state_record_to_json(const StateRecord& r) {
  Json j{{"sample_id", r.sample_id},
         {"rollout_id", r.rollout_id},
         {"token_position", r.token_position},
         {"layer", r.layer},
         {"vector", vector_to_json(r.vector)}};
  if (r.role) j["role_tag"] = std::string(to_string(*r.role));
  return j;
}

StateRecord state_record_from_json(const Json& obj) {
  StateRecord r;
  r.sample_id = json_field<std::string>(obj, "sample_id", "state record");
  r.rollout_id = json_field<int>(obj, "rollout_id", "state record");
  r.token_position = json_field<std::int64_t>(obj, "token_position", "state record");
  r.layer = json_field<int>(obj, "layer", "state record");
  if (!obj.contains("vector")) throw_parse_error("state record: missing field 'vector'");
  r.vector = vector_from_json(obj.at("vector"), "vector");
  if (r.vector.empty()) throw_parse_error("state record: empty vector");
  if (!all_finite(r.vector)) throw_parse_error("state record: non-finite vector");
  if (obj.contains("role_tag") && !obj.at("role_tag").is_null()) {
    const auto tag = json_field<std::string>(obj, "role_tag", "state record");
    auto role = role_from_string(tag);
    if (!role) throw_parse_error("state record: unknown role_tag '" + tag + "'");
    r.role = *role;
  }
  return r;
}

std::vector<StateRecord> flatten_events(const std::vector<DelimiterEvent>& events) {
  std::vector<StateRecord> out;
  for (const auto& e : events) {
    for (const auto& [layer, values] : e.states) {
      out.push_back(StateRecord{e.sample_id, e.rollout_id, e.token_position, layer, e.role, values});
    }
  }
  return out;
}

void replay_store(const std::vector<DelimiterEvent>& events,
                  const std::filesystem::path& path, const Json& config) {
  std::vector<Json> rows;
  for (const auto& r : flatten_events(events)) rows.push_back(state_record_to_json(r));
  write_jsonl(path, config, rows);
}

namespace {

std::vector<DelimiterEvent> group_events(std::vector<StateRecord> records) {
  std::vector<DelimiterEvent> events;
  for (auto& r : records) {
    const bool extends = !events.empty() && events.back().sample_id == r.sample_id &&
                         events.back().rollout_id == r.rollout_id &&
                         events.back().token_position == r.token_position &&
                         !events.back().states.contains(r.layer);
    if (!extends) {
      DelimiterEvent e;
      e.sample_id = r.sample_id;
      e.rollout_id = r.rollout_id;
      e.token_position = r.token_position;
      e.role = r.role;
      events.push_back(std::move(e));
    }
    events.back().states.emplace(r.layer, std::move(r.vector));
  }
  return events;
}

}  // namespace

std::vector<StateRecord> load_state_records(const std::filesystem::path& path) {
  std::vector<StateRecord> out;
  read_jsonl(path, [&](const Json& obj, std::size_t) { out.push_back(state_record_from_json(obj)); });
  return out;
}

std::vector<DelimiterEvent> replay_load(const std::filesystem::path& path) {
  return group_events(load_state_records(path));
}

std::vector<DelimiterEvent> replay_parse(std::string_view text) {
  std::vector<StateRecord> records;
  parse_jsonl(text, "<memory>", [&](const Json& obj, std::size_t) {
    records.push_back(state_record_from_json(obj));
  });
  return group_events(std::move(records));
}

Json rollout_record_to_json(const RolloutRecord& r) {
  Json j{{"sample_id", r.sample_id}, {"rollout_id", r.rollout_id}, {"raw_text", r.raw_text}};
  j["verdict"] = r.verdict ? Json(*r.verdict) : Json(nullptr);
  return j;
}

RolloutRecord rollout_record_from_json(const Json& obj) {
  RolloutRecord r;
  r.sample_id = json_field<std::string>(obj, "sample_id", "rollout record");
  r.rollout_id = json_field<int>(obj, "rollout_id", "rollout record");
  r.raw_text = json_field<std::string>(obj, "raw_text", "rollout record");
  // A missing verdict is re-derived from the text.
  if (obj.contains("verdict") && !obj.at("verdict").is_null()) {
    r.verdict = json_field<int>(obj, "verdict", "rollout record");
  } else if (!obj.contains("verdict")) {
    r.verdict = parse_verdict(r.raw_text);
  }
  return r;
}

std::vector<RolloutRecord> load_rollouts(const std::filesystem::path& path) {
  std::vector<RolloutRecord> out;
  read_jsonl(path, [&](const Json& obj, std::size_t) { out.push_back(rollout_record_from_json(obj)); });
  return out;
}

void store_rollouts(const std::vector<RolloutRecord>& rollouts,
                    const std::filesystem::path& path, const Json& config) {
  std::vector<Json> rows;
  rows.reserve(rollouts.size());
  for (const auto& r : rollouts) rows.push_back(rollout_record_to_json(r));
  write_jsonl(path, config, rows);
}

}  // namespace stepsteer
