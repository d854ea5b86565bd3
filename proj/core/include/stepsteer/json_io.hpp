#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepsteer/vector_ops.hpp"

namespace stepsteer {

using Json = nlohmann::json;

// Compact JSON with every floating-point value written at 17 significant
// digits, which round-trips IEEE doubles exactly. Non-finite values throw
// ParseError.
std::string dump_json(const Json& value);

Json vector_to_json(std::span<const double> v);
// Throws ParseError naming `field` if `value` is not an array of numbers.
Vector vector_from_json(const Json& value, std::string_view field);

// Calls `on_line(object, line_number)` for each non-blank line. Lines that
// hold only a "config" key are run headers and are skipped. Malformed JSON
// throws ParseError naming the 1-based line number.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const Json&, std::size_t)>& on_line);

// Same as read_jsonl over an in-memory document.
void parse_jsonl(std::string_view text, const std::string& source_name,
                 const std::function<void(const Json&, std::size_t)>& on_line);

Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Writes a JSONL file whose first line is {"config": ...}.
void write_jsonl(const std::filesystem::path& path, const Json& config,
                 const std::vector<Json>& rows);

// Accessors that turn nlohmann type errors into ParseError with context.
[[noreturn]] void throw_parse_error(const std::string& detail);

template <typename T>
T json_field(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw_parse_error(where + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw_parse_error(where + ": bad field '" + key + "': " + e.what());
  }
}

}  // namespace stepsteer
