#include "stepsteer/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "stepsteer/error.hpp"

namespace stepsteer {

void throw_parse_error(const std::string& detail) {
  throw Error(ErrorCode::ParseError, detail);
}

namespace {

void append_double(std::string& out, double x) {
  if (!std::isfinite(x)) throw_parse_error("cannot serialize a non-finite number");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  out += buf;
}

void dump_into(std::string& out, const Json& v) {
  switch (v.type()) {
    case Json::value_t::object: {
      out += '{';
      bool first = true;
      for (const auto& [key, item] : v.items()) {
        if (!first) out += ',';
        first = false;
        out += Json(key).dump();
        out += ':';
        dump_into(out, item);
      }
      out += '}';
      break;
    }
    case Json::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& item : v) {
        if (!first) out += ',';
        first = false;
        dump_into(out, item);
      }
      out += ']';
      break;
    }
    case Json::value_t::number_float:
      append_double(out, v.get<double>());
      break;
    default:
      out += v.dump();
  }
}

}  // namespace

std::string dump_json(const Json& value) {
  std::string out;
  dump_into(out, value);
  return out;
}

Json vector_to_json(std::span<const double> v) {
  Json arr = Json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

Vector vector_from_json(const Json& value, std::string_view field) {
  if (!value.is_array()) {
    throw_parse_error(std::string(field) + ": expected an array of numbers");
  }
  Vector out;
  out.reserve(value.size());
  for (const auto& x : value) {
    if (!x.is_number()) {
      throw_parse_error(std::string(field) + ": non-numeric element");
    }
    out.push_back(x.get<double>());
  }
  return out;
}

void parse_jsonl(std::string_view text, const std::string& source_name,
                 const std::function<void(const Json&, std::size_t)>& on_line) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw_parse_error(source_name + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) {
      throw_parse_error(source_name + ":" + std::to_string(line_no) +
                        ": expected a JSON object");
    }
    if (obj.size() == 1 && obj.contains("config")) continue;
    try {
      on_line(obj, line_no);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ParseError) throw;
      throw_parse_error(source_name + ":" + std::to_string(line_no) + ": " + e.detail());
    }
  }
}

void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const Json&, std::size_t)>& on_line) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  parse_jsonl(buf.str(), path.string(), on_line);
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw_parse_error(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

void write_jsonl(const std::filesystem::path& path, const Json& config,
                 const std::vector<Json>& rows) {
  std::string text = dump_json(Json{{"config", config}});
  text += '\n';
  for (const auto& row : rows) {
    text += dump_json(row);
    text += '\n';
  }
  write_text_file(path, text);
}

}  // namespace stepsteer
