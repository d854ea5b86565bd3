#include "stepsteer/prompts.hpp"

#include <array>

#include "stepsteer/error.hpp"

namespace stepsteer {

namespace assets {
extern const std::string_view prompt_basic;
extern const std::string_view prompt_opt_processbench;
extern const std::string_view prompt_opt_hard2verify;
extern const std::string_view prompt_fare;
extern const std::string_view cues_default;
}  // namespace assets

namespace {

constexpr std::array<std::pair<PromptKind, std::string_view>, 4> kNames{{
    {PromptKind::Basic, "basic"},
    {PromptKind::OptProcessBench, "opt-processbench"},
    {PromptKind::OptHard2Verify, "opt-hard2verify"},
    {PromptKind::Fare, "fare"},
}};

constexpr std::string_view kSystemHeader = "### System Prompt\n";
constexpr std::string_view kUserHeader = "### User Prompt\n";

std::string trim_newlines(std::string_view s) {
  while (!s.empty() && s.front() == '\n') s.remove_prefix(1);
  while (!s.empty() && s.back() == '\n') s.remove_suffix(1);
  return std::string(s);
}

// Python str.format-style substitution restricted to named fields, plus the
// "\\" escape the templates inherit from their source string literals.
std::string substitute(std::string_view tmpl,
                       const std::vector<std::pair<std::string_view, std::string>>& fields) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  for (std::size_t i = 0; i < tmpl.size();) {
    const char c = tmpl[i];
    if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      out += '{';
      i += 2;
    } else if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out += '}';
      i += 2;
    } else if (c == '\\' && i + 1 < tmpl.size() && tmpl[i + 1] == '\\') {
      out += '\\';
      i += 2;
    } else if (c == '{') {
      const auto close = tmpl.find('}', i);
      if (close == std::string_view::npos) {
        throw Error(ErrorCode::ConfigError, "unterminated template field");
      }
      const std::string_view name = tmpl.substr(i + 1, close - i - 1);
      bool found = false;
      for (const auto& [key, value] : fields) {
        if (key == name) {
          out += value;
          found = true;
          break;
        }
      }
      if (!found) {
        throw Error(ErrorCode::ConfigError, "unknown template field {" + std::string(name) + "}");
      }
      i = close + 1;
    } else {
      out += c;
      ++i;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(PromptKind k) noexcept {
  for (const auto& [kind, name] : kNames) {
    if (kind == k) return name;
  }
  return "basic";
}

std::optional<PromptKind> prompt_kind_from_string(std::string_view s) noexcept {
  for (const auto& [kind, name] : kNames) {
    if (name == s) return kind;
  }
  return std::nullopt;
}

std::vector<std::string_view> prompt_kind_names() {
  std::vector<std::string_view> out;
  for (const auto& entry : kNames) out.push_back(entry.second);
  return out;
}

std::string_view prompt_template_text(PromptKind k) {
  switch (k) {
    case PromptKind::Basic: return assets::prompt_basic;
    case PromptKind::OptProcessBench: return assets::prompt_opt_processbench;
    case PromptKind::OptHard2Verify: return assets::prompt_opt_hard2verify;
    case PromptKind::Fare: return assets::prompt_fare;
  }
  return assets::prompt_basic;
}

std::string_view default_cue_table_text() { return assets::cues_default; }

std::string RenderedPrompt::flattened() const {
  if (system.empty()) return user;
  return system + "\n\n" + user;
}

RenderedPrompt render_prompt(PromptKind k, const LabeledSample& sample) {
  const std::string_view text = prompt_template_text(k);
  std::string_view system_part;
  std::string_view user_part = text;
  if (const auto u = text.find(kUserHeader); u != std::string_view::npos) {
    user_part = text.substr(u + kUserHeader.size());
    if (const auto s = text.find(kSystemHeader); s != std::string_view::npos && s < u) {
      system_part = text.substr(s + kSystemHeader.size(), u - s - kSystemHeader.size());
    }
  }

  const std::string tagged = tag_steps(sample.steps);
  std::string joined_steps;
  for (std::size_t i = 0; i < sample.steps.size(); ++i) {
    joined_steps += "<step " + std::to_string(i) + ">\n" + sample.steps[i] + "\n";
  }
  const std::vector<std::pair<std::string_view, std::string>> fields{
      {"problem", sample.problem},
      {"tagged_response", tagged},
      {"instruction", sample.problem},
      {"response", joined_steps},
  };

  RenderedPrompt out;
  out.system = trim_newlines(substitute(system_part, fields));
  out.user = trim_newlines(substitute(user_part, fields));
  return out;
}

}  // namespace stepsteer
