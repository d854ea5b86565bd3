#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stepsteer/trace.hpp"

namespace stepsteer {

// Verification prompt templates shipped as read-only assets.
enum class PromptKind { Basic, OptProcessBench, OptHard2Verify, Fare };

std::string_view to_string(PromptKind k) noexcept;
std::optional<PromptKind> prompt_kind_from_string(std::string_view s) noexcept;
std::vector<std::string_view> prompt_kind_names();

// Raw asset text, exactly as shipped.
std::string_view prompt_template_text(PromptKind k);

struct RenderedPrompt {
  std::string system;  // empty when the template has no system section
  std::string user;

  // System and user text joined the way the toy backend consumes them.
  std::string flattened() const;
};

// Fills {problem}/{tagged_response} (or {instruction}/{response}) and
// resolves the template's format escapes ("{{" "}}" "\\").
RenderedPrompt render_prompt(PromptKind k, const LabeledSample& sample);

// Default cue table asset (JSON).
std::string_view default_cue_table_text();

}  // namespace stepsteer
