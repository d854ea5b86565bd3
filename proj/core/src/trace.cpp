#include "stepsteer/trace.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "stepsteer/error.hpp"
#include "stepsteer/prompts.hpp"

namespace stepsteer {

void LabeledSample::validate() const {
  if (steps.empty()) {
    throw Error(ErrorCode::ParseError, "sample '" + sample_id + "' has no steps");
  }
  const int n = static_cast<int>(steps.size());
  if (first_error < -1 || first_error >= n) {
    throw Error(ErrorCode::ParseError, "sample '" + sample_id + "' first_error " +
                                           std::to_string(first_error) +
                                           " outside [-1, " + std::to_string(n - 1) + "]");
  }
}

LabeledSample sample_from_json(const Json& obj) {
  LabeledSample s;
  s.sample_id = json_field<std::string>(obj, "sample_id", "sample");
  s.problem = json_field<std::string>(obj, "problem", "sample " + s.sample_id);
  s.steps = json_field<std::vector<std::string>>(obj, "steps", "sample " + s.sample_id);
  s.first_error = json_field<int>(obj, "first_error", "sample " + s.sample_id);
  s.validate();
  return s;
}

Json sample_to_json(const LabeledSample& s) {
  return Json{{"sample_id", s.sample_id},
              {"problem", s.problem},
              {"steps", s.steps},
              {"first_error", s.first_error}};
}

std::vector<LabeledSample> load_samples(const std::filesystem::path& path) {
  std::vector<LabeledSample> out;
  read_jsonl(path, [&](const Json& obj, std::size_t) { out.push_back(sample_from_json(obj)); });
  return out;
}

VerificationTrace segment_trace(std::string_view raw_text) {
  VerificationTrace t;
  t.raw_text = std::string(raw_text);
  std::size_t start = 0;
  while (true) {
    const std::size_t hit = raw_text.find(kParagraphDelimiter, start);
    if (hit == std::string_view::npos) break;
    t.paragraphs.emplace_back(raw_text.substr(start, hit - start));
    t.delimiter_positions.push_back(hit);
    start = hit + kParagraphDelimiter.size();
  }
  t.paragraphs.emplace_back(raw_text.substr(start));
  return t;
}

std::size_t count_delimiters(std::string_view text) {
  std::size_t n = 0;
  std::size_t start = 0;
  while ((start = text.find(kParagraphDelimiter, start)) != std::string_view::npos) {
    ++n;
    start += kParagraphDelimiter.size();
  }
  return n;
}

Verdict parse_verdict(std::string_view raw_text) {
  constexpr std::string_view marker = "\\boxed{";
  const std::size_t at = raw_text.rfind(marker);
  if (at == std::string_view::npos) return std::nullopt;
  const std::size_t begin = at + marker.size();
  const std::size_t close = raw_text.find('}', begin);
  if (close == std::string_view::npos) return std::nullopt;
  std::string_view body = raw_text.substr(begin, close - begin);
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.front()))) body.remove_prefix(1);
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.back()))) body.remove_suffix(1);
  if (body.empty()) return std::nullopt;
  int value = 0;
  const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
  if (ec != std::errc() || ptr != body.data() + body.size()) return std::nullopt;
  if (value < -1) return std::nullopt;
  return value;
}

std::string_view to_string(ParagraphClass c) noexcept {
  switch (c) {
    case ParagraphClass::Acceptance: return "acceptance";
    case ParagraphClass::Rejection: return "rejection";
    case ParagraphClass::Ambiguous: return "ambiguous";
  }
  return "ambiguous";
}

std::vector<std::string> expand_cue_pattern(std::string_view pattern) {
  std::vector<std::string> phrases{""};
  std::size_t start = 0;
  bool first_word = true;
  while (start <= pattern.size()) {
    std::size_t end = pattern.find(' ', start);
    if (end == std::string_view::npos) end = pattern.size();
    const std::string_view word = pattern.substr(start, end - start);

    std::vector<std::string> alternatives;
    std::size_t a = 0;
    while (true) {
      const std::size_t slash = word.find('/', a);
      alternatives.emplace_back(word.substr(a, slash == std::string_view::npos ? word.npos : slash - a));
      if (slash == std::string_view::npos) break;
      a = slash + 1;
    }

    std::vector<std::string> next;
    for (const auto& prefix : phrases) {
      for (const auto& alt : alternatives) {
        next.push_back(first_word ? alt : prefix + " " + alt);
      }
    }
    phrases = std::move(next);
    first_word = false;
    start = end + 1;
  }
  return phrases;
}

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> expand_all(const std::vector<std::string>& patterns) {
  std::vector<std::string> out;
  for (const auto& p : patterns) {
    for (auto& phrase : expand_cue_pattern(p)) {
      std::string lowered = lowercase(phrase);
      if (std::find(out.begin(), out.end(), lowered) == out.end()) out.push_back(std::move(lowered));
    }
  }
  return out;
}

bool contains_any(const std::string& haystack, const std::vector<std::string>& needles) {
  for (const auto& n : needles) {
    if (!n.empty() && haystack.find(lowercase(n)) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

CueTable CueTable::from_json(const Json& obj) {
  CueTable t;
  t.acceptance_required = expand_all(json_field<std::vector<std::string>>(obj, "acceptance_required", "cue table"));
  t.acceptance_excluded = expand_all(json_field<std::vector<std::string>>(obj, "acceptance_excluded", "cue table"));
  t.rejection_required = expand_all(json_field<std::vector<std::string>>(obj, "rejection_required", "cue table"));
  t.rejection_excluded = expand_all(json_field<std::vector<std::string>>(obj, "rejection_excluded", "cue table"));
  return t;
}

CueTable CueTable::defaults() {
  static const CueTable table = from_json(Json::parse(default_cue_table_text()));
  return table;
}

CueTable CueTable::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

Json CueTable::to_json() const {
  return Json{{"acceptance_required", acceptance_required},
              {"acceptance_excluded", acceptance_excluded},
              {"rejection_required", rejection_required},
              {"rejection_excluded", rejection_excluded}};
}

ParagraphClass classify_paragraph(std::string_view paragraph, CueClass target,
                                  const CueTable& cues) {
  const std::string text = lowercase(paragraph);
  const bool accept = target == CueClass::Acceptance;
  const auto& required = accept ? cues.acceptance_required : cues.rejection_required;
  const auto& excluded = accept ? cues.acceptance_excluded : cues.rejection_excluded;
  if (contains_any(text, required) && !contains_any(text, excluded)) {
    return accept ? ParagraphClass::Acceptance : ParagraphClass::Rejection;
  }
  return ParagraphClass::Ambiguous;
}

bool mentions_paragraph(std::string_view paragraph, int step_index) {
  const std::string text = lowercase(paragraph);
  constexpr std::string_view word = "paragraph";
  std::size_t at = 0;
  while ((at = text.find(word, at)) != std::string::npos) {
    std::size_t i = at + word.size();
    while (i < text.size() && (text[i] == ' ' || text[i] == '_' || text[i] == ':' ||
                               text[i] == '#' || text[i] == '<' || text[i] == '>' ||
                               text[i] == '-' || text[i] == '(' || text[i] == '[')) {
      ++i;
    }
    std::size_t digits_end = i;
    while (digits_end < text.size() && std::isdigit(static_cast<unsigned char>(text[digits_end]))) {
      ++digits_end;
    }
    if (digits_end > i) {
      int value = -1;
      std::from_chars(text.data() + i, text.data() + digits_end, value);
      if (value == step_index) return true;
    }
    at += word.size();
  }
  return false;
}

std::optional<std::size_t> locate_verification_paragraph(
    const VerificationTrace& trace, int step_index, CueClass target,
    const CueTable& cues) {
  if (step_index < 0) return std::nullopt;
  const ParagraphClass wanted =
      target == CueClass::Acceptance ? ParagraphClass::Acceptance : ParagraphClass::Rejection;
  for (std::size_t i = 0; i < trace.paragraphs.size(); ++i) {
    const auto& p = trace.paragraphs[i];
    if (mentions_paragraph(p, step_index) && classify_paragraph(p, target, cues) == wanted) {
      return i;
    }
  }
  return std::nullopt;
}

std::string_view to_string(Outcome o) noexcept {
  switch (o) {
    case Outcome::TA: return "TA";
    case Outcome::FA: return "FA";
    case Outcome::TR: return "TR";
    case Outcome::FR: return "FR";
    case Outcome::InaccurateStep: return "InaccurateStep";
    case Outcome::Unparseable: return "Unparseable";
  }
  return "Unparseable";
}

Outcome label_outcome(Verdict prediction, int first_error) noexcept {
  if (!prediction) return Outcome::Unparseable;
  if (first_error == -1) return *prediction == -1 ? Outcome::TA : Outcome::FR;
  if (*prediction == -1) return Outcome::FA;
  return *prediction == first_error ? Outcome::TR : Outcome::InaccurateStep;
}

std::string tag_steps(const std::vector<std::string>& steps) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::string idx = std::to_string(i);
    if (i > 0) out += "\n\n";
    out += "<paragraph_" + idx + ">\n" + steps[i] + "\n</paragraph_" + idx + ">";
  }
  return out;
}

}  // namespace stepsteer
