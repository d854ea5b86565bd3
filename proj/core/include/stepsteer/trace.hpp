#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stepsteer/json_io.hpp"

namespace stepsteer {

// Boundary between verification paragraphs.
inline constexpr std::string_view kParagraphDelimiter = "\n\n";

// A problem with a step-tagged candidate solution. first_error is the index
// of the first wrong step, or -1 when every step is correct.
struct LabeledSample {
  std::string sample_id;
  std::string problem;
  std::vector<std::string> steps;
  int first_error = -1;

  bool fully_correct() const noexcept { return first_error == -1; }
  // Throws ParseError if steps is empty or first_error is out of range.
  void validate() const;
};

LabeledSample sample_from_json(const Json& obj);
Json sample_to_json(const LabeledSample& s);
std::vector<LabeledSample> load_samples(const std::filesystem::path& path);

// Final verdict of a verification trace; nullopt means unparseable.
using Verdict = std::optional<int>;

struct VerificationTrace {
  std::string raw_text;
  std::vector<std::string> paragraphs;
  // Byte offset of each delimiter in raw_text; one fewer than paragraphs.
  std::vector<std::size_t> delimiter_positions;
  Verdict verdict;
};

// Splits on every non-overlapping "\n\n", scanning left to right. Empty
// paragraphs between consecutive delimiters are kept.
VerificationTrace segment_trace(std::string_view raw_text);

// Number of delimiters segment_trace would find in `text`.
std::size_t count_delimiters(std::string_view text);

// Integer inside the last \boxed{...} marker; -1 and nonnegative values only.
Verdict parse_verdict(std::string_view raw_text);

enum class CueClass { Acceptance, Rejection };
enum class ParagraphClass { Acceptance, Rejection, Ambiguous };

std::string_view to_string(ParagraphClass c) noexcept;

// Keyword rules for labelling verification paragraphs. Entries may use the
// compact "A/B C" form, which load() expands to "A C" and "B C".
struct CueTable {
  std::vector<std::string> acceptance_required;
  std::vector<std::string> acceptance_excluded;
  std::vector<std::string> rejection_required;
  std::vector<std::string> rejection_excluded;

  static CueTable defaults();
  static CueTable from_json(const Json& obj);
  static CueTable load(const std::filesystem::path& path);
  Json to_json() const;
};

// Expands each space-separated word of the form "a/b/c" into its
// alternatives, producing the Cartesian product of phrases.
std::vector<std::string> expand_cue_pattern(std::string_view pattern);

// Target class iff at least one required cue and no excluded cue occurs
// (case-insensitive substring match); otherwise Ambiguous.
ParagraphClass classify_paragraph(std::string_view paragraph, CueClass target,
                                  const CueTable& cues);

// True if the paragraph names "paragraph <step_index>", tolerating
// punctuation, underscores and angle tags between the word and the number.
bool mentions_paragraph(std::string_view paragraph, int step_index);

// First paragraph that mentions step_index and classifies as target.
std::optional<std::size_t> locate_verification_paragraph(
    const VerificationTrace& trace, int step_index, CueClass target,
    const CueTable& cues);

enum class Outcome { TA, FA, TR, FR, InaccurateStep, Unparseable };

std::string_view to_string(Outcome o) noexcept;

Outcome label_outcome(Verdict prediction, int first_error) noexcept;

// Solution steps wrapped as <paragraph_i>...</paragraph_i>, one per line
// block, for substitution into the prompt templates.
std::string tag_steps(const std::vector<std::string>& steps);

}  // namespace stepsteer
