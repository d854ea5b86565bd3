#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepsteer/backend/descriptor.hpp"
#include "stepsteer/backend/records.hpp"

namespace stepsteer {

// A small decoder-only transformer with fixed random weights. It exists to
// exercise delimiter-level interventions deterministically; it is never
// trained. Its vocabulary is phrase-level so that sampled outputs look like
// verification traces: paragraph markers, verdict sentences, "\n\n"
// delimiters and \boxed{} answers.
struct ToyConfig {
  int n_layers = 4;
  int hidden_dim = 32;
  int vocab_size = 64;
  int n_heads = 4;
  int ffn_multiplier = 4;
  int max_context = 2048;
  double logit_scale = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
  Json to_json() const;
  static ToyConfig from_json(const Json& obj);
};

// Called once per (generated delimiter token, tapped layer), in ascending
// layer order inside the forward pass. `event.states` holds that single
// layer's output state; a replacement for it is written back into the
// residual stream before the next layer runs.
using Intervenor = std::function<InterventionDecision(const DelimiterEvent&)>;

struct GenerateOptions {
  std::size_t max_tokens = 96;
  double temperature = 0.0;  // 0 selects greedy decoding
  double top_p = 1.0;
  std::uint64_t seed = 0;
  std::vector<int> tap_layers;     // recorded and offered to the intervenor
  std::vector<int> prompt_layers;  // prompt-token states to return
  std::string sample_id;
  int rollout_id = 0;
};

struct GenerationResult {
  std::vector<int> tokens;
  std::string text;
  // Pre-intervention states of every generated delimiter token.
  std::vector<DelimiterEvent> events;
  // Next-token distribution (temperature 1) computed at each delimiter.
  std::vector<Vector> delimiter_next_probs;
  // prompt_states[layer][i] is the layer output at prompt token i.
  std::map<int, std::vector<Vector>> prompt_states;
  std::size_t n_delimiters = 0;
  std::size_t n_interventions = 0;  // delimiter tokens with any replacement

  std::size_t generated_tokens() const noexcept { return tokens.size(); }
};

class ToyModel {
 public:
  explicit ToyModel(ToyConfig config = {});

  const ToyConfig& config() const noexcept { return config_; }
  BackendDescriptor descriptor() const;

  // Phrase vocabulary; ids beyond the built-in phrases decode as "<pad_k>".
  std::string_view token_text(int id) const;
  bool is_terminal(int id) const noexcept;
  // Folds each whitespace-separated word of arbitrary text into the
  // vocabulary by hashing.
  std::vector<int> tokenize(std::string_view text) const;
  std::string decode(std::span<const int> tokens) const;

  // Runs the prompt and returns per-layer token states for `layers`.
  std::map<int, std::vector<Vector>> prompt_states(std::span<const int> prompt,
                                                   std::span<const int> layers) const;

  /// Autoregressive generation. Stops after a \boxed{} token or
  /// max_tokens. Throws DimensionMismatch if the intervenor returns a
  /// vector of the wrong size, ConfigError for an out-of-range layer.
  GenerationResult generate(std::span<const int> prompt, const GenerateOptions& options,
                            const Intervenor& intervenor = {}) const;

 private:
  struct Block {
    std::vector<double> wq, wk, wv, wo;  // (d, d) row-major
    std::vector<double> w_in;            // (ffn, d)
    std::vector<double> w_out;           // (d, ffn)
  };

  class Session;

  ToyConfig config_;
  std::vector<double> embedding_;  // (vocab, d)
  std::vector<double> unembed_;    // (vocab, d)
  std::vector<double> prior_;      // (vocab)
  std::vector<Block> blocks_;
};

}  // namespace stepsteer
