#include "stepsteer/backend/toy_model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>

#include "stepsteer/error.hpp"
#include "stepsteer/random.hpp"
#include "stepsteer/trace.hpp"

namespace stepsteer {

namespace {

constexpr std::array<std::string_view, 64> kPhrases{
    "\n\n",
    "\n",
    " ",
    "Paragraph 0: ",
    "Paragraph 1: ",
    "Paragraph 2: ",
    "Paragraph 3: ",
    "Paragraph 4: ",
    "Paragraph 5: ",
    "This step is correct.",
    "The computation is okay.",
    "There is no error here.",
    "This is incorrect.",
    "There is an error in this step.",
    "I found a mistake.",
    "This introduces an inconsistency.",
    "The result is wrong.",
    "Let me check if this is correct.",
    "Let's verify the arithmetic.",
    "\\boxed{-1}",
    "\\boxed{0}",
    "\\boxed{1}",
    "\\boxed{2}",
    "\\boxed{3}",
    "\\boxed{4}",
    "\\boxed{5}",
    "We",
    " compute",
    " the",
    " sum",
    " product",
    " value",
    " is",
    " =",
    " +",
    " -",
    " *",
    " so",
    " then",
    " which",
    " gives",
    " check",
    " step",
    " answer",
    " 0",
    " 1",
    " 2",
    " 3",
    " 4",
    " 5",
    " 6",
    " 7",
    " 8",
    " 9",
    " x",
    " y",
    ".",
    ",",
    " (",
    ")",
    " total",
    " thus",
    " first",
    " next",
};

constexpr int kFirstMarker = 3;
constexpr int kLastMarker = 8;
constexpr int kFirstVerdictPhrase = 9;
constexpr int kFirstRejectPhrase = 12;
constexpr int kFirstNeutralPhrase = 17;
constexpr int kFirstBoxed = 19;
constexpr int kLastBoxed = 25;
constexpr int kFirstFiller = 26;

// Tracks where generation is inside a trace so that a structural bias can
// be added to the network logits. The network still decides which verdict
// each paragraph gets and when the trace ends.
struct Grammar {
  enum class Slot { LineStart, AfterMarker, Body };
  // Traces open with a short preamble before the first marker.
  Slot slot = Slot::Body;
  int paragraphs = 0;
  int body_length = 0;
  int first_reject = -1;

  void advance(int token) {
    if (token == 0) {
      slot = Slot::LineStart;
      body_length = 0;
    } else if (token >= kFirstMarker && token <= kLastMarker) {
      ++paragraphs;
      slot = Slot::AfterMarker;
    } else {
      if (token >= kFirstRejectPhrase && token < kFirstNeutralPhrase && first_reject < 0) {
        first_reject = paragraphs - 1;
      }
      slot = Slot::Body;
      ++body_length;
    }
  }

  void bias(std::vector<double>& logits) const {
    const int n_markers = kLastMarker - kFirstMarker + 1;
    auto add = [&](int lo, int hi, double b) {
      for (int i = lo; i <= hi; ++i) logits[static_cast<std::size_t>(i)] += b;
    };
    add(kFirstBoxed, kLastBoxed, -12.0);
    add(kFirstMarker, kLastMarker, -12.0);
    switch (slot) {
      case Slot::LineStart: {
        add(0, 2, -12.0);
        add(kFirstVerdictPhrase, kFirstBoxed - 1, -6.0);
        add(kFirstFiller, kFirstFiller + 37, -6.0);
        if (paragraphs < n_markers) logits[static_cast<std::size_t>(kFirstMarker + paragraphs)] += 18.0;
        if (paragraphs > 0) {
          const int answer = first_reject >= 0 ? std::min(first_reject, kLastBoxed - kFirstBoxed - 1) : -1;
          const double stop = paragraphs >= n_markers ? 30.0 : 10.5 + 0.8 * paragraphs + (first_reject >= 0 ? 1.5 : 0.0);
          logits[static_cast<std::size_t>(kFirstBoxed + 1 + answer)] += stop;
        }
        break;
      }
      case Slot::AfterMarker:
        add(0, 1, -8.0);
        add(kFirstVerdictPhrase, kFirstBoxed - 1, 8.0);
        add(kFirstRejectPhrase, kFirstNeutralPhrase - 1, 1.5);
        break;
      case Slot::Body:
        logits[0] += 0.5 + 0.8 * body_length;
        logits[1] -= 2.0;
        add(kFirstVerdictPhrase, kFirstBoxed - 1, -5.0);
        break;
    }
  }
};

void fill_normal(std::vector<double>& v, std::size_t n, double scale, Rng& rng) {
  v.resize(n);
  for (double& x : v) x = scale * standard_normal(rng);
}

void rms_norm(std::span<const double> x, std::span<double> out) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
}

// y = W x for row-major W of shape (rows, cols).
void matvec(const std::vector<double>& w, std::span<const double> x, std::span<double> y,
            std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

Vector softmax(std::span<const double> logits, double temperature) {
  Vector p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

int sample_token(std::span<const double> logits, const GenerateOptions& opt, Rng& rng) {
  if (opt.temperature <= 0.0) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const Vector p = softmax(logits, opt.temperature);
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
  double kept = 0.0;
  std::size_t n_keep = 0;
  while (n_keep < order.size()) {
    kept += p[order[n_keep]];
    ++n_keep;
    if (kept >= opt.top_p) break;
  }
  double u = uniform01(rng) * kept;
  for (std::size_t i = 0; i < n_keep; ++i) {
    u -= p[order[i]];
    if (u < 0.0) return order[i];
  }
  return order[n_keep - 1];
}

}  // namespace

void BackendDescriptor::validate() const {
  if (n_layers < 1) throw Error(ErrorCode::ConfigError, "backend needs at least one layer");
  if (hidden_dim < 1) throw Error(ErrorCode::ConfigError, "backend hidden_dim must be positive");
}

Json BackendDescriptor::to_json() const {
  return Json{{"name", name},
              {"n_layers", n_layers},
              {"hidden_dim", hidden_dim},
              {"vocab_size", vocab_size},
              {"active_params", active_params},
              {"capabilities", capability == Capability::LiveGeneration ? "live_generation" : "replay_only"}};
}

void ToyConfig::validate() const {
  if (n_layers < 1) throw Error(ErrorCode::ConfigError, "toy model needs at least one layer");
  if (hidden_dim < 1 || n_heads < 1 || hidden_dim % n_heads != 0) {
    throw Error(ErrorCode::ConfigError, "toy hidden_dim must be a positive multiple of n_heads");
  }
  if (vocab_size < static_cast<int>(kPhrases.size())) {
    throw Error(ErrorCode::ConfigError, "toy vocab_size must be at least " + std::to_string(kPhrases.size()));
  }
  if (ffn_multiplier < 1 || max_context < 2) throw Error(ErrorCode::ConfigError, "invalid toy dimensions");
}

Json ToyConfig::to_json() const {
  return Json{{"n_layers", n_layers}, {"hidden_dim", hidden_dim}, {"vocab_size", vocab_size},
              {"n_heads", n_heads},   {"ffn_multiplier", ffn_multiplier},
              {"max_context", max_context}, {"logit_scale", logit_scale}, {"seed", seed}};
}

ToyConfig ToyConfig::from_json(const Json& obj) {
  ToyConfig c;
  c.n_layers = obj.value("n_layers", c.n_layers);
  c.hidden_dim = obj.value("hidden_dim", c.hidden_dim);
  c.vocab_size = obj.value("vocab_size", c.vocab_size);
  c.n_heads = obj.value("n_heads", c.n_heads);
  c.ffn_multiplier = obj.value("ffn_multiplier", c.ffn_multiplier);
  c.max_context = obj.value("max_context", c.max_context);
  c.logit_scale = obj.value("logit_scale", c.logit_scale);
  c.seed = obj.value("seed", c.seed);
  return c;
}

ToyModel::ToyModel(ToyConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = static_cast<std::size_t>(config_.hidden_dim);
  const std::size_t v = static_cast<std::size_t>(config_.vocab_size);
  const std::size_t f = d * static_cast<std::size_t>(config_.ffn_multiplier);
  Rng rng(derive_seed(config_.seed, SeedStream::ToyWeights, 0));

  fill_normal(embedding_, v * d, 1.0, rng);
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_scale = in_scale / std::sqrt(2.0 * config_.n_layers);
  blocks_.resize(static_cast<std::size_t>(config_.n_layers));
  for (auto& b : blocks_) {
    fill_normal(b.wq, d * d, in_scale, rng);
    fill_normal(b.wk, d * d, in_scale, rng);
    fill_normal(b.wv, d * d, in_scale, rng);
    fill_normal(b.wo, d * d, out_scale, rng);
    fill_normal(b.w_in, f * d, in_scale, rng);
    fill_normal(b.w_out, d * f, out_scale / std::sqrt(static_cast<double>(config_.ffn_multiplier)), rng);
  }
  fill_normal(unembed_, v * d, config_.logit_scale * in_scale, rng);

  // Out-of-phrase ids are rarely sampled.
  prior_.assign(v, -4.0);
  for (std::size_t i = 0; i < kPhrases.size(); ++i) prior_[i] = 0.0;
}

BackendDescriptor ToyModel::descriptor() const {
  BackendDescriptor desc;
  desc.name = "toy";
  desc.n_layers = config_.n_layers;
  desc.hidden_dim = config_.hidden_dim;
  desc.vocab_size = config_.vocab_size;
  std::uint64_t params = embedding_.size() + unembed_.size() + prior_.size();
  for (const auto& b : blocks_) {
    params += b.wq.size() + b.wk.size() + b.wv.size() + b.wo.size() + b.w_in.size() + b.w_out.size();
  }
  desc.active_params = params;
  desc.capability = Capability::LiveGeneration;
  return desc;
}

std::string_view ToyModel::token_text(int id) const {
  if (id < 0 || id >= config_.vocab_size) throw Error(ErrorCode::ConfigError, "token id out of range");
  if (static_cast<std::size_t>(id) < kPhrases.size()) return kPhrases[static_cast<std::size_t>(id)];
  static thread_local std::string pad;
  pad = "<pad_" + std::to_string(id) + ">";
  return pad;
}

bool ToyModel::is_terminal(int id) const noexcept { return id >= kFirstBoxed && id <= kLastBoxed; }

std::vector<int> ToyModel::tokenize(std::string_view text) const {
  // FNV-1a hash of each whitespace-separated word.
  std::vector<int> out;
  std::uint64_t h = 0xcbf29ce484222325ull;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (in_word) out.push_back(static_cast<int>(h % kPhrases.size()));
      h = 0xcbf29ce484222325ull;
      in_word = false;
    } else {
      h = (h ^ c) * 0x100000001b3ull;
      in_word = true;
    }
  }
  if (in_word) out.push_back(static_cast<int>(h % kPhrases.size()));
  return out;
}

std::string ToyModel::decode(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) out += token_text(t);
  return out;
}

// KV cache and scratch buffers of one generation run.
class ToyModel::Session {
 public:
  explicit Session(const ToyModel& m)
      : m_(m),
        d_(static_cast<std::size_t>(m.config_.hidden_dim)),
        keys_(m.blocks_.size()),
        values_(m.blocks_.size()) {}

  std::size_t length() const noexcept { return length_; }

  // Runs one token. `on_layer(layer, state)` may rewrite the layer output.
  template <typename Hook>
  Vector step(int token, Hook&& on_layer) {
    if (length_ >= static_cast<std::size_t>(m_.config_.max_context)) {
      throw Error(ErrorCode::ConfigError, "toy model context length exceeded");
    }
    const std::size_t d = d_;
    const std::size_t heads = static_cast<std::size_t>(m_.config_.n_heads);
    const std::size_t hd = d / heads;
    const std::size_t f = d * static_cast<std::size_t>(m_.config_.ffn_multiplier);
    const double pos = static_cast<double>(length_);

    Vector x(d);
    const double* emb = m_.embedding_.data() + static_cast<std::size_t>(token) * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i / 2 * 2) / static_cast<double>(d));
      x[i] = emb[i] + 0.5 * (i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
    }

    Vector normed(d), q(d), k(d), v(d), attn(d), proj(d), hidden(f);
    for (std::size_t l = 0; l < m_.blocks_.size(); ++l) {
      const Block& b = m_.blocks_[l];
      rms_norm(x, normed);
      matvec(b.wq, normed, q, d, d);
      matvec(b.wk, normed, k, d, d);
      matvec(b.wv, normed, v, d, d);
      keys_[l].insert(keys_[l].end(), k.begin(), k.end());
      values_[l].insert(values_[l].end(), v.begin(), v.end());
      const std::size_t n = length_ + 1;
      std::vector<double> scores(n);
      for (std::size_t h = 0; h < heads; ++h) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        double mx = -INFINITY;
        for (std::size_t t = 0; t < n; ++t) {
          const double* kt = keys_[l].data() + t * d + h * hd;
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += q[h * hd + i] * kt[i];
          scores[t] = s * scale;
          mx = std::max(mx, scores[t]);
        }
        double sum = 0.0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          sum += s;
        }
        for (std::size_t i = 0; i < hd; ++i) attn[h * hd + i] = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          const double w = scores[t] / sum;
          const double* vt = values_[l].data() + t * d + h * hd;
          for (std::size_t i = 0; i < hd; ++i) attn[h * hd + i] += w * vt[i];
        }
      }
      matvec(b.wo, attn, proj, d, d);
      for (std::size_t i = 0; i < d; ++i) x[i] += proj[i];

      rms_norm(x, normed);
      matvec(b.w_in, normed, hidden, f, d);
      for (double& hval : hidden) hval = std::max(hval, 0.0);
      matvec(b.w_out, hidden, proj, d, f);
      for (std::size_t i = 0; i < d; ++i) x[i] += proj[i];

      on_layer(static_cast<int>(l), x);
    }
    ++length_;

    rms_norm(x, normed);
    Vector logits(static_cast<std::size_t>(m_.config_.vocab_size));
    matvec(m_.unembed_, normed, logits, logits.size(), d);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += m_.prior_[i];
    return logits;
  }

 private:
  const ToyModel& m_;
  std::size_t d_;
  std::vector<std::vector<double>> keys_;
  std::vector<std::vector<double>> values_;
  std::size_t length_ = 0;
};

std::map<int, std::vector<Vector>> ToyModel::prompt_states(std::span<const int> prompt,
                                                           std::span<const int> layers) const {
  GenerateOptions opt;
  opt.prompt_layers.assign(layers.begin(), layers.end());
  opt.max_tokens = 0;
  return generate(prompt, opt).prompt_states;
}

GenerationResult ToyModel::generate(std::span<const int> prompt, const GenerateOptions& options,
                                    const Intervenor& intervenor) const {
  if (prompt.empty()) throw Error(ErrorCode::EmptyPrompt, "toy generation needs a prompt");
  auto check_layers = [&](const std::vector<int>& layers) {
    for (int l : layers) {
      if (l < 0 || l >= config_.n_layers) {
        throw Error(ErrorCode::ConfigError, "layer " + std::to_string(l) + " outside the toy model's " +
                                                std::to_string(config_.n_layers) + " layers");
      }
    }
  };
  check_layers(options.tap_layers);
  check_layers(options.prompt_layers);
  for (int t : prompt) {
    if (t < 0 || t >= config_.vocab_size) throw Error(ErrorCode::ConfigError, "prompt token out of range");
  }

  std::vector<int> tap = options.tap_layers;
  std::sort(tap.begin(), tap.end());
  tap.erase(std::unique(tap.begin(), tap.end()), tap.end());

  GenerationResult result;
  Session session(*this);
  Vector logits;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    logits = session.step(prompt[i], [&](int layer, Vector& x) {
      if (std::find(options.prompt_layers.begin(), options.prompt_layers.end(), layer) !=
          options.prompt_layers.end()) {
        result.prompt_states[layer].push_back(x);
      }
    });
  }

  Rng rng(options.seed);
  const std::size_t hidden = static_cast<std::size_t>(config_.hidden_dim);
  Grammar grammar;
  for (std::size_t n = 0; n < options.max_tokens; ++n) {
    grammar.bias(logits);
    const int token = sample_token(logits, options, rng);
    grammar.advance(token);
    const std::size_t before = count_delimiters(result.text);
    result.tokens.push_back(token);
    result.text += token_text(token);
    if (is_terminal(token)) break;
    const bool delimiter = count_delimiters(result.text) > before;
    if (!delimiter && n + 1 == options.max_tokens) break;

    const std::int64_t position = static_cast<std::int64_t>(result.tokens.size() - 1);
    DelimiterEvent recorded;
    bool steered = false;
    if (delimiter) {
      recorded.sample_id = options.sample_id;
      recorded.rollout_id = options.rollout_id;
      recorded.token_position = position;
    }
    logits = session.step(token, [&](int layer, Vector& x) {
      if (!delimiter || !std::binary_search(tap.begin(), tap.end(), layer)) return;
      recorded.states.emplace(layer, x);
      if (!intervenor) return;
      DelimiterEvent event;
      event.sample_id = options.sample_id;
      event.rollout_id = options.rollout_id;
      event.token_position = position;
      event.states.emplace(layer, x);
      InterventionDecision decision = intervenor(event);
      for (auto& [target, replacement] : decision.replacements) {
        if (target != layer) {
          throw Error(ErrorCode::ConfigError, "intervention for layer " + std::to_string(target) +
                                                  " returned while visiting layer " + std::to_string(layer));
        }
        if (replacement.size() != hidden) {
          throw Error(ErrorCode::DimensionMismatch,
                      "replacement of dimension " + std::to_string(replacement.size()) +
                          " for hidden size " + std::to_string(hidden));
        }
        x = std::move(replacement);
        steered = true;
      }
    });
    if (delimiter) {
      ++result.n_delimiters;
      if (steered) ++result.n_interventions;
      Vector biased = logits;
      grammar.bias(biased);
      result.delimiter_next_probs.push_back(softmax(biased, 1.0));
      if (!tap.empty()) result.events.push_back(std::move(recorded));
    }
  }
  return result;
}

}  // namespace stepsteer
