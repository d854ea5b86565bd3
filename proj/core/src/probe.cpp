#include "stepsteer/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stepsteer/error.hpp"
#include "stepsteer/random.hpp"

namespace stepsteer {

std::string_view to_string(Pooling p) noexcept {
  return p == Pooling::Mean ? "mean" : "last_token";
}

std::optional<Pooling> pooling_from_string(std::string_view s) noexcept {
  if (s == "mean") return Pooling::Mean;
  if (s == "last_token" || s == "last-token" || s == "last") return Pooling::LastToken;
  return std::nullopt;
}

Vector pool(std::span<const Vector> prompt_states, Pooling strategy) {
  if (prompt_states.empty()) throw Error(ErrorCode::EmptyPrompt, "no prompt states to pool");
  const std::size_t dim = prompt_states.front().size();
  for (const auto& s : prompt_states) require_same_dim(prompt_states.front(), s, "pool");
  if (dim == 0) throw Error(ErrorCode::DimensionMismatch, "pool: zero-dimensional states");
  if (strategy == Pooling::LastToken) return prompt_states.back();
  Vector mean(dim, 0.0);
  for (const auto& s : prompt_states) {
    for (std::size_t i = 0; i < dim; ++i) mean[i] += s[i];
  }
  const double n = static_cast<double>(prompt_states.size());
  for (double& x : mean) x /= n;
  return mean;
}

Vector pool(std::span<const HiddenState> prompt_states, Pooling strategy) {
  std::vector<Vector> values;
  values.reserve(prompt_states.size());
  for (const auto& s : prompt_states) values.push_back(s.values);
  return pool(std::span<const Vector>(values), strategy);
}

DenseLayer DenseLayer::zeros(std::size_t in, std::size_t out) {
  return DenseLayer{in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
}

void ProbeWeights::validate() const {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.in == 0 || l.out == 0 || l.weight.size() != l.in * l.out || l.bias.size() != l.out) {
      throw Error(ErrorCode::ConfigError, "probe layer " + std::to_string(k) + " has inconsistent shape");
    }
    if (k > 0 && layers[k - 1].out != l.in) {
      throw Error(ErrorCode::ConfigError, "probe layers " + std::to_string(k - 1) + " and " +
                                              std::to_string(k) + " do not chain");
    }
    if (!all_finite(l.weight) || !all_finite(l.bias)) {
      throw Error(ErrorCode::ConfigError, "probe layer " + std::to_string(k) + " has non-finite parameters");
    }
  }
  if (layers[2].out != 1) throw Error(ErrorCode::ConfigError, "probe output must be scalar");
}

std::size_t ProbeWeights::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

ProbeWeights ProbeWeights::zeros(std::size_t input_dim, std::array<std::size_t, 2> hidden) {
  ProbeWeights w;
  w.layers[0] = DenseLayer::zeros(input_dim, hidden[0]);
  w.layers[1] = DenseLayer::zeros(hidden[0], hidden[1]);
  w.layers[2] = DenseLayer::zeros(hidden[1], 1);
  return w;
}

ProbeWeights ProbeWeights::initialize(std::size_t input_dim, std::array<std::size_t, 2> hidden,
                                      std::uint64_t seed) {
  ProbeWeights w = zeros(input_dim, hidden);
  Rng rng(seed);
  for (auto& l : w.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (double& x : l.weight) x = uniform(rng, -bound, bound);
    for (double& x : l.bias) x = uniform(rng, -bound, bound);
  }
  return w;
}

namespace {

void affine(const DenseLayer& l, std::span<const double> x, std::vector<double>& y) {
  y.assign(l.bias.begin(), l.bias.end());
  for (std::size_t o = 0; o < l.out; ++o) {
    const double* row = l.weight.data() + o * l.in;
    double acc = 0.0;
    for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * x[i];
    y[o] += acc;
  }
}

struct Activations {
  std::vector<double> h1, a1, h2, a2;
  std::vector<double> mask1, mask2;  // empty when dropout is off
  double logit = 0.0;
};

// Inverted dropout: kept units are scaled by 1/(1-p).
void draw_mask(std::vector<double>& mask, std::size_t n, double p, Rng& rng) {
  mask.resize(n);
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& m : mask) m = uniform01(rng) < p ? 0.0 : keep_scale;
}

void forward(const ProbeWeights& w, std::span<const double> x, Activations& act, Rng* dropout_rng,
             double p) {
  affine(w.layers[0], x, act.h1);
  act.a1.resize(act.h1.size());
  for (std::size_t i = 0; i < act.h1.size(); ++i) act.a1[i] = std::max(act.h1[i], 0.0);
  if (dropout_rng != nullptr && p > 0.0) {
    draw_mask(act.mask1, act.a1.size(), p, *dropout_rng);
    for (std::size_t i = 0; i < act.a1.size(); ++i) act.a1[i] *= act.mask1[i];
  } else {
    act.mask1.clear();
  }

  affine(w.layers[1], act.a1, act.h2);
  act.a2.resize(act.h2.size());
  for (std::size_t i = 0; i < act.h2.size(); ++i) act.a2[i] = std::max(act.h2[i], 0.0);
  if (dropout_rng != nullptr && p > 0.0) {
    draw_mask(act.mask2, act.a2.size(), p, *dropout_rng);
    for (std::size_t i = 0; i < act.a2.size(); ++i) act.a2[i] *= act.mask2[i];
  } else {
    act.mask2.clear();
  }

  std::vector<double> out;
  affine(w.layers[2], act.a2, out);
  act.logit = out[0];
}

// Accumulates d(scale * loss)/d(params) given d(loss)/d(logit).
void backward(const ProbeWeights& w, std::span<const double> x, const Activations& act,
              double dlogit, ProbeWeights& g) {
  const DenseLayer& l3 = w.layers[2];
  DenseLayer& g3 = g.layers[2];
  std::vector<double> dh2(l3.in);
  for (std::size_t i = 0; i < l3.in; ++i) {
    g3.weight[i] += dlogit * act.a2[i];
    double d = dlogit * l3.weight[i];
    if (!act.mask2.empty()) d *= act.mask2[i];
    dh2[i] = act.h2[i] > 0.0 ? d : 0.0;
  }
  g3.bias[0] += dlogit;

  const DenseLayer& l2 = w.layers[1];
  DenseLayer& g2 = g.layers[1];
  std::vector<double> da1(l2.in, 0.0);
  for (std::size_t o = 0; o < l2.out; ++o) {
    const double d = dh2[o];
    if (d == 0.0) continue;
    const double* row = l2.weight.data() + o * l2.in;
    double* grow = g2.weight.data() + o * l2.in;
    for (std::size_t i = 0; i < l2.in; ++i) {
      grow[i] += d * act.a1[i];
      da1[i] += d * row[i];
    }
    g2.bias[o] += d;
  }

  const DenseLayer& l1 = w.layers[0];
  DenseLayer& g1 = g.layers[0];
  for (std::size_t o = 0; o < l1.out; ++o) {
    double d = da1[o];
    if (!act.mask1.empty()) d *= act.mask1[o];
    if (act.h1[o] <= 0.0 || d == 0.0) continue;
    double* grow = g1.weight.data() + o * l1.in;
    for (std::size_t i = 0; i < l1.in; ++i) grow[i] += d * x[i];
    g1.bias[o] += d;
  }
}

// Binary cross-entropy on a logit, stable for large |z|.
double bce_with_logit(double z, int label) {
  return std::max(z, 0.0) - z * static_cast<double>(label) + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require_both_classes(std::span<const LabeledVector> data) {
  bool pos = false;
  bool neg = false;
  for (const auto& d : data) {
    if (d.label != 0 && d.label != 1) {
      throw Error(ErrorCode::ConfigError, "probe labels must be 0 or 1");
    }
    (d.label == 1 ? pos : neg) = true;
  }
  if (!pos || !neg) throw Error(ErrorCode::DegenerateLabels, "probe training needs both classes");
}

template <typename F>
void for_each_param(ProbeWeights& a, ProbeWeights& b, ProbeWeights& c, ProbeWeights& d, F&& f) {
  for (std::size_t k = 0; k < 3; ++k) {
    auto run = [&](std::vector<double>& pa, std::vector<double>& pb, std::vector<double>& pc,
                   std::vector<double>& pd) {
      for (std::size_t i = 0; i < pa.size(); ++i) f(pa[i], pb[i], pc[i], pd[i]);
    };
    run(a.layers[k].weight, b.layers[k].weight, c.layers[k].weight, d.layers[k].weight);
    run(a.layers[k].bias, b.layers[k].bias, c.layers[k].bias, d.layers[k].bias);
  }
}

void zero(ProbeWeights& g) {
  for (auto& l : g.layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

}  // namespace

double probe_logit(std::span<const double> pooled, const ProbeWeights& weights) {
  if (pooled.size() != weights.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "probe input has dimension " + std::to_string(pooled.size()) + ", expected " +
                    std::to_string(weights.input_dim()));
  }
  Activations act;
  forward(weights, pooled, act, nullptr, 0.0);
  return act.logit;
}

double probe_forward(std::span<const double> pooled, const ProbeWeights& weights) {
  return sigmoid(probe_logit(pooled, weights));
}

double probe_loss(const ProbeWeights& weights, std::span<const LabeledVector> batch,
                  ProbeWeights* grads) {
  if (batch.empty()) return 0.0;
  if (grads != nullptr) {
    *grads = ProbeWeights::zeros(weights.input_dim(), {weights.layers[0].out, weights.layers[1].out});
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  Activations act;
  for (const auto& item : batch) {
    if (item.x.size() != weights.input_dim()) {
      throw Error(ErrorCode::DimensionMismatch, "probe_loss: input dimension mismatch");
    }
    forward(weights, item.x, act, nullptr, 0.0);
    total += bce_with_logit(act.logit, item.label);
    if (grads != nullptr) {
      backward(weights, item.x, act, (sigmoid(act.logit) - item.label) * inv_n, *grads);
    }
  }
  return total * inv_n;
}

void ProbeTrainConfig::validate() const {
  auto positive = [](double x) { return std::isfinite(x) && x > 0.0; };
  if (!positive(learning_rate)) throw Error(ErrorCode::ConfigError, "learning_rate must be positive");
  if (!(std::isfinite(weight_decay) && weight_decay >= 0.0)) {
    throw Error(ErrorCode::ConfigError, "weight_decay must be nonnegative");
  }
  if (batch_size == 0) throw Error(ErrorCode::ConfigError, "batch_size must be positive");
  if (max_epochs == 0) throw Error(ErrorCode::ConfigError, "max_epochs must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::ConfigError, "dropout must lie in [0,1)");
  if (hidden[0] == 0 || hidden[1] == 0) throw Error(ErrorCode::ConfigError, "hidden widths must be positive");
  if (patience == 0) throw Error(ErrorCode::ConfigError, "patience must be positive");
}

Json ProbeTrainConfig::to_json() const {
  return Json{{"learning_rate", learning_rate},
              {"weight_decay", weight_decay},
              {"batch_size", batch_size},
              {"max_epochs", max_epochs},
              {"dropout", dropout},
              {"seed", seed},
              {"hidden", {hidden[0], hidden[1]}},
              {"patience", patience},
              {"schedule", "cosine"},
              {"adam", {{"beta1", adam_beta1}, {"beta2", adam_beta2}, {"epsilon", adam_epsilon}}}};
}

ProbeTrainConfig ProbeTrainConfig::from_json(const Json& obj) {
  ProbeTrainConfig c;
  c.learning_rate = obj.value("learning_rate", c.learning_rate);
  c.weight_decay = obj.value("weight_decay", c.weight_decay);
  c.batch_size = obj.value("batch_size", c.batch_size);
  c.max_epochs = obj.value("max_epochs", c.max_epochs);
  c.dropout = obj.value("dropout", c.dropout);
  c.seed = obj.value("seed", c.seed);
  if (obj.contains("hidden")) {
    const auto h = obj.at("hidden").get<std::vector<std::size_t>>();
    if (h.size() != 2) throw_parse_error("probe config: hidden must list two widths");
    c.hidden = {h[0], h[1]};
  }
  c.patience = obj.value("patience", c.patience);
  if (obj.contains("adam")) {
    const auto& a = obj.at("adam");
    c.adam_beta1 = a.value("beta1", c.adam_beta1);
    c.adam_beta2 = a.value("beta2", c.adam_beta2);
    c.adam_epsilon = a.value("epsilon", c.adam_epsilon);
  }
  return c;
}

ProbeTrainResult train_probe(std::span<const LabeledVector> train,
                             std::span<const LabeledVector> validation,
                             const ProbeTrainConfig& config) {
  config.validate();
  if (train.empty()) throw Error(ErrorCode::DegenerateLabels, "probe training set is empty");
  require_both_classes(train);
  const std::size_t dim = train.front().x.size();
  for (const auto& item : train) {
    if (item.x.size() != dim) throw Error(ErrorCode::DimensionMismatch, "ragged probe training set");
  }

  ProbeTrainResult result;
  ProbeWeights w = ProbeWeights::initialize(dim, config.hidden,
                                            derive_seed(config.seed, SeedStream::ProbeInit, 0));
  ProbeWeights grads = ProbeWeights::zeros(dim, config.hidden);
  ProbeWeights m = grads;
  ProbeWeights v = grads;

  result.log.initial_train_loss = probe_loss(w, train);

  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch * config.max_epochs);
  std::vector<std::size_t> order(n);

  ProbeWeights best = w;
  double best_val = INFINITY;
  std::size_t since_best = 0;
  std::size_t step = 0;
  Activations act;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, SeedStream::ProbeShuffle, epoch));
    shuffle(std::span<std::size_t>(order), shuffle_rng);
    Rng dropout_rng(derive_seed(config.seed, SeedStream::ProbeDropout, epoch));

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      zero(grads);
      for (std::size_t k = start; k < end; ++k) {
        const auto& item = train[order[k]];
        forward(w, item.x, act, &dropout_rng, config.dropout);
        epoch_loss += bce_with_logit(act.logit, item.label);
        backward(w, item.x, act, (sigmoid(act.logit) - item.label) * inv_b, grads);
      }

      const double lr = config.learning_rate * 0.5 *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      ++step;
      const double t = static_cast<double>(step);
      const double c1 = 1.0 - std::pow(config.adam_beta1, t);
      const double c2 = 1.0 - std::pow(config.adam_beta2, t);
      const double b1 = config.adam_beta1;
      const double b2 = config.adam_beta2;
      const double eps = config.adam_epsilon;
      const double wd = config.weight_decay;
      for_each_param(w, grads, m, v, [&](double& p, double& g, double& mm, double& vv) {
        mm = b1 * mm + (1.0 - b1) * g;
        vv = b2 * vv + (1.0 - b2) * g * g;
        const double mhat = mm / c1;
        const double vhat = vv / c2;
        p -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p);
      });
    }
    result.log.epoch_train_loss.push_back(epoch_loss / static_cast<double>(n));
    result.log.epochs_run = epoch + 1;

    if (!validation.empty()) {
      const double val = probe_loss(w, validation);
      result.log.epoch_val_loss.push_back(val);
      if (val < best_val) {
        best_val = val;
        best = w;
        result.log.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        result.log.stopped_early = true;
        break;
      }
    }
  }

  if (validation.empty()) {
    result.log.best_epoch = result.log.epochs_run - 1;
    result.weights = std::move(w);
  } else {
    result.weights = std::move(best);
  }
  return result;
}

namespace {

Json layer_to_json(const DenseLayer& l) {
  return Json{{"in", l.in}, {"out", l.out}, {"weight", vector_to_json(l.weight)},
              {"bias", vector_to_json(l.bias)}};
}

DenseLayer layer_from_json(const Json& obj) {
  DenseLayer l;
  l.in = json_field<std::size_t>(obj, "in", "probe layer");
  l.out = json_field<std::size_t>(obj, "out", "probe layer");
  if (!obj.contains("weight") || !obj.contains("bias")) throw_parse_error("probe layer: missing arrays");
  l.weight = vector_from_json(obj.at("weight"), "weight");
  l.bias = vector_from_json(obj.at("bias"), "bias");
  return l;
}

}  // namespace

Json probe_file_to_json(const ProbeFile& file) {
  const auto& w = file.weights;
  Json layers = Json::array();
  for (const auto& l : w.layers) layers.push_back(layer_to_json(l));
  return Json{{"format", "stepsteer-probe/1"},
              {"input_dim", w.input_dim()},
              {"hidden_widths", {w.layers[0].out, w.layers[1].out}},
              {"pooling", std::string(to_string(file.pooling))},
              {"layer", file.layer},
              {"config", file.config},
              {"layers", layers}};
}

ProbeFile probe_file_from_json(const Json& obj) {
  ProbeFile f;
  const auto pooling = json_field<std::string>(obj, "pooling", "probe file");
  const auto parsed = pooling_from_string(pooling);
  if (!parsed) throw_parse_error("probe file: unknown pooling '" + pooling + "'");
  f.pooling = *parsed;
  f.layer = json_field<int>(obj, "layer", "probe file");
  if (obj.contains("config")) f.config = obj.at("config");
  const auto layers = json_field<Json>(obj, "layers", "probe file");
  if (!layers.is_array() || layers.size() != 3) throw_parse_error("probe file: expected three layers");
  for (std::size_t k = 0; k < 3; ++k) f.weights.layers[k] = layer_from_json(layers[k]);
  try {
    f.weights.validate();
  } catch (const Error& e) {
    throw_parse_error("probe file: " + e.detail());
  }
  if (json_field<std::size_t>(obj, "input_dim", "probe file") != f.weights.input_dim()) {
    throw_parse_error("probe file: input_dim disagrees with the first layer");
  }
  return f;
}

void save_probe(const ProbeFile& file, const std::filesystem::path& path) {
  write_text_file(path, dump_json(probe_file_to_json(file)) + "\n");
}

ProbeFile load_probe(const std::filesystem::path& path) {
  return probe_file_from_json(read_json_file(path));
}

}  // namespace stepsteer
