#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "stepsteer/json_io.hpp"
#include "stepsteer/steer.hpp"

namespace stepsteer {

enum class Pooling { LastToken, Mean };

std::string_view to_string(Pooling p) noexcept;
std::optional<Pooling> pooling_from_string(std::string_view s) noexcept;

// Collapses the prompt's token states to one vector. Throws EmptyPrompt on
// an empty list and DimensionMismatch on ragged input.
Vector pool(std::span<const HiddenState> prompt_states, Pooling strategy);
Vector pool(std::span<const Vector> prompt_states, Pooling strategy);

// Affine map, row-major weight of shape (out, in).
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static DenseLayer zeros(std::size_t in, std::size_t out);
};

// input -> ReLU(hidden1) -> ReLU(hidden2) -> scalar logit.
struct ProbeWeights {
  std::array<DenseLayer, 3> layers;

  std::size_t input_dim() const noexcept { return layers[0].in; }
  // Throws ConfigError if shapes do not chain or a parameter is not finite.
  void validate() const;
  std::size_t parameter_count() const noexcept;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static ProbeWeights initialize(std::size_t input_dim, std::array<std::size_t, 2> hidden,
                                 std::uint64_t seed);
  static ProbeWeights zeros(std::size_t input_dim, std::array<std::size_t, 2> hidden);
};

double probe_logit(std::span<const double> pooled, const ProbeWeights& weights);

// q = logistic(f(pooled)), strictly inside (0, 1) for finite logits.
double probe_forward(std::span<const double> pooled, const ProbeWeights& weights);

struct ProbeTrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 1e-2;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 300;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  std::array<std::size_t, 2> hidden{256, 256};
  // Epochs without validation improvement before stopping; only active when
  // a validation set is supplied.
  std::size_t patience = 30;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
  Json to_json() const;
  static ProbeTrainConfig from_json(const Json& obj);
};

// Label 1 = fully correct solution, 0 = erroneous.
struct LabeledVector {
  Vector x;
  int label = 0;
};

struct ProbeTrainLog {
  double initial_train_loss = 0.0;  // eval-mode loss before the first update
  std::vector<double> epoch_train_loss;  // mean minibatch loss per epoch
  std::vector<double> epoch_val_loss;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

struct ProbeTrainResult {
  ProbeWeights weights;
  ProbeTrainLog log;
};

/// Mini-batch AdamW on binary cross-entropy with cosine decay of the
/// learning rate to zero across max_epochs and dropout on both hidden
/// layers. Shuffling and dropout draw from streams derived from
/// config.seed only. With a validation set the weights of the best
/// validation epoch are returned.
///
/// Throws DegenerateLabels if the training set lacks either class.
ProbeTrainResult train_probe(std::span<const LabeledVector> train,
                             std::span<const LabeledVector> validation,
                             const ProbeTrainConfig& config);

// Mean binary cross-entropy over `batch` with dropout off. When `grads` is
// non-null it receives d(loss)/d(parameter) in the same layout as weights.
double probe_loss(const ProbeWeights& weights, std::span<const LabeledVector> batch,
                  ProbeWeights* grads = nullptr);

// Weight file with its provenance header.
struct ProbeFile {
  ProbeWeights weights;
  Pooling pooling = Pooling::Mean;
  int layer = 0;
  Json config = Json::object();
};

Json probe_file_to_json(const ProbeFile& file);
ProbeFile probe_file_from_json(const Json& obj);
void save_probe(const ProbeFile& file, const std::filesystem::path& path);
ProbeFile load_probe(const std::filesystem::path& path);

}  // namespace stepsteer
