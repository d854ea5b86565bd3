#pragma once

#include <span>
#include <vector>

#include "stepsteer/extraction.hpp"
#include "stepsteer/json_io.hpp"
#include "stepsteer/probe.hpp"

namespace stepsteer {

struct LinearModel {
  Vector weight;
  double bias = 0.0;
  std::size_t iterations = 0;
  double final_loss = 0.0;

  double score(std::span<const double> x) const;
};

struct LinearFitOptions {
  double learning_rate = 0.1;
  double l2 = 1e-4;
  double tolerance = 1e-6;  // on the change of the regularized loss
  std::size_t max_iterations = 10000;
};

/// Full-batch gradient descent on L2-regularized logistic loss, stopping
/// when the loss changes by less than `tolerance` or after
/// `max_iterations`. Throws DegenerateLabels if either class is missing.
LinearModel fit_linear_classifier(std::span<const LabeledVector> train,
                                  const LinearFitOptions& options = {});

/// Mann-Whitney AUC: chance a random positive outscores a random negative,
/// ties counting one half. O(n log n).
double auc(std::span<const double> scores, std::span<const int> labels);

struct LayerScore {
  int layer = 0;
  double auc = 0.5;
  std::size_t n_train = 0;
  std::size_t n_val = 0;

  Json to_json() const;
};

// Fits on `train`, scores `validation`.
LayerScore score_layer(int layer, std::span<const LabeledVector> train,
                       std::span<const LabeledVector> validation,
                       const LinearFitOptions& options = {});

struct SeparabilitySplit {
  std::vector<LabeledVector> train;
  std::vector<LabeledVector> validation;
};

// TR states (label 1) against FA states (label 0) at `layer`. Whole samples
// go to validation with probability `validation_fraction`, decided by a
// hash of the sample id and `seed`, so no sample straddles the split.
SeparabilitySplit separability_split(const ContrastCorpus& corpus, int layer,
                                     double validation_fraction, std::uint64_t seed);

// Top-k by AUC descending, ties to the lower layer index. InvalidK if k <= 0.
std::vector<LayerScore> rank_layers(std::span<const LayerScore> per_layer, int k);

}  // namespace stepsteer
