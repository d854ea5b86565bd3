#include "stepsteer/layer_select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stepsteer/error.hpp"
#include "stepsteer/random.hpp"

namespace stepsteer {

double LinearModel::score(std::span<const double> x) const { return dot(weight, x) + bias; }

namespace {

void require_both(std::span<const int> labels) {
  bool pos = false;
  bool neg = false;
  for (int y : labels) {
    if (y == 1) {
      pos = true;
    } else if (y == 0) {
      neg = true;
    } else {
      throw Error(ErrorCode::ConfigError, "labels must be 0 or 1");
    }
  }
  if (!pos || !neg) throw Error(ErrorCode::DegenerateLabels, "both classes are required");
}

double log1pexp(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

LinearModel fit_linear_classifier(std::span<const LabeledVector> train,
                                  const LinearFitOptions& options) {
  std::vector<int> labels;
  labels.reserve(train.size());
  for (const auto& t : train) labels.push_back(t.label);
  require_both(labels);
  const std::size_t dim = train.front().x.size();
  for (const auto& t : train) {
    if (t.x.size() != dim) throw Error(ErrorCode::DimensionMismatch, "ragged classifier inputs");
  }

  LinearModel model;
  model.weight.assign(dim, 0.0);
  const double inv_n = 1.0 / static_cast<double>(train.size());

  auto loss_and_grad = [&](Vector* gw, double* gb) {
    double loss = 0.0;
    if (gw != nullptr) {
      std::fill(gw->begin(), gw->end(), 0.0);
      *gb = 0.0;
    }
    for (const auto& t : train) {
      const double z = model.score(t.x);
      loss += log1pexp(z) - z * t.label;
      if (gw != nullptr) {
        const double r = (sigmoid(z) - t.label) * inv_n;
        for (std::size_t i = 0; i < dim; ++i) (*gw)[i] += r * t.x[i];
        *gb += r;
      }
    }
    loss *= inv_n;
    double reg = 0.0;
    for (double w : model.weight) reg += w * w;
    loss += 0.5 * options.l2 * reg;
    if (gw != nullptr) {
      for (std::size_t i = 0; i < dim; ++i) (*gw)[i] += options.l2 * model.weight[i];
    }
    return loss;
  };

  Vector gw(dim);
  double gb = 0.0;
  double prev = loss_and_grad(&gw, &gb);
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    for (std::size_t i = 0; i < dim; ++i) model.weight[i] -= options.learning_rate * gw[i];
    model.bias -= options.learning_rate * gb;
    const double cur = loss_and_grad(&gw, &gb);
    model.iterations = it + 1;
    model.final_loss = cur;
    if (std::abs(prev - cur) < options.tolerance) break;
    prev = cur;
  }
  return model;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "auc: scores and labels differ in length");
  }
  require_both(labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(labels.size() - n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

Json LayerScore::to_json() const {
  return Json{{"layer", layer}, {"auc", auc}, {"n_train", n_train}, {"n_val", n_val}};
}

LayerScore score_layer(int layer, std::span<const LabeledVector> train,
                       std::span<const LabeledVector> validation, const LinearFitOptions& options) {
  const LinearModel model = fit_linear_classifier(train, options);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& v : validation) {
    scores.push_back(model.score(v.x));
    labels.push_back(v.label);
  }
  LayerScore s;
  s.layer = layer;
  s.auc = stepsteer::auc(scores, labels);
  s.n_train = train.size();
  s.n_val = validation.size();
  return s;
}

namespace {

std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

SeparabilitySplit separability_split(const ContrastCorpus& corpus, int layer,
                                     double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "validation fraction must lie in [0, 1)");
  }
  SeparabilitySplit split;
  for (auto [role, label] : {std::pair{Role::TR, 1}, std::pair{Role::FA, 0}}) {
    for (auto& c : corpus.collected(layer, role)) {
      Rng rng(derive_seed(seed, SeedStream::DataSplit, fnv1a(c.sample_id)));
      auto& dest = uniform01(rng) < validation_fraction ? split.validation : split.train;
      dest.push_back(LabeledVector{std::move(c.state.values), label});
    }
  }
  return split;
}

std::vector<LayerScore> rank_layers(std::span<const LayerScore> per_layer, int k) {
  if (k <= 0) throw Error(ErrorCode::InvalidK, "k must be positive, got " + std::to_string(k));
  if (per_layer.empty()) throw Error(ErrorCode::ConfigError, "no layer scores to rank");
  std::vector<LayerScore> out(per_layer.begin(), per_layer.end());
  std::sort(out.begin(), out.end(), [](const LayerScore& a, const LayerScore& b) {
    if (a.auc != b.auc) return a.auc > b.auc;
    return a.layer < b.layer;
  });
  if (out.size() > static_cast<std::size_t>(k)) out.resize(static_cast<std::size_t>(k));
  return out;
}

}  // namespace stepsteer
