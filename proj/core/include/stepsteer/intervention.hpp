#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>

#include "stepsteer/backend/records.hpp"
#include "stepsteer/steer.hpp"

namespace stepsteer {

// Steering vectors available to a run, keyed by layer.
struct SteeringSet {
  std::map<int, SteeringVector> strict;
  std::map<int, SteeringVector> lenient;

  void add(SteeringVector v);
  const SteeringVector* find(Direction d, int layer) const;
  bool empty() const noexcept { return strict.empty() && lenient.empty(); }

  // Loads "<kind>_L<layer>.json" for every requested layer and kind that
  // exists in `dir`.
  static SteeringSet load_directory(const std::filesystem::path& dir, std::span<const int> layers);
};

// Throws ConfigError if `policy` can select a direction whose vector is
// missing at one of its layers, or if vector dimensions disagree.
void require_vectors_for(const SteerPolicy& policy, const SteeringSet& vectors,
                         std::optional<int> hidden_dim = std::nullopt);

// Applies the delimiter-level rule for one sample once its direction has
// been routed. Plain value type; one instance per generation.
class DelimiterSteerer {
 public:
  DelimiterSteerer(const SteerPolicy& policy, const SteeringSet& vectors, Direction selected);

  // Replacement for the layer-`layer` state `h`, or nullopt to leave it.
  // UniformCAA ignores the gate; other variants steer only where
  // cossim(h, d) < rho, unless delimiter adaptivity is ablated.
  std::optional<Vector> steer(int layer, std::span<const double> h);

  InterventionDecision operator()(const DelimiterEvent& event);

  Direction selected() const noexcept { return selected_; }
  std::size_t steered_states() const noexcept { return steered_; }
  std::size_t degenerate_skips() const noexcept { return degenerate_; }

 private:
  const SteerPolicy* policy_;
  const SteeringSet* vectors_;
  Direction selected_;
  std::size_t steered_ = 0;
  std::size_t degenerate_ = 0;
};

}  // namespace stepsteer
