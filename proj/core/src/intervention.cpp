#include "stepsteer/intervention.hpp"

#include <algorithm>
#include <cstring>

#include "stepsteer/error.hpp"
#include "stepsteer/extraction.hpp"

namespace stepsteer {

void SteeringSet::add(SteeringVector v) {
  auto& slot = v.kind == DirectionKind::Strict ? strict : lenient;
  const int layer = v.layer;
  slot.insert_or_assign(layer, std::move(v));
}

const SteeringVector* SteeringSet::find(Direction d, int layer) const {
  if (d == Direction::None) return nullptr;
  const auto& slot = d == Direction::Strict ? strict : lenient;
  auto it = slot.find(layer);
  return it == slot.end() ? nullptr : &it->second;
}

SteeringSet SteeringSet::load_directory(const std::filesystem::path& dir, std::span<const int> layers) {
  SteeringSet set;
  for (int layer : layers) {
    for (DirectionKind kind : {DirectionKind::Strict, DirectionKind::Lenient}) {
      const auto path = dir / steering_vector_filename(kind, layer);
      if (!std::filesystem::exists(path)) continue;
      SteeringVector v = load_steering_vector(path);
      if (v.kind != kind || v.layer != layer) {
        throw Error(ErrorCode::ConfigError, path.string() + " does not hold the " +
                                                std::string(to_string(kind)) + " vector for layer " +
                                                std::to_string(layer));
      }
      set.add(std::move(v));
    }
  }
  return set;
}

void require_vectors_for(const SteerPolicy& policy, const SteeringSet& vectors,
                         std::optional<int> hidden_dim) {
  std::vector<Direction> needed;
  switch (policy.variant) {
    case Variant::None: return;
    case Variant::Uni:
    case Variant::UniformCAA: needed = {Direction::Strict}; break;
    case Variant::Bi: needed = {Direction::Strict, Direction::Lenient}; break;
  }
  std::optional<std::size_t> dim;
  if (hidden_dim) dim = static_cast<std::size_t>(*hidden_dim);
  for (Direction d : needed) {
    for (int layer : policy.layers) {
      const SteeringVector* v = vectors.find(d, layer);
      if (v == nullptr) {
        throw Error(ErrorCode::ConfigError, "missing " + std::string(to_string(d)) +
                                                " steering vector for layer " + std::to_string(layer));
      }
      if (!dim) dim = v->direction.size();
      if (v->direction.size() != *dim) {
        throw Error(ErrorCode::ConfigError, "steering vector for layer " + std::to_string(layer) +
                                                " has dimension " + std::to_string(v->direction.size()) +
                                                ", expected " + std::to_string(*dim));
      }
    }
  }
}

DelimiterSteerer::DelimiterSteerer(const SteerPolicy& policy, const SteeringSet& vectors,
                                   Direction selected)
    : policy_(&policy), vectors_(&vectors), selected_(selected) {}

std::optional<Vector> DelimiterSteerer::steer(int layer, std::span<const double> h) {
  if (selected_ == Direction::None) return std::nullopt;
  const auto& layers = policy_->layers;
  if (std::find(layers.begin(), layers.end(), layer) == layers.end()) return std::nullopt;
  const SteeringVector* v = vectors_->find(selected_, layer);
  if (v == nullptr) {
    throw Error(ErrorCode::ConfigError, "no " + std::string(to_string(selected_)) +
                                            " vector for layer " + std::to_string(layer));
  }
  require_same_dim(h, v->direction, "steering vector vs hidden state");
  const double alpha = policy_->alpha_for(selected_);
  if (alpha == 0.0) return std::nullopt;
  if (l2_norm(v->direction) == 0.0 || l2_norm(h) == 0.0) return std::nullopt;

  const bool gated = policy_->variant != Variant::UniformCAA && policy_->delimiter_adaptive;
  if (gated && !gate_open(h, v->direction, policy_->rho_for(selected_))) return std::nullopt;

  Vector out;
  try {
    out = apply_steer(h, v->direction, alpha);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegeneratePerturbation) throw;
    ++degenerate_;
    return std::nullopt;
  }
  if (std::memcmp(out.data(), h.data(), h.size() * sizeof(double)) == 0) return std::nullopt;
  ++steered_;
  return out;
}

InterventionDecision DelimiterSteerer::operator()(const DelimiterEvent& event) {
  InterventionDecision decision;
  for (const auto& [layer, h] : event.states) {
    if (auto out = steer(layer, h)) decision.replacements.emplace(layer, std::move(*out));
  }
  return decision;
}

}  // namespace stepsteer
