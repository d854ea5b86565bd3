#include "stepsteer/steer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "stepsteer/error.hpp"

namespace stepsteer {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::TA: return "TA";
    case Role::FA: return "FA";
    case Role::TR: return "TR";
    case Role::FR: return "FR";
    case Role::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

std::optional<Role> role_from_string(std::string_view s) noexcept {
  if (s == "TA") return Role::TA;
  if (s == "FA") return Role::FA;
  if (s == "TR") return Role::TR;
  if (s == "FR") return Role::FR;
  if (s == "unlabeled") return Role::Unlabeled;
  return std::nullopt;
}

std::string_view to_string(DirectionKind kind) noexcept {
  return kind == DirectionKind::Strict ? "strict" : "lenient";
}

std::optional<DirectionKind> direction_kind_from_string(std::string_view s) noexcept {
  if (s == "strict") return DirectionKind::Strict;
  if (s == "lenient") return DirectionKind::Lenient;
  return std::nullopt;
}

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::None: return "none";
    case Variant::Uni: return "uni";
    case Variant::Bi: return "bi";
    case Variant::UniformCAA: return "caa";
  }
  return "none";
}

std::optional<Variant> variant_from_string(std::string_view s) noexcept {
  if (s == "none" || s == "None") return Variant::None;
  if (s == "uni" || s == "Uni") return Variant::Uni;
  if (s == "bi" || s == "Bi") return Variant::Bi;
  if (s == "caa" || s == "UniformCAA" || s == "uniform-caa") return Variant::UniformCAA;
  return std::nullopt;
}

std::string_view to_string(Direction d) noexcept {
  switch (d) {
    case Direction::None: return "none";
    case Direction::Strict: return "strict";
    case Direction::Lenient: return "lenient";
  }
  return "none";
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigError, what);
}

bool in_unit(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

// d is a nonnegative multiple of h up to a few ulps.
bool positively_parallel(std::span<const double> h, std::span<const double> d) {
  std::size_t pivot = 0;
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (std::abs(h[i]) > std::abs(h[pivot])) pivot = i;
  }
  if (h[pivot] == 0.0) return false;
  const double scale = d[pivot] / h[pivot];
  if (!(scale >= 0.0)) return false;
  constexpr double tol = 4.0 * std::numeric_limits<double>::epsilon();
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double expected = scale * h[i];
    if (std::abs(d[i] - expected) > tol * std::max(std::abs(d[i]), std::abs(expected))) {
      return false;
    }
  }
  return true;
}

}  // namespace

void SteerPolicy::validate() const {
  require(std::isfinite(alpha_strict) && alpha_strict >= 0.0,
          "alpha_strict must be a nonnegative finite number");
  require(std::isfinite(alpha_lenient) && alpha_lenient >= 0.0,
          "alpha_lenient must be a nonnegative finite number");
  require(in_unit(tau_low), "tau_low must lie in [0,1]");
  require(in_unit(tau_high), "tau_high must lie in [0,1]");
  require(std::isfinite(rho_strict) && rho_strict >= -1.0 && rho_strict <= 1.0,
          "rho_strict must lie in [-1,1]");
  require(std::isfinite(rho_lenient) && rho_lenient >= -1.0 && rho_lenient <= 1.0,
          "rho_lenient must lie in [-1,1]");
  if (variant == Variant::Bi) {
    require(tau_low < tau_high, "tau_low must be below tau_high for the bidirectional variant");
  }
  std::set<int> seen;
  for (int l : layers) {
    require(l >= 0, "layer indices must be nonnegative");
    require(seen.insert(l).second, "duplicate layer " + std::to_string(l));
  }
  if (variant != Variant::None) {
    require(!layers.empty(), "steering requires at least one layer");
  }
}

double SteerPolicy::alpha_for(Direction d) const noexcept {
  switch (d) {
    case Direction::Strict: return alpha_strict;
    case Direction::Lenient: return alpha_lenient;
    case Direction::None: return 0.0;
  }
  return 0.0;
}

double SteerPolicy::rho_for(Direction d) const noexcept {
  return d == Direction::Lenient ? rho_lenient : rho_strict;
}

SteeringVector build_steering_vector(std::span<const HiddenState> positives,
                                     std::span<const HiddenState> negatives,
                                     DirectionKind kind) {
  if (positives.empty()) {
    throw Error(ErrorCode::EmptyContrastSet, "positive set is empty");
  }
  if (negatives.empty()) {
    throw Error(ErrorCode::EmptyContrastSet, "negative set is empty");
  }
  const std::size_t dim = positives.front().values.size();
  const int layer = positives.front().layer;
  if (dim == 0) throw Error(ErrorCode::DimensionMismatch, "empty hidden state");

  auto mean_of = [&](std::span<const HiddenState> states) {
    Vector sum(dim, 0.0);
    for (const auto& s : states) {
      if (s.values.size() != dim) {
        throw Error(ErrorCode::DimensionMismatch,
                    "state of dimension " + std::to_string(s.values.size()) +
                        " in a set of dimension " + std::to_string(dim));
      }
      if (s.layer != layer) {
        throw Error(ErrorCode::DimensionMismatch,
                    "state from layer " + std::to_string(s.layer) +
                        " mixed with layer " + std::to_string(layer));
      }
      for (std::size_t i = 0; i < dim; ++i) sum[i] += s.values[i];
    }
    const double n = static_cast<double>(states.size());
    for (double& x : sum) x /= n;
    return sum;
  };

  const Vector pos_mean = mean_of(positives);
  const Vector neg_mean = mean_of(negatives);
  SteeringVector out;
  out.direction.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) out.direction[i] = pos_mean[i] - neg_mean[i];
  out.kind = kind;
  out.layer = layer;
  out.n_positive = positives.size();
  out.n_negative = negatives.size();
  return out;
}

Vector apply_steer(std::span<const double> h, std::span<const double> d,
                   double alpha) {
  require_same_dim(h, d, "apply_steer");
  if (alpha == 0.0) return Vector(h.begin(), h.end());
  if (alpha > 0.0 && positively_parallel(h, d)) return Vector(h.begin(), h.end());

  Vector shifted(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) shifted[i] = h[i] + alpha * d[i];
  const double shifted_norm = l2_norm(shifted);
  if (shifted_norm == 0.0 || !std::isfinite(shifted_norm)) {
    throw Error(ErrorCode::DegeneratePerturbation, "||h + alpha d|| is zero");
  }
  const double scale = l2_norm(h) / shifted_norm;
  for (double& x : shifted) x *= scale;
  return shifted;
}

HiddenState apply_steer(const HiddenState& h, const SteeringVector& d, double alpha) {
  HiddenState out = h;
  out.values = apply_steer(h.values, d.direction, alpha);
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b, "cosine_similarity");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorCode::ZeroVector, "cosine similarity of a zero vector");
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

bool gate_open(std::span<const double> h, std::span<const double> d, double rho) {
  return cosine_similarity(h, d) < rho;
}

Vector gated_steer(std::span<const double> h, std::span<const double> d,
                   double alpha, double rho) {
  if (!gate_open(h, d, rho)) return Vector(h.begin(), h.end());
  return apply_steer(h, d, alpha);
}

HiddenState gated_steer(const HiddenState& h, const SteeringVector& d,
                        double alpha, double rho) {
  HiddenState out = h;
  out.values = gated_steer(h.values, d.direction, alpha, rho);
  return out;
}

Direction route(double q, const SteerPolicy& policy) {
  if (!in_unit(q)) {
    throw Error(ErrorCode::ConfigError, "probe score outside [0,1]");
  }
  switch (policy.variant) {
    case Variant::None: return Direction::None;
    case Variant::UniformCAA: return Direction::Strict;
    case Variant::Uni:
    case Variant::Bi: break;
  }
  if (!policy.sample_adaptive) return Direction::Strict;
  if (q <= policy.tau_low) return Direction::Strict;
  if (policy.variant == Variant::Bi && q >= policy.tau_high) return Direction::Lenient;
  return Direction::None;
}

}  // namespace stepsteer
