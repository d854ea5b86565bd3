#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "stepsteer/vector_ops.hpp"

namespace stepsteer {

// Outcome role of the verification paragraph a delimiter state precedes.
enum class Role { TA, FA, TR, FR, Unlabeled };

std::string_view to_string(Role role) noexcept;
std::optional<Role> role_from_string(std::string_view s) noexcept;

// Residual activation of one layer at one token position.
struct HiddenState {
  int layer = 0;
  std::int64_t position = 0;
  Vector values;
  Role role = Role::Unlabeled;
};

enum class DirectionKind { Strict, Lenient };

std::string_view to_string(DirectionKind kind) noexcept;
std::optional<DirectionKind> direction_kind_from_string(std::string_view s) noexcept;

struct SteeringVector {
  Vector direction;
  DirectionKind kind = DirectionKind::Strict;
  int layer = 0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
};

enum class Variant { None, Uni, Bi, UniformCAA };

std::string_view to_string(Variant v) noexcept;
std::optional<Variant> variant_from_string(std::string_view s) noexcept;

enum class Direction { None, Strict, Lenient };

std::string_view to_string(Direction d) noexcept;

// Inference-time steering configuration. The same alpha applies at every
// configured layer; all configured layers are steered in the same pass.
struct SteerPolicy {
  std::vector<int> layers;
  double alpha_strict = 1.0;
  double alpha_lenient = 1.0;
  double tau_low = 0.5;
  double tau_high = 0.7;
  double rho_strict = 0.0;
  double rho_lenient = 0.0;
  Variant variant = Variant::None;

  // Ablation switches. With sample_adaptive off, every sample is routed to
  // the strict direction; with delimiter_adaptive off the cosine gate is
  // bypassed and every delimiter is steered.
  bool sample_adaptive = true;
  bool delimiter_adaptive = true;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  double alpha_for(Direction d) const noexcept;
  double rho_for(Direction d) const noexcept;
};

/// Mean of `positives` minus mean of `negatives`.
///
/// Throws EmptyContrastSet if either set is empty and DimensionMismatch if
/// the states disagree in dimension or layer.
SteeringVector build_steering_vector(std::span<const HiddenState> positives,
                                     std::span<const HiddenState> negatives,
                                     DirectionKind kind);

/// Norm-preserving perturbation: ||h|| * (h + alpha d) / ||h + alpha d||.
///
/// alpha == 0 and d a positive multiple of h return h bit-for-bit. Throws
/// DegeneratePerturbation when h + alpha d vanishes; the caller leaves that
/// token un-steered.
Vector apply_steer(std::span<const double> h, std::span<const double> d,
                   double alpha);
HiddenState apply_steer(const HiddenState& h, const SteeringVector& d,
                        double alpha);

/// Uncentered cosine similarity. Throws ZeroVector on a zero input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// True when the delimiter gate lets steering through: cossim(h, d) < rho.
bool gate_open(std::span<const double> h, std::span<const double> d, double rho);

/// Steers h only when cossim(h, d) < rho; otherwise returns h unchanged.
Vector gated_steer(std::span<const double> h, std::span<const double> d,
                   double alpha, double rho);
HiddenState gated_steer(const HiddenState& h, const SteeringVector& d,
                        double alpha, double rho);

/// Sample-level direction choice from the probe score q in [0, 1].
Direction route(double q, const SteerPolicy& policy);

}  // namespace stepsteer
