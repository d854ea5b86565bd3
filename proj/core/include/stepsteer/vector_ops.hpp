#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace stepsteer {

// Dense activation vector. All steering arithmetic runs in double precision.
using Vector = std::vector<double>;

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

// Throws DimensionMismatch naming `what` if the sizes differ.
void require_same_dim(std::span<const double> a, std::span<const double> b,
                      std::string_view what);

bool all_finite(std::span<const double> a) noexcept;

}  // namespace stepsteer
