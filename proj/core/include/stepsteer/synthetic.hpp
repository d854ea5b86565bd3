#pragma once

#include <cstdint>
#include <vector>

#include "stepsteer/trace.hpp"

namespace stepsteer {

// Arithmetic word problems with 2-5 tagged steps; about half contain a
// wrong step. Identical for identical (n, seed).
std::vector<LabeledSample> make_synthetic_samples(std::size_t n, std::uint64_t seed);

}  // namespace stepsteer
