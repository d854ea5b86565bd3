#include "stepsteer/vector_ops.hpp"

#include <cmath>
#include <string>

#include "stepsteer/error.hpp"

namespace stepsteer {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyContrastSet: return "EmptyContrastSet";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegeneratePerturbation: return "DegeneratePerturbation";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::MissingRecord: return "MissingRecord";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyEval: return "EmptyEval";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> a) {
  double acc = 0.0;
  for (double x : a) acc += x * x;
  return std::sqrt(acc);
}

void require_same_dim(std::span<const double> a, std::span<const double> b,
                      std::string_view what) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
  }
}

bool all_finite(std::span<const double> a) noexcept {
  for (double x : a) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace stepsteer
