#pragma once

#include <cstdint>
#include <string>

#include "stepsteer/json_io.hpp"

namespace stepsteer {

enum class Capability { LiveGeneration, ReplayOnly };

struct BackendDescriptor {
  std::string name;
  int n_layers = 1;
  int hidden_dim = 1;
  int vocab_size = 0;  // toy backend only
  std::uint64_t active_params = 0;
  Capability capability = Capability::LiveGeneration;

  // Throws ConfigError on n_layers < 1 or hidden_dim < 1.
  void validate() const;
  Json to_json() const;
};

}  // namespace stepsteer
