#pragma once

#include <string>

#include "arpm/nets.hpp"

namespace arpm {

// Versioned JSON container for a trained model plus critic and source
// weights. Float64 payloads round-trip bit-exactly (shortest-round-trip
// decimal serialization).
struct Checkpoint {
  int version = 1;
  std::string config_hash;
  long step = 0;
  RecognitionModel model;
  Discriminator discriminator;
  Vector weights;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace arpm
