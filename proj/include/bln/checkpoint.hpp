#pragma once

#include <string>

#include "bln/network.hpp"

// Versioned text checkpoints. Doubles are written with 17 significant
// digits, so a save/load round trip is bit-exact. See docs/formats.md for
// the field-by-field layout.

namespace bln {

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace bln
