#pragma once

#include <string>
#include <vector>

#include "afrpn/tensor.hpp"

namespace afrpn {

// Checkpoint file: one line of JSON manifest (version "DTF1", entry names,
// shapes, dtype) followed by a raw little-endian blob of values concatenated
// in manifest order. Momentum buffers are stored as "<name>.momentum"
// entries and are optional on load.
void save_checkpoint(const std::string& path,
                     const std::vector<Parameter*>& params,
                     bool include_momentum = true);

// Loads into an already-built parameter set. Shape or name mismatches throw
// CompatError; missing momentum entries leave the buffers at zero.
void load_checkpoint(const std::string& path,
                     const std::vector<Parameter*>& params);

}  // namespace afrpn
