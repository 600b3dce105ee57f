#pragma once

#include <string>

#include "tokshift/model.hpp"

namespace tokshift {

// TKSF checkpoint: magic "TKSF", version u32=1, tensor count u32, then per
// tensor: name length u16, UTF-8 name, rank u8, dims u64 each, values as
// 32-bit little-endian reals. All integers little-endian.
void save_checkpoint(const std::string& path, const Parameters& params);

// Loads into a skeleton built from cfg; every name must be present with the
// expected shape (mismatches are rejected with both shapes in the message).
Parameters load_checkpoint(const std::string& path, const ModelConfig& cfg);

}  // namespace tokshift
