#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vrap/tensor.hpp"

namespace vrap {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// "VRW1" weight container: magic, u32 LE tensor count, then per tensor
// u16 LE name length, UTF-8 name, u8 rank, u32 LE dims[rank], f32 LE values
// row-major.
void save_weights(const std::string& path, const NamedTensors& tensors);
NamedTensors load_weights(const std::string& path);

}  // namespace vrap
