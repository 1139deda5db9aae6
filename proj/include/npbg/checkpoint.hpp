#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "npbg/rendernet.hpp"
#include "npbg/tensor.hpp"

namespace npbg {

/// Binary tensor checkpoint. Layout: magic "NPBGCKPT", version u32, count u32,
/// then per tensor: name (u16 length + UTF-8), rank u32, extents u32 x rank,
/// float32 little-endian values row-major.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensorf>>& tensors);
std::vector<std::pair<std::string, Tensorf>> load_checkpoint(const std::string& path);

/// Rendering-network checkpoint: NPBGCKPT tensors plus a JSON sidecar
/// (<path>.json) recording the configuration.
void save_rendernet(const std::string& path, const RenderNetParams<float>& params);
RenderNetParams<float> load_rendernet(const std::string& path);

/// Descriptor file: magic "NPBD", u32 N, u32 M, float32 little-endian N x M
/// row-major.
void save_descriptors(const std::string& path, const Tensorf& desc);
Tensorf load_descriptors(const std::string& path);

}  // namespace npbg
