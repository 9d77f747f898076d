#pragma once

#include "batunet/unet.hpp"
#include "batunet/volume_io.hpp"

namespace batunet {

/// UNC1 checkpoint: "UNC1", u32 version, u32 d/h/w/base_filters/depth/
/// in_channels/out_channels, then for every layer in conv1..conv8 order the
/// weights and bias as u64 count + f64 values, then the Adam first and
/// second moments in the same layout, then the u64 step counter.
inline constexpr std::uint32_t kCheckpointVersion = 1;

Bytes save_checkpoint(const UNetModel &m);
UNetModel load_checkpoint(std::span<const std::uint8_t> bytes);

} // namespace batunet
