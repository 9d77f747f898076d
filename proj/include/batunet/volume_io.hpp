#pragma once

#include "batunet/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace batunet {

/// VOL3 container: "VOL3", u8 version (1), u8 dtype (1 = float32, 2 = uint8
/// mask), u32 d, u32 h, u32 w, u32 channels, then the row-major payload.
/// All integers and floats are little-endian.
namespace vol3 {
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kFloat32 = 1;
inline constexpr std::uint8_t kMask = 2;
inline constexpr std::size_t kHeaderSize = 4 + 1 + 1 + 4 * 4;
} // namespace vol3

using Bytes = std::vector<std::uint8_t>;

Bytes write_volume(const VolumeF &v);
Bytes write_mask(const MaskVolume &m);

template <typename Scalar> Bytes write_volume(const Volume<Scalar> &v) { return write_volume(v.template cast<float>()); }

VolumeD read_volume(std::span<const std::uint8_t> bytes);
MaskVolume read_mask(std::span<const std::uint8_t> bytes);

/// Writes via a sibling temp file and rename, so readers never see a partial file.
void save_file_atomic(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);
void save_file_atomic(const std::filesystem::path &path, std::string_view text);
Bytes load_file(const std::filesystem::path &path);

} // namespace batunet
