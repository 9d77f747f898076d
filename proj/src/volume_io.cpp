#include "batunet/volume_io.hpp"

#include "batunet/byte_stream.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace batunet {

namespace {

void put_header(ByteWriter &out, std::uint8_t dtype, const Shape3 &s, std::size_t channels) {
    out.raw("VOL3", 4);
    out.u8(vol3::kVersion);
    out.u8(dtype);
    out.u32(static_cast<std::uint32_t>(s.d));
    out.u32(static_cast<std::uint32_t>(s.h));
    out.u32(static_cast<std::uint32_t>(s.w));
    out.u32(static_cast<std::uint32_t>(channels));
}

struct Header {
    std::uint8_t dtype;
    Shape3 shape;
    std::size_t channels;
};

Header get_header(ByteReader &in, std::uint8_t expected_dtype) {
    if (in.remaining() < 4 || std::memcmp(in.peek(), "VOL3", 4) != 0)
        throw FormatError("bad magic, expected VOL3", 0);
    in.skip(4);
    if (in.remaining() < vol3::kHeaderSize - 4)
        throw FormatError("truncated header", in.offset());
    const auto version = in.u8();
    if (version != vol3::kVersion)
        throw FormatError("unsupported VOL3 version " + std::to_string(version), in.offset() - 1);
    const auto dtype = in.u8();
    if (dtype != expected_dtype)
        throw FormatError("unexpected dtype code " + std::to_string(dtype), in.offset() - 1);
    Header h{dtype, {}, 0};
    h.shape.d = in.u32();
    h.shape.h = in.u32();
    h.shape.w = in.u32();
    h.channels = in.u32();
    if (!h.shape.valid() || h.channels == 0)
        throw FormatError("zero dimension in header", in.offset() - 16);
    if (dtype == vol3::kMask && h.channels != 1)
        throw FormatError("mask containers must have one channel", in.offset() - 4);
    return h;
}

} // namespace

Bytes write_volume(const VolumeF &v) {
    if (!v.all_finite())
        throw InvalidInput("write_volume: volume contains non-finite values");
    ByteWriter out;
    put_header(out, vol3::kFloat32, v.shape(), v.channels());
    for (Eigen::Index i = 0; i < v.data().size(); ++i)
        out.f32(v.data()[i]);
    return out.take();
}

Bytes write_mask(const MaskVolume &m) {
    ByteWriter out;
    put_header(out, vol3::kMask, m.shape, 1);
    for (auto b : m.data) {
        if (b > 1)
            throw InvalidInput("write_mask: label values must be 0 or 1");
        out.u8(b);
    }
    return out.take();
}

VolumeD read_volume(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    const auto h = get_header(in, vol3::kFloat32);
    const std::size_t count = h.channels * h.shape.voxels();
    if (in.remaining() / 4 < count)
        throw FormatError("truncated payload: header declares " + std::to_string(count) + " floats, " +
                              std::to_string(in.remaining() / 4) + " present",
                          in.offset());
    if (in.remaining() != count * 4)
        throw FormatError("trailing bytes after payload", in.offset() + count * 4);
    VolumeD v(h.shape, h.channels);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t at = in.offset();
        const float f = in.f32();
        if (!std::isfinite(f))
            throw FormatError("non-finite value in payload", at);
        v.data()[static_cast<Eigen::Index>(i)] = f;
    }
    return v;
}

MaskVolume read_mask(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    const auto h = get_header(in, vol3::kMask);
    const std::size_t count = h.shape.voxels();
    if (in.remaining() < count)
        throw FormatError("truncated payload: header declares " + std::to_string(count) + " labels, " +
                              std::to_string(in.remaining()) + " present",
                          in.offset());
    if (in.remaining() != count)
        throw FormatError("trailing bytes after payload", in.offset() + count);
    MaskVolume m(h.shape);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t at = in.offset();
        const auto b = in.u8();
        if (b > 1)
            throw FormatError("mask label outside {0,1}", at);
        m.data[i] = b;
    }
    return m;
}

void save_file_atomic(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw IoError("cannot open " + tmp.string() + " for writing");
        f.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f)
            throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_file_atomic(const std::filesystem::path &path, std::string_view text) {
    save_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

Bytes load_file(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

} // namespace batunet
