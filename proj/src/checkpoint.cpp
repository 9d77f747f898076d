#include "batunet/checkpoint.hpp"

#include "batunet/byte_stream.hpp"

#include <cstring>

namespace batunet {

namespace {

template <typename Dense> void put_array(ByteWriter &out, const Dense &a) {
    out.u64(static_cast<std::uint64_t>(a.size()));
    for (Eigen::Index i = 0; i < a.size(); ++i)
        out.f64(a.data()[i]);
}

template <typename Dense> void get_array(ByteReader &in, Dense &a, std::string_view what) {
    const auto n = in.u64();
    if (n != static_cast<std::uint64_t>(a.size()))
        throw CheckpointError("checkpoint: " + std::string(what) + " has " + std::to_string(n) + " values, expected " +
                              std::to_string(a.size()));
    for (Eigen::Index i = 0; i < a.size(); ++i)
        a.data()[i] = in.f64();
}

} // namespace

Bytes save_checkpoint(const UNetModel &m) {
    ByteWriter out;
    out.raw("UNC1", 4);
    out.u32(kCheckpointVersion);
    const auto &c = m.config();
    for (auto v : {c.input_shape.d, c.input_shape.h, c.input_shape.w, c.base_filters, c.depth, c.in_channels,
                   c.out_channels})
        out.u32(static_cast<std::uint32_t>(v));
    for (const auto &l : m.layers()) {
        put_array(out, l.weights);
        put_array(out, l.bias);
    }
    for (const auto *moments : {&m.first_moment(), &m.second_moment()})
        for (const auto &g : *moments) {
            put_array(out, g.weights);
            put_array(out, g.bias);
        }
    out.u64(m.step());
    return out.take();
}

UNetModel load_checkpoint(std::span<const std::uint8_t> bytes) {
    try {
        ByteReader in(bytes);
        if (in.remaining() < 4 || std::memcmp(in.peek(), "UNC1", 4) != 0)
            throw CheckpointError("checkpoint: bad magic, expected UNC1");
        in.skip(4);
        const auto version = in.u32();
        if (version != kCheckpointVersion)
            throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
        UNetConfig cfg;
        cfg.input_shape.d = in.u32();
        cfg.input_shape.h = in.u32();
        cfg.input_shape.w = in.u32();
        cfg.base_filters = in.u32();
        cfg.depth = in.u32();
        cfg.in_channels = in.u32();
        cfg.out_channels = in.u32();
        try {
            cfg.validate();
        } catch (const InvalidInput &e) {
            throw CheckpointError(std::string("checkpoint: ") + e.what());
        }
        UNetModel m(cfg);
        for (std::size_t i = 0; i < m.layers().size(); ++i) {
            get_array(in, m.layers()[i].weights, UNetModel::layer_name(i));
            get_array(in, m.layers()[i].bias, UNetModel::layer_name(i));
        }
        for (auto *moments : {&m.first_moment(), &m.second_moment()})
            for (std::size_t i = 0; i < moments->size(); ++i) {
                get_array(in, (*moments)[i].weights, UNetModel::layer_name(i));
                get_array(in, (*moments)[i].bias, UNetModel::layer_name(i));
            }
        m.set_step(in.u64());
        if (in.remaining() != 0)
            throw CheckpointError("checkpoint: trailing bytes at offset " + std::to_string(in.offset()));
        return m;
    } catch (const FormatError &e) {
        throw CheckpointError(std::string("checkpoint truncated: ") + e.what());
    }
}

} // namespace batunet
