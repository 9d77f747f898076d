#include "batunet/data.hpp"

#include "batunet/parallel.hpp"
#include "batunet/volume_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>

namespace batunet {

namespace {

constexpr std::uint64_t kTagSample = 0x5a3f;
constexpr std::uint64_t kTagSplit = 0x5b11;
constexpr std::uint64_t kTagBatch = 0x5b7c;
constexpr int kPlacementAttempts = 200;

struct Ellipsoid {
    std::array<double, 3> centre;
    std::array<double, 3> semi;

    bool contains(double z, double y, double x) const {
        const double dz = (z - centre[0]) / semi[0];
        const double dy = (y - centre[1]) / semi[1];
        const double dx = (x - centre[2]) / semi[2];
        return dz * dz + dy * dy + dx * dx <= 1.0;
    }
};

std::array<double, 3> dims_of(const Shape3 &s) {
    return {static_cast<double>(s.d), static_cast<double>(s.h), static_cast<double>(s.w)};
}

// Runs fn(z, y, x) over the voxels of the bounding box of e clipped to s.
template <typename Fn> void for_each_in_box(const Ellipsoid &e, const Shape3 &s, Fn &&fn) {
    const auto dims = dims_of(s);
    std::array<std::size_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<std::size_t>(std::max(0.0, std::floor(e.centre[a] - e.semi[a])));
        hi[a] = static_cast<std::size_t>(std::clamp(std::ceil(e.centre[a] + e.semi[a]), 0.0, dims[a] - 1.0));
    }
    for (std::size_t z = lo[0]; z <= hi[0]; ++z)
        for (std::size_t y = lo[1]; y <= hi[1]; ++y)
            for (std::size_t x = lo[2]; x <= hi[2]; ++x)
                fn(z, y, x);
}

bool inside_organ(const Ellipsoid &tumor, const Ellipsoid &organ, const Shape3 &s) {
    bool ok = true;
    for_each_in_box(tumor, s, [&](std::size_t z, std::size_t y, std::size_t x) {
        const double fz = static_cast<double>(z), fy = static_cast<double>(y), fx = static_cast<double>(x);
        if (ok && tumor.contains(fz, fy, fx) && !organ.contains(fz, fy, fx))
            ok = false;
    });
    return ok;
}

} // namespace

void SynthSpec::validate() const {
    if (num_samples == 0)
        throw InvalidInput("SynthSpec: num_samples must be >= 1");
    if (!raw_shape.valid() || !target_shape.valid())
        throw InvalidInput("SynthSpec: shapes must be at least 1x1x1");
    if (tumor_count_range[0] > tumor_count_range[1])
        throw InvalidInput("SynthSpec: tumor_count_range min exceeds max");
    if (!(tumor_radius_range[0] >= 1.0) || tumor_radius_range[0] > tumor_radius_range[1])
        throw InvalidInput("SynthSpec: tumor_radius_range must satisfy 1 <= min <= max");
    if (!(background_noise_sigma >= 0.0))
        throw InvalidInput("SynthSpec: background_noise_sigma must be >= 0");
    if (!std::isfinite(organ_intensity) || !std::isfinite(tumor_intensity))
        throw InvalidInput("SynthSpec: intensities must be finite");
}

std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case%04zu", index);
    return buf;
}

RawSample generate_raw_sample(const SynthSpec &spec, std::size_t index) {
    spec.validate();
    Rng rng = make_rng(spec.seed, {kTagSample, index});
    const auto &s = spec.raw_shape;
    const auto dims = dims_of(s);

    Ellipsoid organ{};
    for (int a = 0; a < 3; ++a) {
        organ.centre[a] = (dims[a] - 1.0) / 2.0 + uniform(rng, -0.05, 0.05) * dims[a];
        organ.semi[a] = uniform(rng, 0.30, 0.42) * dims[a];
    }
    const double organ_min_semi = *std::min_element(organ.semi.begin(), organ.semi.end());

    const auto count = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(spec.tumor_count_range[0]),
                                                            static_cast<std::int64_t>(spec.tumor_count_range[1])));
    std::vector<Ellipsoid> tumors;
    for (std::size_t t = 0; t < count; ++t) {
        const double r = uniform(rng, spec.tumor_radius_range[0], spec.tumor_radius_range[1]);
        Ellipsoid tumor{};
        for (int a = 0; a < 3; ++a)
            tumor.semi[a] = std::max(1.0, r * uniform(rng, 0.85, 1.15));
        const double tumor_max_semi = *std::max_element(tumor.semi.begin(), tumor.semi.end());
        if (tumor_max_semi >= organ_min_semi)
            throw GenerationError("generate: tumor semi-axis " + std::to_string(tumor_max_semi) +
                                  " does not fit inside organ (smallest semi-axis " + std::to_string(organ_min_semi) +
                                  ") for sample " + std::to_string(index));
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            for (int a = 0; a < 3; ++a)
                tumor.centre[a] = organ.centre[a] + uniform(rng, -1.0, 1.0) * (organ.semi[a] - tumor.semi[a]);
            placed = organ.contains(tumor.centre[0], tumor.centre[1], tumor.centre[2]) && inside_organ(tumor, organ, s);
        }
        if (!placed)
            throw GenerationError("generate: could not place tumor " + std::to_string(t) + " inside organ for sample " +
                                  std::to_string(index));
        tumors.push_back(tumor);
    }

    RawSample raw{VolumeD(s, 1), MaskVolume(s)};
    for (std::size_t z = 0; z < s.d; ++z)
        for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t x = 0; x < s.w; ++x) {
                const double fz = static_cast<double>(z), fy = static_cast<double>(y), fx = static_cast<double>(x);
                if (organ.contains(fz, fy, fx))
                    raw.image(0, z, y, x) = spec.organ_intensity;
            }
    for (const auto &t : tumors)
        for_each_in_box(t, s, [&](std::size_t z, std::size_t y, std::size_t x) {
            if (t.contains(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))) {
                raw.image(0, z, y, x) = spec.tumor_intensity;
                raw.mask(z, y, x) = 1;
            }
        });
    if (spec.background_noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.background_noise_sigma);
        for (Eigen::Index i = 0; i < raw.image.data().size(); ++i)
            raw.image.data()[i] = std::max(0.0, raw.image.data()[i] + noise(rng));
    } else {
        raw.image.data() = raw.image.data().max(0.0);
    }
    return raw;
}

SegSample preprocess(const RawSample &raw, Shape3 target, std::string id) {
    if (!(raw.image.shape() == raw.mask.shape) || raw.image.channels() != 1)
        throw ShapeError("preprocess: image and mask shapes differ");
    return {trilinear_resize(normalize_max(raw.image), target), nearest_resize(raw.mask, target), std::move(id)};
}

std::vector<SegSample> generate_dataset(const SynthSpec &spec, std::size_t threads) {
    spec.validate();
    std::vector<SegSample> out(spec.num_samples);
    parallel_for(spec.num_samples, threads, [&](std::size_t i) {
        out[i] = preprocess(generate_raw_sample(spec, i), spec.target_shape, sample_id(i));
    });
    return out;
}

AugmentDraw draw_augmentation(Rng &rng, const Shape3 &shape) {
    AugmentDraw d;
    for (auto &f : d.flip)
        f = uniform01(rng) < 0.5;
    d.quarter_turns = static_cast<int>(uniform_index(rng, 4));
    if (shape.d != shape.h)
        d.quarter_turns &= ~1;
    for (auto &s : d.shift)
        s = static_cast<int>(uniform_int(rng, -kMaxShift, kMaxShift));
    return d;
}

SegSample apply_augmentation(const SegSample &s, const AugmentDraw &draw) {
    const Shape3 &sh = s.mask.shape;
    if (!(s.image.shape() == sh))
        throw ShapeError("augment: image and mask shapes differ");
    if (draw.quarter_turns % 2 && sh.d != sh.h)
        throw InvalidInput("augment: odd quarter turns need a square (d, h) plane");
    const std::array<std::ptrdiff_t, 3> n{static_cast<std::ptrdiff_t>(sh.d), static_cast<std::ptrdiff_t>(sh.h),
                                          static_cast<std::ptrdiff_t>(sh.w)};
    SegSample out{VolumeD(sh, s.image.channels()), MaskVolume(sh), s.id};
    const int turns = ((draw.quarter_turns % 4) + 4) % 4;
    for (std::ptrdiff_t z = 0; z < n[0]; ++z)
        for (std::ptrdiff_t y = 0; y < n[1]; ++y)
            for (std::ptrdiff_t x = 0; x < n[2]; ++x) {
                // Output voxel p reads input flip(rot^-k(p - shift)).
                std::array<std::ptrdiff_t, 3> p{z - draw.shift[0], y - draw.shift[1], x - draw.shift[2]};
                if (p[0] < 0 || p[0] >= n[0] || p[1] < 0 || p[1] >= n[1] || p[2] < 0 || p[2] >= n[2])
                    continue;
                // A half turn is a double flip, valid on any plane; odd turns
                // only reach here when d == h.
                if (turns == 2)
                    p = {n[0] - 1 - p[0], n[1] - 1 - p[1], p[2]};
                else
                    for (int k = 0; k < turns; ++k)
                        p = {n[1] - 1 - p[1], p[0], p[2]};
                for (int a = 0; a < 3; ++a)
                    if (draw.flip[a])
                        p[a] = n[a] - 1 - p[a];
                const auto uz = static_cast<std::size_t>(z), uy = static_cast<std::size_t>(y),
                           ux = static_cast<std::size_t>(x);
                const auto sz = static_cast<std::size_t>(p[0]), sy = static_cast<std::size_t>(p[1]),
                           sx = static_cast<std::size_t>(p[2]);
                for (std::size_t c = 0; c < s.image.channels(); ++c)
                    out.image(c, uz, uy, ux) = s.image(c, sz, sy, sx);
                out.mask(uz, uy, ux) = s.mask(sz, sy, sx);
            }
    return out;
}

SplitIndex split_dataset(const std::vector<std::string> &ids, double ratio, std::uint64_t seed) {
    if (ids.size() < 2)
        throw InvalidInput("split_dataset: need at least two samples");
    if (!(ratio > 0.0 && ratio < 1.0))
        throw InvalidInput("split_dataset: ratio must lie in (0,1)");
    std::vector<std::string> order = ids;
    Rng rng = make_rng(seed, {kTagSplit});
    shuffle(order, rng);
    const auto n = static_cast<double>(ids.size());
    const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * n)), 1, ids.size() - 1);
    SplitIndex s;
    s.ratio = ratio;
    s.seed = seed;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return s;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t> &indices, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size == 0)
        throw InvalidInput("make_batches: batch_size must be >= 1");
    std::vector<std::size_t> order = indices;
    Rng rng = make_rng(seed, {kTagBatch, epoch});
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    return batches;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson shape_json(const Shape3 &s) { return ojson::array({s.d, s.h, s.w}); }

Shape3 shape_from(const ojson &j) {
    if (!j.is_array() || j.size() != 3)
        throw InvalidInput("manifest: shape must be [d, h, w]");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

} // namespace

std::string manifest_to_json(const DatasetManifest &m) {
    ojson j;
    j["format"] = "batunet-dataset";
    j["version"] = 1;
    j["synthetic"] = m.synthetic;
    j["seed"] = m.seed;
    j["ids"] = m.ids;
    const auto &s = m.spec;
    j["spec"] = {{"num_samples", s.num_samples},
                 {"raw_shape", shape_json(s.raw_shape)},
                 {"target_shape", shape_json(s.target_shape)},
                 {"tumor_count_range", s.tumor_count_range},
                 {"tumor_radius_range", s.tumor_radius_range},
                 {"background_noise_sigma", s.background_noise_sigma},
                 {"organ_intensity", s.organ_intensity},
                 {"tumor_intensity", s.tumor_intensity},
                 {"seed", s.seed}};
    j["split"] = {{"ratio", m.split.ratio}, {"seed", m.split.seed}, {"train", m.split.train}, {"val", m.split.val}};
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string &text) {
    try {
        const auto j = ojson::parse(text);
        if (j.value("format", "") != "batunet-dataset")
            throw InvalidInput("manifest: not a batunet dataset manifest");
        DatasetManifest m;
        m.synthetic = j.at("synthetic").get<bool>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.ids = j.at("ids").get<std::vector<std::string>>();
        const auto &s = j.at("spec");
        m.spec.num_samples = s.at("num_samples").get<std::size_t>();
        m.spec.raw_shape = shape_from(s.at("raw_shape"));
        m.spec.target_shape = shape_from(s.at("target_shape"));
        m.spec.tumor_count_range = s.at("tumor_count_range").get<std::array<std::size_t, 2>>();
        m.spec.tumor_radius_range = s.at("tumor_radius_range").get<std::array<double, 2>>();
        m.spec.background_noise_sigma = s.at("background_noise_sigma").get<double>();
        m.spec.organ_intensity = s.at("organ_intensity").get<double>();
        m.spec.tumor_intensity = s.at("tumor_intensity").get<double>();
        m.spec.seed = s.at("seed").get<std::uint64_t>();
        const auto &sp = j.at("split");
        m.split.ratio = sp.at("ratio").get<double>();
        m.split.seed = sp.at("seed").get<std::uint64_t>();
        m.split.train = sp.at("train").get<std::vector<std::string>>();
        m.split.val = sp.at("val").get<std::vector<std::string>>();
        return m;
    } catch (const nlohmann::json::exception &e) {
        throw InvalidInput(std::string("manifest: ") + e.what());
    }
}

void save_dataset(const std::filesystem::path &dir, const std::vector<SegSample> &samples,
                  const DatasetManifest &manifest) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    for (const auto &s : samples) {
        save_file_atomic(dir / (s.id + ".img.vol3"), write_volume(s.image));
        save_file_atomic(dir / (s.id + ".mask.vol3"), write_mask(s.mask));
    }
    save_file_atomic(dir / "manifest.json", manifest_to_json(manifest));
}

LoadedDataset load_dataset(const std::filesystem::path &dir) {
    const auto text = load_file(dir / "manifest.json");
    LoadedDataset ds;
    ds.manifest = manifest_from_json(std::string(text.begin(), text.end()));
    for (const auto &id : ds.manifest.ids) {
        SegSample s;
        s.id = id;
        s.image = read_volume(load_file(dir / (id + ".img.vol3")));
        s.mask = read_mask(load_file(dir / (id + ".mask.vol3")));
        if (!(s.image.shape() == s.mask.shape))
            throw InvalidInput("dataset: image and mask shapes differ for " + id);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::vector<SegSample> import_raw_dataset(const std::filesystem::path &dir, Shape3 target) {
    std::map<std::string, std::filesystem::path> images;
    const std::string suffix = ".img.vol3";
    for (const auto &entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.size() > suffix.size() && name.ends_with(suffix))
            images.emplace(name.substr(0, name.size() - suffix.size()), entry.path());
    }
    if (images.empty())
        throw InvalidInput("import: no *.img.vol3 files in " + dir.string());
    std::vector<SegSample> out;
    for (const auto &[id, path] : images) {
        RawSample raw{read_volume(load_file(path)), read_mask(load_file(dir / (id + ".mask.vol3")))};
        out.push_back(preprocess(raw, target, id));
    }
    return out;
}

} // namespace batunet
