#include "batunet/unet.hpp"

#include "batunet/parallel.hpp"
#include "batunet/rng.hpp"

#include <cmath>
#include <random>

namespace batunet {

namespace {

constexpr std::array<std::string_view, UNetModel::kLayerCount> kLayerNames = {
    "conv1a", "conv1b", "conv2a", "conv2b", "conv3a", "conv3b", "conv4a", "conv4b",
    "conv5a", "conv5b", "conv6a", "conv6b", "conv7a", "conv7b", "conv8"};

std::vector<ConvLayer<double>> build_layers(const UNetConfig &cfg) {
    const std::size_t f = cfg.base_filters;
    std::vector<ConvLayer<double>> layers;
    layers.reserve(UNetModel::kLayerCount);
    std::size_t in = cfg.in_channels;
    for (std::size_t level = 0; level <= cfg.depth; ++level) {
        const std::size_t out = f << level;
        layers.emplace_back(in, out, 3);
        layers.emplace_back(out, out, 3);
        in = out;
    }
    for (std::size_t level = cfg.depth; level-- > 0;) {
        const std::size_t out = f << level;
        layers.emplace_back(in + out, out, 3);
        layers.emplace_back(out, out, 3);
        in = out;
    }
    layers.emplace_back(in, cfg.out_channels, 1);
    return layers;
}

Gradients zeros_like(const std::vector<ConvLayer<double>> &layers) {
    Gradients g;
    g.reserve(layers.size());
    for (const auto &l : layers)
        g.push_back({RowMatrix<double>::Zero(l.weights.rows(), l.weights.cols()),
                     ColVector<double>::Zero(l.bias.size())});
    return g;
}

// conv -> relu, recording the conv input and pre-activation when caching.
VolumeD conv_relu(const ConvLayer<double> &layer, const VolumeD &x, std::size_t idx, ForwardCache *cache) {
    auto pre = conv3d_forward(x, layer);
    auto out = relu(pre);
    if (cache) {
        cache->layer_input[idx] = x;
        cache->pre_activation[idx] = std::move(pre);
    }
    return out;
}

} // namespace

void UNetConfig::validate() const {
    if (depth != 3)
        throw InvalidInput("UNetConfig: depth must be 3 (conv1..conv8 layout)");
    if (base_filters < 1)
        throw InvalidInput("UNetConfig: base_filters must be >= 1");
    if (in_channels != 1 || out_channels != 1)
        throw InvalidInput("UNetConfig: in_channels and out_channels must be 1");
    const std::size_t div = std::size_t{1} << depth;
    if (!input_shape.valid() || input_shape.d % div || input_shape.h % div || input_shape.w % div)
        throw InvalidInput("UNetConfig: every input dimension must be divisible by " + std::to_string(div) +
                           ", got " + to_string(input_shape));
}

UNetModel::UNetModel(const UNetConfig &cfg) : config_(cfg) {
    cfg.validate();
    layers_ = build_layers(cfg);
    m_ = zeros_like(layers_);
    v_ = zeros_like(layers_);
}

std::span<const ConvLayer<double>> UNetModel::block(std::size_t number) const {
    if (number < 1 || number > 8)
        throw InvalidInput("UNetModel::block: block numbers run 1..8");
    if (number == 8)
        return {layers_.data() + kHead, 1};
    return {layers_.data() + 2 * (number - 1), 2};
}

std::string_view UNetModel::layer_name(std::size_t index) { return kLayerNames.at(index); }

std::size_t UNetModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto &l : layers_)
        n += l.parameter_count();
    return n;
}

bool operator==(const UNetModel &a, const UNetModel &b) {
    if (!(a.config_ == b.config_) || a.step_ != b.step_ || a.layers_ != b.layers_)
        return false;
    for (std::size_t i = 0; i < a.m_.size(); ++i)
        if (a.m_[i].weights != b.m_[i].weights || a.m_[i].bias != b.m_[i].bias ||
            a.v_[i].weights != b.v_[i].weights || a.v_[i].bias != b.v_[i].bias)
            return false;
    return true;
}

UNetModel init_model(const UNetConfig &cfg, std::uint64_t seed) {
    UNetModel m(cfg);
    Rng rng(derive_seed(seed, {0x1417}));
    for (auto &layer : m.layers()) {
        const double fan_in = static_cast<double>(layer.in_ch * layer.taps());
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (Eigen::Index i = 0; i < layer.weights.size(); ++i)
            layer.weights.data()[i] = dist(rng);
    }
    return m;
}

Gradients zero_gradients(const UNetModel &m) { return zeros_like(m.layers()); }

VolumeD unet_forward(const UNetModel &m, const VolumeD &input, ForwardCache *cache) {
    const auto &cfg = m.config();
    if (!(input.shape() == cfg.input_shape) || input.channels() != cfg.in_channels)
        throw ShapeError("unet_forward: expected " + std::to_string(cfg.in_channels) + "x" +
                         to_string(cfg.input_shape) + " input, got " + std::to_string(input.channels()) + "x" +
                         to_string(input.shape()));
    const auto &L = m.layers();
    std::array<VolumeD, 3> skips;
    VolumeD x = input;
    std::size_t idx = 0;
    for (std::size_t level = 0; level < 3; ++level) {
        x = conv_relu(L[idx], x, idx, cache);
        ++idx;
        x = conv_relu(L[idx], x, idx, cache);
        ++idx;
        skips[level] = x;
        auto pooled = maxpool3d(x);
        if (cache) {
            cache->pool_argmax[level] = std::move(pooled.argmax);
            cache->skip_shape[level] = x.shape();
        }
        x = std::move(pooled.output);
    }
    x = conv_relu(L[idx], x, idx, cache);
    ++idx;
    x = conv_relu(L[idx], x, idx, cache);
    ++idx;
    for (std::size_t level = 3; level-- > 0;) {
        auto up = upsample3d(x);
        if (cache)
            cache->upsampled_channels[level] = up.channels();
        x = concat_channels(up, skips[level]);
        x = conv_relu(L[idx], x, idx, cache);
        ++idx;
        x = conv_relu(L[idx], x, idx, cache);
        ++idx;
    }
    auto logits = conv3d_forward(x, L[UNetModel::kHead]);
    auto probs = sigmoid(logits);
    if (cache) {
        cache->layer_input[UNetModel::kHead] = std::move(x);
        cache->logits = std::move(logits);
        cache->probs = probs;
    }
    return probs;
}

std::vector<VolumeD> unet_forward(const UNetModel &m, const std::vector<VolumeD> &batch, std::size_t threads) {
    std::vector<VolumeD> out(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) { out[i] = unet_forward(m, batch[i]); });
    return out;
}

BackwardResult unet_backward(const UNetModel &m, const ForwardCache &cache, const VolumeD &grad_logits) {
    const auto &L = m.layers();
    BackwardResult r{zeros_like(L), {}};
    auto conv_back = [&](std::size_t idx, const VolumeD &g) {
        return conv3d_backward(cache.layer_input[idx], L[idx], g, r.grads[idx]);
    };
    auto conv_relu_back = [&](std::size_t idx, const VolumeD &g) {
        return conv_back(idx, relu_backward(cache.pre_activation[idx], g));
    };

    VolumeD g = conv_back(UNetModel::kHead, grad_logits);
    std::array<VolumeD, 3> skip_grads;
    std::size_t idx = UNetModel::kHead;
    for (std::size_t level = 0; level < 3; ++level) {
        g = conv_relu_back(--idx, g);
        g = conv_relu_back(--idx, g);
        auto [gu, gskip] = split_channels(g, cache.upsampled_channels[level]);
        r.skip_grad_norm[level] = gskip.data().matrix().norm();
        skip_grads[level] = std::move(gskip);
        g = upsample3d_backward(gu);
    }
    g = conv_relu_back(--idx, g);
    g = conv_relu_back(--idx, g);
    for (std::size_t level = 3; level-- > 0;) {
        g = maxpool3d_backward(g, cache.pool_argmax[level], cache.skip_shape[level]);
        g.data() += skip_grads[level].data();
        g = conv_relu_back(--idx, g);
        g = conv_relu_back(--idx, g);
    }
    return r;
}

LossResult bce_loss(const VolumeD &pred, const MaskVolume &target) {
    if (pred.channels() != 1 || !(pred.shape() == target.shape))
        throw ShapeError("bce_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape));
    const auto n = static_cast<double>(pred.voxels());
    LossResult r{0.0, VolumeD(pred.shape(), 1)};
    for (std::size_t i = 0; i < pred.voxels(); ++i) {
        const double raw = pred.data()[static_cast<Eigen::Index>(i)];
        const double p = std::clamp(raw, kProbClip, 1.0 - kProbClip);
        const bool positive = target.data[i] != 0;
        r.loss -= positive ? std::log(p) : std::log1p(-p);
        if (raw >= kProbClip && raw <= 1.0 - kProbClip)
            r.grad.data()[static_cast<Eigen::Index>(i)] = (positive ? -1.0 / p : 1.0 / (1.0 - p)) / n;
    }
    r.loss /= n;
    return r;
}

VolumeD bce_logit_gradient(const VolumeD &probs, const MaskVolume &target) {
    if (probs.channels() != 1 || !(probs.shape() == target.shape))
        throw ShapeError("bce_logit_gradient: shape mismatch");
    const auto n = static_cast<double>(probs.voxels());
    VolumeD g(probs.shape(), 1);
    for (std::size_t i = 0; i < probs.voxels(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        g.data()[k] = (probs.data()[k] - (target.data[i] != 0 ? 1.0 : 0.0)) / n;
    }
    return g;
}

double BatchGradients::loss() const {
    double s = 0.0;
    for (const auto &e : samples)
        s += e.loss;
    return samples.empty() ? 0.0 : s / static_cast<double>(samples.size());
}

namespace {

SampleEval evaluate_probs(const VolumeD &probs, const MaskVolume &mask, double loss) {
    SampleEval e{loss, 0, probs.voxels()};
    for (std::size_t i = 0; i < probs.voxels(); ++i)
        e.correct += (probs.data()[static_cast<Eigen::Index>(i)] >= 0.5) == (mask.data[i] != 0);
    return e;
}

} // namespace

BatchGradients loss_and_gradients(const UNetModel &m, std::span<const SampleRef> batch, std::size_t threads) {
    if (batch.empty())
        throw InvalidInput("loss_and_gradients: empty batch");
    std::vector<Gradients> per_sample(batch.size());
    BatchGradients out{zeros_like(m.layers()), std::vector<SampleEval>(batch.size())};
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        ForwardCache cache;
        const auto probs = unet_forward(m, *batch[i].image, &cache);
        const auto loss = bce_loss(probs, *batch[i].mask);
        per_sample[i] = unet_backward(m, cache, bce_logit_gradient(probs, *batch[i].mask)).grads;
        out.samples[i] = evaluate_probs(probs, *batch[i].mask, loss.loss);
    });
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto &g : per_sample)
        for (std::size_t l = 0; l < g.size(); ++l) {
            out.grads[l].weights += g[l].weights * scale;
            out.grads[l].bias += g[l].bias * scale;
        }
    return out;
}

double batch_loss(const UNetModel &m, std::span<const SampleRef> batch) {
    if (batch.empty())
        throw InvalidInput("batch_loss: empty batch");
    double s = 0.0;
    for (const auto &b : batch)
        s += bce_loss(unet_forward(m, *b.image), *b.mask).loss;
    return s / static_cast<double>(batch.size());
}

void adam_update(UNetModel &m, const Gradients &grads, double lr, const AdamSettings &adam) {
    m.set_step(m.step() + 1);
    const double t = static_cast<double>(m.step());
    const double c1 = 1.0 - std::pow(adam.beta1, t);
    const double c2 = 1.0 - std::pow(adam.beta2, t);
    auto update = [&](auto &param, auto &mom1, auto &mom2, const auto &g) {
        mom1 = adam.beta1 * mom1 + (1.0 - adam.beta1) * g;
        mom2 = adam.beta2 * mom2 + (1.0 - adam.beta2) * g.cwiseProduct(g);
        param.array() -= lr * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + adam.epsilon);
    };
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        auto &layer = m.layers()[l];
        update(layer.weights, m.first_moment()[l].weights, m.second_moment()[l].weights, grads[l].weights);
        update(layer.bias, m.first_moment()[l].bias, m.second_moment()[l].bias, grads[l].bias);
    }
}

StepResult train_step(UNetModel &m, std::span<const SampleRef> batch, double lr, std::size_t threads) {
    auto bg = loss_and_gradients(m, batch, threads);
    for (const auto &e : bg.samples)
        if (!std::isfinite(e.loss))
            throw NumericFailure("train_step: non-finite loss");
    adam_update(m, bg.grads, lr);
    return {bg.loss(), std::move(bg.samples)};
}

} // namespace batunet
