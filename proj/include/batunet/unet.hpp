#pragma once

#include "batunet/layers.hpp"
#include "batunet/volume.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace batunet {

/// Architecture of the volumetric U-Net.
///
/// Encoder blocks conv1..conv3 double the filter count per level, conv4 is
/// the bottleneck, decoder blocks conv5..conv7 halve it again and consume the
/// upsampled map concatenated with the matching encoder output. conv8 is a
/// 1x1x1 projection to one channel followed by a sigmoid.
struct UNetConfig {
    Shape3 input_shape{64, 64, 32};
    std::size_t base_filters = 4;
    std::size_t depth = 3;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;

    /// Throws InvalidInput when the configuration cannot be built.
    void validate() const;
    friend bool operator==(const UNetConfig &, const UNetConfig &) = default;
};

/// Learning rate and mini-batch size, the two tuned hyperparameters.
struct Hyperparams {
    double learning_rate = 1e-3;
    std::size_t batch_size = 3;
    friend bool operator==(const Hyperparams &, const Hyperparams &) = default;
};

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

using Gradients = std::vector<ConvGrads<double>>;

class UNetModel {
  public:
    /// Layers in forward order: conv1a, conv1b, ..., conv7b, conv8.
    static constexpr std::size_t kLayerCount = 15;
    static constexpr std::size_t kHead = kLayerCount - 1;

    UNetModel() = default;
    /// All parameters zero.
    explicit UNetModel(const UNetConfig &cfg);

    const UNetConfig &config() const noexcept { return config_; }

    std::vector<ConvLayer<double>> &layers() noexcept { return layers_; }
    const std::vector<ConvLayer<double>> &layers() const noexcept { return layers_; }
    /// Two layers of block 1..7, or the single head layer for block 8.
    std::span<const ConvLayer<double>> block(std::size_t number) const;
    static std::string_view layer_name(std::size_t index);

    std::size_t parameter_count() const;

    // Adam moments, laid out like layers().
    Gradients &first_moment() noexcept { return m_; }
    Gradients &second_moment() noexcept { return v_; }
    const Gradients &first_moment() const noexcept { return m_; }
    const Gradients &second_moment() const noexcept { return v_; }
    std::uint64_t step() const noexcept { return step_; }
    void set_step(std::uint64_t s) noexcept { step_ = s; }

    friend bool operator==(const UNetModel &a, const UNetModel &b);

  private:
    UNetConfig config_{};
    std::vector<ConvLayer<double>> layers_;
    Gradients m_;
    Gradients v_;
    std::uint64_t step_ = 0;
};

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases, fresh Adam state.
UNetModel init_model(const UNetConfig &cfg, std::uint64_t seed);

/// Zero-valued gradient buffers shaped like the model's parameters.
Gradients zero_gradients(const UNetModel &m);

/// Activations retained by a forward pass for the backward pass.
struct ForwardCache {
    // Input and pre-activation of every 3x3x3 layer (indices 0..13), plus
    // the head input at index 14.
    std::array<VolumeD, UNetModel::kLayerCount> layer_input;
    std::array<VolumeD, UNetModel::kLayerCount - 1> pre_activation;
    std::array<std::vector<std::size_t>, 3> pool_argmax;
    std::array<Shape3, 3> skip_shape;
    std::array<std::size_t, 3> upsampled_channels{};
    VolumeD logits;
    VolumeD probs;
};

/// One sample through the network; returns the probability map.
VolumeD unet_forward(const UNetModel &m, const VolumeD &input, ForwardCache *cache = nullptr);
std::vector<VolumeD> unet_forward(const UNetModel &m, const std::vector<VolumeD> &batch, std::size_t threads = 1);

struct BackwardResult {
    Gradients grads;
    /// L2 norm of the gradient reaching each encoder skip tensor (levels 0..2).
    std::array<double, 3> skip_grad_norm{};
};

/// Backpropagates dL/dlogits through a cached forward pass.
BackwardResult unet_backward(const UNetModel &m, const ForwardCache &cache, const VolumeD &grad_logits);

inline constexpr double kProbClip = 1e-7;

struct LossResult {
    double loss = 0.0;
    /// dL/dpred (zero where the prediction was clipped).
    VolumeD grad;
};

/// Voxel-mean binary cross-entropy with predictions clipped to [1e-7, 1 - 1e-7].
LossResult bce_loss(const VolumeD &pred, const MaskVolume &target);

/// dL/dlogit of the fused sigmoid + cross-entropy, (p - t) / N. Equal to
/// chaining bce_loss's gradient through the sigmoid wherever p lies inside
/// the clip range, but it does not vanish on saturated voxels, so a
/// confidently wrong voxel still receives a corrective gradient. Training
/// uses this.
VolumeD bce_logit_gradient(const VolumeD &probs, const MaskVolume &target);

struct SampleRef {
    const VolumeD *image;
    const MaskVolume *mask;
};

struct SampleEval {
    double loss = 0.0;
    std::size_t correct = 0; // voxels classified correctly at threshold 0.5
    std::size_t voxels = 0;
};

struct BatchGradients {
    Gradients grads; // mean over the batch
    std::vector<SampleEval> samples;
    double loss() const;
};

/// Mean loss and parameter gradients over a batch without updating the model.
/// Per-sample work may run on `threads` workers; gradients are summed in
/// sample order.
BatchGradients loss_and_gradients(const UNetModel &m, std::span<const SampleRef> batch, std::size_t threads = 1);

/// Loss of a batch without gradients.
double batch_loss(const UNetModel &m, std::span<const SampleRef> batch);

/// Adam update with learning rate `lr`.
void adam_update(UNetModel &m, const Gradients &grads, double lr, const AdamSettings &adam = {});

struct StepResult {
    double loss = 0.0; // pre-update batch loss
    std::vector<SampleEval> samples;
};

/// One optimisation step: forward, backward, Adam update.
StepResult train_step(UNetModel &m, std::span<const SampleRef> batch, double lr, std::size_t threads = 1);

} // namespace batunet
