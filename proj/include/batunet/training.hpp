#pragma once

#include "batunet/data.hpp"
#include "batunet/unet.hpp"

#include <functional>
#include <vector>

namespace batunet {

struct EpochLog {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0; // voxel accuracy at threshold 0.5
    double val_loss = 0.0;
    double val_acc = 0.0;
    friend bool operator==(const EpochLog &, const EpochLog &) = default;
};

struct TrainOptions {
    /// Online augmentation of training samples (validation is never augmented).
    bool augment = true;
    std::size_t threads = 1;
    std::function<void(const EpochLog &)> on_epoch;
};

struct TrainResult {
    UNetModel model;
    std::vector<EpochLog> log;
};

/// Mini-batch training. Each epoch reshuffles the training set with
/// (seed, epoch), runs one train_step per batch and then scores both splits.
/// Training loss/accuracy are the pre-update values seen by the steps.
TrainResult train(UNetModel model, const std::vector<SegSample> &train_set, const std::vector<SegSample> &val_set,
                  const Hyperparams &hp, std::size_t epochs, std::uint64_t seed, const TrainOptions &opts = {});

struct SplitScore {
    double loss = 0.0;
    double accuracy = 0.0;
};

SplitScore evaluate_split(const UNetModel &m, const std::vector<SegSample> &samples, std::size_t threads = 1);

} // namespace batunet
