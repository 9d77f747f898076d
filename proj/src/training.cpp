#include "batunet/training.hpp"

#include "batunet/parallel.hpp"
#include "batunet/rng.hpp"

#include <cmath>

namespace batunet {

namespace {
constexpr std::uint64_t kTagAugment = 0xa06;
}

SplitScore evaluate_split(const UNetModel &m, const std::vector<SegSample> &samples, std::size_t threads) {
    if (samples.empty())
        throw InvalidInput("evaluate_split: empty sample list");
    std::vector<SampleEval> evals(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto probs = unet_forward(m, samples[i].image);
        SampleEval e{bce_loss(probs, samples[i].mask).loss, 0, probs.voxels()};
        for (std::size_t v = 0; v < probs.voxels(); ++v)
            e.correct += (probs.data()[static_cast<Eigen::Index>(v)] >= 0.5) == (samples[i].mask.data[v] != 0);
        evals[i] = e;
    });
    SplitScore s;
    std::size_t correct = 0, voxels = 0;
    for (const auto &e : evals) {
        s.loss += e.loss;
        correct += e.correct;
        voxels += e.voxels;
    }
    s.loss /= static_cast<double>(evals.size());
    s.accuracy = static_cast<double>(correct) / static_cast<double>(voxels);
    if (!std::isfinite(s.loss))
        throw NumericFailure("evaluate_split: non-finite loss");
    return s;
}

TrainResult train(UNetModel model, const std::vector<SegSample> &train_set, const std::vector<SegSample> &val_set,
                  const Hyperparams &hp, std::size_t epochs, std::uint64_t seed, const TrainOptions &opts) {
    if (train_set.empty() || val_set.empty())
        throw InvalidInput("train: training and validation sets must be non-empty");
    if (hp.batch_size == 0 || !(hp.learning_rate >= 0.0))
        throw InvalidInput("train: batch_size must be >= 1 and learning_rate >= 0");

    std::vector<std::size_t> indices(train_set.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        indices[i] = i;

    TrainResult result{std::move(model), {}};
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        std::vector<SampleEval> seen(train_set.size());
        for (const auto &batch : make_batches(indices, hp.batch_size, seed, epoch)) {
            std::vector<SegSample> augmented;
            std::vector<SampleRef> refs;
            if (opts.augment) {
                augmented.reserve(batch.size());
                for (auto i : batch) {
                    Rng rng = make_rng(seed, {kTagAugment, epoch, i});
                    augmented.push_back(augment(train_set[i], rng));
                }
                for (const auto &s : augmented)
                    refs.push_back({&s.image, &s.mask});
            } else {
                for (auto i : batch)
                    refs.push_back({&train_set[i].image, &train_set[i].mask});
            }
            auto step = train_step(result.model, refs, hp.learning_rate, opts.threads);
            for (std::size_t k = 0; k < batch.size(); ++k)
                seen[batch[k]] = step.samples[k];
        }
        // Reduce in sample order so the value is independent of batch order.
        EpochLog log;
        log.epoch = epoch;
        std::size_t correct = 0, voxels = 0;
        for (const auto &e : seen) {
            log.train_loss += e.loss;
            correct += e.correct;
            voxels += e.voxels;
        }
        log.train_loss /= static_cast<double>(seen.size());
        log.train_acc = static_cast<double>(correct) / static_cast<double>(voxels);
        const auto val = evaluate_split(result.model, val_set, opts.threads);
        log.val_loss = val.loss;
        log.val_acc = val.accuracy;
        result.log.push_back(log);
        if (opts.on_epoch)
            opts.on_epoch(log);
    }
    return result;
}

} // namespace batunet
