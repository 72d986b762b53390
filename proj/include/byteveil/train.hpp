#ifndef BYTEVEIL_TRAIN_HPP
#define BYTEVEIL_TRAIN_HPP

#include "byteveil/encoding.hpp"
#include "byteveil/malconv.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace byteveil {

struct LabeledSample {
    InputVector x;
    Label label = Label::Benign;
};

struct TrainConfig {
    double learning_rate = 0.03;
    std::size_t epochs = 15;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
};

struct TrainReport {
    double initial_loss = 0.0;           // full-corpus objective before the first step
    std::vector<double> epoch_loss;      // mean batch objective per epoch
    double final_loss = 0.0;             // full-corpus objective after training
};

/// Objective: mean binary cross-entropy plus decov_weight times the DeCov
/// penalty on the fully-connected outputs of each mini-batch.
double batch_objective(const ModelParams& params, std::span<const LabeledSample> batch);

/// Mini-batch SGD with seeded shuffling. Per-sample gradients are summed in
/// batch order regardless of how many threads run the forward passes.
ModelParams train(const Hyper& hyper, std::span<const LabeledSample> corpus,
                  const TrainConfig& config, TrainReport* report = nullptr);

} // namespace byteveil

#endif
