#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "isfl/metrics.hpp"
#include "isfl/model.hpp"

namespace isfl {

struct TrainConfig {
    double learning_rate = 1e-3; // desk-scale default
    std::size_t epochs = 3;
    std::size_t batch_size = 16;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip = 0.0; // global-norm threshold; 0 = off
    std::uint64_t seed = 0;

    void validate() const;
};

// Decoupled weight decay: the decay term scales the parameter directly and
// never enters the moment estimates. Parameters registered with
// weight_decay = false (biases, layer-norm gains/biases) are exempt.
class AdamW {
public:
    explicit AdamW(const TrainConfig& config);

    // One update from the gradients currently stored on the parameters.
    // Any non-finite gradient aborts the whole step with a diagnostic.
    void step(ParameterStore& params);

    std::size_t step_count() const { return step_; }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    TrainConfig config_;
    std::vector<Slot> slots_;
    std::size_t step_ = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> eval_accuracy;
    std::optional<double> eval_ece;
};

// One PredictionRecord per example, in dataset order; pure (no parameter
// mutation, no grad tracking).
std::vector<PredictionRecord> evaluate(Model& model, std::span<const Example> dataset,
                                       std::size_t batch_size = 64);

// Seeded per-epoch shuffling, minibatch AdamW on mean cross-entropy.
// eval_set may be empty, in which case the per-epoch eval fields are absent.
std::vector<EpochStats> train_model(Model& model, std::span<const Example> train_set,
                                    std::span<const Example> eval_set,
                                    const TrainConfig& config,
                                    const EceConfig& ece_config = {});

} // namespace isfl
