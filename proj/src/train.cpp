#include "isfl/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace isfl {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
    if (batch_size == 0) throw ConfigError("train.batch_size: must be positive");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay: must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("train.betas: must be in [0, 1)");
    }
    if (epsilon <= 0.0) throw ConfigError("train.epsilon: must be > 0");
    if (grad_clip < 0.0) throw ConfigError("train.grad_clip: must be >= 0");
}

AdamW::AdamW(const TrainConfig& config) : config_(config) { config_.validate(); }

void AdamW::step(ParameterStore& params) {
    auto list = params.list();
    if (slots_.size() != list.size()) {
        slots_.clear();
        slots_.reserve(list.size());
        for (const Parameter& p : list) {
            slots_.push_back(Slot{std::vector<double>(p.value.size(), 0.0),
                                  std::vector<double>(p.value.size(), 0.0)});
        }
    }
    for (const Parameter& p : list) {
        for (double g : p.value.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("adamw: non-finite gradient in parameter '" + p.name +
                                   "'; step aborted");
            }
        }
    }

    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < list.size(); ++pi) {
        Parameter& p = list[pi];
        Slot& slot = slots_[pi];
        auto& w = p.value.values();
        const auto& g = p.value.grad();
        const double decay_factor =
            p.weight_decay ? 1.0 - config_.learning_rate * config_.weight_decay : 1.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g[i];
            slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            w[i] = w[i] * decay_factor -
                   config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
}

std::vector<PredictionRecord> evaluate(Model& model, std::span<const Example> dataset,
                                       std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
    std::vector<PredictionRecord> records;
    records.reserve(dataset.size());
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, dataset.size() - start);
        const Batch batch = make_batch(dataset.subspan(start, count));
        const std::vector<double> p1 = model.predict_class1(batch);
        for (std::size_t i = 0; i < count; ++i) {
            records.push_back(PredictionRecord{p1[i], batch.labels[i]});
        }
    }
    return records;
}

namespace {

void clip_gradients(ParameterStore& params, double threshold) {
    double sq_norm = 0.0;
    for (const Parameter& p : params.list()) {
        for (double g : p.value.grad()) sq_norm += g * g;
    }
    const double norm = std::sqrt(sq_norm);
    if (norm <= threshold) return;
    const double factor = threshold / norm;
    for (Parameter& p : params.list()) {
        for (double& g : p.value.grad()) g *= factor;
    }
}

} // namespace

std::vector<EpochStats> train_model(Model& model, std::span<const Example> train_set,
                                    std::span<const Example> eval_set,
                                    const TrainConfig& config, const EceConfig& ece_config) {
    config.validate();
    if (train_set.empty()) throw ConfigError("train: empty training set");

    std::mt19937_64 rng(config.seed);
    AdamW optimizer(config);
    DropoutCtx dropout_ctx;
    if (model.config().encoder.dropout_rate > 0.0) {
        dropout_ctx.rate = model.config().encoder.dropout_rate;
        dropout_ctx.rng = &rng;
    }

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Example> scratch(std::min<std::size_t>(config.batch_size, train_set.size()));

    std::vector<EpochStats> log;
    log.reserve(config.epochs);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - start);
            scratch.resize(count);
            for (std::size_t i = 0; i < count; ++i) scratch[i] = train_set[order[start + i]];
            const Batch batch = make_batch(scratch);

            model.params().zero_grads();
            Tape tape;
            const Tensor loss = batch_loss(model, batch, dropout_ctx);
            tape.backward(loss);
            if (config.grad_clip > 0.0) clip_gradients(model.params(), config.grad_clip);
            optimizer.step(model.params());
            loss_sum += loss.item() * static_cast<double>(count);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_set.size());
        if (!eval_set.empty()) {
            const auto records = evaluate(model, eval_set);
            stats.eval_accuracy = confusion_and_threshold_metrics(records).accuracy;
            stats.eval_ece = ece(records, ece_config).ece;
        }
        log.push_back(stats);
    }
    return log;
}

} // namespace isfl
