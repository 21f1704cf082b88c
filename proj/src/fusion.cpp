#include "isfl/fusion.hpp"

namespace isfl {

namespace {
constexpr double kInitStddev = 0.02;
}

void FusionConfig::validate(std::size_t n_layers) const {
    if (insert_layer_index > n_layers) {
        throw ConfigError("fusion.insert_layer_index: " + std::to_string(insert_layer_index) +
                          " out of range for " + std::to_string(n_layers) + " layers");
    }
}

IsflParams init_isfl_params(std::size_t d_model, std::size_t d_struct,
                            const FusionConfig& config, ParameterStore& store,
                            std::mt19937_64& rng) {
    if (d_struct == 0) throw ConfigError("fusion: d_struct must be positive");
    IsflParams p;
    if (config.gate_mode == GateMode::two_layer) {
        const std::size_t hidden = config.gate_hidden_dim > 0 ? config.gate_hidden_dim : d_model;
        p.has_hidden = true;
        p.hidden_w = store.add("isfl.hidden.W", {hidden, d_struct}, kInitStddev, rng);
        p.hidden_b = store.add("isfl.hidden.b", {hidden}, 0.0, rng, false);
        p.w_gate = store.add("isfl.W_gate", {d_model, hidden}, kInitStddev, rng);
    } else {
        p.w_gate = store.add("isfl.W_gate", {d_model, d_struct}, kInitStddev, rng);
    }
    p.b_gate = store.add("isfl.b_gate", {d_model}, 0.0, rng, false);
    return p;
}

Tensor compute_gate(const Tensor& aux, const IsflParams& params, GateMode mode) {
    if (aux.ndim() != 2) {
        throw ShapeError("compute_gate: aux must be (batch, d_struct), got " +
                         format_shape(aux.shape()));
    }
    if (mode == GateMode::two_layer) {
        if (!params.has_hidden) throw ConfigError("compute_gate: two_layer params missing");
        return sigmoid(linear(tanh_op(linear(aux, params.hidden_w, params.hidden_b)),
                              params.w_gate, params.b_gate));
    }
    return sigmoid(linear(aux, params.w_gate, params.b_gate));
}

Tensor modulate(const Tensor& hidden, const Tensor& gate) {
    if (hidden.ndim() != 3 || gate.ndim() != 2) {
        throw ShapeError("modulate: expected (batch, seq, d_model) and (batch, d_model), got " +
                         format_shape(hidden.shape()) + " and " + format_shape(gate.shape()));
    }
    if (hidden.shape()[0] != gate.shape()[0] || hidden.shape()[2] != gate.shape()[1]) {
        throw ShapeError("modulate: hidden states " + format_shape(hidden.shape()) +
                         " incompatible with gate " + format_shape(gate.shape()));
    }
    const std::size_t batch = gate.shape()[0];
    const std::size_t width = gate.shape()[1];
    return mul(hidden, reshape(gate, {batch, 1, width}));
}

FusionHook isfl_hook(const Tensor& aux, const IsflParams& params, GateMode mode) {
    return [aux, params, mode](const Tensor& hidden) {
        return modulate(hidden, compute_gate(aux, params, mode));
    };
}

} // namespace isfl
