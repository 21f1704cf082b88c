#pragma once

#include <random>

#include "isfl/encoder.hpp"
#include "isfl/tensor.hpp"

namespace isfl {

enum class GateMode { single_affine, two_layer };

struct FusionConfig {
    std::size_t insert_layer_index = 1; // completed blocks before the gate applies
    GateMode gate_mode = GateMode::single_affine;
    std::size_t gate_hidden_dim = 0; // two_layer only; 0 = d_model

    void validate(std::size_t n_layers) const;
};

struct IsflParams {
    Tensor w_gate; // (d_model, d_struct), or (d_model, gate_hidden) in two_layer mode
    Tensor b_gate; // (d_model)
    bool has_hidden = false;
    Tensor hidden_w, hidden_b; // two_layer: d_struct -> gate_hidden
};

IsflParams init_isfl_params(std::size_t d_model, std::size_t d_struct,
                            const FusionConfig& config, ParameterStore& store,
                            std::mt19937_64& rng);

// Per-example gate g = sigmoid(affine(aux)) (single_affine) or
// sigmoid(affine(tanh(affine(aux)))) (two_layer); every entry in (0, 1).
// aux: (batch, d_struct) -> gate: (batch, d_model).
Tensor compute_gate(const Tensor& aux, const IsflParams& params, GateMode mode);

// H'[b, t, d] = H[b, t, d] * g[b, d]: one gate per example, broadcast over
// every sequence position.
Tensor modulate(const Tensor& hidden, const Tensor& gate);

// Hook for encoder::encode binding this batch's aux features; the gate
// parameters take part in backward like any other parameters.
FusionHook isfl_hook(const Tensor& aux, const IsflParams& params, GateMode mode);

} // namespace isfl
