#pragma once

#include <functional>
#include <random>

#include "isfl/tensor.hpp"

namespace isfl {

struct EncoderConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 32;
    std::size_t n_heads = 2;
    std::size_t d_ff = 64;
    std::size_t max_len = 16;
    std::size_t vocab_size = 50;
    double dropout_rate = 0.0;

    void validate() const;
};

// Weight matrices are stored (out_features, in_features); linear() applies
// x . W^T + b so the stored orientation matches the config dimensions.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct AttentionParams {
    Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

struct BlockParams {
    AttentionParams attention;
    Tensor w_ff1, b_ff1, w_ff2, b_ff2;
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct EncoderParams {
    Tensor token_embedding;    // (vocab_size, d_model)
    Tensor position_embedding; // (max_len, d_model)
    std::vector<BlockParams> blocks;
};

// Registers all encoder parameters (init: normal(0, 0.02) weights, zero
// biases, unit layer-norm gains) and returns handles to them.
EncoderParams init_encoder_params(const EncoderConfig& config, ParameterStore& store,
                                  std::mt19937_64& rng);

// Optional dropout context for training-mode forward passes.
struct DropoutCtx {
    double rate = 0.0;
    std::mt19937_64* rng = nullptr;
    bool enabled() const { return rate > 0.0 && rng != nullptr; }
};

// Scaled dot-product multi-head self-attention. mask is (batch, seq) with 1
// on attendable positions; masked positions receive exactly zero weight.
// An example with every position masked is an error.
Tensor attention(const Tensor& hidden, const Tensor& mask, const AttentionParams& params,
                 std::size_t n_heads);

// Post-norm block: LN(H + attention(H)) then LN(. + feed-forward(.)).
Tensor encoder_block(const Tensor& hidden, const Tensor& mask, const BlockParams& params,
                     std::size_t n_heads, const DropoutCtx& dropout = {});

// Transform bound between encoder blocks (H -> H').
using FusionHook = std::function<Tensor(const Tensor&)>;

// Token + learned position embeddings, then the block stack. When a hook is
// given it runs at the boundary after `hook_index` completed blocks: 0 acts
// on the embeddings, n_layers on the final hidden states.
Tensor encode(const std::vector<int>& tokens, std::size_t batch, std::size_t seq_len,
              const Tensor& mask, const EncoderConfig& config, const EncoderParams& params,
              const FusionHook& hook = nullptr, std::size_t hook_index = 0,
              const DropoutCtx& dropout = {});

// ---- classification head ---------------------------------------------------

enum class HeadMode { cls_only, concat, late_gate };

struct HeadConfig {
    std::size_t hidden_dim = 0; // 0 = single linear map
};

struct HeadParams {
    bool has_hidden = false;
    Tensor hidden_w, hidden_b;
    Tensor w, b; // -> 2 logits
};

// Pooled-vector gate of the prior late-fusion architecture.
struct LateGateParams {
    Tensor w, b; // (d_model, d_struct), (d_model)
};

HeadParams init_head_params(std::size_t input_dim, const HeadConfig& config,
                            ParameterStore& store, std::mt19937_64& rng);
LateGateParams init_late_gate_params(std::size_t d_model, std::size_t d_struct,
                                     ParameterStore& store, std::mt19937_64& rng);

// CLS pooling followed by the mode's head: cls_only uses the pooled vector,
// concat appends aux, late_gate multiplies the pooled vector by
// sigmoid(affine(aux)) first. aux must be present iff mode != cls_only.
Tensor classify(const Tensor& hidden, const Tensor* aux, const HeadParams& head,
                const LateGateParams* late_gate, HeadMode mode);

} // namespace isfl
