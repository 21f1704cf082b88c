#include "isfl/encoder.hpp"

#include <cmath>
#include <numeric>

namespace isfl {

namespace {
constexpr double kInitStddev = 0.02;
constexpr double kMaskPenalty = -1e30; // exp() underflows to exactly 0
} // namespace

void EncoderConfig::validate() const {
    if (n_layers == 0) throw ConfigError("encoder.n_layers: must be positive");
    if (d_model == 0) throw ConfigError("encoder.d_model: must be positive");
    if (n_heads == 0) throw ConfigError("encoder.n_heads: must be positive");
    if (d_model % n_heads != 0) {
        throw ConfigError("encoder.d_model: " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (d_ff == 0) throw ConfigError("encoder.d_ff: must be positive");
    if (max_len < 2) throw ConfigError("encoder.max_len: must be >= 2");
    if (vocab_size <= 4) throw ConfigError("encoder.vocab_size: must exceed the reserved ids");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ConfigError("encoder.dropout_rate: must be in [0, 1)");
    }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, swap_axes(w, 0, 1)), b);
}

EncoderParams init_encoder_params(const EncoderConfig& config, ParameterStore& store,
                                  std::mt19937_64& rng) {
    config.validate();
    const std::size_t d = config.d_model;
    EncoderParams p;
    p.token_embedding = store.add("embed.token", {config.vocab_size, d}, kInitStddev, rng);
    p.position_embedding = store.add("embed.position", {config.max_len, d}, kInitStddev, rng);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        BlockParams block;
        block.attention.w_q = store.add(prefix + "attn.Wq", {d, d}, kInitStddev, rng);
        block.attention.b_q = store.add(prefix + "attn.bq", {d}, 0.0, rng, false);
        block.attention.w_k = store.add(prefix + "attn.Wk", {d, d}, kInitStddev, rng);
        block.attention.b_k = store.add(prefix + "attn.bk", {d}, 0.0, rng, false);
        block.attention.w_v = store.add(prefix + "attn.Wv", {d, d}, kInitStddev, rng);
        block.attention.b_v = store.add(prefix + "attn.bv", {d}, 0.0, rng, false);
        block.attention.w_o = store.add(prefix + "attn.Wo", {d, d}, kInitStddev, rng);
        block.attention.b_o = store.add(prefix + "attn.bo", {d}, 0.0, rng, false);
        block.w_ff1 = store.add(prefix + "ffn.W1", {config.d_ff, d}, kInitStddev, rng);
        block.b_ff1 = store.add(prefix + "ffn.b1", {config.d_ff}, 0.0, rng, false);
        block.w_ff2 = store.add(prefix + "ffn.W2", {d, config.d_ff}, kInitStddev, rng);
        block.b_ff2 = store.add(prefix + "ffn.b2", {d}, 0.0, rng, false);
        block.ln1_gain = store.add_constant(prefix + "ln1.gain", {d}, 1.0, false);
        block.ln1_bias = store.add_constant(prefix + "ln1.bias", {d}, 0.0, false);
        block.ln2_gain = store.add_constant(prefix + "ln2.gain", {d}, 1.0, false);
        block.ln2_bias = store.add_constant(prefix + "ln2.bias", {d}, 0.0, false);
        p.blocks.push_back(std::move(block));
    }
    return p;
}

namespace {

void validate_mask(const Tensor& hidden, const Tensor& mask) {
    if (hidden.ndim() != 3) {
        throw ShapeError("attention: hidden states must be (batch, seq, d_model), got " +
                         format_shape(hidden.shape()));
    }
    const std::size_t batch = hidden.shape()[0];
    const std::size_t seq = hidden.shape()[1];
    if (mask.shape() != Shape{batch, seq}) {
        throw ShapeError("attention: mask shape " + format_shape(mask.shape()) +
                         " does not match hidden states " + format_shape(hidden.shape()));
    }
    for (std::size_t b = 0; b < batch; ++b) {
        bool any = false;
        for (std::size_t t = 0; t < seq && !any; ++t) any = mask.data()[b * seq + t] != 0.0;
        if (!any) {
            throw ShapeError("attention: example " + std::to_string(b) +
                             " has every position masked");
        }
    }
}

// (batch, 1, 1, seq) additive penalty: 0 where attendable, -1e30 where masked.
Tensor additive_mask(const Tensor& mask) {
    const std::size_t batch = mask.shape()[0];
    const std::size_t seq = mask.shape()[1];
    Tensor bias(Shape{batch, 1, 1, seq});
    for (std::size_t i = 0; i < mask.size(); ++i) {
        bias.data()[i] = mask.data()[i] != 0.0 ? 0.0 : kMaskPenalty;
    }
    return bias;
}

} // namespace

Tensor attention(const Tensor& hidden, const Tensor& mask, const AttentionParams& params,
                 std::size_t n_heads) {
    validate_mask(hidden, mask);
    const std::size_t batch = hidden.shape()[0];
    const std::size_t seq = hidden.shape()[1];
    const std::size_t d_model = hidden.shape()[2];
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw ShapeError("attention: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(n_heads));
    }
    const std::size_t d_head = d_model / n_heads;

    const auto split_heads = [&](const Tensor& x) {
        return swap_axes(reshape(x, {batch, seq, n_heads, d_head}), 1, 2);
    };
    const Tensor q = split_heads(linear(hidden, params.w_q, params.b_q));
    const Tensor k = split_heads(linear(hidden, params.w_k, params.b_k));
    const Tensor v = split_heads(linear(hidden, params.w_v, params.b_v));

    Tensor scores = scale(matmul(q, swap_axes(k, 2, 3)), 1.0 / std::sqrt(static_cast<double>(d_head)));
    scores = add(scores, additive_mask(mask));
    const Tensor weights = softmax_last(scores);

    const Tensor context = reshape(swap_axes(matmul(weights, v), 1, 2), {batch, seq, d_model});
    return linear(context, params.w_o, params.b_o);
}

Tensor encoder_block(const Tensor& hidden, const Tensor& mask, const BlockParams& params,
                     std::size_t n_heads, const DropoutCtx& dropout_ctx) {
    Tensor attn_out = attention(hidden, mask, params.attention, n_heads);
    if (dropout_ctx.enabled()) attn_out = dropout(attn_out, dropout_ctx.rate, *dropout_ctx.rng);
    const Tensor h1 = layer_norm(add(hidden, attn_out), params.ln1_gain, params.ln1_bias);

    Tensor ff = linear(gelu(linear(h1, params.w_ff1, params.b_ff1)), params.w_ff2, params.b_ff2);
    if (dropout_ctx.enabled()) ff = dropout(ff, dropout_ctx.rate, *dropout_ctx.rng);
    return layer_norm(add(h1, ff), params.ln2_gain, params.ln2_bias);
}

Tensor encode(const std::vector<int>& tokens, std::size_t batch, std::size_t seq_len,
              const Tensor& mask, const EncoderConfig& config, const EncoderParams& params,
              const FusionHook& hook, std::size_t hook_index, const DropoutCtx& dropout_ctx) {
    if (hook && hook_index > config.n_layers) {
        throw ConfigError("encode: hook index " + std::to_string(hook_index) +
                          " out of range for " + std::to_string(config.n_layers) + " layers");
    }
    if (tokens.size() != batch * seq_len) {
        throw ShapeError("encode: " + std::to_string(tokens.size()) + " token ids do not fill (" +
                         std::to_string(batch) + ", " + std::to_string(seq_len) + ")");
    }
    if (seq_len > config.max_len) {
        throw ShapeError("encode: sequence length " + std::to_string(seq_len) +
                         " exceeds max_len " + std::to_string(config.max_len));
    }

    std::vector<int> positions(seq_len);
    std::iota(positions.begin(), positions.end(), 0);
    const Tensor pos = embedding(params.position_embedding, positions, {seq_len});
    Tensor h = add(embedding(params.token_embedding, tokens, {batch, seq_len}), pos);

    for (std::size_t i = 0; i < config.n_layers; ++i) {
        if (hook && hook_index == i) h = hook(h);
        h = encoder_block(h, mask, params.blocks[i], config.n_heads, dropout_ctx);
    }
    if (hook && hook_index == config.n_layers) h = hook(h);
    return h;
}

HeadParams init_head_params(std::size_t input_dim, const HeadConfig& config,
                            ParameterStore& store, std::mt19937_64& rng) {
    HeadParams head;
    std::size_t logits_in = input_dim;
    if (config.hidden_dim > 0) {
        head.has_hidden = true;
        head.hidden_w = store.add("head.hidden.W", {config.hidden_dim, input_dim}, kInitStddev, rng);
        head.hidden_b = store.add("head.hidden.b", {config.hidden_dim}, 0.0, rng, false);
        logits_in = config.hidden_dim;
    }
    head.w = store.add("head.W", {2, logits_in}, kInitStddev, rng);
    head.b = store.add("head.b", {2}, 0.0, rng, false);
    return head;
}

LateGateParams init_late_gate_params(std::size_t d_model, std::size_t d_struct,
                                     ParameterStore& store, std::mt19937_64& rng) {
    LateGateParams p;
    p.w = store.add("late_gate.W", {d_model, d_struct}, kInitStddev, rng);
    p.b = store.add("late_gate.b", {d_model}, 0.0, rng, false);
    return p;
}

Tensor classify(const Tensor& hidden, const Tensor* aux, const HeadParams& head,
                const LateGateParams* late_gate, HeadMode mode) {
    if ((mode == HeadMode::cls_only) != (aux == nullptr)) {
        throw ConfigError("classify: aux features must be present iff the head uses them");
    }
    Tensor x = select_axis1(hidden, 0); // CLS position
    if (mode == HeadMode::concat) {
        x = concat_last(x, *aux);
    } else if (mode == HeadMode::late_gate) {
        if (late_gate == nullptr) throw ConfigError("classify: late_gate parameters missing");
        x = mul(x, sigmoid(linear(*aux, late_gate->w, late_gate->b)));
    }
    if (head.has_hidden) x = gelu(linear(x, head.hidden_w, head.hidden_b));
    return linear(x, head.w, head.b);
}

} // namespace isfl
