#include "isfl/model.hpp"

#include <json.hpp>

namespace isfl {

std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::none: return "none";
        case FusionMode::concat_head: return "concat";
        case FusionMode::late_gate: return "late_gate";
        case FusionMode::isfl: return "isfl";
    }
    throw ConfigError("unknown fusion mode");
}

FusionMode fusion_mode_from_string(const std::string& name) {
    if (name == "none") return FusionMode::none;
    if (name == "concat") return FusionMode::concat_head;
    if (name == "late_gate") return FusionMode::late_gate;
    if (name == "isfl") return FusionMode::isfl;
    throw ConfigError("fusion_mode: expected none|concat|late_gate|isfl, got '" + name + "'");
}

void ModelConfig::validate() const {
    encoder.validate();
    if (d_struct == 0) throw ConfigError("model.d_struct: must be positive");
    if (fusion_mode == FusionMode::isfl) fusion.validate(encoder.n_layers);
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["encoder"] = {{"n_layers", encoder.n_layers},   {"d_model", encoder.d_model},
                    {"n_heads", encoder.n_heads},     {"d_ff", encoder.d_ff},
                    {"max_len", encoder.max_len},     {"vocab_size", encoder.vocab_size},
                    {"dropout_rate", encoder.dropout_rate}};
    j["d_struct"] = d_struct;
    j["fusion_mode"] = to_string(fusion_mode);
    j["fusion"] = {{"insert_layer_index", fusion.insert_layer_index},
                   {"gate_mode", fusion.gate_mode == GateMode::two_layer ? "two_layer" : "single"},
                   {"gate_hidden_dim", fusion.gate_hidden_dim}};
    j["head"] = {{"hidden_dim", head.hidden_dim}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
    const nlohmann::json j = nlohmann::json::parse(json_text);
    ModelConfig c;
    const auto& e = j.at("encoder");
    c.encoder.n_layers = e.at("n_layers").get<std::size_t>();
    c.encoder.d_model = e.at("d_model").get<std::size_t>();
    c.encoder.n_heads = e.at("n_heads").get<std::size_t>();
    c.encoder.d_ff = e.at("d_ff").get<std::size_t>();
    c.encoder.max_len = e.at("max_len").get<std::size_t>();
    c.encoder.vocab_size = e.at("vocab_size").get<std::size_t>();
    c.encoder.dropout_rate = e.at("dropout_rate").get<double>();
    c.d_struct = j.at("d_struct").get<std::size_t>();
    c.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
    const auto& f = j.at("fusion");
    c.fusion.insert_layer_index = f.at("insert_layer_index").get<std::size_t>();
    const std::string gate_mode = f.at("gate_mode").get<std::string>();
    if (gate_mode == "two_layer") c.fusion.gate_mode = GateMode::two_layer;
    else if (gate_mode == "single") c.fusion.gate_mode = GateMode::single_affine;
    else throw ConfigError("fusion.gate_mode: expected single|two_layer, got '" + gate_mode + "'");
    c.fusion.gate_hidden_dim = f.at("gate_hidden_dim").get<std::size_t>();
    c.head.hidden_dim = j.at("head").at("hidden_dim").get<std::size_t>();
    c.validate();
    return c;
}

Batch make_batch(std::span<const Example> examples) {
    if (examples.empty()) throw ShapeError("make_batch: empty example list");
    Batch batch;
    batch.batch_size = examples.size();
    batch.seq_len = examples.front().tokens.size();
    const std::size_t d_struct = examples.front().aux.size();

    batch.tokens.reserve(batch.batch_size * batch.seq_len);
    batch.mask = Tensor(Shape{batch.batch_size, batch.seq_len});
    batch.aux = Tensor(Shape{batch.batch_size, d_struct});
    batch.labels.reserve(batch.batch_size);
    for (std::size_t b = 0; b < examples.size(); ++b) {
        const Example& ex = examples[b];
        if (ex.tokens.size() != batch.seq_len || ex.mask.size() != batch.seq_len) {
            throw ShapeError("make_batch: example " + std::to_string(b) +
                             " has inconsistent sequence length");
        }
        if (ex.aux.size() != d_struct) {
            throw ShapeError("make_batch: example " + std::to_string(b) +
                             " has inconsistent aux width");
        }
        batch.tokens.insert(batch.tokens.end(), ex.tokens.begin(), ex.tokens.end());
        for (std::size_t t = 0; t < batch.seq_len; ++t) {
            batch.mask.data()[b * batch.seq_len + t] = static_cast<double>(ex.mask[t]);
        }
        for (std::size_t c = 0; c < d_struct; ++c) {
            batch.aux.data()[b * d_struct + c] = ex.aux[c];
        }
        batch.labels.push_back(ex.label);
    }
    return batch;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    encoder_ = init_encoder_params(config_.encoder, store_, rng);
    std::size_t head_input = config_.encoder.d_model;
    if (config_.fusion_mode == FusionMode::concat_head) head_input += config_.d_struct;
    head_ = init_head_params(head_input, config_.head, store_, rng);
    if (config_.fusion_mode == FusionMode::late_gate) {
        late_gate_ = init_late_gate_params(config_.encoder.d_model, config_.d_struct, store_, rng);
    }
    if (config_.fusion_mode == FusionMode::isfl) {
        isfl_ = init_isfl_params(config_.encoder.d_model, config_.d_struct, config_.fusion,
                                 store_, rng);
    }
}

IsflParams& Model::isfl_params() {
    if (config_.fusion_mode != FusionMode::isfl) {
        throw ConfigError("model has no isfl parameters in mode " + to_string(config_.fusion_mode));
    }
    return isfl_;
}

LateGateParams& Model::late_gate_params() {
    if (config_.fusion_mode != FusionMode::late_gate) {
        throw ConfigError("model has no late-gate parameters in mode " +
                          to_string(config_.fusion_mode));
    }
    return late_gate_;
}

Tensor Model::forward(const Batch& batch, const DropoutCtx& dropout_ctx) {
    if (batch.aux.shape() != Shape{batch.batch_size, config_.d_struct}) {
        throw ShapeError("forward: aux shape " + format_shape(batch.aux.shape()) +
                         " does not match d_struct " + std::to_string(config_.d_struct));
    }
    FusionHook hook;
    std::size_t hook_index = 0;
    if (config_.fusion_mode == FusionMode::isfl) {
        hook = isfl_hook(batch.aux, isfl_, config_.fusion.gate_mode);
        hook_index = config_.fusion.insert_layer_index;
    }
    const Tensor hidden = encode(batch.tokens, batch.batch_size, batch.seq_len, batch.mask,
                                 config_.encoder, encoder_, hook, hook_index, dropout_ctx);
    switch (config_.fusion_mode) {
        case FusionMode::none:
        case FusionMode::isfl:
            return classify(hidden, nullptr, head_, nullptr, HeadMode::cls_only);
        case FusionMode::concat_head:
            return classify(hidden, &batch.aux, head_, nullptr, HeadMode::concat);
        case FusionMode::late_gate:
            return classify(hidden, &batch.aux, head_, &late_gate_, HeadMode::late_gate);
    }
    throw ConfigError("unknown fusion mode");
}

std::vector<double> Model::predict_class1(const Batch& batch) {
    const Tensor probs = softmax_last(forward(batch));
    std::vector<double> p1(batch.batch_size);
    for (std::size_t b = 0; b < batch.batch_size; ++b) p1[b] = probs.data()[b * 2 + 1];
    return p1;
}

Tensor batch_loss(Model& model, const Batch& batch, const DropoutCtx& dropout_ctx) {
    return cross_entropy_with_logits(model.forward(batch, dropout_ctx), batch.labels);
}

} // namespace isfl
