#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "isfl/data.hpp"
#include "isfl/encoder.hpp"
#include "isfl/fusion.hpp"
#include "isfl/tensor.hpp"

namespace isfl {

enum class FusionMode { none, concat_head, late_gate, isfl };

std::string to_string(FusionMode mode); // "none" | "concat" | "late_gate" | "isfl"
FusionMode fusion_mode_from_string(const std::string& name);

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t d_struct = 4;
    FusionMode fusion_mode = FusionMode::none;
    FusionConfig fusion; // isfl mode only
    HeadConfig head;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& json_text);
};

struct Batch {
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::vector<int> tokens; // row-major batch_size x seq_len
    Tensor mask;             // (batch, seq)
    Tensor aux;              // (batch, d_struct)
    std::vector<int> labels;
};

Batch make_batch(std::span<const Example> examples);

// One of the comparison systems: an encoder stack plus the fusion-mode
// specific head and (for isfl) mid-stack gate parameters.
class Model {
public:
    Model(ModelConfig config, std::uint64_t seed);

    // Logits (batch, 2); records on the active tape when one is in scope.
    Tensor forward(const Batch& batch, const DropoutCtx& dropout = {});

    // Class-1 probability per example, computed without grad tracking.
    std::vector<double> predict_class1(const Batch& batch);

    const ModelConfig& config() const { return config_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    EncoderParams& encoder_params() { return encoder_; }
    HeadParams& head_params() { return head_; }
    IsflParams& isfl_params();
    LateGateParams& late_gate_params();

private:
    ModelConfig config_;
    ParameterStore store_;
    EncoderParams encoder_;
    HeadParams head_;
    LateGateParams late_gate_;
    IsflParams isfl_;
};

// Mean cross-entropy of the model's logits against the batch labels.
Tensor batch_loss(Model& model, const Batch& batch, const DropoutCtx& dropout = {});

} // namespace isfl
