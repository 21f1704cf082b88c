#pragma once

#include <string>
#include <vector>

#include "isfl/checkpoint.hpp"
#include "isfl/data.hpp"
#include "isfl/metrics.hpp"
#include "isfl/model.hpp"
#include "isfl/train.hpp"

namespace isfl {

// Whole-experiment configuration: data source (file or synthetic), model,
// training, split and calibration settings. The master seed fans out to
// split seed (N), model-init seed (N+1) and shuffle seed (N+2).
struct ExperimentConfig {
    std::string data_path; // empty -> synthetic source
    SyntheticConfig synthetic;
    ModelConfig model;
    TrainConfig train;
    SplitConfig split;
    EceConfig ece;
    std::string out_dir = "out";
    std::uint64_t seed = 7;

    void derive_seeds();
    void validate() const;

    static ExperimentConfig from_json_file(const std::string& path);
    void apply_json(const std::string& json_text);
};

std::uint64_t model_seed(const ExperimentConfig& config);

// Split, vocabulary, standardization and tokenization for one dataset.
struct PreparedData {
    Vocabulary vocab;
    StandardizerStats stats;
    std::vector<Example> train;
    std::vector<Example> test;
};

PreparedData prepare_data(std::span<const RawExample> raw, const ModelConfig& model_config,
                          const SplitConfig& split_config);

std::vector<RawExample> load_raw_dataset(const ExperimentConfig& config);

// gen: write the synthetic dataset and report its Bayes-optimal accuracies.
BayesAccuracy run_gen(const SyntheticConfig& config, const std::string& out_path);

struct TrainOutputs {
    std::string checkpoint_path;
    std::string standardizer_path;
    std::string vocab_path;
    std::string log_path;
    std::vector<EpochStats> log;
};

// train: split -> standardize -> train -> checkpoint (+ vocab, scaler, log).
TrainOutputs run_train(const ExperimentConfig& config);

struct EvalOutputs {
    std::string report_path;
    std::string reliability_path;
    std::string roc_path;
    std::string pr_path;
    MetricsReport report;
};

// eval: load checkpoint + preprocessing artifacts, evaluate the held-out
// split of the dataset, write report and curve files.
EvalOutputs run_eval(const std::string& checkpoint_path, const std::string& data_path,
                     const SplitConfig& split_config, const EceConfig& ece_config,
                     const std::string& out_dir);

struct SweepRow {
    std::string label;
    bool ok = false;
    std::string error;
    MetricsReport report;
};

// sweep: one ISFL run per insert_layer_index plus `none` and `concat`
// baselines on the same prepared data; emits a comparison table. Individual
// run failures are recorded in the table, not fatal.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config,
                                const std::vector<std::size_t>& layers);

} // namespace isfl
