#include "isfl/cli.hpp"

#include <iostream>

#include <CLI11.hpp>

#include "isfl/experiment.hpp"

namespace isfl {

namespace {

// Synthetic-task flags shared by gen and by train/sweep when no --data file
// is given.
void add_synthetic_flags(CLI::App* cmd, SyntheticConfig& synthetic) {
    cmd->add_option("--n", synthetic.n_examples, "number of examples");
    cmd->add_option("--vocab-size", synthetic.vocab_size, "distinct word budget");
    cmd->add_option("--seq-len", synthetic.seq_len, "words per text");
    cmd->add_option("--d-struct", synthetic.d_struct, "aux feature count");
    cmd->add_option("--interaction", synthetic.interaction_strength,
                    "interaction strength in [0,1]");
    cmd->add_option("--noise", synthetic.noise_rate, "label flip probability");
    cmd->add_option("--markers", synthetic.n_markers, "marker words injected when the text bit is on");
}

struct ModelFlagState {
    std::string fusion;
    std::string gate_mode;
};

void add_model_flags(CLI::App* cmd, ExperimentConfig& config, ModelFlagState& state) {
    cmd->add_option("--fusion", state.fusion, "fusion mode: none|concat|late_gate|isfl");
    cmd->add_option("--insert-layer", config.model.fusion.insert_layer_index,
                    "completed blocks before the gate applies (isfl)");
    cmd->add_option("--gate-mode", state.gate_mode, "gate mapping: single|two_layer");
    cmd->add_option("--gate-hidden", config.model.fusion.gate_hidden_dim,
                    "two_layer gate hidden width (0 = d_model)");
    cmd->add_option("--layers", config.model.encoder.n_layers, "encoder blocks");
    cmd->add_option("--d-model", config.model.encoder.d_model, "hidden width");
    cmd->add_option("--heads", config.model.encoder.n_heads, "attention heads");
    cmd->add_option("--d-ff", config.model.encoder.d_ff, "feed-forward width");
    cmd->add_option("--max-len", config.model.encoder.max_len, "token sequence length");
    cmd->add_option("--dropout", config.model.encoder.dropout_rate, "dropout rate");
    cmd->add_option("--head-hidden", config.model.head.hidden_dim,
                    "classifier hidden width (0 = single linear map)");
}

void add_train_flags(CLI::App* cmd, ExperimentConfig& config) {
    cmd->add_option("--epochs", config.train.epochs, "training epochs");
    cmd->add_option("--lr", config.train.learning_rate, "learning rate");
    cmd->add_option("--batch-size", config.train.batch_size, "minibatch size");
    cmd->add_option("--weight-decay", config.train.weight_decay, "decoupled weight decay");
    cmd->add_option("--grad-clip", config.train.grad_clip, "global-norm clip (0 = off)");
    cmd->add_option("--test-fraction", config.split.test_fraction, "held-out fraction");
    cmd->add_option("--bins", config.ece.n_bins, "calibration bins");
}

void apply_model_flag_state(ExperimentConfig& config, const ModelFlagState& state) {
    if (!state.fusion.empty()) config.model.fusion_mode = fusion_mode_from_string(state.fusion);
    if (!state.gate_mode.empty()) {
        if (state.gate_mode == "single") config.model.fusion.gate_mode = GateMode::single_affine;
        else if (state.gate_mode == "two_layer") config.model.fusion.gate_mode = GateMode::two_layer;
        else throw ConfigError("--gate-mode: expected single|two_layer, got '" + state.gate_mode + "'");
    }
    // The tokenizer vocabulary is capped by the embedding table size.
    if (config.data_path.empty()) config.model.encoder.vocab_size =
        std::max(config.model.encoder.vocab_size, config.synthetic.vocab_size);
    if (config.data_path.empty()) config.model.d_struct = config.synthetic.d_struct;
}

std::vector<std::size_t> parse_layer_list(const std::string& text) {
    std::vector<std::size_t> layers;
    std::string token;
    for (char c : text + ",") {
        if (c == ',') {
            if (token.empty()) continue;
            try {
                layers.push_back(static_cast<std::size_t>(std::stoul(token)));
            } catch (const std::exception&) {
                throw ConfigError("--sweep-layers: bad layer index '" + token + "'");
            }
            token.clear();
        } else {
            token.push_back(c);
        }
    }
    if (layers.empty()) throw ConfigError("--sweep-layers: no layer indices given");
    return layers;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"toy transformer encoder with mid-stack structural-feature gating"};
    app.require_subcommand(1);

    ExperimentConfig config;
    ModelFlagState model_state;
    std::string config_path;
    std::string gen_out;
    std::string eval_checkpoint;
    std::string sweep_layers_text;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset file");
    add_synthetic_flags(gen, config.synthetic);
    gen->add_option("--seed", config.seed, "random seed");
    gen->add_option("--out", gen_out, "output dataset file")->required();

    CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
    train->add_option("--config", config_path, "experiment config JSON");
    train->add_option("--data", config.data_path, "dataset file (omit to use the synthetic task)");
    add_synthetic_flags(train, config.synthetic);
    add_model_flags(train, config, model_state);
    add_train_flags(train, config);
    train->add_option("--seed", config.seed, "master seed");
    train->add_option("--out", config.out_dir, "output directory");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", config.data_path, "dataset file")->required();
    eval_cmd->add_option("--test-fraction", config.split.test_fraction, "held-out fraction");
    eval_cmd->add_option("--bins", config.ece.n_bins, "calibration bins");
    eval_cmd->add_option("--seed", config.seed, "master seed (must match training)");
    eval_cmd->add_option("--out", config.out_dir, "output directory");

    CLI::App* sweep = app.add_subcommand("sweep", "compare insert layers against baselines");
    sweep->add_option("--config", config_path, "experiment config JSON");
    sweep->add_option("--data", config.data_path, "dataset file (omit to use the synthetic task)");
    add_synthetic_flags(sweep, config.synthetic);
    add_model_flags(sweep, config, model_state);
    add_train_flags(sweep, config);
    sweep->add_option("--sweep-layers", sweep_layers_text, "comma-separated insert layer list")
        ->required();
    sweep->add_option("--seed", config.seed, "master seed");
    sweep->add_option("--out", config.out_dir, "output directory");

    std::vector<const char*> argv;
    argv.push_back("isfl");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (!config_path.empty()) {
            // Load the file config, then re-parse so explicitly given flags
            // win over file values (bound pointers still target `config`).
            ExperimentConfig from_file = ExperimentConfig::from_json_file(config_path);
            std::swap(config, from_file);
            app.clear();
            app.parse(static_cast<int>(argv.size()), argv.data());
        }

        if (gen->parsed()) {
            config.synthetic.seed = config.seed;
            run_gen(config.synthetic, gen_out);
            return 0;
        }
        if (train->parsed()) {
            apply_model_flag_state(config, model_state);
            config.derive_seeds();
            config.validate();
            const TrainOutputs outputs = run_train(config);
            std::cout << "checkpoint: " << outputs.checkpoint_path << "\n";
            if (!outputs.log.empty() && outputs.log.back().eval_accuracy) {
                std::cout << "final eval accuracy: " << *outputs.log.back().eval_accuracy << "\n";
            }
            return 0;
        }
        if (eval_cmd->parsed()) {
            config.derive_seeds();
            const EvalOutputs outputs =
                run_eval(eval_checkpoint, config.data_path, config.split, config.ece, config.out_dir);
            const auto& tm = outputs.report.threshold_metrics;
            std::cout << "accuracy=" << tm.accuracy << " macro_f1=" << tm.macro_f1
                      << " mcc=" << tm.mcc << " brier=" << outputs.report.brier
                      << " log_loss=" << outputs.report.log_loss
                      << " ece=" << outputs.report.calibration.ece << "\n"
                      << "report: " << outputs.report_path << "\n";
            return 0;
        }
        if (sweep->parsed()) {
            apply_model_flag_state(config, model_state);
            config.derive_seeds();
            config.validate();
            const auto layers = parse_layer_list(sweep_layers_text);
            const auto rows = run_sweep(config, layers);
            for (const auto& row : rows) {
                if (row.ok) {
                    std::cout << row.label << ": accuracy=" << row.report.threshold_metrics.accuracy
                              << " ece=" << row.report.calibration.ece << "\n";
                } else {
                    std::cout << row.label << ": failed (" << row.error << ")\n";
                }
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

} // namespace isfl
