#include "isfl/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace isfl {

void ExperimentConfig::derive_seeds() {
    split.seed = seed;
    train.seed = seed + 2;
    if (data_path.empty()) synthetic.seed = seed;
}

std::uint64_t model_seed(const ExperimentConfig& config) { return config.seed + 1; }

void ExperimentConfig::validate() const {
    model.validate();
    train.validate();
    if (split.test_fraction <= 0.0 || split.test_fraction >= 1.0) {
        throw ConfigError("split.test_fraction: must be in (0, 1)");
    }
    if (ece.n_bins == 0) throw ConfigError("ece.n_bins: must be positive");
    if (data_path.empty()) synthetic.validate();
    if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
}

void ExperimentConfig::apply_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    try {
        if (j.contains("data_path")) data_path = j["data_path"].get<std::string>();
        if (j.contains("out_dir")) out_dir = j["out_dir"].get<std::string>();
        if (j.contains("seed")) seed = j["seed"].get<std::uint64_t>();
        if (j.contains("synthetic")) {
            const auto& s = j["synthetic"];
            if (s.contains("n_examples")) synthetic.n_examples = s["n_examples"].get<std::size_t>();
            if (s.contains("vocab_size")) synthetic.vocab_size = s["vocab_size"].get<std::size_t>();
            if (s.contains("seq_len")) synthetic.seq_len = s["seq_len"].get<std::size_t>();
            if (s.contains("d_struct")) synthetic.d_struct = s["d_struct"].get<std::size_t>();
            if (s.contains("interaction_strength")) {
                synthetic.interaction_strength = s["interaction_strength"].get<double>();
            }
            if (s.contains("noise_rate")) synthetic.noise_rate = s["noise_rate"].get<double>();
            if (s.contains("n_markers")) synthetic.n_markers = s["n_markers"].get<std::size_t>();
        }
        if (j.contains("model")) model = ModelConfig::from_json(j["model"].dump());
        if (j.contains("train")) {
            const auto& t = j["train"];
            if (t.contains("learning_rate")) train.learning_rate = t["learning_rate"].get<double>();
            if (t.contains("epochs")) train.epochs = t["epochs"].get<std::size_t>();
            if (t.contains("batch_size")) train.batch_size = t["batch_size"].get<std::size_t>();
            if (t.contains("weight_decay")) train.weight_decay = t["weight_decay"].get<double>();
            if (t.contains("grad_clip")) train.grad_clip = t["grad_clip"].get<double>();
        }
        if (j.contains("split") && j["split"].contains("test_fraction")) {
            split.test_fraction = j["split"]["test_fraction"].get<double>();
        }
        if (j.contains("ece") && j["ece"].contains("n_bins")) {
            ece.n_bins = j["ece"]["n_bins"].get<std::size_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ExperimentConfig config;
    config.apply_json(text);
    return config;
}

PreparedData prepare_data(std::span<const RawExample> raw, const ModelConfig& model_config,
                          const SplitConfig& split_config) {
    for (const auto& row : raw) {
        if (row.aux.size() != model_config.d_struct) {
            throw ConfigError("data: aux width " + std::to_string(row.aux.size()) +
                              " does not match model d_struct " +
                              std::to_string(model_config.d_struct));
        }
        for (double v : row.aux) {
            if (!std::isfinite(v)) throw NumericError("data: non-finite aux value");
        }
    }
    SplitResult split = stratified_split(raw, split_config);

    PreparedData prepared;
    std::vector<std::string> train_texts;
    train_texts.reserve(split.train.size());
    for (const auto& row : split.train) train_texts.push_back(row.text);
    prepared.vocab = Vocabulary::build(train_texts, model_config.encoder.vocab_size);

    std::vector<std::vector<double>> train_aux;
    train_aux.reserve(split.train.size());
    for (const auto& row : split.train) train_aux.push_back(row.aux);
    prepared.stats = fit_standardizer(train_aux);

    const auto to_example = [&](const RawExample& row) {
        TokenizedText tok = tokenize(row.text, prepared.vocab, model_config.encoder.max_len);
        return Example{std::move(tok.ids), std::move(tok.mask),
                       apply_standardizer(prepared.stats, row.aux), row.label};
    };
    prepared.train.reserve(split.train.size());
    for (const auto& row : split.train) prepared.train.push_back(to_example(row));
    prepared.test.reserve(split.test.size());
    for (const auto& row : split.test) prepared.test.push_back(to_example(row));
    return prepared;
}

std::vector<RawExample> load_raw_dataset(const ExperimentConfig& config) {
    if (config.data_path.empty()) return generate_synthetic(config.synthetic);
    return read_dataset_csv(config.data_path);
}

BayesAccuracy run_gen(const SyntheticConfig& config, const std::string& out_path) {
    const auto rows = generate_synthetic(config);
    write_dataset_csv(rows, out_path);
    const BayesAccuracy bayes = bayes_accuracy(config);
    std::cout << "wrote " << rows.size() << " examples to " << out_path << "\n"
              << "bayes accuracy: joint=" << bayes.joint << " text_only=" << bayes.text_only
              << " aux_only=" << bayes.aux_only << "\n";
    return bayes;
}

namespace {

void write_train_log(const std::vector<EpochStats>& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& stats : log) {
        nlohmann::json line;
        line["epoch"] = stats.epoch;
        line["train_loss"] = stats.train_loss;
        if (stats.eval_accuracy) line["eval_accuracy"] = *stats.eval_accuracy;
        else line["eval_accuracy"] = nullptr;
        if (stats.eval_ece) line["eval_ece"] = *stats.eval_ece;
        else line["eval_ece"] = nullptr;
        out << line.dump() << "\n";
    }
}

std::string fmt_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

TrainOutputs train_into_dir(const ExperimentConfig& config, const PreparedData& prepared,
                            const std::string& dir) {
    fs::create_directories(dir);
    Model model(config.model, model_seed(config));
    TrainOutputs outputs;
    outputs.log = train_model(model, prepared.train, prepared.test, config.train, config.ece);

    outputs.checkpoint_path = (fs::path(dir) / "model.ckpt").string();
    outputs.standardizer_path = (fs::path(dir) / "standardizer.json").string();
    outputs.vocab_path = (fs::path(dir) / "vocab.json").string();
    outputs.log_path = (fs::path(dir) / "train_log.jsonl").string();
    save_checkpoint(model, outputs.checkpoint_path);
    prepared.stats.save(outputs.standardizer_path);
    prepared.vocab.save(outputs.vocab_path);
    write_train_log(outputs.log, outputs.log_path);
    return outputs;
}

} // namespace

TrainOutputs run_train(const ExperimentConfig& config) {
    config.validate();
    const auto raw = load_raw_dataset(config);
    const PreparedData prepared = prepare_data(raw, config.model, config.split);
    return train_into_dir(config, prepared, config.out_dir);
}

EvalOutputs run_eval(const std::string& checkpoint_path, const std::string& data_path,
                     const SplitConfig& split_config, const EceConfig& ece_config,
                     const std::string& out_dir) {
    Model model = load_checkpoint(checkpoint_path);
    const fs::path ckpt_dir = fs::path(checkpoint_path).parent_path();
    const Vocabulary vocab = Vocabulary::load((ckpt_dir / "vocab.json").string());
    const StandardizerStats stats = StandardizerStats::load((ckpt_dir / "standardizer.json").string());

    const auto raw = read_dataset_csv(data_path);
    for (const auto& row : raw) {
        if (row.aux.size() != model.config().d_struct) {
            throw ConfigError("eval: dataset aux width " + std::to_string(row.aux.size()) +
                              " does not match checkpoint d_struct " +
                              std::to_string(model.config().d_struct));
        }
    }
    SplitResult split = stratified_split(raw, split_config);
    std::vector<Example> test_set;
    test_set.reserve(split.test.size());
    for (const auto& row : split.test) {
        TokenizedText tok = tokenize(row.text, vocab, model.config().encoder.max_len);
        test_set.push_back(Example{std::move(tok.ids), std::move(tok.mask),
                                   apply_standardizer(stats, row.aux), row.label});
    }

    const auto records = evaluate(model, test_set);
    EvalOutputs outputs;
    outputs.report = report(records, ece_config);

    fs::create_directories(out_dir);
    outputs.report_path = (fs::path(out_dir) / "report.json").string();
    outputs.reliability_path = (fs::path(out_dir) / "reliability.csv").string();
    outputs.roc_path = (fs::path(out_dir) / "roc.csv").string();
    outputs.pr_path = (fs::path(out_dir) / "pr.csv").string();
    write_report_json(outputs.report, outputs.report_path);
    write_reliability_csv(outputs.report.calibration, outputs.reliability_path);
    write_roc_csv(roc_curve(records), outputs.roc_path);
    write_pr_csv(pr_curve(records), outputs.pr_path);
    return outputs;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config,
                                const std::vector<std::size_t>& layers) {
    config.validate();
    if (layers.empty()) throw ConfigError("sweep: layer list must not be empty");
    for (std::size_t layer : layers) {
        if (layer > config.model.encoder.n_layers) {
            throw ConfigError("sweep: insert layer " + std::to_string(layer) +
                              " out of range for " + std::to_string(config.model.encoder.n_layers) +
                              " layers");
        }
    }

    const auto raw = load_raw_dataset(config);
    const PreparedData prepared = prepare_data(raw, config.model, config.split);
    fs::create_directories(config.out_dir);

    struct RunSpec {
        std::string label;
        FusionMode mode;
        std::size_t insert_layer;
    };
    std::vector<RunSpec> specs;
    for (std::size_t layer : layers) {
        specs.push_back({"isfl_layer" + std::to_string(layer), FusionMode::isfl, layer});
    }
    specs.push_back({"none", FusionMode::none, 0});
    specs.push_back({"concat", FusionMode::concat_head, 0});

    std::vector<SweepRow> rows;
    for (const auto& spec : specs) {
        SweepRow row;
        row.label = spec.label;
        try {
            ExperimentConfig run_config = config;
            run_config.model.fusion_mode = spec.mode;
            run_config.model.fusion.insert_layer_index = spec.insert_layer;
            const std::string run_dir = (fs::path(config.out_dir) / spec.label).string();

            fs::create_directories(run_dir);
            Model model(run_config.model, model_seed(run_config));
            const auto log = train_model(model, prepared.train, prepared.test, run_config.train,
                                         run_config.ece);
            save_checkpoint(model, (fs::path(run_dir) / "model.ckpt").string());
            write_train_log(log, (fs::path(run_dir) / "train_log.jsonl").string());

            const auto records = evaluate(model, prepared.test);
            row.report = report(records, run_config.ece);
            write_report_json(row.report, (fs::path(run_dir) / "report.json").string());
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }

    const std::string table_path = (fs::path(config.out_dir) / "sweep.csv").string();
    std::ofstream table(table_path, std::ios::binary);
    if (!table) throw IoError("cannot write " + table_path);
    table << "config,status,accuracy,macro_f1,mcc,brier,log_loss,ece\n";
    for (const auto& row : rows) {
        if (row.ok) {
            const auto& tm = row.report.threshold_metrics;
            table << row.label << ",ok," << fmt_metric(tm.accuracy) << "," << fmt_metric(tm.macro_f1)
                  << "," << fmt_metric(tm.mcc) << "," << fmt_metric(row.report.brier) << ","
                  << fmt_metric(row.report.log_loss) << "," << fmt_metric(row.report.calibration.ece)
                  << "\n";
        } else {
            std::string sanitized = row.error;
            for (char& c : sanitized) {
                if (c == ',' || c == '\n' || c == '\r') c = ';';
            }
            table << row.label << ",failed: " << sanitized << ",,,,,,\n";
        }
    }
    return rows;
}

} // namespace isfl
