#include "isfl/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace isfl {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << content;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

// ---- vocabulary --------------------------------------------------------------

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string current;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_size) {
    if (max_size <= kReserved) {
        throw ConfigError("vocabulary size must exceed the " + std::to_string(kReserved) +
                          " reserved ids, got " + std::to_string(max_size));
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& text : texts) {
        for (auto& w : split_words(text)) counts[w] += 1;
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    const std::size_t capacity = max_size - kReserved;
    for (const auto& [word, count] : ranked) {
        if (vocab.words_.size() == capacity) break;
        vocab.words_.push_back(word);
    }
    vocab.rebuild_index();
    return vocab;
}

void Vocabulary::rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) {
        index_[words_[i]] = static_cast<int>(kReserved + i);
    }
}

int Vocabulary::id_for(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
}

std::string Vocabulary::to_json() const {
    nlohmann::json j;
    j["words"] = words_;
    return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    Vocabulary vocab;
    vocab.words_ = j.at("words").get<std::vector<std::string>>();
    vocab.rebuild_index();
    return vocab;
}

void Vocabulary::save(const std::string& path) const { write_file(path, to_json() + "\n"); }

Vocabulary Vocabulary::load(const std::string& path) { return from_json(read_file(path)); }

// ---- tokenizer -----------------------------------------------------------------

TokenizedText tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 2) {
        throw ConfigError("tokenize: max_len must be >= 2, got " + std::to_string(max_len));
    }
    TokenizedText out;
    out.ids.reserve(max_len);
    out.ids.push_back(Vocabulary::kCls);
    const auto words = split_words(text);
    const std::size_t keep = std::min(words.size(), max_len - 2); // head truncation
    for (std::size_t i = 0; i < keep; ++i) out.ids.push_back(vocab.id_for(words[i]));
    out.ids.push_back(Vocabulary::kSep);
    out.mask.assign(out.ids.size(), 1);
    out.ids.resize(max_len, Vocabulary::kPad);
    out.mask.resize(max_len, 0);
    return out;
}

// ---- standardizer ----------------------------------------------------------------

StandardizerStats fit_standardizer(std::span<const std::vector<double>> aux_rows) {
    if (aux_rows.size() < 2) {
        throw ConfigError("standardizer: need at least 2 rows to fit, got " +
                          std::to_string(aux_rows.size()));
    }
    const std::size_t width = aux_rows.front().size();
    for (const auto& row : aux_rows) {
        if (row.size() != width) {
            throw ShapeError("standardizer: ragged aux rows (" + std::to_string(row.size()) +
                             " vs " + std::to_string(width) + ")");
        }
    }
    StandardizerStats stats;
    stats.means.assign(width, 0.0);
    stats.stds.assign(width, 0.0);
    const double n = static_cast<double>(aux_rows.size());
    for (const auto& row : aux_rows) {
        for (std::size_t c = 0; c < width; ++c) stats.means[c] += row[c];
    }
    for (std::size_t c = 0; c < width; ++c) stats.means[c] /= n;
    for (const auto& row : aux_rows) {
        for (std::size_t c = 0; c < width; ++c) {
            const double d = row[c] - stats.means[c];
            stats.stds[c] += d * d;
        }
    }
    for (std::size_t c = 0; c < width; ++c) {
        stats.stds[c] = std::sqrt(stats.stds[c] / n); // population std
        if (stats.stds[c] == 0.0) stats.stds[c] = 1.0;
    }
    return stats;
}

std::vector<double> apply_standardizer(const StandardizerStats& stats,
                                       const std::vector<double>& aux) {
    if (aux.size() != stats.means.size()) {
        throw ShapeError("standardizer: aux width " + std::to_string(aux.size()) +
                         " does not match fitted width " + std::to_string(stats.means.size()));
    }
    std::vector<double> out(aux.size());
    for (std::size_t c = 0; c < aux.size(); ++c) out[c] = (aux[c] - stats.means[c]) / stats.stds[c];
    return out;
}

std::string StandardizerStats::to_json() const {
    nlohmann::json j;
    j["means"] = means;
    j["stds"] = stds;
    return j.dump(2);
}

StandardizerStats StandardizerStats::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    StandardizerStats stats;
    stats.means = j.at("means").get<std::vector<double>>();
    stats.stds = j.at("stds").get<std::vector<double>>();
    if (stats.means.size() != stats.stds.size()) {
        throw IoError("standardizer file: means/stds length mismatch");
    }
    return stats;
}

void StandardizerStats::save(const std::string& path) const { write_file(path, to_json() + "\n"); }

StandardizerStats StandardizerStats::load(const std::string& path) {
    return from_json(read_file(path));
}

// ---- stratified split ------------------------------------------------------------

SplitResult stratified_split(std::span<const RawExample> dataset, const SplitConfig& config) {
    if (config.test_fraction <= 0.0 || config.test_fraction >= 1.0) {
        throw ConfigError("split: test_fraction must be in (0, 1), got " +
                          std::to_string(config.test_fraction));
    }
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset[i].label].push_back(i);
    if (by_class.empty()) throw ConfigError("split: empty dataset");
    if (by_class.size() < 2) {
        throw ConfigError("split: need both classes present, got only class " +
                          std::to_string(by_class.begin()->first));
    }
    for (const auto& [label, indices] : by_class) {
        if (indices.size() < 2) {
            throw ConfigError("split: class " + std::to_string(label) + " has only " +
                              std::to_string(indices.size()) + " example(s); need at least 2");
        }
    }

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> train_idx, test_idx;
    for (auto& [label, indices] : by_class) {
        std::shuffle(indices.begin(), indices.end(), rng);
        const auto n_test = static_cast<std::size_t>(
            std::lround(static_cast<double>(indices.size()) * config.test_fraction));
        test_idx.insert(test_idx.end(), indices.begin(), indices.begin() + n_test);
        train_idx.insert(train_idx.end(), indices.begin() + n_test, indices.end());
    }
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    std::shuffle(test_idx.begin(), test_idx.end(), rng);

    SplitResult result;
    result.train.reserve(train_idx.size());
    result.test.reserve(test_idx.size());
    for (std::size_t i : train_idx) result.train.push_back(dataset[i]);
    for (std::size_t i : test_idx) result.test.push_back(dataset[i]);
    return result;
}

// ---- synthetic task ---------------------------------------------------------------

namespace {
const std::string kMarkerWord = "zmark";
}

const std::string& synthetic_marker_word() { return kMarkerWord; }

void SyntheticConfig::validate() const {
    if (n_examples == 0) throw ConfigError("synthetic.n_examples: must be positive");
    if (vocab_size < Vocabulary::kReserved + 3) {
        throw ConfigError("synthetic.vocab_size: must be at least " +
                          std::to_string(Vocabulary::kReserved + 3));
    }
    if (seq_len < n_markers + 1) {
        throw ConfigError("synthetic.seq_len: must exceed n_markers");
    }
    if (d_struct == 0) throw ConfigError("synthetic.d_struct: must be positive");
    if (interaction_strength < 0.0 || interaction_strength > 1.0) {
        throw ConfigError("synthetic.interaction_strength: must be in [0, 1]");
    }
    if (noise_rate < 0.0 || noise_rate >= 0.5) {
        throw ConfigError("synthetic.noise_rate: must be in [0, 0.5)");
    }
    if (n_markers == 0) throw ConfigError("synthetic.n_markers: must be positive");
}

BayesAccuracy bayes_accuracy(const SyntheticConfig& config) {
    config.validate();
    const double s = config.interaction_strength;
    const double rho = config.noise_rate;
    const auto observed = [rho](double clean) { return (1.0 - rho) * clean + rho * (1.0 - clean); };
    BayesAccuracy b;
    b.joint = observed(0.5 + 0.5 * std::max(s, 1.0 - s));
    b.text_only = observed(1.0 - 0.5 * s);
    b.aux_only = observed(0.5);
    return b;
}

std::vector<RawExample> generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::bernoulli_distribution interaction(config.interaction_strength);
    std::bernoulli_distribution flip(config.noise_rate);
    std::uniform_real_distribution<double> magnitude(0.5, 1.5);
    std::normal_distribution<double> noise_feature(0.0, 1.0);

    const std::size_t n_fillers = config.vocab_size - Vocabulary::kReserved - 1;
    std::uniform_int_distribution<std::size_t> filler(0, n_fillers - 1);

    std::vector<RawExample> rows;
    rows.reserve(config.n_examples);
    for (std::size_t i = 0; i < config.n_examples; ++i) {
        const int text_bit = static_cast<int>(i % 2);        // stratified (T, A) cells
        const int aux_bit = static_cast<int>((i / 2) % 2);
        const bool interact = aux_bit == 1 && interaction(rng);
        int label = text_bit ^ (interact ? 1 : 0);
        if (flip(rng)) label ^= 1;

        std::vector<std::string> words(config.seq_len);
        for (auto& w : words) w = "w" + std::to_string(filler(rng));
        if (text_bit == 1) {
            std::vector<std::size_t> positions(config.seq_len);
            std::iota(positions.begin(), positions.end(), 0);
            std::shuffle(positions.begin(), positions.end(), rng);
            for (std::size_t m = 0; m < config.n_markers; ++m) words[positions[m]] = kMarkerWord;
        }
        std::string text;
        for (std::size_t w = 0; w < words.size(); ++w) {
            if (w) text += ' ';
            text += words[w];
        }

        std::vector<double> aux(config.d_struct);
        aux[0] = (aux_bit == 1 ? 1.0 : -1.0) * magnitude(rng);
        for (std::size_t c = 1; c < config.d_struct; ++c) aux[c] = noise_feature(rng);

        rows.push_back(RawExample{std::move(text), std::move(aux), label});
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    return rows;
}

// ---- dataset file I/O -----------------------------------------------------------------

void write_dataset_csv(std::span<const RawExample> rows, const std::string& path) {
    if (rows.empty()) throw ConfigError("dataset: refusing to write an empty dataset");
    const std::size_t width = rows.front().aux.size();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);

    out << "text";
    for (std::size_t c = 0; c < width; ++c) out << ",aux_" << c;
    out << ",label\n";

    for (const auto& row : rows) {
        if (row.aux.size() != width) throw ShapeError("dataset: ragged aux rows");
        if (row.text.find('\n') != std::string::npos || row.text.find('\r') != std::string::npos) {
            throw ConfigError("dataset: text fields may not contain line breaks");
        }
        out << '"';
        for (char c : row.text) {
            out << c;
            if (c == '"') out << '"';
        }
        out << '"';
        for (double v : row.aux) out << ',' << fmt_double(v);
        out << ',' << row.label << '\n';
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    std::size_t i = 0;
    while (i < line.size()) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(c);
        }
        ++i;
    }
    if (quoted) throw IoError("dataset line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(std::move(field));
    return fields;
}

double parse_double(const std::string& s, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("dataset line " + std::to_string(line_no) + ": bad number '" + s + "'");
    }
}

} // namespace

std::vector<RawExample> read_dataset_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);

    std::string line;
    if (!std::getline(in, line)) throw IoError("dataset " + path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line, 1);
    if (header.size() < 3 || header.front() != "text" || header.back() != "label") {
        throw IoError("dataset " + path + ": header must be text,aux_0,...,label");
    }
    const std::size_t width = header.size() - 2;
    for (std::size_t c = 0; c < width; ++c) {
        if (header[1 + c] != "aux_" + std::to_string(c)) {
            throw IoError("dataset " + path + ": unexpected column '" + header[1 + c] + "'");
        }
    }

    std::vector<RawExample> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line, line_no);
        if (fields.size() != header.size()) {
            throw IoError("dataset line " + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields, got " +
                          std::to_string(fields.size()));
        }
        RawExample row;
        row.text = std::move(fields.front());
        row.aux.reserve(width);
        for (std::size_t c = 0; c < width; ++c) row.aux.push_back(parse_double(fields[1 + c], line_no));
        const std::string& label = fields.back();
        if (label == "0") row.label = 0;
        else if (label == "1") row.label = 1;
        else throw IoError("dataset line " + std::to_string(line_no) + ": label must be 0 or 1");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError("dataset " + path + ": no data rows");
    return rows;
}

} // namespace isfl
