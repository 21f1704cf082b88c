#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "isfl/errors.hpp"

namespace isfl {

// Dataset row as stored on disk: raw text plus numeric aux columns.
struct RawExample {
    std::string text;
    std::vector<double> aux;
    int label = 0;
};

// Model-ready example: padded token ids, attention mask, standardized aux.
struct Example {
    std::vector<int> tokens;
    std::vector<int> mask;
    std::vector<double> aux;
    int label = 0;
};

// Lowercasing whitespace tokenizer vocabulary with reserved ids.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr std::size_t kReserved = 4;

    // Most frequent words of the corpus (ties broken lexicographically),
    // capped so that all ids stay below max_size.
    static Vocabulary build(std::span<const std::string> texts, std::size_t max_size);

    int id_for(const std::string& word) const; // kUnk when absent
    std::size_t size() const { return kReserved + words_.size(); }

    std::string to_json() const;
    static Vocabulary from_json(const std::string& json_text);
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> words_; // id = kReserved + index
    std::unordered_map<std::string, int> index_;
    void rebuild_index();
};

std::vector<std::string> split_words(const std::string& text); // lowercase + whitespace

struct TokenizedText {
    std::vector<int> ids;  // exactly max_len entries
    std::vector<int> mask; // 1 on non-PAD positions
};

// CLS + up to max_len-2 head-truncated content tokens + SEP, then PAD.
TokenizedText tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len);

// Per-column z-scoring statistics, fitted on the training split only.
// Constant columns record a standard deviation of 1.
struct StandardizerStats {
    std::vector<double> means;
    std::vector<double> stds;

    std::string to_json() const;
    static StandardizerStats from_json(const std::string& json_text);
    void save(const std::string& path) const;
    static StandardizerStats load(const std::string& path);
};

StandardizerStats fit_standardizer(std::span<const std::vector<double>> aux_rows);
std::vector<double> apply_standardizer(const StandardizerStats& stats,
                                       const std::vector<double>& aux);

struct SplitConfig {
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<RawExample> train;
    std::vector<RawExample> test;
};

// Disjoint cover with per-class test counts of round(count * fraction);
// order within each split is shuffled by the seed.
SplitResult stratified_split(std::span<const RawExample> dataset, const SplitConfig& config);

// ---- synthetic interaction task -------------------------------------------
//
// Per example the generator draws a text bit T (marker words present or not)
// and an aux bit A (sign of aux_0), both balanced and independent. The clean
// label is T xor (A and I) with I ~ Bernoulli(interaction_strength), then
// flipped with probability noise_rate. Closed-form Bayes-optimal accuracies:
//   clean joint     = 1/2 + max(s, 1-s)/2
//   clean text-only = 1 - s/2
//   clean aux-only  = 1/2
// each mapped through c -> (1-noise)*c + noise*(1-c) for the observed label.
// At s=1 text alone and aux alone are both uninformative (accuracy 1/2) while
// together they determine the label up to the noise rate.

struct SyntheticConfig {
    std::size_t n_examples = 2000;
    std::size_t vocab_size = 50; // bound on distinct words incl. reserved ids
    std::size_t seq_len = 12;    // words per text
    std::size_t d_struct = 4;
    double interaction_strength = 1.0; // s in [0, 1]
    double noise_rate = 0.05;          // label flip probability, in [0, 0.5)
    std::size_t n_markers = 2;         // marker words injected when T = 1
    std::uint64_t seed = 7;

    void validate() const;
};

struct BayesAccuracy {
    double joint = 0.0;
    double text_only = 0.0;
    double aux_only = 0.0;
};

BayesAccuracy bayes_accuracy(const SyntheticConfig& config);
std::vector<RawExample> generate_synthetic(const SyntheticConfig& config);

// The marker word the generator injects; exposed for oracle tests.
const std::string& synthetic_marker_word();

// ---- dataset file I/O -------------------------------------------------------
// UTF-8 comma-delimited, header `text,aux_0,...,aux_{d-1},label`; the text
// field is double-quoted with doubled-quote escaping; label in {0,1}.

void write_dataset_csv(std::span<const RawExample> rows, const std::string& path);
std::vector<RawExample> read_dataset_csv(const std::string& path);

} // namespace isfl
