#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "isfl/data.hpp"

using namespace isfl;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Vocabulary tiny_vocab() {
    const std::vector<std::string> texts{"a b"};
    return Vocabulary::build(texts, 8);
}

} // namespace

TEST_CASE("tokenize empty text") {
    const Vocabulary vocab = tiny_vocab();
    const TokenizedText t = tokenize("", vocab, 4);
    CHECK(t.ids == std::vector<int>{Vocabulary::kCls, Vocabulary::kSep, Vocabulary::kPad,
                                    Vocabulary::kPad});
    CHECK(t.mask == std::vector<int>{1, 1, 0, 0});
}

TEST_CASE("tokenize known words") {
    const std::vector<std::string> texts{"a a b"}; // 'a' ranks first by count
    const Vocabulary vocab = Vocabulary::build(texts, 8);
    REQUIRE(vocab.id_for("a") == 4);
    REQUIRE(vocab.id_for("b") == 5);
    const TokenizedText t = tokenize("a b", vocab, 8);
    CHECK(t.ids == std::vector<int>{Vocabulary::kCls, 4, 5, Vocabulary::kSep, 0, 0, 0, 0});
    CHECK(t.mask == std::vector<int>{1, 1, 1, 1, 0, 0, 0, 0});
}

TEST_CASE("tokenize head truncation keeps max_len-2 content tokens") {
    std::string text;
    for (int i = 0; i < 200; ++i) text += "a ";
    const Vocabulary vocab = tiny_vocab();
    const TokenizedText t = tokenize(text, vocab, 128);
    REQUIRE(t.ids.size() == 128);
    const std::size_t content =
        static_cast<std::size_t>(std::count(t.ids.begin(), t.ids.end(), vocab.id_for("a")));
    CHECK(content == 126);
    CHECK(t.ids.front() == Vocabulary::kCls);
    CHECK(t.ids.back() == Vocabulary::kSep); // truncated text fills up to the final SEP
}

TEST_CASE("tokenize maps unknown words to UNK, lowercases, and is length exact") {
    const Vocabulary vocab = tiny_vocab();
    CHECK(tokenize("zzz", vocab, 6).ids[1] == Vocabulary::kUnk);
    CHECK(tokenize("A", vocab, 6).ids[1] == vocab.id_for("a"));

    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> len(0, 40);
    std::uniform_int_distribution<int> chr(0, 127);
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) text.push_back(static_cast<char>(chr(rng)));
        const std::size_t max_len = 2 + static_cast<std::size_t>(len(rng) % 12);
        const TokenizedText a = tokenize(text, vocab, max_len);
        const TokenizedText b = tokenize(text, vocab, max_len);
        CHECK(a.ids.size() == max_len);
        CHECK(a.mask.size() == max_len);
        CHECK(a.ids == b.ids);
        CHECK(a.mask == b.mask);
    }
    CHECK_THROWS_AS(tokenize("a", vocab, 1), ConfigError);
}

TEST_CASE("standardizer hand values") {
    std::vector<std::vector<double>> rows{{1.0}, {2.0}, {3.0}};
    const StandardizerStats stats = fit_standardizer(rows);
    CHECK(stats.means[0] == doctest::Approx(2.0));
    CHECK(stats.stds[0] == doctest::Approx(0.8165).epsilon(1e-3));
    const auto t0 = apply_standardizer(stats, rows[0]);
    const auto t2 = apply_standardizer(stats, rows[2]);
    CHECK(t0[0] == doctest::Approx(-1.2247).epsilon(1e-3));
    CHECK(t2[0] == doctest::Approx(1.2247).epsilon(1e-3));
}

TEST_CASE("constant columns standardize to zero") {
    std::vector<std::vector<double>> rows{{5.0}, {5.0}, {5.0}};
    const StandardizerStats stats = fit_standardizer(rows);
    CHECK(stats.stds[0] == 1.0);
    for (const auto& row : rows) CHECK(apply_standardizer(stats, row)[0] == 0.0);
}

TEST_CASE("re-fitting standardized data gives mean 0 std 1") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> dist(3.0, 2.5);
    std::vector<std::vector<double>> rows(50, std::vector<double>(3));
    for (auto& row : rows) {
        for (auto& v : row) v = dist(rng);
    }
    const StandardizerStats stats = fit_standardizer(rows);
    std::vector<std::vector<double>> transformed;
    transformed.reserve(rows.size());
    for (const auto& row : rows) transformed.push_back(apply_standardizer(stats, row));
    const StandardizerStats refit = fit_standardizer(transformed);
    for (double m : refit.means) CHECK(std::fabs(m) < 1e-9);
    for (double s : refit.stds) CHECK(std::fabs(s - 1.0) < 1e-9);
}

TEST_CASE("standardizer rejects tiny or ragged input") {
    std::vector<std::vector<double>> one{{1.0}};
    CHECK_THROWS_AS(fit_standardizer(one), ConfigError);
    std::vector<std::vector<double>> empty;
    CHECK_THROWS_AS(fit_standardizer(empty), ConfigError);
    std::vector<std::vector<double>> ragged{{1.0, 2.0}, {3.0}};
    CHECK_THROWS_AS(fit_standardizer(ragged), ShapeError);
}

TEST_CASE("standardizer json round trip") {
    std::vector<std::vector<double>> rows{{1.0, -2.0}, {2.0, 4.0}, {3.5, 1.0}};
    const StandardizerStats stats = fit_standardizer(rows);
    const StandardizerStats loaded = StandardizerStats::from_json(stats.to_json());
    CHECK(loaded.means == stats.means);
    CHECK(loaded.stds == stats.stds);
}

namespace {

std::vector<RawExample> labeled_examples(std::size_t n0, std::size_t n1) {
    std::vector<RawExample> rows;
    for (std::size_t i = 0; i < n0; ++i) rows.push_back({"neg " + std::to_string(i), {0.0}, 0});
    for (std::size_t i = 0; i < n1; ++i) rows.push_back({"pos " + std::to_string(i), {1.0}, 1});
    return rows;
}

} // namespace

TEST_CASE("stratified split counts 60/40 at fraction 0.2") {
    const auto rows = labeled_examples(60, 40);
    const SplitResult split = stratified_split(rows, {0.2, 9});
    std::size_t test0 = 0, test1 = 0;
    for (const auto& r : split.test) (r.label == 0 ? test0 : test1) += 1;
    CHECK(test0 == 12);
    CHECK(test1 == 8);
    CHECK(split.train.size() == 80);
}

TEST_CASE("stratified split is a partition") {
    const auto rows = labeled_examples(23, 31);
    const SplitResult split = stratified_split(rows, {0.25, 3});
    CHECK(split.train.size() + split.test.size() == rows.size());
    std::multiset<std::string> seen;
    for (const auto& r : split.train) seen.insert(r.text);
    for (const auto& r : split.test) seen.insert(r.text);
    std::multiset<std::string> expected;
    for (const auto& r : rows) expected.insert(r.text);
    CHECK(seen == expected); // texts are unique identifiers here
}

TEST_CASE("stratified split rejects single-class shortage") {
    std::vector<RawExample> rows = labeled_examples(10, 0);
    CHECK_THROWS_AS(stratified_split(rows, {0.2, 1}), ConfigError);
    rows.push_back({"solo", {0.0}, 1});
    CHECK_THROWS_AS(stratified_split(rows, {0.2, 1}), ConfigError);
}

TEST_CASE("stratified split is deterministic and shuffled") {
    const auto rows = labeled_examples(40, 40);
    const SplitResult a = stratified_split(rows, {0.2, 77});
    const SplitResult b = stratified_split(rows, {0.2, 77});
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].text == b.train[i].text);
    for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].text == b.test[i].text);

    const SplitResult c = stratified_split(rows, {0.2, 78});
    bool any_difference = false;
    for (std::size_t i = 0; i < a.test.size() && !any_difference; ++i) {
        any_difference = a.test[i].text != c.test[i].text;
    }
    CHECK(any_difference);
}

TEST_CASE("synthetic: interaction strength 0 leaves aux uninformative") {
    SyntheticConfig config;
    config.n_examples = 2000;
    config.interaction_strength = 0.0;
    config.noise_rate = 0.0;
    config.seed = 21;
    const auto rows = generate_synthetic(config);

    // Monte-Carlo aux-only predictor: decode the aux bit from sign(aux_0),
    // take the better of predicting it or its complement.
    std::size_t agree = 0;
    for (const auto& r : rows) {
        const int aux_bit = r.aux[0] > 0.0 ? 1 : 0;
        if (aux_bit == r.label) ++agree;
    }
    const double acc =
        std::max(static_cast<double>(agree), static_cast<double>(rows.size() - agree)) /
        static_cast<double>(rows.size());
    CHECK(acc < 0.55);
    CHECK(bayes_accuracy(config).aux_only == doctest::Approx(0.5));
    CHECK(bayes_accuracy(config).text_only == doctest::Approx(1.0));
}

TEST_CASE("synthetic: zero noise, full interaction is jointly deterministic") {
    SyntheticConfig config;
    config.n_examples = 400;
    config.interaction_strength = 1.0;
    config.noise_rate = 0.0;
    const auto rows = generate_synthetic(config);
    CHECK(bayes_accuracy(config).joint == doctest::Approx(1.0));
    CHECK(bayes_accuracy(config).text_only == doctest::Approx(0.5));

    // The joint rule reconstructs every label exactly.
    for (const auto& r : rows) {
        const bool has_marker = r.text.find(synthetic_marker_word()) != std::string::npos;
        const int text_bit = has_marker ? 1 : 0;
        const int aux_bit = r.aux[0] > 0.0 ? 1 : 0;
        CHECK((text_bit ^ aux_bit) == r.label);
    }
}

TEST_CASE("synthetic: label marginals balanced within 2% at n=2000") {
    SyntheticConfig config;
    config.n_examples = 2000;
    config.seed = 5;
    const auto rows = generate_synthetic(config);
    std::size_t ones = 0;
    for (const auto& r : rows) ones += static_cast<std::size_t>(r.label);
    const double frac = static_cast<double>(ones) / static_cast<double>(rows.size());
    CHECK(frac > 0.48);
    CHECK(frac < 0.52);
}

TEST_CASE("synthetic: invalid sizes rejected") {
    SyntheticConfig config;
    config.n_examples = 0;
    CHECK_THROWS_AS(generate_synthetic(config), ConfigError);
    config.n_examples = 10;
    config.noise_rate = 0.5;
    CHECK_THROWS_AS(generate_synthetic(config), ConfigError);
    config.noise_rate = 0.1;
    config.seq_len = 1;
    config.n_markers = 2;
    CHECK_THROWS_AS(generate_synthetic(config), ConfigError);
}

TEST_CASE("synthetic generation is deterministic per seed") {
    SyntheticConfig config;
    config.n_examples = 100;
    const auto a = generate_synthetic(config);
    const auto b = generate_synthetic(config);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].text == b[i].text);
        CHECK(a[i].aux == b[i].aux);
        CHECK(a[i].label == b[i].label);
    }
}

TEST_CASE("dataset csv round trip with awkward text") {
    std::vector<RawExample> rows{
        {"plain words", {1.5, -2.25}, 0},
        {"comma, inside", {0.1, 0.2}, 1},
        {"quote \" and \"\" doubled", {-3.75, 1e-7}, 0},
        {"", {0.0, 0.0}, 1},
    };
    const std::string path = temp_path("isfl_test_roundtrip.csv");
    write_dataset_csv(rows, path);
    const auto loaded = read_dataset_csv(path);
    REQUIRE(loaded.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(loaded[i].text == rows[i].text);
        CHECK(loaded[i].aux == rows[i].aux); // %.17g is value-exact for doubles
        CHECK(loaded[i].label == rows[i].label);
    }
    std::remove(path.c_str());
}

TEST_CASE("dataset csv header and label validation") {
    const std::string path = temp_path("isfl_test_badcsv.csv");
    {
        std::ofstream out(path, std::ios::binary);
        out << "text,aux_0,label\n\"x\",1.0,2\n";
    }
    CHECK_THROWS_AS(read_dataset_csv(path), IoError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "words,aux_0,label\n\"x\",1.0,1\n";
    }
    CHECK_THROWS_AS(read_dataset_csv(path), IoError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_dataset_csv(path), IoError); // missing file
}

TEST_CASE("dataset writer refuses line breaks in text") {
    std::vector<RawExample> rows{{"line\nbreak", {1.0}, 0}};
    const std::string path = temp_path("isfl_test_linebreak.csv");
    CHECK_THROWS_AS(write_dataset_csv(rows, path), ConfigError);
    std::remove(path.c_str());
}

TEST_CASE("vocabulary caps size and persists") {
    std::vector<std::string> texts;
    for (int i = 0; i < 50; ++i) texts.push_back("word" + std::to_string(i));
    const Vocabulary vocab = Vocabulary::build(texts, 20);
    CHECK(vocab.size() == 20);
    const Vocabulary loaded = Vocabulary::from_json(vocab.to_json());
    CHECK(loaded.size() == vocab.size());
    CHECK(loaded.id_for("word0") == vocab.id_for("word0"));
    CHECK(loaded.id_for("nope") == Vocabulary::kUnk);
}
