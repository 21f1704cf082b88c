#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "isfl/metrics.hpp"

using namespace isfl;

namespace {

// Independent brute-force ECE: per-bin record scan with the interval
// predicate, kept free of the module's index arithmetic.
double brute_force_ece(const std::vector<PredictionRecord>& records, std::size_t n_bins) {
    double total = 0.0;
    for (std::size_t bin = 0; bin < n_bins; ++bin) {
        const double lo = static_cast<double>(bin) / static_cast<double>(n_bins);
        const double hi = static_cast<double>(bin + 1) / static_cast<double>(n_bins);
        std::size_t count = 0, correct = 0;
        double conf_sum = 0.0;
        for (const auto& r : records) {
            const double c = std::max(r.p, 1.0 - r.p);
            const bool inside = bin == 0 ? (c <= hi) : (c > lo && c <= hi);
            if (!inside) continue;
            ++count;
            conf_sum += c;
            const int pred = r.p >= 0.5 ? 1 : 0;
            if (pred == r.y) ++correct;
        }
        if (count == 0) continue;
        const double acc = static_cast<double>(correct) / static_cast<double>(count);
        const double conf = conf_sum / static_cast<double>(count);
        total += (static_cast<double>(count) / static_cast<double>(records.size())) *
                 std::fabs(acc - conf);
    }
    return total;
}

// Independent AUC: count positive/negative pairs, ties worth 1/2.
double brute_force_auc(const std::vector<PredictionRecord>& records) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (const auto& pos : records) {
        if (pos.y != 1) continue;
        for (const auto& neg : records) {
            if (neg.y != 0) continue;
            ++pairs;
            if (pos.p > neg.p) wins += 1.0;
            else if (pos.p == neg.p) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

std::vector<PredictionRecord> random_records(std::mt19937_64& rng, std::size_t n,
                                             bool both_classes = false) {
    std::uniform_real_distribution<double> prob(0.0, 1.0);
    std::bernoulli_distribution label(0.5);
    std::vector<PredictionRecord> records(n);
    for (auto& r : records) {
        r.p = prob(rng);
        r.y = label(rng) ? 1 : 0;
    }
    if (both_classes && n >= 2) {
        records[0].y = 0;
        records[1].y = 1;
    }
    return records;
}

} // namespace

TEST_CASE("threshold metrics from hand-checked counts") {
    // Frozen against exact-fraction arithmetic:
    //   accuracy = 19424/19601, macro F1 = (18848/19025 + 20000/20177)/2,
    //   mcc = 94232188 / sqrt(9517*9508*10093*10084).
    ThresholdMetrics m = threshold_metrics_from_counts({9424, 10000, 93, 84});
    CHECK(m.accuracy == doctest::Approx(0.990969848477).epsilon(1e-9));
    CHECK(m.macro_f1 == doctest::Approx(0.990962043732).epsilon(1e-9));
    CHECK(m.mcc == doctest::Approx(0.981924506028).epsilon(1e-9));
    CHECK(std::fabs(m.accuracy - 0.9910) < 1e-4);
    CHECK(std::fabs(m.macro_f1 - 0.9910) < 1e-4);
    CHECK(m.warnings.empty());
}

TEST_CASE("perfect predictions") {
    std::vector<PredictionRecord> records{{1.0, 1}, {0.0, 0}, {1.0, 1}, {0.0, 0}};
    ThresholdMetrics m = confusion_and_threshold_metrics(records);
    CHECK(m.accuracy == doctest::Approx(1.0));
    CHECK(m.macro_f1 == doctest::Approx(1.0));
    CHECK(m.mcc == doctest::Approx(1.0));
    MetricsReport rep = report(records);
    CHECK(rep.brier == doctest::Approx(0.0));
    CHECK(rep.calibration.ece == doctest::Approx(0.0));
    CHECK(rep.roc_auc == doctest::Approx(1.0));
    CHECK(rep.average_precision == doctest::Approx(1.0));
}

TEST_CASE("mcc determinant example 5/12") {
    ThresholdMetrics m = threshold_metrics_from_counts({2, 3, 1, 1});
    CHECK(m.mcc == doctest::Approx(5.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("degenerate denominators resolve to 0 with warning") {
    // Every prediction negative: no predicted positives.
    std::vector<PredictionRecord> records{{0.1, 1}, {0.2, 0}, {0.3, 0}};
    ThresholdMetrics m = confusion_and_threshold_metrics(records);
    CHECK(m.mcc == 0.0);
    CHECK_FALSE(m.warnings.empty());
}

TEST_CASE("brier hand values") {
    std::vector<PredictionRecord> exact{{1.0, 1}, {0.0, 0}};
    CHECK(brier(exact) == doctest::Approx(0.0));
    std::vector<PredictionRecord> uniform{{0.5, 1}, {0.5, 0}, {0.5, 1}};
    CHECK(brier(uniform) == doctest::Approx(0.25));
    std::vector<PredictionRecord> pair{{0.8, 1}, {0.3, 0}};
    CHECK(brier(pair) == doctest::Approx(0.065));
}

TEST_CASE("log loss hand values") {
    std::vector<PredictionRecord> uniform{{0.5, 1}, {0.5, 0}};
    CHECK(log_loss(uniform) == doctest::Approx(std::log(2.0)));
    std::vector<PredictionRecord> exact{{1.0, 1}, {0.0, 0}};
    CHECK(log_loss(exact) == doctest::Approx(0.0).epsilon(1e-9));
    std::vector<PredictionRecord> pair{{0.9, 1}, {0.2, 0}};
    CHECK(log_loss(pair) == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2.0));
}

TEST_CASE("ece hand values") {
    std::vector<PredictionRecord> degenerate{{1.0, 1}, {1.0, 1}};
    CHECK(ece(degenerate).ece == doctest::Approx(0.0));

    std::vector<PredictionRecord> split{{0.95, 1}, {0.95, 0}};
    EceResult result = ece(split);
    CHECK(result.ece == doctest::Approx(0.45));
    CHECK(result.bins.size() == 10);
    CHECK(result.bins[9].count == 2);
    CHECK(result.bins[9].mean_confidence == doctest::Approx(0.95));
    CHECK(result.bins[9].accuracy == doctest::Approx(0.5));
}

TEST_CASE("ece is 0 when within-bin accuracy equals confidence") {
    // 10 records at confidence 0.8: 8 correct, 2 wrong.
    std::vector<PredictionRecord> records;
    for (int i = 0; i < 8; ++i) records.push_back({0.8, 1});
    for (int i = 0; i < 2; ++i) records.push_back({0.8, 0});
    CHECK(ece(records).ece == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ece equals brute-force oracle bit-for-bit") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<std::size_t> size(1, 200);
    for (int trial = 0; trial < 200; ++trial) {
        const auto records = random_records(rng, size(rng));
        for (std::size_t n_bins : {1, 5, 10, 17}) {
            const double module_value = ece(records, {n_bins}).ece;
            const double oracle_value = brute_force_ece(records, n_bins);
            CAPTURE(trial);
            CAPTURE(n_bins);
            CHECK(module_value == oracle_value);
        }
    }
}

TEST_CASE("auc hand values and ties") {
    std::vector<PredictionRecord> four{{0.9, 1}, {0.8, 0}, {0.7, 1}, {0.1, 0}};
    CHECK(roc_auc(four) == doctest::Approx(0.75));

    std::vector<PredictionRecord> all_tied{{0.4, 1}, {0.4, 0}, {0.4, 1}, {0.4, 0}};
    CHECK(roc_auc(all_tied) == doctest::Approx(0.5));

    std::vector<PredictionRecord> single_class{{0.4, 1}, {0.6, 1}};
    CHECK_THROWS_AS(roc_auc(single_class), ShapeError);
}

TEST_CASE("auc equals brute-force pair counting") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> size(2, 50);
    std::uniform_int_distribution<int> coarse(0, 9);
    for (int trial = 0; trial < 200; ++trial) {
        auto records = random_records(rng, size(rng), true);
        // Force ties on a coarse grid half the time.
        if (trial % 2 == 0) {
            for (auto& r : records) r.p = coarse(rng) / 9.0;
        }
        CAPTURE(trial);
        CHECK(roc_auc(records) == doctest::Approx(brute_force_auc(records)).epsilon(1e-12));
    }
}

TEST_CASE("average precision on separated and tied scores") {
    std::vector<PredictionRecord> separated{{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}};
    CHECK(average_precision(separated) == doctest::Approx(1.0));

    // All tied: single group, precision = prevalence at recall 1.
    std::vector<PredictionRecord> tied{{0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}};
    CHECK(average_precision(tied) == doctest::Approx(0.5));
}

TEST_CASE("curve exports are ordered and complete") {
    std::vector<PredictionRecord> records{{0.9, 1}, {0.8, 0}, {0.7, 1}, {0.1, 0}};
    const auto roc = roc_curve(records);
    REQUIRE(roc.size() == 5); // sentinel + 4 unique thresholds
    CHECK(roc.front().fpr == 0.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().fpr == doctest::Approx(1.0));
    CHECK(roc.back().tpr == doctest::Approx(1.0));
    for (std::size_t i = 1; i < roc.size(); ++i) CHECK(roc[i].threshold < roc[i - 1].threshold);

    const auto pr = pr_curve(records);
    CHECK(pr.front().recall == 0.0);
    CHECK(pr.front().precision == 1.0);
    CHECK(pr.back().recall == doctest::Approx(1.0));
}

TEST_CASE("order permutation invariance") {
    std::mt19937_64 rng(13);
    auto records = random_records(rng, 64, true);
    auto shuffled = records;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(brier(records) == doctest::Approx(brier(shuffled)).epsilon(1e-12));
    CHECK(log_loss(records) == doctest::Approx(log_loss(shuffled)).epsilon(1e-12));
    CHECK(ece(records).ece == doctest::Approx(ece(shuffled).ece).epsilon(1e-12));
    CHECK(roc_auc(records) == doctest::Approx(roc_auc(shuffled)).epsilon(1e-12));
}

TEST_CASE("metric ranges hold on random inputs") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 100; ++trial) {
        const auto records = random_records(rng, 40, true);
        const MetricsReport rep = report(records);
        CHECK(rep.threshold_metrics.accuracy >= 0.0);
        CHECK(rep.threshold_metrics.accuracy <= 1.0);
        CHECK(rep.threshold_metrics.macro_f1 >= 0.0);
        CHECK(rep.threshold_metrics.macro_f1 <= 1.0);
        CHECK(rep.threshold_metrics.mcc >= -1.0);
        CHECK(rep.threshold_metrics.mcc <= 1.0);
        CHECK(rep.brier >= 0.0);
        CHECK(rep.brier <= 1.0);
        CHECK(rep.calibration.ece >= 0.0);
        CHECK(rep.calibration.ece <= 1.0);
        CHECK(rep.roc_auc >= 0.0);
        CHECK(rep.roc_auc <= 1.0);
        CHECK(rep.average_precision >= 0.0);
        CHECK(rep.average_precision <= 1.0);
    }
}

TEST_CASE("relabel symmetry") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const auto records = random_records(rng, 50, true);
        std::vector<PredictionRecord> flipped;
        flipped.reserve(records.size());
        for (const auto& r : records) flipped.push_back({1.0 - r.p, 1 - r.y});

        const ThresholdMetrics a = confusion_and_threshold_metrics(records);
        const ThresholdMetrics b = confusion_and_threshold_metrics(flipped);
        CHECK(a.accuracy == doctest::Approx(b.accuracy).epsilon(1e-12));
        CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-12));
        CHECK(std::fabs(a.mcc) == doctest::Approx(std::fabs(b.mcc)).epsilon(1e-12));
        CHECK(brier(records) == doctest::Approx(brier(flipped)).epsilon(1e-12));
        CHECK(log_loss(records) == doctest::Approx(log_loss(flipped)).epsilon(1e-12));
        CHECK(ece(records).ece == doctest::Approx(ece(flipped).ece).epsilon(1e-12));
    }
}

TEST_CASE("empty and invalid inputs are rejected") {
    std::vector<PredictionRecord> empty;
    CHECK_THROWS_AS(confusion_and_threshold_metrics(empty), ShapeError);
    CHECK_THROWS_AS(brier(empty), ShapeError);
    CHECK_THROWS_AS(log_loss(empty), ShapeError);
    CHECK_THROWS_AS(ece(empty), ShapeError);

    std::vector<PredictionRecord> bad_p{{1.5, 1}};
    CHECK_THROWS_AS(brier(bad_p), NumericError);
}

TEST_CASE("report json has every table column") {
    std::vector<PredictionRecord> records{{0.9, 1}, {0.2, 0}, {0.8, 1}, {0.3, 0}};
    const std::string json = report_to_json(report(records));
    for (const char* key : {"accuracy", "macro_f1", "mcc", "brier", "log_loss", "ece", "roc_auc",
                            "average_precision", "confusion", "reliability_bins"}) {
        CAPTURE(key);
        CHECK(json.find(std::string("\"") + key + "\"") != std::string::npos);
    }
}
