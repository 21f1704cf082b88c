#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "isfl/errors.hpp"

namespace isfl {

// One evaluated example: predicted probability of class 1 and the true label.
struct PredictionRecord {
    double p = 0.0; // in [0, 1]
    int y = 0;      // in {0, 1}
};

struct ConfusionCounts {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::size_t total() const { return tp + tn + fp + fn; }
};

struct ThresholdMetrics {
    ConfusionCounts counts;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double mcc = 0.0;
    std::vector<std::string> warnings; // degenerate denominators resolved to 0
};

struct EceConfig {
    std::size_t n_bins = 10;
};

struct ReliabilityBin {
    double lo = 0.0, hi = 0.0; // confidence interval (lo, hi], first bin closed at 0
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

struct EceResult {
    double ece = 0.0;
    std::vector<ReliabilityBin> bins;
};

struct RocPoint {
    double threshold = 0.0, fpr = 0.0, tpr = 0.0;
};

struct PrPoint {
    double threshold = 0.0, recall = 0.0, precision = 0.0;
};

struct MetricsReport {
    std::size_t n_records = 0;
    ThresholdMetrics threshold_metrics;
    double brier = 0.0;
    double log_loss = 0.0;
    EceResult calibration;
    double roc_auc = 0.0;
    double average_precision = 0.0;
};

// Threshold metrics directly from a confusion matrix (the record-based
// overload builds the matrix at the given threshold, predicting 1 iff
// p >= threshold). Degenerate denominators yield 0 plus a warning.
ThresholdMetrics threshold_metrics_from_counts(const ConfusionCounts& counts);
ThresholdMetrics confusion_and_threshold_metrics(std::span<const PredictionRecord> records,
                                                 double threshold = 0.5);

double brier(std::span<const PredictionRecord> records);
double log_loss(std::span<const PredictionRecord> records, double clip_epsilon = 1e-15);

// Expected calibration error over equal-width confidence bins on
// max(p, 1-p); bin i covers (i/n, (i+1)/n], bin 0 additionally contains 0.
EceResult ece(std::span<const PredictionRecord> records, const EceConfig& config = {});

double roc_auc(std::span<const PredictionRecord> records);
double average_precision(std::span<const PredictionRecord> records);
std::vector<RocPoint> roc_curve(std::span<const PredictionRecord> records);
std::vector<PrPoint> pr_curve(std::span<const PredictionRecord> records);

MetricsReport report(std::span<const PredictionRecord> records, const EceConfig& config = {});

std::string report_to_json(const MetricsReport& report);
void write_report_json(const MetricsReport& report, const std::string& path);
void write_reliability_csv(const EceResult& result, const std::string& path);
void write_roc_csv(std::span<const RocPoint> points, const std::string& path);
void write_pr_csv(std::span<const PrPoint> points, const std::string& path);

} // namespace isfl
