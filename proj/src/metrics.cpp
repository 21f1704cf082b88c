#include "isfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace isfl {

namespace {

void require_nonempty(std::span<const PredictionRecord> records, const char* op) {
    if (records.empty()) throw ShapeError(std::string(op) + ": empty record list");
    for (const auto& r : records) {
        if (!std::isfinite(r.p) || r.p < 0.0 || r.p > 1.0) {
            throw NumericError(std::string(op) + ": probability " + std::to_string(r.p) +
                               " outside [0, 1]");
        }
        if (r.y != 0 && r.y != 1) {
            throw ShapeError(std::string(op) + ": label " + std::to_string(r.y) +
                             " is not binary");
        }
    }
}

// F1 of one class given its (tp, fp, fn); degenerate denominators -> 0.
double class_f1(double tp, double fp, double fn, bool* degenerate) {
    const double denom = 2.0 * tp + fp + fn;
    if (denom == 0.0) {
        *degenerate = true;
        return 0.0;
    }
    return 2.0 * tp / denom;
}

std::size_t ece_bin_index(double confidence, std::size_t n_bins) {
    // Interval predicate: bin i is ((i)/n, (i+1)/n], bin 0 also holds 0.
    double scaled = confidence * static_cast<double>(n_bins);
    long idx = static_cast<long>(std::ceil(scaled)) - 1;
    idx = std::clamp<long>(idx, 0, static_cast<long>(n_bins) - 1);
    while (idx > 0 && confidence <= static_cast<double>(idx) / static_cast<double>(n_bins)) --idx;
    while (idx + 1 < static_cast<long>(n_bins) &&
           confidence > static_cast<double>(idx + 1) / static_cast<double>(n_bins))
        ++idx;
    return static_cast<std::size_t>(idx);
}

void count_classes(std::span<const PredictionRecord> records, std::size_t* n_pos,
                   std::size_t* n_neg, const char* op) {
    *n_pos = 0;
    *n_neg = 0;
    for (const auto& r : records) (r.y == 1 ? *n_pos : *n_neg) += 1;
    if (*n_pos == 0 || *n_neg == 0) {
        throw ShapeError(std::string(op) + ": both classes must be present");
    }
}

// Record indices sorted by descending probability.
std::vector<std::size_t> order_by_descending_p(std::span<const PredictionRecord> records) {
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].p > records[b].p; });
    return order;
}

void write_csv_lines(const std::string& path, const std::string& header,
                     const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << header << "\n";
    for (const auto& line : lines) out << line << "\n";
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

ThresholdMetrics threshold_metrics_from_counts(const ConfusionCounts& counts) {
    ThresholdMetrics m;
    m.counts = counts;
    const double tp = static_cast<double>(counts.tp);
    const double tn = static_cast<double>(counts.tn);
    const double fp = static_cast<double>(counts.fp);
    const double fn = static_cast<double>(counts.fn);
    const double total = tp + tn + fp + fn;
    if (total == 0.0) throw ShapeError("threshold metrics: empty confusion matrix");

    m.accuracy = (tp + tn) / total;

    bool degenerate_f1 = false;
    const double f1_pos = class_f1(tp, fp, fn, &degenerate_f1);
    const double f1_neg = class_f1(tn, fn, fp, &degenerate_f1);
    m.macro_f1 = 0.5 * (f1_pos + f1_neg);
    if (degenerate_f1) m.warnings.push_back("macro_f1: degenerate class denominator treated as 0");

    const double denom_sq = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom_sq == 0.0) {
        m.mcc = 0.0;
        m.warnings.push_back("mcc: zero denominator treated as 0");
    } else {
        m.mcc = (tp * tn - fp * fn) / std::sqrt(denom_sq);
    }
    return m;
}

ThresholdMetrics confusion_and_threshold_metrics(std::span<const PredictionRecord> records,
                                                 double threshold) {
    require_nonempty(records, "threshold metrics");
    ConfusionCounts counts;
    for (const auto& r : records) {
        const int pred = r.p >= threshold ? 1 : 0;
        if (pred == 1 && r.y == 1) ++counts.tp;
        else if (pred == 0 && r.y == 0) ++counts.tn;
        else if (pred == 1 && r.y == 0) ++counts.fp;
        else ++counts.fn;
    }
    return threshold_metrics_from_counts(counts);
}

double brier(std::span<const PredictionRecord> records) {
    require_nonempty(records, "brier");
    double sum = 0.0;
    for (const auto& r : records) {
        const double d = r.p - static_cast<double>(r.y);
        sum += d * d;
    }
    return sum / static_cast<double>(records.size());
}

double log_loss(std::span<const PredictionRecord> records, double clip_epsilon) {
    require_nonempty(records, "log_loss");
    double sum = 0.0;
    for (const auto& r : records) {
        const double p = std::clamp(r.p, clip_epsilon, 1.0 - clip_epsilon);
        sum += r.y == 1 ? std::log(p) : std::log(1.0 - p);
    }
    return -sum / static_cast<double>(records.size());
}

EceResult ece(std::span<const PredictionRecord> records, const EceConfig& config) {
    require_nonempty(records, "ece");
    if (config.n_bins == 0) throw ConfigError("ece: n_bins must be positive");
    const std::size_t n_bins = config.n_bins;

    std::vector<std::size_t> count(n_bins, 0);
    std::vector<double> conf_sum(n_bins, 0.0);
    std::vector<std::size_t> correct(n_bins, 0);
    for (const auto& r : records) {
        const double confidence = std::max(r.p, 1.0 - r.p);
        const int pred = r.p >= 0.5 ? 1 : 0;
        const std::size_t bin = ece_bin_index(confidence, n_bins);
        count[bin] += 1;
        conf_sum[bin] += confidence;
        correct[bin] += (pred == r.y) ? 1 : 0;
    }

    EceResult result;
    result.bins.reserve(n_bins);
    const double n = static_cast<double>(records.size());
    double total = 0.0;
    for (std::size_t i = 0; i < n_bins; ++i) {
        ReliabilityBin bin;
        bin.lo = static_cast<double>(i) / static_cast<double>(n_bins);
        bin.hi = static_cast<double>(i + 1) / static_cast<double>(n_bins);
        bin.count = count[i];
        if (count[i] > 0) {
            bin.mean_confidence = conf_sum[i] / static_cast<double>(count[i]);
            bin.accuracy = static_cast<double>(correct[i]) / static_cast<double>(count[i]);
            total += (static_cast<double>(count[i]) / n) *
                     std::fabs(bin.accuracy - bin.mean_confidence);
        }
        result.bins.push_back(bin);
    }
    result.ece = total;
    return result;
}

double roc_auc(std::span<const PredictionRecord> records) {
    require_nonempty(records, "roc_auc");
    std::size_t n_pos = 0, n_neg = 0;
    count_classes(records, &n_pos, &n_neg, "roc_auc");

    // Mann-Whitney rank statistic; tied scores share the average rank,
    // so each tied positive/negative pair contributes 1/2.
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return records[a].p < records[b].p; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && records[order[j]].p == records[order[i]].p) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // ranks are 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (records[order[k]].y == 1) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double average_precision(std::span<const PredictionRecord> records) {
    require_nonempty(records, "average_precision");
    std::size_t n_pos = 0, n_neg = 0;
    count_classes(records, &n_pos, &n_neg, "average_precision");

    const auto order = order_by_descending_p(records);
    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && records[order[j]].p == records[order[i]].p) ++j;
        for (std::size_t k = i; k < j; ++k) {
            (records[order[k]].y == 1 ? tp : fp) += 1;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

std::vector<RocPoint> roc_curve(std::span<const PredictionRecord> records) {
    require_nonempty(records, "roc_curve");
    std::size_t n_pos = 0, n_neg = 0;
    count_classes(records, &n_pos, &n_neg, "roc_curve");

    const auto order = order_by_descending_p(records);
    std::vector<RocPoint> points;
    points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && records[order[j]].p == records[order[i]].p) ++j;
        for (std::size_t k = i; k < j; ++k) {
            (records[order[k]].y == 1 ? tp : fp) += 1;
        }
        points.push_back({records[order[i]].p,
                          static_cast<double>(fp) / static_cast<double>(n_neg),
                          static_cast<double>(tp) / static_cast<double>(n_pos)});
        i = j;
    }
    return points;
}

std::vector<PrPoint> pr_curve(std::span<const PredictionRecord> records) {
    require_nonempty(records, "pr_curve");
    std::size_t n_pos = 0, n_neg = 0;
    count_classes(records, &n_pos, &n_neg, "pr_curve");

    const auto order = order_by_descending_p(records);
    std::vector<PrPoint> points;
    points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && records[order[j]].p == records[order[i]].p) ++j;
        for (std::size_t k = i; k < j; ++k) {
            (records[order[k]].y == 1 ? tp : fp) += 1;
        }
        points.push_back({records[order[i]].p,
                          static_cast<double>(tp) / static_cast<double>(n_pos),
                          static_cast<double>(tp) / static_cast<double>(tp + fp)});
        i = j;
    }
    return points;
}

MetricsReport report(std::span<const PredictionRecord> records, const EceConfig& config) {
    require_nonempty(records, "report");
    MetricsReport rep;
    rep.n_records = records.size();
    rep.threshold_metrics = confusion_and_threshold_metrics(records, 0.5);
    rep.brier = brier(records);
    rep.log_loss = log_loss(records);
    rep.calibration = ece(records, config);
    rep.roc_auc = roc_auc(records);
    rep.average_precision = average_precision(records);
    return rep;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["n_records"] = report.n_records;
    j["accuracy"] = report.threshold_metrics.accuracy;
    j["macro_f1"] = report.threshold_metrics.macro_f1;
    j["mcc"] = report.threshold_metrics.mcc;
    j["brier"] = report.brier;
    j["log_loss"] = report.log_loss;
    j["ece"] = report.calibration.ece;
    j["roc_auc"] = report.roc_auc;
    j["average_precision"] = report.average_precision;
    j["confusion"] = {{"tp", report.threshold_metrics.counts.tp},
                      {"tn", report.threshold_metrics.counts.tn},
                      {"fp", report.threshold_metrics.counts.fp},
                      {"fn", report.threshold_metrics.counts.fn}};
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& b : report.calibration.bins) {
        bins.push_back({{"lo", b.lo},
                        {"hi", b.hi},
                        {"count", b.count},
                        {"mean_confidence", b.mean_confidence},
                        {"accuracy", b.accuracy}});
    }
    j["reliability_bins"] = bins;
    j["warnings"] = report.threshold_metrics.warnings;
    return j.dump(2);
}

void write_report_json(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << report_to_json(report) << "\n";
}

void write_reliability_csv(const EceResult& result, const std::string& path) {
    std::vector<std::string> lines;
    lines.reserve(result.bins.size());
    for (const auto& b : result.bins) {
        lines.push_back(fmt(b.lo) + "," + fmt(b.hi) + "," + std::to_string(b.count) + "," +
                        fmt(b.mean_confidence) + "," + fmt(b.accuracy));
    }
    write_csv_lines(path, "bin_lo,bin_hi,count,mean_confidence,accuracy", lines);
}

void write_roc_csv(std::span<const RocPoint> points, const std::string& path) {
    std::vector<std::string> lines;
    lines.reserve(points.size());
    for (const auto& pt : points) {
        lines.push_back(fmt(pt.threshold) + "," + fmt(pt.fpr) + "," + fmt(pt.tpr));
    }
    write_csv_lines(path, "threshold,fpr,tpr", lines);
}

void write_pr_csv(std::span<const PrPoint> points, const std::string& path) {
    std::vector<std::string> lines;
    lines.reserve(points.size());
    for (const auto& pt : points) {
        lines.push_back(fmt(pt.threshold) + "," + fmt(pt.recall) + "," + fmt(pt.precision));
    }
    write_csv_lines(path, "threshold,recall,precision", lines);
}

} // namespace isfl
