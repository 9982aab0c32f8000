#pragma once

// Ranking metrics for the imbalanced valid-patent task: average precision
// over the score ranking and F1 at a fixed threshold.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "patentscape/error.hpp"

namespace patentscape::metrics {

// AP = sum over positive ranks k of precision@k * (1/P), with the ranking
// by descending score and ties broken by stable input order.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw DataError("average_precision: scores and labels differ in length");
    const std::size_t positives =
        static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (positives == 0) throw DataError("average_precision requires at least one positive label");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::size_t true_positives = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] != 1) continue;
        ++true_positives;
        const double precision_at_k =
            static_cast<double>(true_positives) / static_cast<double>(rank + 1);
        ap += precision_at_k / static_cast<double>(positives);
    }
    return ap;
}

struct ThresholdCounts {
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;

    double precision() const {
        const std::size_t predicted = true_positives + false_positives;
        return predicted == 0 ? 0.0
                              : static_cast<double>(true_positives) / static_cast<double>(predicted);
    }
    double recall() const {
        const std::size_t actual = true_positives + false_negatives;
        return actual == 0 ? 0.0
                           : static_cast<double>(true_positives) / static_cast<double>(actual);
    }
    double f1() const {
        const double p = precision(), r = recall();
        return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
};

inline ThresholdCounts threshold_counts(std::span<const double> scores,
                                        std::span<const int> labels, double threshold) {
    if (scores.size() != labels.size())
        throw DataError("f1_score: scores and labels differ in length");
    ThresholdCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (predicted && labels[i] == 1) ++c.true_positives;
        else if (predicted) ++c.false_positives;
        else if (labels[i] == 1) ++c.false_negatives;
    }
    return c;
}

// Predictions are score >= threshold; F1 = 2PR/(P+R), 0 when undefined.
inline double f1_score(std::span<const double> scores, std::span<const int> labels,
                       double threshold = 0.5) {
    return threshold_counts(scores, labels, threshold).f1();
}

// Threshold maximizing F1 over the given (typically validation) scores.
// Candidates are the distinct scores; ties prefer the higher threshold.
inline double best_f1_threshold(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw DataError("best_f1_threshold: scores and labels differ in length");
    if (scores.empty()) throw DataError("best_f1_threshold requires scores");
    std::vector<double> candidates(scores.begin(), scores.end());
    std::sort(candidates.begin(), candidates.end(), std::greater<double>());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    double best_threshold = candidates.front();
    double best_f1 = -1.0;
    for (double t : candidates) {
        const double f1 = threshold_counts(scores, labels, t).f1();
        if (f1 > best_f1) {
            best_f1 = f1;
            best_threshold = t;
        }
    }
    return best_threshold;
}

struct EvalReport {
    double average_precision = 0.0;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double threshold = 0.5;
    struct Row {
        std::string id;
        double score = 0.0;
        int label = 0;
    };
    std::vector<Row> records;
};

inline EvalReport make_report(std::vector<EvalReport::Row> rows, double threshold = 0.5) {
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(rows.size());
    labels.reserve(rows.size());
    for (const auto& r : rows) {
        scores.push_back(r.score);
        labels.push_back(r.label);
    }
    EvalReport report;
    report.threshold = threshold;
    report.average_precision = average_precision(scores, labels);
    const auto counts = threshold_counts(scores, labels, threshold);
    report.precision = counts.precision();
    report.recall = counts.recall();
    report.f1 = counts.f1();
    report.records = std::move(rows);
    return report;
}

// Structured text form: a metrics block, then one "id score label" line
// per record. Doubles are printed with max_digits10, so rereading a report
// reproduces it bit for bit.
inline void write_report(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write evaluation report: " + path);
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "average_precision " << report.average_precision << '\n';
    out << "f1 " << report.f1 << '\n';
    out << "precision " << report.precision << '\n';
    out << "recall " << report.recall << '\n';
    out << "threshold " << report.threshold << '\n';
    out << "records " << report.records.size() << '\n';
    for (const auto& r : report.records) out << r.id << ' ' << r.score << ' ' << r.label << '\n';
}

inline EvalReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open evaluation report: " + path);
    EvalReport report;
    std::string key;
    std::size_t count = 0;
    auto expect = [&](const char* name, auto& value) {
        if (!(in >> key >> value) || key != name)
            throw DataError("malformed evaluation report " + path + ": expected '" +
                            std::string(name) + "'");
    };
    expect("average_precision", report.average_precision);
    expect("f1", report.f1);
    expect("precision", report.precision);
    expect("recall", report.recall);
    expect("threshold", report.threshold);
    expect("records", count);
    report.records.resize(count);
    for (auto& r : report.records) {
        if (!(in >> r.id >> r.score >> r.label))
            throw DataError("truncated evaluation report: " + path);
    }
    return report;
}

}  // namespace patentscape::metrics
