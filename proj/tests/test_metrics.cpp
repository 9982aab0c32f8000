#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "patentscape/detail/rng.hpp"
#include "patentscape/metrics.hpp"

using namespace patentscape;
using namespace patentscape::metrics;
using patentscape::detail::Rng;

namespace {

// Brute-force oracle: integrate the precision/recall curve by sweeping a
// threshold through every distinct score (plus one below the minimum),
// accumulating precision at each recall increase. Ties share a threshold,
// matching AP over a ranking with tied groups collapsed; with distinct
// scores it equals the ranking definition exactly.
double ap_bruteforce(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> thresholds = scores;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    const double total_pos = std::count(labels.begin(), labels.end(), 1);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (double t : thresholds) {
        std::size_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= t) (labels[i] == 1 ? tp : fp) += 1;
        }
        const double recall = tp / total_pos;
        const double precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
        ap += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    return ap;
}

}  // namespace

TEST_CASE("average precision is 1 for a perfect ranking") {
    CHECK(average_precision(std::vector<double>{0.9, 0.8, 0.2, 0.1},
                            std::vector<int>{1, 1, 0, 0}) == 1.0);
}

TEST_CASE("average precision hand case") {
    const double ap = average_precision(std::vector<double>{0.9, 0.8, 0.7},
                                        std::vector<int>{1, 0, 1});
    CHECK(ap == Catch::Approx(0.5 + 2.0 / 3.0 * 0.5).margin(1e-12));
    CHECK(ap == Catch::Approx(0.8333333333).margin(1e-9));
}

TEST_CASE("average precision validates its inputs") {
    CHECK_THROWS_AS(average_precision(std::vector<double>{0.5}, std::vector<int>{0}), DataError);
    CHECK_THROWS_AS(average_precision(std::vector<double>{0.5, 0.2}, std::vector<int>{1}),
                    DataError);
}

TEST_CASE("average precision equals the exhaustive threshold oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.index(7);
        // distinct scores so the ranking and threshold views coincide
        std::vector<double> scores(n);
        for (auto& s : scores) s = rng.real();
        std::sort(scores.begin(), scores.end());
        for (std::size_t i = 1; i < n; ++i)
            if (scores[i] <= scores[i - 1]) scores[i] = scores[i - 1] + 1e-6;
        Rng order(trial);
        order.shuffle(scores);
        for (std::uint64_t labeling = 1; labeling < (1ull << n); ++labeling) {
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) labels[i] = (labeling >> i) & 1;
            const double ours = average_precision(scores, labels);
            const double oracle = ap_bruteforce(scores, labels);
            REQUIRE(ours == Catch::Approx(oracle).margin(1e-9));
        }
    }
}

TEST_CASE("average precision is invariant under monotone score transforms") {
    Rng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(20);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool any_pos = false;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = rng.real();
            labels[i] = rng.index(2) == 0 ? 1 : 0;
            any_pos = any_pos || labels[i] == 1;
        }
        if (!any_pos) labels[0] = 1;
        std::vector<double> transformed(n);
        for (std::size_t i = 0; i < n; ++i) transformed[i] = std::exp(3.0 * scores[i]) + 7.0;
        CHECK(average_precision(scores, labels) ==
              Catch::Approx(average_precision(transformed, labels)).margin(1e-12));
    }
}

TEST_CASE("ties are broken by stable input order") {
    // both records score 0.5; the positive listed first is ranked first
    CHECK(average_precision(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 1.0);
    CHECK(average_precision(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
}

TEST_CASE("f1 score basics") {
    CHECK(f1_score(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
    // no predicted positives -> 0 by convention
    CHECK(f1_score(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 0}) == 0.0);
    // TP=2, FP=1, FN=1 -> P = R = 2/3 -> F1 = 2/3
    CHECK(f1_score(std::vector<double>{0.9, 0.8, 0.7, 0.2}, std::vector<int>{1, 1, 0, 1}) ==
          Catch::Approx(2.0 / 3.0).margin(1e-12));
    CHECK_THROWS_AS(f1_score(std::vector<double>{0.5}, std::vector<int>{}), DataError);
}

TEST_CASE("best_f1_threshold picks the F1-maximizing cut") {
    // predicting the top two scores as positive gives a perfect F1
    std::vector<double> scores{0.9, 0.7, 0.3, 0.1};
    std::vector<int> labels{1, 1, 0, 0};
    const double t = best_f1_threshold(scores, labels);
    CHECK(t == 0.7);
    CHECK(f1_score(scores, labels, t) == 1.0);

    // exhaustive comparison on random inputs
    Rng rng(88);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.index(10);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.real();
            l[i] = rng.index(2) == 0;
        }
        const double best = best_f1_threshold(s, l);
        const double best_f1 = f1_score(s, l, best);
        for (double candidate : s)
            CHECK(best_f1 >= f1_score(s, l, candidate) - 1e-12);
    }
}

TEST_CASE("f1 equals brute force over all labelings") {
    Rng rng(1234);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.index(8);
        std::vector<double> scores(n);
        for (auto& s : scores) s = rng.real();
        for (std::uint64_t labeling = 0; labeling < (1ull << n); ++labeling) {
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) labels[i] = (labeling >> i) & 1;
            std::size_t tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const bool pred = scores[i] >= 0.5;
                if (pred && labels[i]) ++tp;
                if (pred && !labels[i]) ++fp;
                if (!pred && labels[i]) ++fn;
            }
            const double p = tp + fp ? double(tp) / (tp + fp) : 0.0;
            const double r = tp + fn ? double(tp) / (tp + fn) : 0.0;
            const double expected = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
            REQUIRE(f1_score(scores, labels) == Catch::Approx(expected).margin(1e-12));
        }
    }
}

TEST_CASE("reports satisfy the F1 identity and round trip through text") {
    std::vector<EvalReport::Row> rows = {
        {"p1", 0.91, 1}, {"p2", 0.75, 0}, {"p3", 0.6200000000001, 1}, {"p4", 0.11, 0}};
    auto report = make_report(rows);
    if (report.precision + report.recall > 0) {
        CHECK(report.f1 == Catch::Approx(2 * report.precision * report.recall /
                                         (report.precision + report.recall))
                               .margin(1e-12));
    }
    // metrics equal recomputation from the report's own per-record scores
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& r : report.records) {
        scores.push_back(r.score);
        labels.push_back(r.label);
    }
    CHECK(report.average_precision == average_precision(scores, labels));
    CHECK(report.f1 == f1_score(scores, labels, report.threshold));

    auto path = (std::filesystem::temp_directory_path() / "ps_report.txt").string();
    write_report(path, report);
    auto loaded = read_report(path);
    CHECK(loaded.average_precision == report.average_precision);
    CHECK(loaded.f1 == report.f1);
    CHECK(loaded.precision == report.precision);
    CHECK(loaded.recall == report.recall);
    REQUIRE(loaded.records.size() == report.records.size());
    for (std::size_t i = 0; i < loaded.records.size(); ++i) {
        CHECK(loaded.records[i].id == report.records[i].id);
        CHECK(loaded.records[i].score == report.records[i].score);
        CHECK(loaded.records[i].label == report.records[i].label);
    }
}

TEST_CASE("single positive scored highest yields AP 1") {
    std::vector<EvalReport::Row> rows = {{"a", 0.99, 1}, {"b", 0.4, 0}, {"c", 0.3, 0}};
    CHECK(make_report(rows).average_precision == 1.0);
}
