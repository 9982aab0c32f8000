#pragma once

// Patent data model, valid/negative dataset construction, and the
// important-code undersampling heuristic.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "patentscape/detail/rng.hpp"
#include "patentscape/error.hpp"

namespace patentscape::corpus {

enum class CodeFamily { ipc, cpc, uspc };

inline const char* family_name(CodeFamily f) {
    switch (f) {
        case CodeFamily::ipc: return "ipc";
        case CodeFamily::cpc: return "cpc";
        case CodeFamily::uspc: return "uspc";
    }
    throw InternalError("unknown code family");
}

inline CodeFamily parse_family(const std::string& name) {
    if (name == "ipc") return CodeFamily::ipc;
    if (name == "cpc") return CodeFamily::cpc;
    if (name == "uspc") return CodeFamily::uspc;
    throw DataError("unknown code family: " + name);
}

inline constexpr std::array<CodeFamily, 3> kAllFamilies = {CodeFamily::ipc, CodeFamily::cpc,
                                                           CodeFamily::uspc};

struct PatentRecord {
    std::string id;     // publication number; nonempty, unique in a corpus
    std::string title;
    std::string abstract;
    std::vector<std::string> ipc;   // trimmed, deduplicated
    std::vector<std::string> cpc;
    std::vector<std::string> uspc;
    bool valid = false;
    std::string publication_date;   // optional ISO-8601, empty if absent

    const std::vector<std::string>& codes(CodeFamily f) const {
        switch (f) {
            case CodeFamily::ipc: return ipc;
            case CodeFamily::cpc: return cpc;
            case CodeFamily::uspc: return uspc;
        }
        throw InternalError("unknown code family");
    }
    std::vector<std::string>& codes(CodeFamily f) {
        return const_cast<std::vector<std::string>&>(
            static_cast<const PatentRecord&>(*this).codes(f));
    }
};

struct CorpusCodeStats {
    CodeFamily family = CodeFamily::cpc;
    std::size_t total_patents = 0;
    std::unordered_map<std::string, std::size_t> doc_frequency;  // code -> #patents containing it
};

struct SamplingConfig {
    double valid_freq_threshold = 0.005;      // minimum share of valid patents carrying the code
    double emergence_ratio_threshold = 50.0;  // valid ratio / corpus ratio
    std::array<std::size_t, 3> negatives_per_split = {50000, 10000, 10000};  // train, val, test
    std::uint64_t seed = 0;

    void validate() const {
        if (valid_freq_threshold <= 0.0 || emergence_ratio_threshold <= 0.0)
            throw DataError("sampling thresholds must be positive");
    }
};

struct ValidSplits {
    std::vector<PatentRecord> train;
    std::vector<PatentRecord> validation;
    std::vector<PatentRecord> test;
};

struct DatasetSplit {
    std::vector<PatentRecord> train;
    std::vector<PatentRecord> validation;
    std::vector<PatentRecord> test;
    std::size_t train_positives = 0;
    std::size_t validation_positives = 0;
    std::size_t test_positives = 0;
};

// 6:2:2 split of the valid patents: seeded shuffle, then cut at
// floor(0.6 n) and floor(0.6 n) + ceil(0.2 n). Rounding reproduces the
// 280/94/94 partition of a 468-patent valid set.
inline ValidSplits split_valid(std::vector<PatentRecord> valid, std::uint64_t seed) {
    if (valid.size() < 3)
        throw DataError("need at least 3 valid patents to split, got " +
                        std::to_string(valid.size()));
    detail::Rng rng(detail::derive_seed(seed, /*stream=*/1));
    rng.shuffle(valid);
    const std::size_t n = valid.size();
    const std::size_t n_train = n * 6 / 10;                       // floor(0.6 n)
    const std::size_t n_val = (n * 2 + 9) / 10;                   // ceil(0.2 n)
    ValidSplits out;
    out.train.assign(valid.begin(), valid.begin() + n_train);
    out.validation.assign(valid.begin() + n_train, valid.begin() + n_train + n_val);
    out.test.assign(valid.begin() + n_train + n_val, valid.end());
    return out;
}

// Document frequency: number of patents (not occurrences) containing each
// code of the family. Record code lists are deduplicated at ingest, so a
// plain count per patent is a document count.
inline CorpusCodeStats code_doc_frequency(const std::vector<PatentRecord>& patents,
                                          CodeFamily family) {
    CorpusCodeStats stats;
    stats.family = family;
    stats.total_patents = patents.size();
    for (const auto& p : patents) {
        for (const auto& code : p.codes(family)) ++stats.doc_frequency[code];
    }
    return stats;
}

// A code is important when it clears both thresholds: it appears in at
// least valid_freq_threshold of the valid patents, and its valid-set ratio
// is at least emergence_ratio_threshold times its whole-corpus ratio.
// Codes never seen in the corpus stats are assigned the smallest
// observable corpus ratio, 1/total_patents.
inline std::set<std::string> important_codes(const CorpusCodeStats& valid_stats,
                                             const CorpusCodeStats& corpus_stats,
                                             const SamplingConfig& config) {
    config.validate();
    if (valid_stats.family != corpus_stats.family)
        throw DataError(std::string("code family mismatch: valid stats are ") +
                        family_name(valid_stats.family) + ", corpus stats are " +
                        family_name(corpus_stats.family));
    if (valid_stats.total_patents == 0 || corpus_stats.total_patents == 0)
        throw DataError("important_codes requires nonempty valid and corpus statistics");

    std::set<std::string> important;
    const double n_valid = static_cast<double>(valid_stats.total_patents);
    const double n_corpus = static_cast<double>(corpus_stats.total_patents);
    for (const auto& [code, valid_count] : valid_stats.doc_frequency) {
        const double valid_ratio = static_cast<double>(valid_count) / n_valid;
        if (valid_ratio < config.valid_freq_threshold) continue;
        auto it = corpus_stats.doc_frequency.find(code);
        const double corpus_count = it == corpus_stats.doc_frequency.end()
                                        ? 1.0
                                        : static_cast<double>(it->second);
        const double corpus_ratio = corpus_count / n_corpus;
        if (valid_ratio / corpus_ratio >= config.emergence_ratio_threshold)
            important.insert(code);
    }
    return important;
}

inline bool has_important_code(const PatentRecord& record,
                               const std::set<std::string>& important) {
    for (const auto& code : record.cpc) {
        if (important.count(code)) return true;
    }
    return false;
}

// Streaming negative sampler. The source callback yields records until it
// returns nullopt. Candidates are records whose CPC list shares no code
// with `important`; a single reservoir of the total requested size keeps
// the sample uniform without replacement over one pass, and a final seeded
// shuffle before cutting makes each split uniform as well.
inline std::array<std::vector<PatentRecord>, 3> sample_negatives(
    const std::function<std::optional<PatentRecord>()>& source,
    const std::set<std::string>& important, const SamplingConfig& config) {
    if (important.empty())
        throw DataError("sample_negatives requires a nonempty important-code set");
    const std::size_t total = config.negatives_per_split[0] + config.negatives_per_split[1] +
                              config.negatives_per_split[2];
    if (total == 0) throw DataError("requested zero negative samples");

    detail::Rng rng(detail::derive_seed(config.seed, /*stream=*/2));
    std::vector<PatentRecord> reservoir;
    reservoir.reserve(total);
    std::size_t pool_size = 0;
    while (auto record = source()) {
        if (has_important_code(*record, important)) continue;
        if (pool_size < total) {
            reservoir.push_back(std::move(*record));
        } else {
            std::size_t j = rng.index(pool_size + 1);
            if (j < total) reservoir[j] = std::move(*record);
        }
        ++pool_size;
    }
    if (pool_size < total)
        throw DataError("negative candidate pool too small: " + std::to_string(pool_size) +
                        " eligible records for " + std::to_string(total) + " requested");

    rng.shuffle(reservoir);
    std::array<std::vector<PatentRecord>, 3> out;
    auto it = reservoir.begin();
    for (std::size_t s = 0; s < 3; ++s) {
        out[s].assign(it, it + config.negatives_per_split[s]);
        it += config.negatives_per_split[s];
    }
    return out;
}

inline std::array<std::vector<PatentRecord>, 3> sample_negatives(
    const std::vector<PatentRecord>& retrieved, const std::set<std::string>& important,
    const SamplingConfig& config) {
    std::size_t i = 0;
    return sample_negatives(
        [&]() -> std::optional<PatentRecord> {
            if (i >= retrieved.size()) return std::nullopt;
            return retrieved[i++];
        },
        important, config);
}

// Per-split union of positives and negatives, shuffled by seed. Fails on
// any id collision across the six inputs.
inline DatasetSplit assemble_dataset(const ValidSplits& valid,
                                     const std::array<std::vector<PatentRecord>, 3>& negatives,
                                     std::uint64_t seed) {
    std::unordered_set<std::string> seen;
    auto check_ids = [&seen](const std::vector<PatentRecord>& records) {
        for (const auto& r : records) {
            if (!seen.insert(r.id).second)
                throw DataError("id collision while assembling dataset: " + r.id);
        }
    };
    const std::vector<PatentRecord>* positive_lists[3] = {&valid.train, &valid.validation,
                                                          &valid.test};
    for (int s = 0; s < 3; ++s) {
        check_ids(*positive_lists[s]);
        check_ids(negatives[s]);
    }

    DatasetSplit out;
    std::vector<PatentRecord>* targets[3] = {&out.train, &out.validation, &out.test};
    std::size_t* counts[3] = {&out.train_positives, &out.validation_positives,
                              &out.test_positives};
    for (int s = 0; s < 3; ++s) {
        *counts[s] = positive_lists[s]->size();
        targets[s]->reserve(positive_lists[s]->size() + negatives[s].size());
        for (auto& r : *positive_lists[s]) targets[s]->push_back(r);
        for (auto& r : negatives[s]) targets[s]->push_back(r);
        detail::Rng rng(detail::derive_seed(seed, /*stream=*/3, static_cast<std::uint64_t>(s)));
        rng.shuffle(*targets[s]);
    }
    return out;
}

}  // namespace patentscape::corpus
