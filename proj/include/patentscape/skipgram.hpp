#pragma once

// Skip-gram with negative sampling, shared by the code-graph and token
// embedding pretrainers. Input is integer-id sequences; output is the
// table of center vectors.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "patentscape/detail/parallel.hpp"
#include "patentscape/detail/rng.hpp"
#include "patentscape/error.hpp"

namespace patentscape::embed {

// Row-major key -> vector table. For token embeddings the key order is the
// vocabulary id order; for code embeddings it is the graph node order.
struct EmbeddingTable {
    std::size_t dimension = 0;
    std::vector<std::string> keys;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<double> data;  // keys.size() x dimension

    std::span<const double> row(std::size_t i) const {
        return {data.data() + i * dimension, dimension};
    }
    std::span<double> row(std::size_t i) {
        return {data.data() + i * dimension, dimension};
    }
    std::optional<std::size_t> find(const std::string& key) const {
        auto it = index.find(key);
        if (it == index.end()) return std::nullopt;
        return it->second;
    }
    void rebuild_index() {
        index.clear();
        for (std::size_t i = 0; i < keys.size(); ++i) index.emplace(keys[i], i);
    }
};

struct SkipGramConfig {
    std::size_t dimension = 128;
    std::size_t window = 10;
    std::size_t epochs = 5;
    std::size_t negative_samples = 5;
    double learning_rate = 0.025;   // linearly decayed to learning_rate * 1e-4
    std::uint64_t seed = 0;
    std::size_t workers = 1;        // > 1 selects the asynchronous (hogwild) mode
};

namespace sgns {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double log_sigmoid(double x) {
    return x < 0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Negative-sampling loss for one (center, context, negatives) triple:
//   L = -log s(u.v) - sum_k log s(-u.v_k)
inline double pair_loss(std::span<const double> center, std::span<const double> context,
                        std::span<const std::span<const double>> negatives) {
    double loss = -log_sigmoid(dot(center, context));
    for (const auto& neg : negatives) loss -= log_sigmoid(-dot(center, neg));
    return loss;
}

// One SGD step on the pair loss. All gradients are evaluated at the old
// values, then applied, so a single step matches the closed form
//   u' = u - lr * ((s(u.v) - 1) v + sum_k s(u.v_k) v_k)
//   v' = v - lr * (s(u.v) - 1) u,   v_k' = v_k - lr * s(u.v_k) u
inline void pair_step(std::span<double> center, std::span<double> context,
                      std::span<std::span<double>> negatives, double lr,
                      std::span<double> center_grad_scratch) {
    const std::size_t dim = center.size();
    std::span<double> gu = center_grad_scratch;
    const double a_pos = sigmoid(dot(center, context)) - 1.0;
    for (std::size_t i = 0; i < dim; ++i) gu[i] = a_pos * context[i];
    for (std::size_t i = 0; i < dim; ++i) context[i] -= lr * a_pos * center[i];
    for (auto& neg : negatives) {
        const double a_neg = sigmoid(dot(center, neg));
        for (std::size_t i = 0; i < dim; ++i) gu[i] += a_neg * neg[i];
        for (std::size_t i = 0; i < dim; ++i) neg[i] -= lr * a_neg * center[i];
    }
    for (std::size_t i = 0; i < dim; ++i) center[i] -= lr * gu[i];
}

// Unigram^0.75 noise distribution, sampled by binary search on the CDF.
class NoiseTable {
public:
    NoiseTable(const std::vector<std::size_t>& counts) {
        cum_.reserve(counts.size());
        double total = 0.0;
        for (std::size_t id = 0; id < counts.size(); ++id) {
            if (counts[id] == 0) continue;
            total += std::pow(static_cast<double>(counts[id]), 0.75);
            ids_.push_back(static_cast<std::uint32_t>(id));
            cum_.push_back(total);
        }
        total_ = total;
    }

    bool empty() const { return ids_.empty(); }
    std::size_t distinct() const { return ids_.size(); }

    std::uint32_t sample(detail::Rng& rng) const {
        const double x = rng.real() * total_;
        std::size_t lo = 0, hi = cum_.size() - 1;
        while (lo < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (cum_[mid] <= x)
                lo = mid + 1;
            else
                hi = mid;
        }
        return ids_[lo];
    }

private:
    std::vector<std::uint32_t> ids_;
    std::vector<double> cum_;
    double total_ = 0.0;
};

}  // namespace sgns

// Seeded uniform init in [-0.5/d, 0.5/d] per component; context vectors
// start at zero, as usual for negative sampling.
inline std::vector<double> init_center_vectors(std::size_t vocab_size, std::size_t dimension,
                                               std::uint64_t seed) {
    detail::Rng rng(detail::derive_seed(seed, /*stream=*/10));
    std::vector<double> w(vocab_size * dimension);
    const double half = 0.5 / static_cast<double>(dimension);
    for (auto& x : w) x = rng.range(-half, half);
    return w;
}

namespace sgns_detail {

struct Shared {
    std::vector<double>& center;
    std::vector<double>& context;
    const std::vector<std::vector<std::uint32_t>>& sequences;
    const sgns::NoiseTable& noise;
    const SkipGramConfig& cfg;
    std::size_t total_positions;
};

inline void train_range(Shared& s, std::size_t seq_begin, std::size_t seq_end,
                        detail::Rng& rng, std::size_t positions_before, std::size_t epoch) {
    const std::size_t dim = s.cfg.dimension;
    const std::size_t k = s.cfg.negative_samples;
    std::vector<double> scratch(dim);
    std::vector<std::span<double>> negs;
    negs.reserve(k);
    std::size_t processed = positions_before + epoch * s.total_positions;
    const double denom = static_cast<double>(s.cfg.epochs * s.total_positions);
    for (std::size_t si = seq_begin; si < seq_end; ++si) {
        const auto& seq = s.sequences[si];
        double progress = denom > 0 ? static_cast<double>(processed) / denom : 0.0;
        double lr = std::max(s.cfg.learning_rate * (1.0 - progress),
                             s.cfg.learning_rate * 1e-4);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const std::size_t lo = i >= s.cfg.window ? i - s.cfg.window : 0;
            const std::size_t hi = std::min(seq.size(), i + s.cfg.window + 1);
            for (std::size_t j = lo; j < hi; ++j) {
                if (j == i) continue;
                const std::uint32_t center_id = seq[i];
                const std::uint32_t context_id = seq[j];
                negs.clear();
                for (std::size_t n = 0; n < k && s.noise.distinct() > 0; ++n) {
                    std::uint32_t cand = s.noise.sample(rng);
                    if (cand == context_id) continue;  // word2vec-style skip
                    negs.push_back(
                        std::span<double>(s.context.data() + cand * dim, dim));
                }
                sgns::pair_step(std::span<double>(s.center.data() + center_id * dim, dim),
                                std::span<double>(s.context.data() + context_id * dim, dim),
                                std::span<std::span<double>>(negs.data(), negs.size()), lr,
                                scratch);
            }
        }
        processed += seq.size();
    }
}

}  // namespace sgns_detail

// Trains center vectors over id sequences. With workers == 1 the result is
// fully deterministic for a given seed; with workers > 1 the sequences are
// sharded across lock-free workers and the result is nondeterministic.
inline std::vector<double> train_skipgram_ids(
    const std::vector<std::vector<std::uint32_t>>& sequences, std::size_t vocab_size,
    const SkipGramConfig& cfg) {
    if (cfg.dimension < 1) throw DataError("skip-gram dimension must be >= 1");
    if (cfg.window < 1) throw DataError("skip-gram window must be >= 1");
    if (sequences.empty()) throw DataError("skip-gram training requires nonempty sequences");
    for (const auto& seq : sequences)
        for (std::uint32_t id : seq)
            if (id >= vocab_size) throw DataError("sequence id out of vocabulary range");

    std::vector<double> center = init_center_vectors(vocab_size, cfg.dimension, cfg.seed);
    if (cfg.epochs == 0) return center;
    std::vector<double> context(vocab_size * cfg.dimension, 0.0);

    std::vector<std::size_t> counts(vocab_size, 0);
    std::size_t total_positions = 0;
    for (const auto& seq : sequences) {
        total_positions += seq.size();
        for (std::uint32_t id : seq) ++counts[id];
    }
    sgns::NoiseTable noise(counts);

    sgns_detail::Shared shared{center, context, sequences, noise, cfg, total_positions};
    if (cfg.workers <= 1) {
        detail::Rng rng(detail::derive_seed(cfg.seed, /*stream=*/11));
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            sgns_detail::train_range(shared, 0, sequences.size(), rng, 0, epoch);
        }
    } else {
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            detail::parallel_chunks(sequences.size(), cfg.workers,
                                    [&](std::size_t w, std::size_t begin, std::size_t end) {
                                        detail::Rng rng(detail::derive_seed(
                                            cfg.seed, 12 + w, epoch));
                                        std::size_t before = 0;
                                        for (std::size_t s = 0; s < begin; ++s)
                                            before += sequences[s].size();
                                        sgns_detail::train_range(shared, begin, end, rng,
                                                                 before, epoch);
                                    });
        }
    }
    return center;
}

// Text export: header "count dimension", then one "key v1 ... vD" line per
// row. Values are printed with max_digits10 so reloading is lossless.
inline void write_embeddings_text(const std::string& path, const EmbeddingTable& table) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write embedding file: " + path);
    out << table.keys.size() << ' ' << table.dimension << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < table.keys.size(); ++i) {
        out << table.keys[i];
        for (double v : table.row(i)) out << ' ' << v;
        out << '\n';
    }
}

inline EmbeddingTable read_embeddings_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);
    std::size_t count = 0, dimension = 0;
    if (!(in >> count >> dimension)) throw DataError("bad embedding file header: " + path);
    EmbeddingTable table;
    table.dimension = dimension;
    table.keys.resize(count);
    table.data.resize(count * dimension);
    for (std::size_t i = 0; i < count; ++i) {
        if (!(in >> table.keys[i])) throw DataError("truncated embedding file: " + path);
        for (std::size_t d = 0; d < dimension; ++d) {
            if (!(in >> table.data[i * dimension + d]))
                throw DataError("truncated embedding row in " + path);
        }
    }
    table.rebuild_index();
    return table;
}

}  // namespace patentscape::embed
