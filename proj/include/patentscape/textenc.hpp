#pragma once

// Abstract tokenization and token-embedding pretraining. Sequences carry a
// leading [CLS], a closing [SEP], and [PAD] up to the fixed length; only
// real tokens between the markers are used for skip-gram pretraining.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "patentscape/detail/text.hpp"
#include "patentscape/error.hpp"
#include "patentscape/skipgram.hpp"

namespace patentscape::textenc {

inline constexpr std::size_t kSequenceLength = 128;

struct Vocabulary {
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kCls = 1;
    static constexpr std::uint32_t kSep = 2;
    static constexpr std::uint32_t kUnk = 3;

    std::vector<std::string> tokens;  // index == id; ids 0..3 are reserved
    std::unordered_map<std::string, std::uint32_t> index;
    std::size_t min_count = 0;

    std::size_t size() const { return tokens.size(); }

    std::uint32_t id_or_unk(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? kUnk : it->second;
    }

    void rebuild_index() {
        index.clear();
        for (std::uint32_t i = 0; i < tokens.size(); ++i) index.emplace(tokens[i], i);
    }
};

inline std::vector<std::string> word_tokens(const std::string& text) {
    return patentscape::detail::split_words(text);
}

// Frequency-filtered vocabulary: reserved ids first, then surviving tokens
// by descending count (ties alphabetically).
inline Vocabulary build_vocab(const std::vector<std::string>& abstracts, std::size_t min_count) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& text : abstracts) {
        for (auto& token : word_tokens(text)) ++counts[token];
    }
    if (counts.empty()) throw DataError("cannot build a vocabulary from an empty corpus");

    Vocabulary vocab;
    vocab.min_count = min_count;
    vocab.tokens = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [token, count] : counts) {
        if (count >= min_count) kept.emplace_back(token, count);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    for (auto& [token, count] : kept) vocab.tokens.push_back(token);
    vocab.rebuild_index();
    return vocab;
}

struct TokenSequence {
    std::vector<std::uint32_t> ids;  // fixed length; ids[0] == [CLS]
    std::size_t true_length = 0;     // positions before the first [PAD]
};

// [CLS] + token ids + [SEP], truncated so the total is max_length with the
// [SEP] always kept as the last real token, then padded with [PAD].
inline TokenSequence tokenize(const std::string& abstract, const Vocabulary& vocab,
                              std::size_t max_length = kSequenceLength) {
    if (max_length < 2) throw DataError("token sequence length must be >= 2");
    TokenSequence seq;
    seq.ids.assign(max_length, Vocabulary::kPad);
    seq.ids[0] = Vocabulary::kCls;
    std::size_t pos = 1;
    for (const auto& token : word_tokens(abstract)) {
        if (pos == max_length - 1) break;
        seq.ids[pos++] = vocab.id_or_unk(token);
    }
    seq.ids[pos++] = Vocabulary::kSep;
    seq.true_length = pos;
    return seq;
}

// Inverse of tokenize up to truncation and [UNK] substitution.
inline std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i + 1 < seq.true_length; ++i) out.push_back(vocab.tokens[seq.ids[i]]);
    return out;
}

using TokenEmbeddingTable = embed::EmbeddingTable;

inline std::vector<std::vector<std::uint32_t>> training_sequences(
    const std::vector<std::string>& abstracts, const Vocabulary& vocab) {
    std::vector<std::vector<std::uint32_t>> sequences;
    sequences.reserve(abstracts.size());
    for (const auto& text : abstracts) {
        std::vector<std::uint32_t> ids;
        for (const auto& token : word_tokens(text)) ids.push_back(vocab.id_or_unk(token));
        if (!ids.empty()) sequences.push_back(std::move(ids));
    }
    return sequences;
}

// Skip-gram pretraining over raw token streams (no [CLS]/[SEP]/[PAD]).
// Out-of-vocabulary tokens train the [UNK] row; the [PAD] row is zeroed at
// initialization and never appears in the corpus, so it stays zero.
inline TokenEmbeddingTable pretrain_token_embeddings(const std::vector<std::string>& abstracts,
                                                     const Vocabulary& vocab,
                                                     const embed::SkipGramConfig& cfg) {
    TokenEmbeddingTable table;
    table.dimension = cfg.dimension;
    table.keys = vocab.tokens;
    auto sequences = training_sequences(abstracts, vocab);
    if (sequences.empty()) throw DataError("no trainable token sequences in the corpus");
    table.data = embed::train_skipgram_ids(sequences, vocab.size(), cfg);
    std::fill_n(table.data.begin() + Vocabulary::kPad * cfg.dimension, cfg.dimension, 0.0);
    table.rebuild_index();
    return table;
}

// Same zeroed-[PAD] initialization that pretraining starts from; the
// zero-epoch pretraining result equals this exactly.
inline TokenEmbeddingTable init_token_embeddings(const Vocabulary& vocab,
                                                 const embed::SkipGramConfig& cfg) {
    TokenEmbeddingTable table;
    table.dimension = cfg.dimension;
    table.keys = vocab.tokens;
    table.data = embed::init_center_vectors(vocab.size(), cfg.dimension, cfg.seed);
    std::fill_n(table.data.begin() + Vocabulary::kPad * cfg.dimension, cfg.dimension, 0.0);
    table.rebuild_index();
    return table;
}

// Vocabulary file: one token per line, line number (0-based) == id.
inline void write_vocab(const std::string& path, const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    for (const auto& token : vocab.tokens) out << token << '\n';
}

inline Vocabulary read_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    Vocabulary vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        vocab.tokens.push_back(line);
    }
    if (vocab.tokens.size() < 4 || vocab.tokens[0] != "[PAD]" || vocab.tokens[1] != "[CLS]" ||
        vocab.tokens[2] != "[SEP]" || vocab.tokens[3] != "[UNK]")
        throw DataError("vocabulary file " + path + " lacks the reserved token layout");
    vocab.rebuild_index();
    return vocab;
}

}  // namespace patentscape::textenc
