#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>

#include "patentscape/textenc.hpp"

using namespace patentscape;
using namespace patentscape::textenc;
using patentscape::detail::Rng;

TEST_CASE("build_vocab filters by frequency and reserves special ids") {
    auto vocab = build_vocab({"a a b"}, 2);
    CHECK(vocab.index.count("a") == 1);
    CHECK(vocab.index.count("b") == 0);
    CHECK(vocab.tokens[Vocabulary::kPad] == "[PAD]");
    CHECK(vocab.tokens[Vocabulary::kCls] == "[CLS]");
    CHECK(vocab.tokens[Vocabulary::kSep] == "[SEP]");
    CHECK(vocab.tokens[Vocabulary::kUnk] == "[UNK]");
    CHECK_THROWS_AS(build_vocab({}, 1), DataError);
    CHECK_THROWS_AS(build_vocab({"", "  "}, 1), DataError);
}

TEST_CASE("build_vocab token set equals a brute-force frequency filter") {
    std::vector<std::string> corpus = {
        "the quick brown fox jumps over the lazy dog",
        "the dog barks at the quick fox",
        "a lazy afternoon with a quick nap",
    };
    const std::size_t min_count = 2;
    auto vocab = build_vocab(corpus, min_count);

    std::map<std::string, std::size_t> counts;
    for (const auto& text : corpus)
        for (auto& t : word_tokens(text)) ++counts[t];
    for (const auto& [token, count] : counts) {
        CHECK(vocab.index.count(token) == (count >= min_count ? 1 : 0));
    }
    // every non-reserved vocabulary token comes from the corpus
    for (std::size_t i = 4; i < vocab.size(); ++i) CHECK(counts.count(vocab.tokens[i]) == 1);
}

TEST_CASE("tokenize wraps an empty abstract in [CLS][SEP]") {
    auto vocab = build_vocab({"hello world"}, 1);
    auto seq = tokenize("", vocab);
    REQUIRE(seq.ids.size() == kSequenceLength);
    CHECK(seq.true_length == 2);
    CHECK(seq.ids[0] == Vocabulary::kCls);
    CHECK(seq.ids[1] == Vocabulary::kSep);
    for (std::size_t i = 2; i < kSequenceLength; ++i) CHECK(seq.ids[i] == Vocabulary::kPad);
}

TEST_CASE("tokenize truncates long abstracts keeping [SEP] last") {
    auto vocab = build_vocab({"tok"}, 1);
    std::string text;
    for (int i = 0; i < 300; ++i) text += "tok ";
    auto seq = tokenize(text, vocab);
    CHECK(seq.true_length == 128);
    CHECK(seq.ids[0] == Vocabulary::kCls);
    CHECK(seq.ids[127] == Vocabulary::kSep);
    CHECK(seq.ids[126] == vocab.index.at("tok"));
}

TEST_CASE("tokenize maps a known abstract directly") {
    auto vocab = build_vocab({"augmented reality display"}, 1);
    auto seq = tokenize("augmented reality display", vocab);
    CHECK(seq.true_length == 5);
    CHECK(seq.ids[0] == Vocabulary::kCls);
    CHECK(seq.ids[1] == vocab.index.at("augmented"));
    CHECK(seq.ids[2] == vocab.index.at("reality"));
    CHECK(seq.ids[3] == vocab.index.at("display"));
    CHECK(seq.ids[4] == Vocabulary::kSep);
    for (std::size_t i = 5; i < kSequenceLength; ++i) CHECK(seq.ids[i] == Vocabulary::kPad);
}

TEST_CASE("unknown tokens map to [UNK], never an error") {
    auto vocab = build_vocab({"known words only"}, 1);
    auto seq = tokenize("known mystery", vocab);
    CHECK(seq.ids[1] == vocab.index.at("known"));
    CHECK(seq.ids[2] == Vocabulary::kUnk);
}

TEST_CASE("token sequences decode back to their source tokens") {
    auto vocab = build_vocab({"alpha beta gamma delta"}, 1);
    auto seq = tokenize("Alpha, beta; GAMMA!", vocab);
    CHECK(decode(seq, vocab) == std::vector<std::string>{"alpha", "beta", "gamma"});
}

TEST_CASE("pretraining with zero epochs equals the initialization") {
    auto vocab = build_vocab({"alpha beta gamma", "beta gamma delta"}, 1);
    embed::SkipGramConfig cfg;
    cfg.dimension = 8;
    cfg.epochs = 0;
    cfg.seed = 77;
    auto table = pretrain_token_embeddings({"alpha beta gamma", "beta gamma delta"}, vocab, cfg);
    auto init = init_token_embeddings(vocab, cfg);
    CHECK(table.data == init.data);
}

TEST_CASE("the [PAD] row stays zero through pretraining") {
    std::vector<std::string> corpus;
    for (int i = 0; i < 50; ++i) corpus.push_back("one two three four five six");
    auto vocab = build_vocab(corpus, 1);
    embed::SkipGramConfig cfg;
    cfg.dimension = 12;
    cfg.window = 2;
    cfg.epochs = 3;
    cfg.seed = 3;
    auto table = pretrain_token_embeddings(corpus, vocab, cfg);
    for (double v : table.row(Vocabulary::kPad)) CHECK(v == 0.0);
}

TEST_CASE("pretraining separates two synthetic topics") {
    std::vector<std::string> corpus;
    Rng rng(8);
    const std::vector<std::string> marine = {"ship", "ocean", "dock", "hull", "cargo"};
    const std::vector<std::string> air = {"wing", "engine", "pilot", "runway", "cabin"};
    for (int i = 0; i < 150; ++i) {
        const auto& pool = (i % 2) ? marine : air;
        std::string text;
        for (int j = 0; j < 8; ++j) {
            text += pool[rng.index(pool.size())];
            text += ' ';
        }
        corpus.push_back(text);
    }
    auto vocab = build_vocab(corpus, 1);
    embed::SkipGramConfig cfg;
    cfg.dimension = 16;
    cfg.window = 4;
    cfg.epochs = 6;
    cfg.seed = 10;
    auto table = pretrain_token_embeddings(corpus, vocab, cfg);

    auto cosine = [&](const std::string& a, const std::string& b) {
        auto ra = table.row(vocab.index.at(a));
        auto rb = table.row(vocab.index.at(b));
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < ra.size(); ++i) {
            dot += ra[i] * rb[i];
            na += ra[i] * ra[i];
            nb += rb[i] * rb[i];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
    };
    double intra = 0, inter = 0;
    int intra_n = 0, inter_n = 0;
    for (const auto& a : marine)
        for (const auto& b : marine)
            if (a < b) { intra += cosine(a, b); ++intra_n; }
    for (const auto& a : air)
        for (const auto& b : air)
            if (a < b) { intra += cosine(a, b); ++intra_n; }
    for (const auto& a : marine)
        for (const auto& b : air) { inter += cosine(a, b); ++inter_n; }
    CHECK(intra / intra_n > inter / inter_n);
}

TEST_CASE("vocabulary files round trip") {
    auto vocab = build_vocab({"several words appear here several times"}, 1);
    auto path = (std::filesystem::temp_directory_path() / "ps_vocab.txt").string();
    write_vocab(path, vocab);
    auto loaded = read_vocab(path);
    CHECK(loaded.tokens == vocab.tokens);
    CHECK(loaded.index.at("several") == vocab.index.at("several"));
}
