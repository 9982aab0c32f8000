#pragma once

// A miniature but structurally complete classifier (encoder + all three
// code branches + head) over a handful of tokens and codes, used by the
// gradient checks. Finite differences of the batch loss are compared
// against the tape gradients for every trainable parameter.

#include <cmath>
#include <string>
#include <vector>

#include "patentscape/detail/rng.hpp"
#include "patentscape/pipeline.hpp"

namespace patentscape::testsupport {

struct TinyModelSpec {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t hidden = 8;
    std::size_t feed_forward = 16;
    std::size_t seq_len = 6;
    std::size_t token_dim = 12;
    std::size_t code_dim = 8;
    std::size_t cpc_units = 16;
    std::size_t ipc_units = 8;
    std::size_t uspc_units = 8;
    std::size_t head_hidden = 16;
    std::uint64_t seed = 1;
};

struct TinyFixture {
    pipeline::ModelBundle bundle;
    std::vector<pipeline::ExampleFeatures> examples;
};

inline embed::EmbeddingTable random_code_table(const std::vector<std::string>& keys,
                                               std::size_t dim, std::uint64_t seed) {
    embed::EmbeddingTable t;
    t.dimension = dim;
    t.keys = keys;
    t.data = embed::init_center_vectors(keys.size(), dim, seed);
    // spread the entries out so branch activations are far from ReLU kinks
    for (auto& x : t.data) x *= 8.0;
    t.rebuild_index();
    return t;
}

inline TinyFixture make_tiny_fixture(const TinyModelSpec& spec) {
    std::vector<std::string> abstracts = {
        "alpha beta gamma delta", "gamma delta epsilon zeta", "alpha epsilon beta zeta",
        "zeta beta delta alpha"};
    auto vocab = textenc::build_vocab(abstracts, 1);

    embed::SkipGramConfig token_cfg;
    token_cfg.dimension = spec.token_dim;
    token_cfg.seed = detail::derive_seed(spec.seed, 1);
    auto token_table = textenc::init_token_embeddings(vocab, token_cfg);
    for (auto& x : token_table.data) x *= 8.0;
    std::fill_n(token_table.data.begin(), spec.token_dim, 0.0);  // keep [PAD] zero

    nn::ModelConfig config;
    config.encoder.layers = spec.layers;
    config.encoder.heads = spec.heads;
    config.encoder.hidden = spec.hidden;
    config.encoder.feed_forward = spec.feed_forward;
    config.encoder.seq_len = spec.seq_len;
    config.encoder.dropout = 0.0;
    config.token_dim = spec.token_dim;
    config.code_dim = spec.code_dim;
    config.cpc_units = spec.cpc_units;
    config.ipc_units = spec.ipc_units;
    config.uspc_units = spec.uspc_units;
    config.head_hidden = spec.head_hidden;
    config.mode = nn::FeatureMode::combined;

    TinyFixture fx{pipeline::make_bundle(
                       vocab, token_table,
                       random_code_table({"c1", "c2", "c3"}, spec.code_dim,
                                         detail::derive_seed(spec.seed, 2)),
                       random_code_table({"i1", "i2"}, spec.code_dim,
                                         detail::derive_seed(spec.seed, 3)),
                       random_code_table({"u1", "u2"}, spec.code_dim,
                                         detail::derive_seed(spec.seed, 4)),
                       config, spec.seed),
                   {}};

    // Zero-initialized biases put ReLU pre-activations exactly on the kink
    // for zero-vector code inputs, where central differences are invalid;
    // random offsets keep the check well posed.
    detail::Rng bias_rng(detail::derive_seed(spec.seed, 5));
    fx.bundle.params.for_each([&](const std::string& name, nn::ParameterStore::Entry& e) {
        if (e.trainable && name.find(".bias") != std::string::npos)
            for (auto& x : e.value.data) x = bias_rng.range(-0.4, 0.4);
    });

    std::vector<corpus::PatentRecord> records(3);
    records[0].id = "t1";
    records[0].abstract = abstracts[0];
    records[0].cpc = {"c1", "c2"};
    records[0].ipc = {"i1"};
    records[0].uspc = {"u2"};
    records[0].valid = true;
    records[1].id = "t2";
    records[1].abstract = abstracts[1];
    records[1].cpc = {"c3"};
    records[1].ipc = {"i2"};
    records[1].uspc = {};  // exercises the zero-vector fallback
    records[1].valid = false;
    records[2].id = "t3";
    records[2].abstract = abstracts[2];
    records[2].cpc = {"c2", "c3"};
    records[2].ipc = {};
    records[2].uspc = {"u1"};
    records[2].valid = true;
    for (const auto& r : records) fx.examples.push_back(pipeline::make_features(r, fx.bundle));
    return fx;
}

inline double tiny_batch_loss(const TinyFixture& fx) {
    double total = 0.0;
    for (const auto& f : fx.examples) {
        nn::Tape tape;
        nn::TapeBinder bind(tape, fx.bundle.params, nullptr);
        nn::Tape::Id p = nn::classifier_on_tape(bind, f.tokens, f.avg_cpc, f.avg_ipc,
                                                f.avg_uspc, fx.bundle.config);
        nn::Tape::Id loss = tape.bce_loss(p, f.label);
        total += tape.value(loss).data[0];
    }
    return total / static_cast<double>(fx.examples.size());
}

inline nn::GradientBuffer tiny_batch_gradients(const TinyFixture& fx) {
    nn::GradientBuffer grads = nn::GradientBuffer::like(fx.bundle.params);
    const double inv = 1.0 / static_cast<double>(fx.examples.size());
    for (const auto& f : fx.examples) {
        nn::Tape tape;
        nn::TapeBinder bind(tape, fx.bundle.params, &grads);
        nn::Tape::Id p = nn::classifier_on_tape(bind, f.tokens, f.avg_cpc, f.avg_ipc,
                                                f.avg_uspc, fx.bundle.config);
        nn::Tape::Id loss = tape.bce_loss(p, f.label);
        tape.backward(loss, inv);
    }
    return grads;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Central finite differences over every trainable parameter component.
inline GradCheckResult gradient_check(TinyFixture& fx, double step = 1e-5) {
    const nn::GradientBuffer analytic = tiny_batch_gradients(fx);
    GradCheckResult result;
    for (const auto& name : fx.bundle.params.trainable_names()) {
        nn::Tensor& value = fx.bundle.params.value(name);
        const nn::Tensor& grad = analytic.at(name);
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value.data[i];
            value.data[i] = saved + step;
            const double up = tiny_batch_loss(fx);
            value.data[i] = saved - step;
            const double down = tiny_batch_loss(fx);
            value.data[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double a = grad.data[i];
            const double rel = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-6});
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace patentscape::testsupport
