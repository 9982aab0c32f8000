#pragma once

// The valid-patent classifier: a transformer encoder over the tokenized
// abstract, dense branches over the averaged per-family code embeddings,
// and a logistic MLP head over the concatenation. All parameters live in a
// ParameterStore keyed by name; forward passes are built on a Tape so the
// same code path serves training and inference.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "patentscape/error.hpp"
#include "patentscape/nn/tape.hpp"
#include "patentscape/nn/tensor.hpp"
#include "patentscape/skipgram.hpp"
#include "patentscape/textenc.hpp"

namespace patentscape::nn {

inline constexpr double kLayerNormEps = 1e-5;

struct EncoderConfig {
    std::size_t layers = 6;
    std::size_t heads = 8;
    std::size_t hidden = 512;
    std::size_t feed_forward = 2048;
    std::size_t seq_len = 128;
    double dropout = 0.1;

    std::size_t head_dim() const {
        if (heads == 0 || hidden % heads != 0)
            throw InternalError("encoder hidden size must be divisible by the head count");
        return hidden / heads;
    }
};

enum class FeatureMode { combined, text_only, codes_only };

inline const char* feature_mode_name(FeatureMode m) {
    switch (m) {
        case FeatureMode::combined: return "combined";
        case FeatureMode::text_only: return "text";
        case FeatureMode::codes_only: return "codes";
    }
    throw InternalError("unknown feature mode");
}

inline FeatureMode parse_feature_mode(const std::string& name) {
    if (name == "combined") return FeatureMode::combined;
    if (name == "text") return FeatureMode::text_only;
    if (name == "codes") return FeatureMode::codes_only;
    throw DataError("unknown feature mode: " + name);
}

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t token_dim = 512;   // pretrained token embedding width
    std::size_t code_dim = 128;    // pretrained code embedding width
    std::size_t cpc_units = 256;   // CPC branch gets twice the code width
    std::size_t ipc_units = 128;
    std::size_t uspc_units = 128;
    std::size_t head_hidden = 256;
    FeatureMode mode = FeatureMode::combined;
    bool finetune_token_embeddings = true;

    std::size_t branch_total() const { return cpc_units + ipc_units + uspc_units; }

    std::size_t head_input() const {
        switch (mode) {
            case FeatureMode::combined: return encoder.hidden + branch_total();
            case FeatureMode::text_only: return encoder.hidden;
            case FeatureMode::codes_only: return branch_total();
        }
        throw InternalError("unknown feature mode");
    }
};

class ParameterStore {
public:
    struct Entry {
        Tensor value;
        Tensor moment1;  // Adam first moment, trainable entries only
        Tensor moment2;
        bool trainable = false;
    };

    Tensor& add(const std::string& name, Tensor value, bool trainable) {
        auto [it, inserted] = entries_.emplace(name, Entry{});
        if (!inserted) throw InternalError("duplicate parameter: " + name);
        Entry& e = it->second;
        e.trainable = trainable;
        if (trainable) {
            e.moment1 = Tensor::zeros(value.rows, value.cols);
            e.moment2 = Tensor::zeros(value.rows, value.cols);
        }
        e.value = std::move(value);
        return e.value;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Entry& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw InternalError("unknown parameter: " + name);
        return it->second;
    }
    const Entry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw InternalError("unknown parameter: " + name);
        return it->second;
    }

    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }

    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t s) { step_ = s; }

    // Deterministic name order (std::map) so that gradient reduction and
    // optimizer sweeps are reproducible.
    template <class Fn>
    void for_each(Fn&& fn) {
        for (auto& [name, e] : entries_) fn(name, e);
    }
    template <class Fn>
    void for_each(Fn&& fn) const {
        for (const auto& [name, e] : entries_) fn(name, e);
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> names;
        for (const auto& [name, e] : entries_)
            if (e.trainable) names.push_back(name);
        return names;
    }

private:
    std::map<std::string, Entry> entries_;
    std::uint64_t step_ = 0;
};

// Per-worker gradient accumulation, shaped like the trainable entries.
class GradientBuffer {
public:
    static GradientBuffer like(const ParameterStore& store) {
        GradientBuffer g;
        store.for_each([&g](const std::string& name, const ParameterStore::Entry& e) {
            if (e.trainable) g.grads_.emplace(name, Tensor::zeros(e.value.rows, e.value.cols));
        });
        return g;
    }

    Tensor* sink(const std::string& name) {
        auto it = grads_.find(name);
        return it == grads_.end() ? nullptr : &it->second;
    }
    const Tensor& at(const std::string& name) const { return grads_.at(name); }

    void zero() {
        for (auto& [name, t] : grads_) t.fill(0.0);
    }
    void add(const GradientBuffer& other) {
        for (auto& [name, t] : grads_) {
            const Tensor& o = other.grads_.at(name);
            for (std::size_t i = 0; i < t.size(); ++i) t.data[i] += o.data[i];
        }
    }
    void scale(double s) {
        for (auto& [name, t] : grads_)
            for (auto& x : t.data) x *= s;
    }

    template <class Fn>
    void for_each(Fn&& fn) const {
        for (const auto& [name, t] : grads_) fn(name, t);
    }

private:
    std::map<std::string, Tensor> grads_;
};

inline Tensor sinusoidal_positional_encoding(std::size_t seq_len, std::size_t hidden) {
    Tensor pe(seq_len, hidden);
    for (std::size_t pos = 0; pos < seq_len; ++pos) {
        for (std::size_t i = 0; i < hidden; i += 2) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(hidden));
            pe.at(pos, i) = std::sin(angle);
            if (i + 1 < hidden) pe.at(pos, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, detail::Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::uniform(fan_in, fan_out, -limit, limit, rng);
}

// Builds the full classifier parameter set. token_init, when given, seeds
// the embedding matrix from pretrained vectors; otherwise it is random.
inline ParameterStore init_parameters(const ModelConfig& cfg, std::size_t vocab_size,
                                      const embed::EmbeddingTable* token_init,
                                      std::uint64_t seed) {
    cfg.encoder.head_dim();  // validates divisibility
    ParameterStore store;
    detail::Rng rng(detail::derive_seed(seed, /*stream=*/20));

    Tensor tok(vocab_size, cfg.token_dim);
    if (token_init) {
        if (token_init->keys.size() != vocab_size || token_init->dimension != cfg.token_dim)
            throw DataError("pretrained token table does not match vocabulary/config");
        tok.data = token_init->data;
    } else {
        const double half = 0.5 / static_cast<double>(cfg.token_dim);
        for (auto& x : tok.data) x = rng.range(-half, half);
    }
    store.add("token_embedding", std::move(tok), cfg.finetune_token_embeddings);
    store.add("token_projection.weight", glorot_uniform(cfg.token_dim, cfg.encoder.hidden, rng),
              true);
    store.add("token_projection.bias", Tensor::zeros(1, cfg.encoder.hidden), true);
    store.add("positional_encoding",
              sinusoidal_positional_encoding(cfg.encoder.seq_len, cfg.encoder.hidden),
              /*trainable=*/false);

    const std::size_t h = cfg.encoder.hidden;
    for (std::size_t layer = 0; layer < cfg.encoder.layers; ++layer) {
        const std::string p = "encoder." + std::to_string(layer) + ".";
        for (const char* proj : {"query", "key", "value", "output"}) {
            store.add(p + "attention." + proj + ".weight", glorot_uniform(h, h, rng), true);
            store.add(p + "attention." + proj + ".bias", Tensor::zeros(1, h), true);
        }
        store.add(p + "norm1.scale", Tensor(1, h, 1.0), true);
        store.add(p + "norm1.shift", Tensor::zeros(1, h), true);
        store.add(p + "ffn.inner.weight", glorot_uniform(h, cfg.encoder.feed_forward, rng), true);
        store.add(p + "ffn.inner.bias", Tensor::zeros(1, cfg.encoder.feed_forward), true);
        store.add(p + "ffn.outer.weight", glorot_uniform(cfg.encoder.feed_forward, h, rng), true);
        store.add(p + "ffn.outer.bias", Tensor::zeros(1, h), true);
        store.add(p + "norm2.scale", Tensor(1, h, 1.0), true);
        store.add(p + "norm2.shift", Tensor::zeros(1, h), true);
    }

    if (cfg.mode != FeatureMode::text_only) {
        store.add("branch.cpc.weight", glorot_uniform(cfg.code_dim, cfg.cpc_units, rng), true);
        store.add("branch.cpc.bias", Tensor::zeros(1, cfg.cpc_units), true);
        store.add("branch.ipc.weight", glorot_uniform(cfg.code_dim, cfg.ipc_units, rng), true);
        store.add("branch.ipc.bias", Tensor::zeros(1, cfg.ipc_units), true);
        store.add("branch.uspc.weight", glorot_uniform(cfg.code_dim, cfg.uspc_units, rng), true);
        store.add("branch.uspc.bias", Tensor::zeros(1, cfg.uspc_units), true);
    }

    store.add("head.hidden.weight", glorot_uniform(cfg.head_input(), cfg.head_hidden, rng), true);
    store.add("head.hidden.bias", Tensor::zeros(1, cfg.head_hidden), true);
    store.add("head.output.weight", glorot_uniform(cfg.head_hidden, 1, rng), true);
    store.add("head.output.bias", Tensor::zeros(1, 1), true);
    return store;
}

// Binds store parameters into a tape as external leaves; one leaf per
// parameter per tape, with gradients routed to the buffer when given.
class TapeBinder {
public:
    TapeBinder(Tape& tape, const ParameterStore& store, GradientBuffer* grads)
        : tape_(tape), store_(const_cast<ParameterStore&>(store)), grads_(grads) {}

    Tape::Id operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        auto& entry = store_.entry(name);
        Tensor* sink = (grads_ && entry.trainable) ? grads_->sink(name) : nullptr;
        Tape::Id id = tape_.external(&entry.value, sink);
        cache_.emplace(name, id);
        return id;
    }

    Tape& tape() { return tape_; }

private:
    Tape& tape_;
    ParameterStore& store_;
    GradientBuffer* grads_;
    std::unordered_map<std::string, Tape::Id> cache_;
};

// softmax(Q K^T / sqrt(d_k)) V with an optional per-key attendable mask.
inline Tape::Id attention_on_tape(Tape& tape, Tape::Id q, Tape::Id k, Tape::Id v,
                                  std::vector<std::uint8_t> attendable = {}) {
    const std::size_t d_k = tape.value(q).cols;
    if (tape.value(k).cols != d_k)
        throw InternalError("attention: query/key width mismatch");
    if (tape.value(k).rows != tape.value(v).rows)
        throw InternalError("attention: key/value length mismatch");
    Tape::Id scores = tape.scale(tape.matmul(q, tape.transpose(k)),
                                 1.0 / std::sqrt(static_cast<double>(d_k)));
    Tape::Id probs = tape.softmax_rows(scores, std::move(attendable));
    return tape.matmul(probs, v);
}

struct AttentionResult {
    Tensor output;
    Tensor weights;  // rows sum to 1 over attendable positions
};

// Standalone attention for direct use and testing. The mask marks
// attendable key positions; masked keys receive exactly zero weight.
inline AttentionResult scaled_dot_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                                            std::vector<std::uint8_t> pad_mask = {}) {
    if (Q.cols != K.cols) throw InternalError("attention: query/key width mismatch");
    if (K.rows != V.rows) throw InternalError("attention: key/value length mismatch");
    Tape tape;
    Tape::Id q = tape.leaf(Q), k = tape.leaf(K), v = tape.leaf(V);
    Tape::Id scores =
        tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(double(Q.cols)));
    Tape::Id probs = tape.softmax_rows(scores, std::move(pad_mask));
    Tape::Id out = tape.matmul(probs, v);
    return {tape.value(out), tape.value(probs)};
}

struct ForwardOptions {
    bool training = false;
    detail::Rng* dropout_rng = nullptr;  // required when training with dropout > 0
};

inline Tape::Id encoder_block_on_tape(TapeBinder& bind, Tape::Id x, std::size_t layer,
                                      const EncoderConfig& cfg, const ForwardOptions& opt) {
    Tape& tape = bind.tape();
    const std::string p = "encoder." + std::to_string(layer) + ".";
    const std::size_t d = cfg.head_dim();
    auto project = [&](const char* name) {
        return tape.add_bias(tape.matmul(x, bind(p + "attention." + name + ".weight")),
                             bind(p + "attention." + name + ".bias"));
    };
    Tape::Id q = project("query");
    Tape::Id k = project("key");
    Tape::Id v = project("value");
    std::vector<Tape::Id> heads;
    heads.reserve(cfg.heads);
    for (std::size_t hidx = 0; hidx < cfg.heads; ++hidx) {
        Tape::Id qh = tape.slice_cols(q, hidx * d, (hidx + 1) * d);
        Tape::Id kh = tape.slice_cols(k, hidx * d, (hidx + 1) * d);
        Tape::Id vh = tape.slice_cols(v, hidx * d, (hidx + 1) * d);
        heads.push_back(attention_on_tape(tape, qh, kh, vh));
    }
    Tape::Id attn = tape.concat_cols(heads);
    attn = tape.add_bias(tape.matmul(attn, bind(p + "attention.output.weight")),
                         bind(p + "attention.output.bias"));
    if (opt.training && cfg.dropout > 0.0)
        attn = tape.dropout(attn, cfg.dropout, *opt.dropout_rng);
    x = tape.layer_norm(tape.add(x, attn), bind(p + "norm1.scale"), bind(p + "norm1.shift"),
                        kLayerNormEps);
    Tape::Id ff = tape.relu(
        tape.add_bias(tape.matmul(x, bind(p + "ffn.inner.weight")), bind(p + "ffn.inner.bias")));
    ff = tape.add_bias(tape.matmul(ff, bind(p + "ffn.outer.weight")), bind(p + "ffn.outer.bias"));
    if (opt.training && cfg.dropout > 0.0) ff = tape.dropout(ff, cfg.dropout, *opt.dropout_rng);
    return tape.layer_norm(tape.add(x, ff), bind(p + "norm2.scale"), bind(p + "norm2.shift"),
                           kLayerNormEps);
}

// Encoder over the real (unpadded) prefix of the sequence. Pad positions
// are never part of the computation, which makes the output independent of
// anything stored in the pad region by construction.
inline Tape::Id encoder_on_tape(TapeBinder& bind, const textenc::TokenSequence& seq,
                                const EncoderConfig& cfg, const ForwardOptions& opt) {
    Tape& tape = bind.tape();
    if (seq.true_length < 1 || seq.true_length > cfg.seq_len)
        throw InternalError("token sequence length outside [1, seq_len]");
    std::vector<std::uint32_t> ids(seq.ids.begin(),
                                   seq.ids.begin() + static_cast<long>(seq.true_length));
    Tape::Id x = tape.gather_rows(bind("token_embedding"), ids);
    x = tape.add_bias(tape.matmul(x, bind("token_projection.weight")),
                      bind("token_projection.bias"));
    std::vector<std::uint32_t> positions(seq.true_length);
    for (std::uint32_t i = 0; i < seq.true_length; ++i) positions[i] = i;
    x = tape.add(x, tape.gather_rows(bind("positional_encoding"), positions));
    if (opt.training && cfg.dropout > 0.0) x = tape.dropout(x, cfg.dropout, *opt.dropout_rng);
    for (std::size_t layer = 0; layer < cfg.layers; ++layer)
        x = encoder_block_on_tape(bind, x, layer, cfg, opt);
    return x;
}

struct EncoderOutput {
    Tensor hidden_states;  // [seq_len x hidden]; rows beyond true_length are zero
    Tensor cls_vector;     // [1 x hidden], row 0 of the hidden states
};

inline EncoderOutput encoder_forward(const textenc::TokenSequence& seq,
                                     const ParameterStore& store, const EncoderConfig& cfg) {
    Tape tape;
    TapeBinder bind(tape, store, nullptr);
    Tape::Id x = encoder_on_tape(bind, seq, cfg, {});
    const Tensor& states = tape.value(x);
    EncoderOutput out;
    out.hidden_states = Tensor::zeros(cfg.seq_len, cfg.hidden);
    for (std::size_t i = 0; i < states.rows; ++i)
        std::copy_n(states.row_ptr(i), cfg.hidden, out.hidden_states.row_ptr(i));
    out.cls_vector = Tensor(1, cfg.hidden);
    std::copy_n(states.row_ptr(0), cfg.hidden, out.cls_vector.data.data());
    return out;
}

// dense(code_dim -> family units) with ReLU per family, concatenated in
// CPC | IPC | USPC order.
inline Tape::Id code_branch_on_tape(TapeBinder& bind, Tape::Id avg_cpc, Tape::Id avg_ipc,
                                    Tape::Id avg_uspc) {
    Tape& tape = bind.tape();
    auto branch = [&](Tape::Id input, const char* family) {
        const std::string p = std::string("branch.") + family + ".";
        return tape.relu(
            tape.add_bias(tape.matmul(input, bind(p + "weight")), bind(p + "bias")));
    };
    return tape.concat_cols(
        {branch(avg_cpc, "cpc"), branch(avg_ipc, "ipc"), branch(avg_uspc, "uspc")});
}

inline Tensor code_branch_forward(const Tensor& avg_cpc, const Tensor& avg_ipc,
                                  const Tensor& avg_uspc, const ParameterStore& store) {
    Tape tape;
    TapeBinder bind(tape, store, nullptr);
    Tape::Id out = code_branch_on_tape(bind, tape.leaf(avg_cpc), tape.leaf(avg_ipc),
                                       tape.leaf(avg_uspc));
    return tape.value(out);
}

inline Tape::Id head_on_tape(TapeBinder& bind, Tape::Id cls, Tape::Id code_vec, FeatureMode mode) {
    Tape& tape = bind.tape();
    Tape::Id features = 0;
    switch (mode) {
        case FeatureMode::combined: features = tape.concat_cols({cls, code_vec}); break;
        case FeatureMode::text_only: features = cls; break;
        case FeatureMode::codes_only: features = code_vec; break;
    }
    Tape::Id hidden = tape.relu(tape.add_bias(tape.matmul(features, bind("head.hidden.weight")),
                                              bind("head.hidden.bias")));
    Tape::Id logit = tape.add_bias(tape.matmul(hidden, bind("head.output.weight")),
                                   bind("head.output.bias"));
    return tape.sigmoid(logit);
}

inline double head_forward(const Tensor& cls, const Tensor& code_vec,
                           const ParameterStore& store, FeatureMode mode) {
    Tape tape;
    TapeBinder bind(tape, store, nullptr);
    Tape::Id p = head_on_tape(bind, tape.leaf(cls), tape.leaf(code_vec), mode);
    return tape.value(p).data[0];
}

inline double bce_loss(double p, int y, double eps = 1e-7) {
    const double clamped = std::min(std::max(p, eps), 1.0 - eps);
    return -(y * std::log(clamped) + (1 - y) * std::log(1.0 - clamped));
}

// Full classifier probability for one example. The code vectors are the
// averaged pretrained embeddings (constants in the graph); gradients flow
// to every trainable parameter, including the token embedding matrix when
// fine-tuning is enabled.
inline Tape::Id classifier_on_tape(TapeBinder& bind, const textenc::TokenSequence& seq,
                                   const Tensor& avg_cpc, const Tensor& avg_ipc,
                                   const Tensor& avg_uspc, const ModelConfig& cfg,
                                   const ForwardOptions& opt = {}) {
    Tape& tape = bind.tape();
    Tape::Id cls = 0, codes = 0;
    if (cfg.mode != FeatureMode::codes_only) {
        Tape::Id states = encoder_on_tape(bind, seq, cfg.encoder, opt);
        cls = tape.row(states, 0);
    }
    if (cfg.mode != FeatureMode::text_only) {
        codes = code_branch_on_tape(bind, tape.leaf(avg_cpc), tape.leaf(avg_ipc),
                                    tape.leaf(avg_uspc));
    }
    return head_on_tape(bind, cls, codes, cfg.mode);
}

}  // namespace patentscape::nn
