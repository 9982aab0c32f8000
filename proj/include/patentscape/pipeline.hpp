#pragma once

// End-to-end model assembly, training, and evaluation: tokenized abstracts
// through the encoder, averaged code embeddings through the dense
// branches, concatenation MLP head trained with Adam on binary
// cross-entropy, scored with average precision and F1.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "patentscape/codegraph.hpp"
#include "patentscape/corpus.hpp"
#include "patentscape/detail/parallel.hpp"
#include "patentscape/error.hpp"
#include "patentscape/metrics.hpp"
#include "patentscape/nn/adam.hpp"
#include "patentscape/nn/checkpoint.hpp"
#include "patentscape/nn/model.hpp"
#include "patentscape/textenc.hpp"

namespace patentscape::pipeline {

using nn::FeatureMode;
using nn::ModelConfig;
using nn::TrainConfig;

inline void to_json(nlohmann::json& j, const nn::EncoderConfig& c) {
    j = {{"layers", c.layers},   {"heads", c.heads},     {"hidden", c.hidden},
         {"feed_forward", c.feed_forward}, {"seq_len", c.seq_len}, {"dropout", c.dropout}};
}

inline void from_json(const nlohmann::json& j, nn::EncoderConfig& c) {
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.feed_forward = j.at("feed_forward").get<std::size_t>();
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json encoder;
    to_json(encoder, c.encoder);
    return {{"encoder", encoder},
            {"token_dim", c.token_dim},
            {"code_dim", c.code_dim},
            {"cpc_units", c.cpc_units},
            {"ipc_units", c.ipc_units},
            {"uspc_units", c.uspc_units},
            {"head_hidden", c.head_hidden},
            {"mode", nn::feature_mode_name(c.mode)},
            {"finetune_token_embeddings", c.finetune_token_embeddings}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    from_json(j.at("encoder"), c.encoder);
    c.token_dim = j.at("token_dim").get<std::size_t>();
    c.code_dim = j.at("code_dim").get<std::size_t>();
    c.cpc_units = j.at("cpc_units").get<std::size_t>();
    c.ipc_units = j.at("ipc_units").get<std::size_t>();
    c.uspc_units = j.at("uspc_units").get<std::size_t>();
    c.head_hidden = j.at("head_hidden").get<std::size_t>();
    c.mode = nn::parse_feature_mode(j.at("mode").get<std::string>());
    c.finetune_token_embeddings = j.at("finetune_token_embeddings").get<bool>();
    return c;
}

struct ModelBundle {
    textenc::Vocabulary vocab;
    codegraph::CodeEmbeddingTable cpc_codes;
    codegraph::CodeEmbeddingTable ipc_codes;
    codegraph::CodeEmbeddingTable uspc_codes;
    nn::ParameterStore params;
    ModelConfig config;

    const codegraph::CodeEmbeddingTable& codes(corpus::CodeFamily f) const {
        switch (f) {
            case corpus::CodeFamily::cpc: return cpc_codes;
            case corpus::CodeFamily::ipc: return ipc_codes;
            case corpus::CodeFamily::uspc: return uspc_codes;
        }
        throw InternalError("unknown code family");
    }
};

inline void check_dimensions(const ModelBundle& bundle) {
    const ModelConfig& c = bundle.config;
    if (bundle.params.value("token_embedding").cols != c.token_dim)
        throw DataError("token embedding width does not match the model config");
    if (bundle.params.value("token_embedding").rows != bundle.vocab.size())
        throw DataError("token embedding rows do not match the vocabulary size");
    if (c.mode != FeatureMode::text_only) {
        for (const auto* table : {&bundle.cpc_codes, &bundle.ipc_codes, &bundle.uspc_codes}) {
            if (table->dimension != c.code_dim)
                throw DataError("code embedding width does not match the model config");
        }
    }
}

inline ModelBundle make_bundle(textenc::Vocabulary vocab,
                               const textenc::TokenEmbeddingTable& token_embeddings,
                               codegraph::CodeEmbeddingTable cpc,
                               codegraph::CodeEmbeddingTable ipc,
                               codegraph::CodeEmbeddingTable uspc, ModelConfig config,
                               std::uint64_t seed) {
    ModelBundle bundle;
    bundle.config = config;
    bundle.vocab = std::move(vocab);
    bundle.cpc_codes = std::move(cpc);
    bundle.ipc_codes = std::move(ipc);
    bundle.uspc_codes = std::move(uspc);
    bundle.params =
        nn::init_parameters(config, bundle.vocab.size(), &token_embeddings, seed);
    check_dimensions(bundle);
    return bundle;
}

// Tokenization and code averaging are deterministic per record, so they
// are computed once per dataset and reused across epochs.
struct ExampleFeatures {
    std::string id;
    textenc::TokenSequence tokens;
    nn::Tensor avg_cpc;
    nn::Tensor avg_ipc;
    nn::Tensor avg_uspc;
    int label = 0;
};

inline nn::Tensor as_row(const std::vector<double>& v) {
    nn::Tensor t(1, v.size());
    t.data = v;
    return t;
}

inline ExampleFeatures make_features(const corpus::PatentRecord& record,
                                     const ModelBundle& bundle) {
    ExampleFeatures f;
    f.id = record.id;
    f.label = record.valid ? 1 : 0;
    f.tokens = textenc::tokenize(record.abstract, bundle.vocab, bundle.config.encoder.seq_len);
    if (bundle.config.mode != FeatureMode::text_only) {
        f.avg_cpc = as_row(codegraph::embed_codes(record.cpc, bundle.cpc_codes));
        f.avg_ipc = as_row(codegraph::embed_codes(record.ipc, bundle.ipc_codes));
        f.avg_uspc = as_row(codegraph::embed_codes(record.uspc, bundle.uspc_codes));
    } else {
        f.avg_cpc = nn::Tensor::zeros(1, bundle.config.code_dim);
        f.avg_ipc = nn::Tensor::zeros(1, bundle.config.code_dim);
        f.avg_uspc = nn::Tensor::zeros(1, bundle.config.code_dim);
    }
    return f;
}

inline double forward_features(const ExampleFeatures& f, const ModelBundle& bundle,
                               const nn::ForwardOptions& opt = {}) {
    nn::Tape tape;
    nn::TapeBinder bind(tape, bundle.params, nullptr);
    nn::Tape::Id p = nn::classifier_on_tape(bind, f.tokens, f.avg_cpc, f.avg_ipc, f.avg_uspc,
                                            bundle.config, opt);
    return tape.value(p).data[0];
}

inline double forward_patent(const corpus::PatentRecord& record, const ModelBundle& bundle) {
    return forward_features(make_features(record, bundle), bundle);
}

inline std::vector<double> score_records(const std::vector<corpus::PatentRecord>& records,
                                         const ModelBundle& bundle, std::size_t workers = 1) {
    std::vector<double> scores(records.size());
    detail::parallel_chunks(records.size(), workers,
                            [&](std::size_t, std::size_t begin, std::size_t end) {
                                for (std::size_t i = begin; i < end; ++i)
                                    scores[i] = forward_patent(records[i], bundle);
                            });
    return scores;
}

inline metrics::EvalReport evaluate(const ModelBundle& bundle,
                                    const std::vector<corpus::PatentRecord>& records,
                                    std::size_t workers = 1, double threshold = 0.5) {
    if (records.empty()) throw DataError("evaluate requires a nonempty record set");
    auto scores = score_records(records, bundle, workers);
    std::vector<metrics::EvalReport::Row> rows(records.size());
    for (std::size_t i = 0; i < records.size(); ++i)
        rows[i] = {records[i].id, scores[i], records[i].valid ? 1 : 0};
    return metrics::make_report(std::move(rows), threshold);
}

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_ap = 0.0;
};

using TrainHistory = std::vector<EpochStats>;

inline void write_history(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write training history: " + path);
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "epoch,train_loss,validation_ap\n";
    for (const auto& e : history)
        out << e.epoch << ',' << e.train_loss << ',' << e.validation_ap << '\n';
}

// Shuffled minibatch training with Adam. Per-example gradients are
// accumulated into per-worker buffers over fixed contiguous chunks and the
// buffers are reduced in worker order, so a run is reproducible for a
// given (seed, worker count). The bundle keeps the parameters of the epoch
// with the best validation AP.
inline TrainHistory train(const corpus::DatasetSplit& dataset, ModelBundle& bundle,
                          const TrainConfig& cfg) {
    cfg.validate();
    check_dimensions(bundle);
    if (dataset.train.empty()) throw DataError("training split is empty");
    const auto positives = static_cast<std::size_t>(
        std::count_if(dataset.train.begin(), dataset.train.end(),
                      [](const corpus::PatentRecord& r) { return r.valid; }));
    if (positives == 0 || positives == dataset.train.size())
        throw DataError("training split must contain both classes");

    TrainHistory history;
    if (cfg.epochs == 0) return history;

    std::vector<ExampleFeatures> train_features(dataset.train.size());
    detail::parallel_chunks(dataset.train.size(), cfg.workers,
                            [&](std::size_t, std::size_t begin, std::size_t end) {
                                for (std::size_t i = begin; i < end; ++i)
                                    train_features[i] =
                                        make_features(dataset.train[i], bundle);
                            });

    const std::size_t workers = std::max<std::size_t>(1, cfg.workers);
    std::vector<nn::GradientBuffer> worker_grads;
    worker_grads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        worker_grads.push_back(nn::GradientBuffer::like(bundle.params));

    double best_ap = -1.0;
    nn::ParameterStore best_params = bundle.params;
    const bool use_dropout = bundle.config.encoder.dropout > 0.0;

    std::vector<std::size_t> order(train_features.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::Rng shuffle_rng(detail::derive_seed(cfg.seed, /*stream=*/30, epoch));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t batch_start = 0; batch_start < order.size();
             batch_start += cfg.batch_size) {
            const std::size_t batch_end =
                std::min(order.size(), batch_start + cfg.batch_size);
            const std::size_t batch_size = batch_end - batch_start;
            const double inv_batch = 1.0 / static_cast<double>(batch_size);

            std::vector<double> losses(batch_size);
            for (auto& g : worker_grads) g.zero();
            detail::parallel_chunks(
                batch_size, workers, [&](std::size_t w, std::size_t begin, std::size_t end) {
                    for (std::size_t b = begin; b < end; ++b) {
                        const ExampleFeatures& f = train_features[order[batch_start + b]];
                        detail::Rng dropout_rng(detail::derive_seed(
                            cfg.seed, /*stream=*/31, epoch * order.size() + batch_start + b));
                        nn::ForwardOptions opt;
                        opt.training = use_dropout;
                        opt.dropout_rng = &dropout_rng;
                        nn::Tape tape;
                        nn::TapeBinder bind(tape, bundle.params, &worker_grads[w]);
                        nn::Tape::Id p = nn::classifier_on_tape(
                            bind, f.tokens, f.avg_cpc, f.avg_ipc, f.avg_uspc, bundle.config,
                            opt);
                        nn::Tape::Id loss =
                            tape.bce_loss(p, f.label, 1e-7, f.label == 1 ? cfg.pos_weight : 1.0);
                        losses[b] = tape.value(loss).data[0];
                        tape.backward(loss, inv_batch);
                    }
                });
            nn::GradientBuffer& total = worker_grads[0];
            for (std::size_t w = 1; w < workers; ++w) total.add(worker_grads[w]);
            nn::adam_step(bundle.params, total, cfg);

            for (double l : losses) {
                if (!std::isfinite(l)) throw InternalError("training produced non-finite loss");
                epoch_loss += l;
            }
        }
        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.train_loss = epoch_loss / static_cast<double>(order.size());
        if (!dataset.validation.empty() && dataset.validation_positives > 0) {
            auto report = evaluate(bundle, dataset.validation, cfg.workers);
            stats.validation_ap = report.average_precision;
        } else {
            stats.validation_ap = std::numeric_limits<double>::quiet_NaN();
        }
        history.push_back(stats);
        // ties go to the later epoch, which has the lower training loss
        if (std::isnan(stats.validation_ap) || stats.validation_ap >= best_ap) {
            best_ap = std::isnan(stats.validation_ap) ? best_ap : stats.validation_ap;
            best_params = bundle.params;
        }
    }
    bundle.params = std::move(best_params);
    return history;
}

inline void save_checkpoint(const std::string& path, const ModelBundle& bundle) {
    nlohmann::json header;
    header["model"] = model_config_to_json(bundle.config);
    header["vocab"] = bundle.vocab.tokens;
    header["vocab_min_count"] = bundle.vocab.min_count;
    header["codes"] = {{"cpc", bundle.cpc_codes.keys},
                       {"ipc", bundle.ipc_codes.keys},
                       {"uspc", bundle.uspc_codes.keys}};
    header["code_dim"] = bundle.cpc_codes.dimension;
    header["step"] = bundle.params.step();

    nlohmann::json param_list = nlohmann::json::array();
    std::vector<std::pair<std::string, const nn::Tensor*>> tensors;
    bundle.params.for_each([&](const std::string& name, const nn::ParameterStore::Entry& e) {
        param_list.push_back({{"name", name}, {"trainable", e.trainable}});
        tensors.emplace_back("param/" + name, &e.value);
        if (e.trainable) {
            tensors.emplace_back("moment1/" + name, &e.moment1);
            tensors.emplace_back("moment2/" + name, &e.moment2);
        }
    });
    header["params"] = std::move(param_list);

    nn::Tensor cpc_data(bundle.cpc_codes.keys.size(), bundle.cpc_codes.dimension);
    cpc_data.data = bundle.cpc_codes.data;
    nn::Tensor ipc_data(bundle.ipc_codes.keys.size(), bundle.ipc_codes.dimension);
    ipc_data.data = bundle.ipc_codes.data;
    nn::Tensor uspc_data(bundle.uspc_codes.keys.size(), bundle.uspc_codes.dimension);
    uspc_data.data = bundle.uspc_codes.data;
    tensors.emplace_back("codes/cpc", &cpc_data);
    tensors.emplace_back("codes/ipc", &ipc_data);
    tensors.emplace_back("codes/uspc", &uspc_data);
    nn::write_container(path, std::move(header), tensors);
}

inline ModelBundle load_checkpoint(const std::string& path) {
    nn::Container c = nn::read_container(path);
    ModelBundle bundle;
    bundle.config = model_config_from_json(c.header.at("model"));
    bundle.vocab.tokens = c.header.at("vocab").get<std::vector<std::string>>();
    bundle.vocab.min_count = c.header.value("vocab_min_count", std::size_t(0));
    bundle.vocab.rebuild_index();

    const std::size_t code_dim = c.header.at("code_dim").get<std::size_t>();
    auto load_codes = [&](const char* family, codegraph::CodeEmbeddingTable& table) {
        table.dimension = code_dim;
        table.keys = c.header.at("codes").at(family).get<std::vector<std::string>>();
        table.data = std::move(c.tensors.at(std::string("codes/") + family).data);
        if (table.data.size() != table.keys.size() * code_dim)
            throw DataError("code table size mismatch in checkpoint " + path);
        table.rebuild_index();
    };
    load_codes("cpc", bundle.cpc_codes);
    load_codes("ipc", bundle.ipc_codes);
    load_codes("uspc", bundle.uspc_codes);

    for (const auto& p : c.header.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const bool trainable = p.at("trainable").get<bool>();
        nn::Tensor value = std::move(c.tensors.at("param/" + name));
        nn::Tensor& stored = bundle.params.add(name, std::move(value), trainable);
        if (trainable) {
            bundle.params.entry(name).moment1 = std::move(c.tensors.at("moment1/" + name));
            bundle.params.entry(name).moment2 = std::move(c.tensors.at("moment2/" + name));
            if (!bundle.params.entry(name).moment1.same_shape(stored) ||
                !bundle.params.entry(name).moment2.same_shape(stored))
                throw DataError("optimizer state shape mismatch in checkpoint " + path);
        }
    }
    bundle.params.set_step(c.header.at("step").get<std::uint64_t>());
    check_dimensions(bundle);
    return bundle;
}

}  // namespace patentscape::pipeline
