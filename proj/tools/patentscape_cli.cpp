// patentscape command-line interface: dataset construction, query
// conversion, embedding pretraining, training, and evaluation. Every
// command validates its inputs up front, writes all artifacts under one
// output directory, and finishes by writing a manifest recording the
// resolved configuration hash and input digests. Reruns with an unchanged
// configuration and complete outputs are no-ops.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "patentscape/codegraph.hpp"
#include "patentscape/corpus.hpp"
#include "patentscape/corpus_io.hpp"
#include "patentscape/detail/sha256.hpp"
#include "patentscape/error.hpp"
#include "patentscape/metrics.hpp"
#include "patentscape/pipeline.hpp"
#include "patentscape/searchdsl.hpp"
#include "patentscape/skipgram.hpp"
#include "patentscape/textenc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patentscape;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

struct GlobalOptions {
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    bool deterministic = true;
    std::string config_path;
    std::string out_dir;
    bool force = false;
};

void add_global_options(CLI::App* cmd, GlobalOptions& g) {
    cmd->add_option("--seed", g.seed, "Seed for all randomized steps");
    cmd->add_option("--workers", g.workers, "Worker threads for parallel stages")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--deterministic,!--no-deterministic", g.deterministic,
                  "Keep all stages bit-reproducible (asynchronous embedding training is "
                  "only used when disabled)");
    cmd->add_option("--config", g.config_path, "JSON configuration file; flags win over it");
    cmd->add_option("--out", g.out_dir, "Output directory (default: runs/<timestamp>-<hash>)");
    cmd->add_flag("--force", g.force, "Regenerate even if the output directory is partial");
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("bad JSON in config file " + path + ": " + e.what());
    }
}

// Configuration precedence: command-line flag, then the command's section
// of the config file, then the "global" section, then the built-in default.
template <class T>
void config_override(const json& cfg, const std::string& section, const std::string& key,
                     const CLI::Option* opt, T& value) {
    if (opt != nullptr && opt->count() > 0) return;
    for (const std::string& s : {section, std::string("global")}) {
        if (cfg.contains(s) && cfg.at(s).contains(key)) {
            try {
                value = cfg.at(s).at(key).get<T>();
            } catch (const json::exception& e) {
                throw DataError("config key " + s + "." + key + ": " + e.what());
            }
            return;
        }
    }
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

class RunContext {
public:
    RunContext(std::string command, const GlobalOptions& g, json resolved_config)
        : command_(std::move(command)), force_(g.force), config_(std::move(resolved_config)) {
        config_["seed"] = g.seed;
        config_["workers"] = g.workers;
        config_["deterministic"] = g.deterministic;
        config_hash_ = detail::sha256_hex(config_.dump());
        out_dir_ = g.out_dir.empty()
                       ? fs::path("runs") / (timestamp_utc() + "-" + config_hash_.substr(0, 8))
                       : fs::path(g.out_dir);
    }

    const fs::path& out_dir() const { return out_dir_; }
    fs::path path(const std::string& name) const { return out_dir_ / name; }

    void add_input(const fs::path& p) {
        inputs_[p.string()] = detail::sha256_file_hex(p.string());
    }
    void add_output(const std::string& name) { outputs_.push_back(name); }

    // True when a complete previous run with the same configuration exists,
    // in which case the command is a no-op. A directory with files but no
    // manifest is treated as a partial run.
    bool up_to_date() const {
        const fs::path manifest = out_dir_ / "manifest.json";
        if (!fs::exists(out_dir_)) return false;
        if (!fs::exists(manifest)) {
            if (force_) return false;
            bool empty = fs::is_directory(out_dir_) && fs::is_empty(out_dir_);
            if (empty) return false;
            throw DataError("output directory " + out_dir_.string() +
                            " has no manifest (partial run?); use --force to regenerate");
        }
        if (force_) return false;
        std::ifstream in(manifest);
        json existing;
        try {
            in >> existing;
        } catch (const json::exception&) {
            throw DataError("unreadable manifest in " + out_dir_.string() +
                            "; use --force to regenerate");
        }
        if (existing.value("config_hash", "") != config_hash_) {
            throw DataError("output directory " + out_dir_.string() +
                            " was produced by a different configuration; choose another "
                            "--out or use --force");
        }
        for (const auto& name : existing.value("outputs", std::vector<std::string>{})) {
            if (!fs::exists(out_dir_ / name))
                throw DataError("output " + name + " missing from " + out_dir_.string() +
                                " (partial run?); use --force to regenerate");
        }
        return true;
    }

    void prepare() { fs::create_directories(out_dir_); }

    void write_manifest() {
        json manifest{{"command", command_},
                      {"config", config_},
                      {"config_hash", config_hash_},
                      {"inputs", inputs_},
                      {"outputs", outputs_}};
        std::ofstream out(out_dir_ / "manifest.json");
        if (!out) throw DataError("cannot write manifest in " + out_dir_.string());
        out << manifest.dump(2) << '\n';
    }

private:
    std::string command_;
    bool force_;
    json config_;
    std::string config_hash_;
    fs::path out_dir_;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> outputs_;
};

corpus::RecordFormat resolve_format(const std::string& format_flag, const fs::path& input) {
    if (format_flag == "auto") return corpus::detect_format(input);
    return corpus::parse_format(format_flag);
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

// ----------------------------------------------------------------------
// ingest

struct IngestArgs {
    GlobalOptions global;
    std::string input;
    std::string format = "auto";
    bool keep_empty_abstracts = false;
};

int run_ingest(const IngestArgs& a, const json& cfg) {
    json resolved{{"input", a.input},
                  {"format", a.format},
                  {"keep_empty_abstracts", a.keep_empty_abstracts}};
    (void)cfg;
    RunContext run("ingest", a.global, resolved);
    require_file(a.input, "input record file");
    if (run.up_to_date()) {
        std::cout << "up-to-date: " << run.out_dir().string() << "\n";
        return kExitOk;
    }
    run.prepare();
    run.add_input(a.input);
    corpus::IngestPolicy policy;
    policy.keep_empty_abstracts = a.keep_empty_abstracts;
    auto records = corpus::load_corpus(a.input, resolve_format(a.format, a.input), policy);
    corpus::save_records_jsonl(run.path("records.jsonl"), records);
    run.add_output("records.jsonl");
    run.write_manifest();
    std::cout << "ingested " << records.size() << " records -> " << run.out_dir().string()
              << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------------
// convert-query / filter

struct ConvertQueryArgs {
    std::string query_path;
    std::string field = "description";
};

int run_convert_query(const ConvertQueryArgs& a) {
    require_file(a.query_path, "query file");
    std::ifstream in(a.query_path);
    std::string formula((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    auto ast = searchdsl::parse_query(formula);
    std::cout << searchdsl::emit_sql(ast, searchdsl::parse_field(a.field)) << "\n";
    return kExitOk;
}

struct FilterArgs {
    GlobalOptions global;
    std::string query_path;
    std::string input;
    std::string format = "auto";
    std::string field = "abstract";
    bool keep_empty_abstracts = false;
};

int run_filter(const FilterArgs& a) {
    json resolved{{"query", a.query_path},
                  {"input", a.input},
                  {"format", a.format},
                  {"field", a.field}};
    RunContext run("filter", a.global, resolved);
    require_file(a.query_path, "query file");
    require_file(a.input, "input record file");
    if (run.up_to_date()) {
        std::cout << "up-to-date: " << run.out_dir().string() << "\n";
        return kExitOk;
    }
    run.prepare();
    run.add_input(a.query_path);
    run.add_input(a.input);

    std::ifstream qin(a.query_path);
    std::string formula((std::istreambuf_iterator<char>(qin)),
                        std::istreambuf_iterator<char>());
    auto ast = searchdsl::parse_query(formula);
    const auto field = searchdsl::parse_field(a.field);
    if (field == searchdsl::TargetField::description)
        throw DataError("local records carry no description text; filter on abstract or title");

    corpus::IngestPolicy policy;
    policy.keep_empty_abstracts = true;  // filtering decides relevance, not validity
    std::ofstream out(run.path("matching.jsonl"));
    std::size_t kept = 0, seen = 0;
    corpus::for_each_record(
        a.input, resolve_format(a.format, a.input), policy,
        [&](corpus::PatentRecord&& r, std::size_t) {
            ++seen;
            const std::string& text =
                field == searchdsl::TargetField::title ? r.title : r.abstract;
            if (searchdsl::eval_query(ast, text)) {
                out << corpus::record_to_json(r).dump() << '\n';
                ++kept;
            }
        });
    run.add_output("matching.jsonl");
    run.write_manifest();
    std::cout << "matched " << kept << " of " << seen << " records -> "
              << run.out_dir().string() << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------------
// build-dataset

struct BuildDatasetArgs {
    GlobalOptions global;
    std::string corpus_path;
    std::string format = "auto";
    std::string valid_ids_path;
    double valid_freq = 0.005;
    double emergence_ratio = 50.0;
    std::size_t neg_train = 50000;
    std::size_t neg_val = 10000;
    std::size_t neg_test = 10000;
};

int run_build_dataset(const BuildDatasetArgs& a) {
    json resolved{{"corpus", a.corpus_path},
                  {"format", a.format},
                  {"valid_ids", a.valid_ids_path},
                  {"valid_freq", a.valid_freq},
                  {"emergence_ratio", a.emergence_ratio},
                  {"negatives", {a.neg_train, a.neg_val, a.neg_test}}};
    RunContext run("build-dataset", a.global, resolved);
    require_file(a.corpus_path, "corpus file");
    if (!a.valid_ids_path.empty()) require_file(a.valid_ids_path, "valid-id file");
    if (run.up_to_date()) {
        std::cout << "up-to-date: " << run.out_dir().string() << "\n";
        return kExitOk;
    }
    run.prepare();
    run.add_input(a.corpus_path);

    std::unordered_set<std::string> valid_ids;
    if (!a.valid_ids_path.empty()) {
        run.add_input(a.valid_ids_path);
        std::ifstream in(a.valid_ids_path);
        std::string line;
        while (std::getline(in, line)) {
            line = patentscape::detail::trim(line);
            if (!line.empty()) valid_ids.insert(line);
        }
    }
    auto is_valid = [&](const corpus::PatentRecord& r) {
        return a.valid_ids_path.empty() ? r.valid : valid_ids.count(r.id) > 0;
    };

    corpus::SamplingConfig sampling;
    sampling.valid_freq_threshold = a.valid_freq;
    sampling.emergence_ratio_threshold = a.emergence_ratio;
    sampling.negatives_per_split = {a.neg_train, a.neg_val, a.neg_test};
    sampling.seed = a.global.seed;

    // pass 1: corpus-wide CPC document frequencies, id uniqueness, and the
    // (small) valid set; the bulk of the corpus is never held in memory
    const auto format = resolve_format(a.format, a.corpus_path);
    std::vector<corpus::PatentRecord> valid;
    corpus::CorpusCodeStats corpus_stats;
    corpus_stats.family = corpus::CodeFamily::cpc;
    std::unordered_set<std::string> seen_ids;
    corpus::for_each_record(a.corpus_path, format, {},
                            [&](corpus::PatentRecord&& r, std::size_t line_no) {
                                if (!seen_ids.insert(r.id).second)
                                    throw DataError("line " + std::to_string(line_no) +
                                                    ": duplicate id '" + r.id + "'");
                                ++corpus_stats.total_patents;
                                for (const auto& code : r.cpc)
                                    ++corpus_stats.doc_frequency[code];
                                if (is_valid(r)) {
                                    r.valid = true;
                                    valid.push_back(std::move(r));
                                }
                            });
    std::cout << "corpus: " << valid.size() << " valid / "
              << (corpus_stats.total_patents - valid.size()) << " retrieved\n";

    auto splits = corpus::split_valid(valid, sampling.seed);
    auto valid_stats = corpus::code_doc_frequency(valid, corpus::CodeFamily::cpc);
    auto important = corpus::important_codes(valid_stats, corpus_stats, sampling);
    std::cout << "valid-set CPCs: " << valid_stats.doc_frequency.size() << ", important: "
              << important.size() << "\n";

    // pass 2: stream the non-valid records through the reservoir sampler
    std::ifstream stream_in(a.corpus_path);
    if (!stream_in) throw DataError("cannot reopen corpus: " + a.corpus_path);
    std::size_t next_line = 0;
    std::string raw_line;
    auto next_negative = [&]() -> std::optional<corpus::PatentRecord> {
        while (std::getline(stream_in, raw_line)) {
            ++next_line;
            if (!raw_line.empty() && raw_line.back() == '\r') raw_line.pop_back();
            if (patentscape::detail::trim(raw_line).empty()) continue;
            corpus::PatentRecord r =
                format == corpus::RecordFormat::jsonl
                    ? corpus::detail_io::parse_jsonl_row(raw_line, next_line)
                    : corpus::detail_io::parse_tsv_row(raw_line, next_line);
            corpus::detail_io::validate_record(r, next_line, {});
            if (is_valid(r)) continue;
            r.valid = false;
            return r;
        }
        return std::nullopt;
    };
    auto negatives = corpus::sample_negatives(next_negative, important, sampling);
    auto dataset = corpus::assemble_dataset(splits, negatives, sampling.seed);

    corpus::DatasetManifest manifest;
    manifest.seed = sampling.seed;
    manifest.valid_freq_threshold = sampling.valid_freq_threshold;
    manifest.emergence_ratio_threshold = sampling.emergence_ratio_threshold;
    manifest.important_codes = important;
    corpus::write_dataset(run.out_dir(), dataset, manifest);
    for (const char* name :
         {"train.jsonl", "validation.jsonl", "test.jsonl", "dataset_manifest.json"})
        run.add_output(name);
    run.write_manifest();
    std::cout << "dataset: train " << dataset.train.size() << " (" << dataset.train_positives
              << " pos), validation " << dataset.validation.size() << " ("
              << dataset.validation_positives << " pos), test " << dataset.test.size() << " ("
              << dataset.test_positives << " pos) -> " << run.out_dir().string() << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------------
// pretrain-codes / pretrain-text

struct PretrainCodesArgs {
    GlobalOptions global;
    std::string input;
    std::string format = "auto";
    std::string family = "all";
    std::size_t dimension = 128;
    std::size_t window = 10;
    std::size_t epochs = 5;
    std::size_t negative = 5;
    double learning_rate = 0.025;
    std::size_t diffusions = 10;
    std::size_t diffusion_size = 40;
    bool weighted_diffusion = false;
};

int run_pretrain_codes(const PretrainCodesArgs& a) {
    json resolved{{"input", a.input},       {"format", a.format},
                  {"family", a.family},     {"dimension", a.dimension},
                  {"window", a.window},     {"epochs", a.epochs},
                  {"negative", a.negative}, {"learning_rate", a.learning_rate},
                  {"diffusions", a.diffusions}, {"diffusion_size", a.diffusion_size},
                  {"weighted_diffusion", a.weighted_diffusion}};
    RunContext run("pretrain-codes", a.global, resolved);
    require_file(a.input, "input record file");
    if (run.up_to_date()) {
        std::cout << "up-to-date: " << run.out_dir().string() << "\n";
        return kExitOk;
    }
    run.prepare();
    run.add_input(a.input);

    std::vector<corpus::CodeFamily> families;
    if (a.family == "all")
        families = {corpus::CodeFamily::cpc, corpus::CodeFamily::ipc,
                    corpus::CodeFamily::uspc};
    else
        families = {corpus::parse_family(a.family)};

    corpus::IngestPolicy policy;
    policy.keep_empty_abstracts = true;  // only codes are needed here
    auto records = corpus::load_corpus(a.input, resolve_format(a.format, a.input), policy);

    for (auto family : families) {
        auto graph = codegraph::build_graph(records, family);
        auto sequences =
            codegraph::generate_corpus(graph, a.diffusions, a.diffusion_size, a.global.seed,
                                       a.global.workers, a.weighted_diffusion);
        embed::SkipGramConfig sg;
        sg.dimension = a.dimension;
        sg.window = a.window;
        sg.epochs = a.epochs;
        sg.negative_samples = a.negative;
        sg.learning_rate = a.learning_rate;
        sg.seed = detail::derive_seed(a.global.seed, 200 + static_cast<std::uint64_t>(family));
        sg.workers = a.global.deterministic ? 1 : a.global.workers;
        auto table = codegraph::train_skipgram(sequences, graph, sg);

        const std::string prefix = corpus::family_name(family);
        codegraph::write_graph(run.path(prefix + "_graph.tsv").string(), graph);
        embed::write_embeddings_text(run.path(prefix + "_embeddings.txt").string(), table);
        run.add_output(prefix + "_graph.tsv");
        run.add_output(prefix + "_embeddings.txt");
        std::cout << prefix << ": " << graph.node_count() << " codes, " << graph.edge_count()
                  << " edges, " << sequences.size() << " sequences\n";
    }
    run.write_manifest();
    std::cout << "code embeddings -> " << run.out_dir().string() << "\n";
    return kExitOk;
}

struct PretrainTextArgs {
    GlobalOptions global;
    std::string input;
    std::string format = "auto";
    std::size_t dimension = 512;
    std::size_t window = 5;
    std::size_t epochs = 5;
    std::size_t negative = 5;
    double learning_rate = 0.025;
    std::size_t min_count = 5;
};

int run_pretrain_text(const PretrainTextArgs& a) {
    json resolved{{"input", a.input},       {"format", a.format},
                  {"dimension", a.dimension}, {"window", a.window},
                  {"epochs", a.epochs},     {"negative", a.negative},
                  {"learning_rate", a.learning_rate}, {"min_count", a.min_count}};
    RunContext run("pretrain-text", a.global, resolved);
    require_file(a.input, "input record file");
    if (run.up_to_date()) {
        std::cout << "up-to-date: " << run.out_dir().string() << "\n";
        return kExitOk;
    }
    run.prepare();
    run.add_input(a.input);

    auto records = corpus::load_corpus(a.input, resolve_format(a.format, a.input));
    std::vector<std::string> abstracts;
    abstracts.reserve(records.size());
    for (const auto& r : records) abstracts.push_back(r.abstract);

    auto vocab = textenc::build_vocab(abstracts, a.min_count);
    embed::SkipGramConfig sg;
    sg.dimension = a.dimension;
    sg.window = a.window;
    sg.epochs = a.epochs;
    sg.negative_samples = a.negative;
    sg.learning_rate = a.learning_rate;
    sg.seed = detail::derive_seed(a.global.seed, 300);
    sg.workers = a.global.deterministic ? 1 : a.global.workers;
    auto table = textenc::pretrain_token_embeddings(abstracts, vocab, sg);

    textenc::write_vocab(run.path("vocab.txt").string(), vocab);
    embed::write_embeddings_text(run.path("token_embeddings.txt").string(), table);
    run.add_output("vocab.txt");
    run.add_output("token_embeddings.txt");
    run.write_manifest();
    std::cout << "vocabulary of " << vocab.size() << " tokens -> " << run.out_dir().string()
              << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------------
// train / evaluate / predict

struct TrainArgs {
    GlobalOptions global;
    std::string train_path;
    std::string val_path;
    std::string dataset_dir;
    std::string vocab_path;
    std::string token_embeddings_path;
    std::string cpc_path;
    std::string ipc_path;
    std::string uspc_path;
    std::size_t layers = 6;
    std::size_t heads = 8;
    std::size_t hidden = 512;
    std::size_t feed_forward = 2048;
    std::size_t seq_len = 128;
    double dropout = 0.1;
    std::string mode = "combined";
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double learning_rate = 1e-4;
    double adam_epsilon = 1e-8;
    double pos_weight = 1.0;
    bool freeze_token_embeddings = false;
};

int run_train(const TrainArgs& a) {
    json resolved{{"train", a.train_path},
                  {"val", a.val_path},
                  {"dataset", a.dataset_dir},
                  {"vocab", a.vocab_path},
                  {"token_embeddings", a.token_embeddings_path},
                  {"cpc_embeddings", a.cpc_path},
                  {"ipc_embeddings", a.ipc_path},
                  {"uspc_embeddings", a.uspc_path},
                  {"layers", a.layers},
                  {"heads", a.heads},
                  {"hidden", a.hidden},
                  {"feed_forward", a.feed_forward},
                  {"seq_len", a.seq_len},
                  {"dropout", a.dropout},
                  {"mode", a.mode},
                  {"epochs", a.epochs},
                  {"batch_size", a.batch_size},
                  {"learning_rate", a.learning_rate},
                  {"adam_epsilon", a.adam_epsilon},
                  {"pos_weight", a.pos_weight},
                  {"freeze_token_embeddings", a.freeze_token_embeddings}};
    RunContext run("train", a.global, resolved);

    fs::path train_path = a.train_path.empty() ? fs::path(a.dataset_dir) / "train.jsonl"
                                               : fs::path(a.train_path);
    fs::path val_path = a.val_path.empty() ? fs::path(a.dataset_dir) / "validation.jsonl"
                                           : fs::path(a.val_path);
    if (a.train_path.empty() && a.dataset_dir.empty())
        throw DataError("train: pass --train/--val files or a --dataset directory");
    require_file(train_path, "training split");
    require_file(val_path, "validation split");
    require_file(a.vocab_path, "vocabulary file");
    require_file(a.token_embeddings_path, "token embedding file");

    const auto mode = nn::parse_feature_mode(a.mode);
    if (mode != nn::FeatureMode::text_only) {
        require_file(a.cpc_path, "CPC embedding file");
        require_file(a.ipc_path, "IPC embedding file");
        require_file(a.uspc_path, "USPC embedding file");
    }
    if (run.up_to_date()) {
        std::cout << "up-to-date: " << run.out_dir().string() << "\n";
        return kExitOk;
    }
    run.prepare();
    run.add_input(train_path);
    run.add_input(val_path);
    run.add_input(a.vocab_path);
    run.add_input(a.token_embeddings_path);

    corpus::DatasetSplit dataset;
    dataset.train = corpus::load_corpus(train_path, corpus::RecordFormat::jsonl);
    dataset.validation = corpus::load_corpus(val_path, corpus::RecordFormat::jsonl);
    for (const auto& r : dataset.train) dataset.train_positives += r.valid;
    for (const auto& r : dataset.validation) dataset.validation_positives += r.valid;

    auto vocab = textenc::read_vocab(a.vocab_path);
    auto token_table = embed::read_embeddings_text(a.token_embeddings_path);
    if (token_table.keys != vocab.tokens)
        throw DataError("token embedding file keys do not match the vocabulary");

    codegraph::CodeEmbeddingTable cpc, ipc, uspc;
    std::size_t code_dim = 128;
    if (mode != nn::FeatureMode::text_only) {
        run.add_input(a.cpc_path);
        run.add_input(a.ipc_path);
        run.add_input(a.uspc_path);
        cpc = embed::read_embeddings_text(a.cpc_path);
        ipc = embed::read_embeddings_text(a.ipc_path);
        uspc = embed::read_embeddings_text(a.uspc_path);
        if (ipc.dimension != cpc.dimension || uspc.dimension != cpc.dimension)
            throw DataError("code embedding files disagree on dimension");
        code_dim = cpc.dimension;
    }

    nn::ModelConfig model;
    model.encoder.layers = a.layers;
    model.encoder.heads = a.heads;
    model.encoder.hidden = a.hidden;
    model.encoder.feed_forward = a.feed_forward;
    model.encoder.seq_len = a.seq_len;
    model.encoder.dropout = a.dropout;
    model.token_dim = token_table.dimension;
    model.code_dim = code_dim;
    model.mode = mode;
    model.finetune_token_embeddings = !a.freeze_token_embeddings;

    auto bundle = pipeline::make_bundle(std::move(vocab), token_table, std::move(cpc),
                                        std::move(ipc), std::move(uspc), model,
                                        a.global.seed);
    nn::TrainConfig train_cfg;
    train_cfg.epochs = a.epochs;
    train_cfg.batch_size = a.batch_size;
    train_cfg.learning_rate = a.learning_rate;
    train_cfg.adam_epsilon = a.adam_epsilon;
    train_cfg.pos_weight = a.pos_weight;
    train_cfg.seed = detail::derive_seed(a.global.seed, 500);
    train_cfg.workers = a.global.workers;

    auto history = pipeline::train(dataset, bundle, train_cfg);
    for (const auto& e : history)
        std::cout << "epoch " << e.epoch << ": train loss " << e.train_loss
                  << ", validation AP " << e.validation_ap << "\n";

    pipeline::save_checkpoint(run.path("model.ckpt").string(), bundle);
    pipeline::write_history(run.path("history.csv").string(), history);
    run.add_output("model.ckpt");
    run.add_output("history.csv");
    run.write_manifest();
    std::cout << "checkpoint -> " << run.path("model.ckpt").string() << "\n";
    return kExitOk;
}

struct EvaluateArgs {
    GlobalOptions global;
    std::string checkpoint;
    std::string input;
    std::string format = "auto";
    double threshold = 0.5;
    std::string tune_threshold_on;  // validation records; picks the F1-optimal threshold
};

int run_evaluate(const EvaluateArgs& a) {
    json resolved{{"checkpoint", a.checkpoint},
                  {"input", a.input},
                  {"format", a.format},
                  {"threshold", a.threshold},
                  {"tune_threshold_on", a.tune_threshold_on}};
    RunContext run("evaluate", a.global, resolved);
    require_file(a.checkpoint, "checkpoint");
    require_file(a.input, "input record file");
    if (!a.tune_threshold_on.empty()) require_file(a.tune_threshold_on, "validation file");
    if (run.up_to_date()) {
        std::cout << "up-to-date: " << run.out_dir().string() << "\n";
        return kExitOk;
    }
    run.prepare();
    run.add_input(a.checkpoint);
    run.add_input(a.input);

    auto bundle = pipeline::load_checkpoint(a.checkpoint);
    auto records = corpus::load_corpus(a.input, resolve_format(a.format, a.input));
    double threshold = a.threshold;
    if (!a.tune_threshold_on.empty()) {
        run.add_input(a.tune_threshold_on);
        auto val_records = corpus::load_corpus(
            a.tune_threshold_on, resolve_format(a.format, a.tune_threshold_on));
        auto val_scores = pipeline::score_records(val_records, bundle, a.global.workers);
        std::vector<int> val_labels(val_records.size());
        for (std::size_t i = 0; i < val_records.size(); ++i)
            val_labels[i] = val_records[i].valid ? 1 : 0;
        threshold = metrics::best_f1_threshold(val_scores, val_labels);
        std::cout << "validation-optimal threshold " << threshold << "\n";
    }
    auto report = pipeline::evaluate(bundle, records, a.global.workers, threshold);
    metrics::write_report(run.path("report.txt").string(), report);
    run.add_output("report.txt");
    run.write_manifest();
    std::cout << "average_precision " << report.average_precision << "\n"
              << "f1 " << report.f1 << "\n"
              << "report -> " << run.path("report.txt").string() << "\n";
    return kExitOk;
}

struct PredictArgs {
    GlobalOptions global;
    std::string checkpoint;
    std::string input;
    std::string format = "auto";
};

int run_predict(const PredictArgs& a) {
    json resolved{{"checkpoint", a.checkpoint}, {"input", a.input}, {"format", a.format}};
    RunContext run("predict", a.global, resolved);
    require_file(a.checkpoint, "checkpoint");
    require_file(a.input, "input record file");
    if (run.up_to_date()) {
        std::cout << "up-to-date: " << run.out_dir().string() << "\n";
        return kExitOk;
    }
    run.prepare();
    run.add_input(a.checkpoint);
    run.add_input(a.input);

    auto bundle = pipeline::load_checkpoint(a.checkpoint);
    corpus::IngestPolicy policy;
    policy.keep_empty_abstracts = true;
    auto records = corpus::load_corpus(a.input, resolve_format(a.format, a.input), policy);
    auto scores = pipeline::score_records(records, bundle, a.global.workers);

    std::ofstream out(run.path("predictions.tsv"));
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < records.size(); ++i)
        out << records[i].id << '\t' << scores[i] << '\n';
    run.add_output("predictions.tsv");
    run.write_manifest();
    std::cout << "scored " << records.size() << " records -> "
              << run.path("predictions.tsv").string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patent landscaping toolkit: dataset construction, Diff2Vec code "
                 "embeddings, transformer text encoding, and valid-patent classification"};
    app.require_subcommand(1);

    IngestArgs ingest;
    auto* cmd_ingest = app.add_subcommand("ingest", "Validate and normalize a record file");
    add_global_options(cmd_ingest, ingest.global);
    cmd_ingest->add_option("--input", ingest.input, "Record file (jsonl or tsv)")->required();
    auto* o_ing_fmt = cmd_ingest->add_option("--format", ingest.format, "jsonl, tsv, or auto");
    cmd_ingest->add_flag("--keep-empty-abstracts", ingest.keep_empty_abstracts,
                         "Accept records with empty abstracts");

    ConvertQueryArgs convert;
    auto* cmd_convert =
        app.add_subcommand("convert-query", "Emit the SQL form of a search formula");
    cmd_convert->add_option("--query", convert.query_path, "Search formula file")->required();
    cmd_convert->add_option("--field", convert.field, "description, abstract, or title");

    FilterArgs filter;
    auto* cmd_filter =
        app.add_subcommand("filter", "Apply a search formula to a record file");
    add_global_options(cmd_filter, filter.global);
    cmd_filter->add_option("--query", filter.query_path, "Search formula file")->required();
    cmd_filter->add_option("--input", filter.input, "Record file")->required();
    cmd_filter->add_option("--format", filter.format, "jsonl, tsv, or auto");
    cmd_filter->add_option("--field", filter.field, "abstract or title");

    BuildDatasetArgs build;
    auto* cmd_build = app.add_subcommand(
        "build-dataset", "Split valid patents 6:2:2 and undersample negatives by important CPCs");
    add_global_options(cmd_build, build.global);
    cmd_build->add_option("--corpus", build.corpus_path, "Full retrieved corpus")->required();
    cmd_build->add_option("--format", build.format, "jsonl, tsv, or auto");
    cmd_build->add_option("--valid-ids", build.valid_ids_path,
                          "Optional file of valid patent ids (one per line); overrides the "
                          "records' valid flags");
    auto* o_vf = cmd_build->add_option("--valid-freq", build.valid_freq,
                                       "Minimum share of valid patents carrying a code");
    auto* o_er = cmd_build->add_option("--emergence-ratio", build.emergence_ratio,
                                       "Minimum valid/corpus ratio multiple");
    auto* o_nt = cmd_build->add_option("--neg-train", build.neg_train, "Training negatives");
    auto* o_nv = cmd_build->add_option("--neg-val", build.neg_val, "Validation negatives");
    auto* o_ns = cmd_build->add_option("--neg-test", build.neg_test, "Test negatives");

    PretrainCodesArgs codes;
    auto* cmd_codes = app.add_subcommand(
        "pretrain-codes", "Build code co-occurrence graphs and train diffusion embeddings");
    add_global_options(cmd_codes, codes.global);
    cmd_codes->add_option("--input", codes.input, "Record file")->required();
    cmd_codes->add_option("--format", codes.format, "jsonl, tsv, or auto");
    cmd_codes->add_option("--family", codes.family, "cpc, ipc, uspc, or all");
    auto* o_cd = cmd_codes->add_option("--dim", codes.dimension, "Embedding dimension");
    auto* o_cw = cmd_codes->add_option("--window", codes.window, "Skip-gram window");
    auto* o_ce = cmd_codes->add_option("--epochs", codes.epochs, "Training epochs");
    auto* o_cn = cmd_codes->add_option("--negative", codes.negative, "Negative samples");
    auto* o_cl = cmd_codes->add_option("--lr", codes.learning_rate, "Initial learning rate");
    auto* o_cdf = cmd_codes->add_option("--diffusions", codes.diffusions,
                                        "Diffusion trees per node");
    auto* o_cds = cmd_codes->add_option("--diffusion-size", codes.diffusion_size,
                                        "Nodes per diffusion tree");
    cmd_codes->add_flag("--weighted-diffusion", codes.weighted_diffusion,
                        "Sample diffusion neighbors proportionally to edge weight");

    PretrainTextArgs text;
    auto* cmd_text = app.add_subcommand(
        "pretrain-text", "Build the abstract vocabulary and train token embeddings");
    add_global_options(cmd_text, text.global);
    cmd_text->add_option("--input", text.input, "Record file")->required();
    cmd_text->add_option("--format", text.format, "jsonl, tsv, or auto");
    auto* o_td = cmd_text->add_option("--dim", text.dimension, "Embedding dimension");
    auto* o_tw = cmd_text->add_option("--window", text.window, "Skip-gram window");
    auto* o_te = cmd_text->add_option("--epochs", text.epochs, "Training epochs");
    auto* o_tn = cmd_text->add_option("--negative", text.negative, "Negative samples");
    auto* o_tl = cmd_text->add_option("--lr", text.learning_rate, "Initial learning rate");
    auto* o_tm = cmd_text->add_option("--min-count", text.min_count,
                                      "Minimum token frequency kept in the vocabulary");

    TrainArgs train;
    auto* cmd_train = app.add_subcommand("train", "Train the valid-patent classifier");
    add_global_options(cmd_train, train.global);
    cmd_train->add_option("--train", train.train_path, "Training record file");
    cmd_train->add_option("--val", train.val_path, "Validation record file");
    cmd_train->add_option("--dataset", train.dataset_dir,
                          "Dataset directory with train/validation.jsonl");
    cmd_train->add_option("--vocab", train.vocab_path, "Vocabulary file")->required();
    cmd_train->add_option("--token-embeddings", train.token_embeddings_path,
                          "Pretrained token embeddings")->required();
    cmd_train->add_option("--cpc-embeddings", train.cpc_path, "Pretrained CPC embeddings");
    cmd_train->add_option("--ipc-embeddings", train.ipc_path, "Pretrained IPC embeddings");
    cmd_train->add_option("--uspc-embeddings", train.uspc_path, "Pretrained USPC embeddings");
    auto* o_ly = cmd_train->add_option("--layers", train.layers, "Encoder layers");
    auto* o_hd = cmd_train->add_option("--heads", train.heads, "Attention heads");
    auto* o_hi = cmd_train->add_option("--hidden", train.hidden, "Hidden size");
    auto* o_ff = cmd_train->add_option("--ff", train.feed_forward, "Feed-forward size");
    auto* o_sl = cmd_train->add_option("--seq-len", train.seq_len, "Token sequence length");
    auto* o_dr = cmd_train->add_option("--dropout", train.dropout, "Dropout rate");
    auto* o_mo = cmd_train->add_option("--mode", train.mode, "combined, text, or codes");
    auto* o_ep = cmd_train->add_option("--epochs", train.epochs, "Training epochs");
    auto* o_bs = cmd_train->add_option("--batch", train.batch_size, "Minibatch size");
    auto* o_lr = cmd_train->add_option("--lr", train.learning_rate, "Adam learning rate");
    auto* o_ae = cmd_train->add_option("--adam-epsilon", train.adam_epsilon, "Adam epsilon");
    auto* o_pw = cmd_train->add_option("--pos-weight", train.pos_weight,
                                       "Positive-class loss weight (1 = plain BCE)");
    cmd_train->add_flag("--freeze-token-embeddings", train.freeze_token_embeddings,
                        "Do not fine-tune token embeddings during training");

    EvaluateArgs evaluate;
    auto* cmd_eval = app.add_subcommand("evaluate", "Score a labeled split and report AP/F1");
    add_global_options(cmd_eval, evaluate.global);
    cmd_eval->add_option("--checkpoint", evaluate.checkpoint, "Model checkpoint")->required();
    cmd_eval->add_option("--input", evaluate.input, "Labeled record file")->required();
    cmd_eval->add_option("--format", evaluate.format, "jsonl, tsv, or auto");
    cmd_eval->add_option("--threshold", evaluate.threshold, "F1 decision threshold");
    cmd_eval->add_option("--tune-threshold-on", evaluate.tune_threshold_on,
                         "Labeled records used to pick the F1-optimal threshold instead");

    PredictArgs predict;
    auto* cmd_pred = app.add_subcommand("predict", "Score records with a trained checkpoint");
    add_global_options(cmd_pred, predict.global);
    cmd_pred->add_option("--checkpoint", predict.checkpoint, "Model checkpoint")->required();
    cmd_pred->add_option("--input", predict.input, "Record file")->required();
    cmd_pred->add_option("--format", predict.format, "jsonl, tsv, or auto");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*cmd_ingest) {
            const json cfg = load_config_file(ingest.global.config_path);
            config_override(cfg, "ingest", "format", o_ing_fmt, ingest.format);
            return run_ingest(ingest, cfg);
        }
        if (*cmd_convert) return run_convert_query(convert);
        if (*cmd_filter) return run_filter(filter);
        if (*cmd_build) {
            const json cfg = load_config_file(build.global.config_path);
            config_override(cfg, "build-dataset", "valid_freq", o_vf, build.valid_freq);
            config_override(cfg, "build-dataset", "emergence_ratio", o_er,
                            build.emergence_ratio);
            config_override(cfg, "build-dataset", "neg_train", o_nt, build.neg_train);
            config_override(cfg, "build-dataset", "neg_val", o_nv, build.neg_val);
            config_override(cfg, "build-dataset", "neg_test", o_ns, build.neg_test);
            return run_build_dataset(build);
        }
        if (*cmd_codes) {
            const json cfg = load_config_file(codes.global.config_path);
            config_override(cfg, "pretrain-codes", "dim", o_cd, codes.dimension);
            config_override(cfg, "pretrain-codes", "window", o_cw, codes.window);
            config_override(cfg, "pretrain-codes", "epochs", o_ce, codes.epochs);
            config_override(cfg, "pretrain-codes", "negative", o_cn, codes.negative);
            config_override(cfg, "pretrain-codes", "lr", o_cl, codes.learning_rate);
            config_override(cfg, "pretrain-codes", "diffusions", o_cdf, codes.diffusions);
            config_override(cfg, "pretrain-codes", "diffusion_size", o_cds,
                            codes.diffusion_size);
            return run_pretrain_codes(codes);
        }
        if (*cmd_text) {
            const json cfg = load_config_file(text.global.config_path);
            config_override(cfg, "pretrain-text", "dim", o_td, text.dimension);
            config_override(cfg, "pretrain-text", "window", o_tw, text.window);
            config_override(cfg, "pretrain-text", "epochs", o_te, text.epochs);
            config_override(cfg, "pretrain-text", "negative", o_tn, text.negative);
            config_override(cfg, "pretrain-text", "lr", o_tl, text.learning_rate);
            config_override(cfg, "pretrain-text", "min_count", o_tm, text.min_count);
            return run_pretrain_text(text);
        }
        if (*cmd_train) {
            const json cfg = load_config_file(train.global.config_path);
            config_override(cfg, "train", "layers", o_ly, train.layers);
            config_override(cfg, "train", "heads", o_hd, train.heads);
            config_override(cfg, "train", "hidden", o_hi, train.hidden);
            config_override(cfg, "train", "feed_forward", o_ff, train.feed_forward);
            config_override(cfg, "train", "seq_len", o_sl, train.seq_len);
            config_override(cfg, "train", "dropout", o_dr, train.dropout);
            config_override(cfg, "train", "mode", o_mo, train.mode);
            config_override(cfg, "train", "epochs", o_ep, train.epochs);
            config_override(cfg, "train", "batch", o_bs, train.batch_size);
            config_override(cfg, "train", "lr", o_lr, train.learning_rate);
            config_override(cfg, "train", "adam_epsilon", o_ae, train.adam_epsilon);
            config_override(cfg, "train", "pos_weight", o_pw, train.pos_weight);
            return run_train(train);
        }
        if (*cmd_eval) return run_evaluate(evaluate);
        if (*cmd_pred) return run_predict(predict);
        std::cerr << "no subcommand selected\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
