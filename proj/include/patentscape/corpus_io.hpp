#pragma once

// Record file formats and dataset-split serialization. Two record formats
// are supported: newline-delimited JSON objects, and a tab-separated
// variant with ';'-joined code lists. Both are described by
// docs/patent_record.schema.json and docs/formats.md.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "patentscape/corpus.hpp"
#include "patentscape/detail/text.hpp"
#include "patentscape/error.hpp"

namespace patentscape::corpus {

enum class RecordFormat { jsonl, tsv };

inline RecordFormat parse_format(const std::string& name) {
    if (name == "jsonl") return RecordFormat::jsonl;
    if (name == "tsv") return RecordFormat::tsv;
    throw DataError("unknown record format: " + name + " (expected jsonl or tsv)");
}

inline RecordFormat detect_format(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    if (ext == ".tsv") return RecordFormat::tsv;
    return RecordFormat::jsonl;
}

struct IngestPolicy {
    bool keep_empty_abstracts = false;
};

namespace detail_io {

inline void normalize_codes(std::vector<std::string>& codes) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (auto& raw : codes) {
        std::string code = patentscape::detail::trim(raw);
        if (code.empty()) continue;
        if (seen.insert(code).second) out.push_back(std::move(code));
    }
    codes = std::move(out);
}

inline void validate_record(PatentRecord& record, std::size_t line_no,
                            const IngestPolicy& policy) {
    if (record.id.empty())
        throw DataError("line " + std::to_string(line_no) + ": missing or empty 'id'");
    normalize_codes(record.ipc);
    normalize_codes(record.cpc);
    normalize_codes(record.uspc);
    if (record.abstract.empty() && !policy.keep_empty_abstracts)
        throw DataError("line " + std::to_string(line_no) + ": empty abstract for id '" +
                        record.id + "' (pass keep_empty_abstracts to accept)");
}

inline PatentRecord parse_jsonl_row(const std::string& line, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    if (!j.is_object())
        throw DataError("line " + std::to_string(line_no) + ": expected a JSON object");
    PatentRecord r;
    try {
        if (!j.contains("id"))
            throw DataError("line " + std::to_string(line_no) + ": missing field 'id'");
        r.id = j.at("id").get<std::string>();
        r.title = j.value("title", std::string());
        r.abstract = j.value("abstract", std::string());
        for (auto [key, target] : {std::pair{"ipc", &r.ipc}, {"cpc", &r.cpc}, {"uspc", &r.uspc}}) {
            if (j.contains(key)) *target = j.at(key).get<std::vector<std::string>>();
        }
        r.valid = j.value("valid", false);
        r.publication_date = j.value("date", std::string());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("line " + std::to_string(line_no) + ": bad field type: " + e.what());
    }
    return r;
}

// Columns: id, title, abstract, ipc, cpc, uspc, valid[, date].
inline PatentRecord parse_tsv_row(const std::string& line, std::size_t line_no) {
    auto fields = patentscape::detail::split_on(line, '\t');
    if (fields.size() < 7 || fields.size() > 8)
        throw DataError("line " + std::to_string(line_no) + ": expected 7 or 8 tab-separated " +
                        "fields, got " + std::to_string(fields.size()));
    PatentRecord r;
    r.id = fields[0];
    r.title = fields[1];
    r.abstract = fields[2];
    r.ipc = patentscape::detail::split_on(fields[3], ';');
    r.cpc = patentscape::detail::split_on(fields[4], ';');
    r.uspc = patentscape::detail::split_on(fields[5], ';');
    const std::string& valid = fields[6];
    if (valid == "true" || valid == "1")
        r.valid = true;
    else if (valid == "false" || valid == "0")
        r.valid = false;
    else
        throw DataError("line " + std::to_string(line_no) + ": bad 'valid' value '" + valid +
                        "'");
    if (fields.size() == 8) r.publication_date = fields[7];
    return r;
}

}  // namespace detail_io

// Streams records from a file, validating and normalizing each row.
// Callback order is file order; line numbers in errors are 1-based.
inline void for_each_record(const std::filesystem::path& path, RecordFormat format,
                            const IngestPolicy& policy,
                            const std::function<void(PatentRecord&&, std::size_t)>& sink) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open record file: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (patentscape::detail::trim(line).empty()) continue;
        PatentRecord r = format == RecordFormat::jsonl
                             ? detail_io::parse_jsonl_row(line, line_no)
                             : detail_io::parse_tsv_row(line, line_no);
        detail_io::validate_record(r, line_no, policy);
        sink(std::move(r), line_no);
    }
}

inline std::vector<PatentRecord> load_corpus(const std::filesystem::path& path,
                                             RecordFormat format,
                                             const IngestPolicy& policy = {}) {
    std::vector<PatentRecord> records;
    std::unordered_map<std::string, std::size_t> first_line;
    for_each_record(path, format, policy, [&](PatentRecord&& r, std::size_t line_no) {
        auto [it, inserted] = first_line.emplace(r.id, line_no);
        if (!inserted)
            throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + r.id +
                            "' (first seen on line " + std::to_string(it->second) + ")");
        records.push_back(std::move(r));
    });
    return records;
}

inline nlohmann::json record_to_json(const PatentRecord& r) {
    nlohmann::json j{{"id", r.id},   {"title", r.title}, {"abstract", r.abstract},
                     {"ipc", r.ipc}, {"cpc", r.cpc},     {"uspc", r.uspc},
                     {"valid", r.valid}};
    if (!r.publication_date.empty()) j["date"] = r.publication_date;
    return j;
}

inline void save_records_jsonl(const std::filesystem::path& path,
                               const std::vector<PatentRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write record file: " + path.string());
    for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

struct DatasetManifest {
    std::uint64_t seed = 0;
    double valid_freq_threshold = 0.0;
    double emergence_ratio_threshold = 0.0;
    std::set<std::string> important_codes;
};

// Writes train/validation/test record files plus a provenance manifest.
inline void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split,
                          const DatasetManifest& manifest) {
    std::filesystem::create_directories(dir);
    save_records_jsonl(dir / "train.jsonl", split.train);
    save_records_jsonl(dir / "validation.jsonl", split.validation);
    save_records_jsonl(dir / "test.jsonl", split.test);
    nlohmann::json j{
        {"seed", manifest.seed},
        {"valid_freq_threshold", manifest.valid_freq_threshold},
        {"emergence_ratio_threshold", manifest.emergence_ratio_threshold},
        {"important_codes",
         std::vector<std::string>(manifest.important_codes.begin(),
                                  manifest.important_codes.end())},
        {"counts",
         {{"train", split.train.size()},
          {"validation", split.validation.size()},
          {"test", split.test.size()},
          {"train_positives", split.train_positives},
          {"validation_positives", split.validation_positives},
          {"test_positives", split.test_positives}}}};
    std::ofstream out(dir / "dataset_manifest.json");
    if (!out) throw DataError("cannot write dataset manifest in " + dir.string());
    out << j.dump(2) << '\n';
}

}  // namespace patentscape::corpus
