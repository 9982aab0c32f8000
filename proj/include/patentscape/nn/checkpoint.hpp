#pragma once

// Checkpoint container: a format-version tag, a JSON header describing the
// payload, and the named tensors as raw little-endian doubles. Loading
// reproduces every tensor bit for bit.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "patentscape/error.hpp"
#include "patentscape/nn/tensor.hpp"

namespace patentscape::nn {

inline constexpr char kCheckpointMagic[8] = {'P', 'S', 'C', 'K', 'P', 'T', '0', '1'};

namespace checkpoint_detail {

inline std::uint64_t to_little_endian(std::uint64_t x) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(x);
    return x;
}

inline void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data),
                  static_cast<std::streamsize>(count * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &data[i], sizeof(bits));
            bits = to_little_endian(bits);
            out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
        }
    }
}

inline void read_doubles(std::ifstream& in, double* data, std::size_t count) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint tensor data");
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &data[i], sizeof(bits));
            bits = to_little_endian(bits);
            std::memcpy(&data[i], &bits, sizeof(bits));
        }
    }
}

}  // namespace checkpoint_detail

// header: arbitrary JSON metadata (model config, vocabulary, ...). The
// tensor directory is appended to it under "tensors".
inline void write_container(const std::string& path, nlohmann::json header,
                            const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    nlohmann::json directory = nlohmann::json::array();
    for (const auto& [name, tensor] : tensors) {
        directory.push_back(
            {{"name", name}, {"rows", tensor->rows}, {"cols", tensor->cols}});
    }
    header["format_version"] = 1;
    header["tensors"] = std::move(directory);
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    std::uint64_t len = checkpoint_detail::to_little_endian(header_text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, tensor] : tensors)
        checkpoint_detail::write_doubles(out, tensor->data.data(), tensor->size());
    if (!out) throw DataError("failed while writing checkpoint: " + path);
}

struct Container {
    nlohmann::json header;
    std::map<std::string, Tensor> tensors;
};

inline Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    len = checkpoint_detail::to_little_endian(len);
    std::string header_text(len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated checkpoint header: " + path);

    Container c;
    try {
        c.header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint header in " + path + ": " + e.what());
    }
    if (c.header.value("format_version", 0) != 1)
        throw DataError("unsupported checkpoint format version in " + path);
    for (const auto& entry : c.header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        Tensor t(entry.at("rows").get<std::size_t>(), entry.at("cols").get<std::size_t>());
        checkpoint_detail::read_doubles(in, t.data.data(), t.size());
        c.tensors.emplace(name, std::move(t));
    }
    return c;
}

}  // namespace patentscape::nn
