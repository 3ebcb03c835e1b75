#pragma once

// Model file container:
//
//   CPDKIT-MODEL\n
//   version <int>\n
//   <ModelConfig as one line of JSON>\n
//   params <count>\n
//   <count little-endian IEEE-754 binary64 values, in ParamLayout order>
//
// Nothing may follow the parameter block.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cpdkit/model.hpp"

namespace cpdkit {

inline constexpr const char *kModelMagic = "CPDKIT-MODEL";
inline constexpr int kModelFormatVersion = 1;

class UnsupportedVersionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline nlohmann::json to_json(const ModelConfig &c) {
    return {{"input_dim", c.input_dim},
            {"hidden_dim", c.hidden_dim},
            {"fc_dims", {c.fc_dims[0], c.fc_dims[1]}},
            {"cell", to_string(c.cell)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json &j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<Index>();
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    if (j.contains("fc_dims")) {
        const auto &fc = j.at("fc_dims");
        if (!fc.is_array() || fc.size() != 2) throw std::invalid_argument("fc_dims must list two sizes");
        c.fc_dims = {fc[0].get<Index>(), fc[1].get<Index>()};
    }
    c.cell = parse_cell_kind(j.value("cell", std::string(to_string(c.cell))));
    c.validate();
    return c;
}

namespace detail {

inline void append_le64(std::string &out, double value) {
    auto bits = std::bit_cast<std::uint64_t>(value);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(bits & 0xffu));
        bits >>= 8;
    }
}

inline double read_le64(const char *data) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) {
        bits = (bits << 8) | static_cast<unsigned char>(data[i]);
    }
    return std::bit_cast<double>(bits);
}

// Cursor over the raw file bytes that reports positions in errors.
class ByteReader {
public:
    explicit ByteReader(const std::string &bytes) : bytes_(bytes) {}

    std::string line(const char *what) {
        const auto end = bytes_.find('\n', pos_);
        if (end == std::string::npos) fail(std::string("unterminated ") + what);
        std::string out = bytes_.substr(pos_, end - pos_);
        pos_ = end + 1;
        return out;
    }

    const char *take(std::size_t n, const char *what) {
        if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what);
        const char *p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::size_t offset() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string &message) const {
        throw ParseError("model file: " + message + " at byte offset " + std::to_string(pos_));
    }

private:
    const std::string &bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_model(const DetectorModel &model) {
    std::string out;
    out += kModelMagic;
    out += "\nversion " + std::to_string(kModelFormatVersion) + "\n";
    out += to_json(model.config()).dump() + "\n";
    out += "params " + std::to_string(model.parameter_count()) + "\n";
    for (Index i = 0; i < model.parameter_count(); ++i) detail::append_le64(out, model.params()[i]);
    return out;
}

inline DetectorModel deserialize_model(const std::string &bytes) {
    detail::ByteReader in(bytes);
    if (in.line("magic") != kModelMagic) {
        throw ParseError("model file: missing CPDKIT-MODEL magic at byte offset 0");
    }
    const std::size_t version_offset = in.offset();
    const std::string version_line = in.line("version line");
    int version = 0;
    if (std::sscanf(version_line.c_str(), "version %d", &version) != 1) {
        throw ParseError("model file: malformed version line at byte offset " + std::to_string(version_offset));
    }
    if (version != kModelFormatVersion) {
        throw UnsupportedVersionError("unsupported model format version " + std::to_string(version) + " (expected " +
                                      std::to_string(kModelFormatVersion) + ")");
    }
    const std::size_t config_offset = in.offset();
    ModelConfig config;
    try {
        config = model_config_from_json(nlohmann::json::parse(in.line("config line")));
    } catch (const nlohmann::json::exception &e) {
        throw ParseError("model file: bad config at byte offset " + std::to_string(config_offset) + ": " + e.what());
    }
    const std::size_t count_offset = in.offset();
    long long count = -1;
    if (std::sscanf(in.line("parameter header").c_str(), "params %lld", &count) != 1 || count < 0) {
        throw ParseError("model file: malformed parameter header at byte offset " + std::to_string(count_offset));
    }
    if (count != ParamLayout(config).total) {
        throw ParseError("model file: parameter count " + std::to_string(count) + " does not match config (" +
                         std::to_string(ParamLayout(config).total) + ") at byte offset " +
                         std::to_string(count_offset));
    }
    Vector params(count);
    const char *raw = in.take(static_cast<std::size_t>(count) * 8, "parameter block");
    for (long long i = 0; i < count; ++i) params[i] = detail::read_le64(raw + 8 * i);
    if (!in.at_end()) in.fail("trailing bytes after parameter block");
    return {config, std::move(params)};
}

inline void save_model(const DetectorModel &model, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    const std::string bytes = serialize_model(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline DetectorModel load_model(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

/// Loads a model and checks it against the configuration the caller expects.
inline DetectorModel load_model(const std::filesystem::path &path, const ModelConfig &expected) {
    auto model = load_model(path);
    if (!(model.config() == expected)) {
        throw std::runtime_error("model '" + path.string() + "' has config " + to_json(model.config()).dump() +
                                 ", expected " + to_json(expected).dump());
    }
    return model;
}

} // namespace cpdkit
