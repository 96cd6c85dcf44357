#include "ptlm/checkpoint.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ptlm {

std::string sha256_hex(const unsigned char* data, std::size_t n) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, n, digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256: digest computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(const std::vector<unsigned char>& bytes) {
    return sha256_hex(bytes.data(), bytes.size());
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path + " for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + path);
}

std::string file_digest(const std::string& path) {
    return sha256_hex(read_file_bytes(path));
}

void ByteWriter::f32(float v) {
    u32(std::bit_cast<std::uint32_t>(v));
}

void ByteWriter::bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
}

void ByteReader::need(std::size_t n, const char* what) const {
    if (off_ + n > size_)
        throw FormatError(std::string("truncated at byte ") + std::to_string(off_) + " while reading " + what);
}

std::uint8_t ByteReader::u8(const char* what) {
    need(1, what);
    return data_[off_++];
}

std::uint32_t ByteReader::u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
}

float ByteReader::f32(const char* what) {
    return std::bit_cast<float>(u32(what));
}

std::string ByteReader::str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + off_), n);
    off_ += n;
    return s;
}

void ByteReader::raw(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, data_ + off_, n);
    off_ += n;
}

std::string model_config_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["n_layers"] = cfg.n_layers;
    j["d_model"] = cfg.d_model;
    j["n_heads"] = cfg.n_heads;
    j["d_ff"] = cfg.d_ff;
    j["vocab_size"] = cfg.vocab_size;
    j["max_positions"] = cfg.max_positions;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config header is not valid JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.n_layers = j.at("n_layers").get<int>();
        cfg.d_model = j.at("d_model").get<int>();
        cfg.n_heads = j.at("n_heads").get<int>();
        cfg.d_ff = j.at("d_ff").get<int>();
        cfg.vocab_size = j.at("vocab_size").get<int>();
        cfg.max_positions = j.at("max_positions").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config header missing field: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

namespace {

constexpr char kMagic[4] = {'P', 'T', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<unsigned char> checkpoint_bytes(const ParameterSet& params) {
    ByteWriter w;
    w.str(std::string(kMagic, 4));
    w.u32(kVersion);
    const std::string header = model_config_json(params.config);
    w.u32(static_cast<std::uint32_t>(header.size()));
    w.str(header);

    std::vector<std::pair<std::string, Tensor>> sorted(params.tensors.begin(), params.tensors.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [name, t] : sorted) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.str(name);
        w.u8(static_cast<std::uint8_t>(t.shape().size()));
        for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.values()) w.f32(v);
    }
    return w.data();
}

std::string param_digest(const ParameterSet& params) { return sha256_hex(checkpoint_bytes(params)); }

std::string save_checkpoint(const ParameterSet& params, const std::string& path) {
    const std::vector<unsigned char> bytes = checkpoint_bytes(params);
    write_file_bytes(path, bytes);
    return sha256_hex(bytes);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file_bytes(path);
    ByteReader r(bytes.data(), bytes.size());

    const std::string magic = r.str(4, "magic");
    if (magic != std::string(kMagic, 4))
        throw FormatError("bad magic at byte 0 of " + path + ", not a checkpoint file");
    const std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at byte 4");
    const std::uint32_t header_len = r.u32("header length");
    const std::string header = r.str(header_len, "config header");

    LoadedCheckpoint out;
    out.params.config = model_config_from_json(header);

    // expected layout, in the file's lexicographic order
    auto layout = tensor_layout(out.params.config);
    std::sort(layout.begin(), layout.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<std::pair<std::string, Tensor>> read_tensors;
    for (const auto& [want_name, want_shape] : layout) {
        const std::size_t at = r.offset();
        const std::uint32_t name_len = r.u32("tensor name length");
        const std::string name = r.str(name_len, "tensor name");
        if (name != want_name)
            throw FormatError("tensor at byte " + std::to_string(at) + " is named " + name + ", expected " +
                              want_name);
        const std::uint8_t rank = r.u8("tensor rank");
        if (rank != want_shape.size())
            throw FormatError("tensor " + name + " at byte " + std::to_string(at) + " has rank " +
                              std::to_string(rank) + ", expected " + std::to_string(want_shape.size()));
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (int i = 0; i < rank; ++i) {
            shape[i] = static_cast<int>(r.u32("tensor dimension"));
            numel *= static_cast<std::size_t>(shape[i]);
        }
        if (shape != want_shape)
            throw FormatError("tensor " + name + " at byte " + std::to_string(at) + " has shape " +
                              Tensor::shape_string(shape) + ", expected " + Tensor::shape_string(want_shape));
        Tensor t = Tensor::zeros(shape);
        for (std::size_t i = 0; i < numel; ++i) t.values()[i] = r.f32("tensor payload");
        read_tensors.emplace_back(name, t);
    }
    if (r.remaining() != 0)
        throw FormatError(std::to_string(r.remaining()) + " unexpected trailing bytes at byte " +
                          std::to_string(r.offset()));

    // restore construction order
    for (const auto& [name, shape] : tensor_layout(out.params.config)) {
        for (auto& [n, t] : read_tensors)
            if (n == name) {
                out.params.tensors.emplace_back(name, t);
                break;
            }
    }
    out.content_hash = sha256_hex(bytes);
    return out;
}

}  // namespace ptlm
