#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptlm/model.hpp"

// Bit-exact binary persistence. Checkpoints open with magic "PTLM", version
// 1, then a JSON header (the ModelConfig) and the tensors sorted
// lexicographically by name. All integers are little-endian, payloads are raw
// 32-bit IEEE-754 row-major. The SHA-256 of the file bytes serves as the
// base-model identity everywhere else in the toolkit.

namespace ptlm {

std::string sha256_hex(const unsigned char* data, std::size_t n);
std::string sha256_hex(const std::vector<unsigned char>& bytes);

// Digest of an existing file's bytes.
std::string file_digest(const std::string& path);

// Little-endian byte building/parsing shared by every on-disk format here.
class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
    void f32(float v);
    void bytes(const void* p, std::size_t n);
    void str(const std::string& s) { bytes(s.data(), s.size()); }

    const std::vector<unsigned char>& data() const { return buf_; }

  private:
    std::vector<unsigned char> buf_;
};

class ByteReader {
  public:
    ByteReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

    std::size_t offset() const { return off_; }
    std::size_t remaining() const { return size_ - off_; }

    std::uint8_t u8(const char* what);
    std::uint32_t u32(const char* what);
    float f32(const char* what);
    std::string str(std::size_t n, const char* what);
    void raw(void* out, std::size_t n, const char* what);

  private:
    void need(std::size_t n, const char* what) const;

    const unsigned char* data_;
    std::size_t size_;
    std::size_t off_ = 0;
};

// The exact bytes save_checkpoint would write, for in-memory hashing.
std::vector<unsigned char> checkpoint_bytes(const ParameterSet& params);

// Content hash a parameter set would have on disk, without writing it.
std::string param_digest(const ParameterSet& params);

// Writes the full parameter set; returns the content hash of the bytes written.
std::string save_checkpoint(const ParameterSet& params, const std::string& path);

struct LoadedCheckpoint {
    ParameterSet params;
    std::string content_hash;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);

}  // namespace ptlm
