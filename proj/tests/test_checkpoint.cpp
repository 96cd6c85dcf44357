#include <doctest.h>

#include <vector>

#include "ptlm/checkpoint.hpp"
#include "test_util.hpp"

using namespace ptlm;

namespace {

ParameterSet sample_params(uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.vocab_size = 20;
    cfg.max_positions = 24;
    RngState rng(seed);
    return init_params<float>(cfg, rng);
}

}  // namespace

TEST_CASE("sha256 matches published reference digests") {
    // both values are the standard published SHA-256 test vectors
    CHECK(sha256_hex(nullptr, 0) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    const std::string abc = "abc";
    CHECK(sha256_hex(reinterpret_cast<const unsigned char*>(abc.data()), abc.size()) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round-trip is bitwise exact") {
    TempDir dir;
    ParameterSet params = sample_params(77);
    const std::string path = dir.file("model.ptlm");
    const std::string hash = save_checkpoint(params, path);
    CHECK(hash == file_digest(path));

    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.content_hash == hash);
    CHECK(loaded.params.config == params.config);
    REQUIRE(loaded.params.tensors.size() == params.tensors.size());
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        CHECK(loaded.params.tensors[i].first == params.tensors[i].first);
        const auto& a = params.tensors[i].second.values();
        const auto& b = loaded.params.tensors[i].second.values();
        REQUIRE(a.size() == b.size());
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    }

    // save → load → save produces byte-identical files
    const std::string path2 = dir.file("model2.ptlm");
    save_checkpoint(loaded.params, path2);
    CHECK(read_file_bytes(path) == read_file_bytes(path2));
}

TEST_CASE("a loaded checkpoint forwards bitwise like the original") {
    TempDir dir;
    ParameterSet params = sample_params(78);
    const std::string path = dir.file("model.ptlm");
    save_checkpoint(params, path);
    LoadedCheckpoint loaded = load_checkpoint(path);

    std::vector<int> ids{2, 7, 11, 4, 3};
    ForwardOutput a = forward<float>(nullptr, params, ids);
    ForwardOutput b = forward<float>(nullptr, loaded.params, ids);
    REQUIRE(a.logits.numel() == b.logits.numel());
    for (std::size_t i = 0; i < a.logits.numel(); ++i) CHECK(a.logits.values()[i] == b.logits.values()[i]);
}

TEST_CASE("flipping a payload byte changes the content hash") {
    TempDir dir;
    ParameterSet params = sample_params(79);
    const std::string path = dir.file("model.ptlm");
    const std::string hash = save_checkpoint(params, path);

    std::vector<unsigned char> bytes = read_file_bytes(path);
    bytes[bytes.size() - 5] ^= 0x40;  // inside the last tensor's payload
    const std::string flipped = dir.file("flipped.ptlm");
    write_file_bytes(flipped, bytes);

    CHECK(file_digest(flipped) != hash);
    LoadedCheckpoint loaded = load_checkpoint(flipped);  // still parseable
    CHECK(loaded.content_hash != hash);
}

TEST_CASE("format errors name the offending byte offset") {
    TempDir dir;
    ParameterSet params = sample_params(80);
    const std::string path = dir.file("model.ptlm");
    save_checkpoint(params, path);
    std::vector<unsigned char> bytes = read_file_bytes(path);

    SUBCASE("bad magic") {
        bytes[0] = 'X';
        write_file_bytes(dir.file("bad.ptlm"), bytes);
        try {
            load_checkpoint(dir.file("bad.ptlm"));
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("magic") != std::string::npos);
            CHECK(std::string(e.what()).find("byte 0") != std::string::npos);
        }
    }

    SUBCASE("unsupported version") {
        bytes[4] = 9;
        write_file_bytes(dir.file("bad.ptlm"), bytes);
        try {
            load_checkpoint(dir.file("bad.ptlm"));
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("version") != std::string::npos);
            CHECK(std::string(e.what()).find("byte 4") != std::string::npos);
        }
    }

    SUBCASE("truncation mid-payload") {
        bytes.resize(bytes.size() - 3);
        write_file_bytes(dir.file("bad.ptlm"), bytes);
        try {
            load_checkpoint(dir.file("bad.ptlm"));
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("truncated at byte") != std::string::npos);
        }
    }

    SUBCASE("trailing garbage") {
        bytes.push_back(0xAA);
        write_file_bytes(dir.file("bad.ptlm"), bytes);
        CHECK_THROWS_AS(load_checkpoint(dir.file("bad.ptlm")), FormatError);
    }
}

TEST_CASE("config json round-trips") {
    ModelConfig cfg;
    cfg.n_layers = 3;
    cfg.d_model = 12;
    cfg.n_heads = 3;
    cfg.d_ff = 20;
    cfg.vocab_size = 55;
    cfg.max_positions = 40;
    CHECK(model_config_from_json(model_config_json(cfg)) == cfg);
    CHECK_THROWS_AS(model_config_from_json("not json"), FormatError);
    CHECK_THROWS_AS(model_config_from_json("{\"n_layers\":1}"), FormatError);
}

TEST_CASE("missing checkpoint files are reported as input errors") {
    TempDir dir;
    CHECK_THROWS_AS(load_checkpoint(dir.file("absent.ptlm")), InputError);
}
