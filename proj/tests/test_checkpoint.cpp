#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bsel/checkpoint.hpp"
#include "bsel/model.hpp"
#include "helpers.hpp"

using namespace bsel;

namespace {

std::string temp_path(const char* tag) {
    return (std::filesystem::temp_directory_path() / (std::string("bsel_test_") + tag + ".bsck"))
        .string();
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
}

ToyModel sample_model() {
    ModelConfig cfg;
    cfg.embed_dim = 6;
    cfg.context = 4;
    cfg.hidden = {10, 8};
    ToyModel m = ToyModel::init(cfg, 77);
    m.corpus_seed = 424242;
    // give it one finalized block so pair layers round-trip too
    auto& dl = std::get<DenseLinear>(m.blocks[1]);
    FactorizedLinear fl = FactorizedLinear::from_dense(dl.weight, dl.bias, 0, 78);
    fl.prune_by_mass(0.8);
    FactorizedLinear::Finalized fin = fl.finalize();
    PairLinear pl;
    pl.first = std::move(fin.first_weight);
    pl.second = std::move(fin.second_weight);
    pl.bias = std::move(fin.bias);
    m.blocks[1] = std::move(pl);
    return m;
}

// recompute the trailing checksum after editing header bytes
void refresh_crc(std::vector<std::uint8_t>& buf) {
    const std::size_t body = buf.size() - 4;
    const std::uint32_t crc = crc32(buf.data(), body);
    for (int i = 0; i < 4; ++i) buf[body + i] = static_cast<std::uint8_t>((crc >> (8 * i)) & 0xFF);
}

}  // namespace

TEST_CASE("crc32 reference vector") {
    const char* s = "123456789";
    REQUIRE(crc32(reinterpret_cast<const std::uint8_t*>(s), 9) == 0xCBF43926u);
}

TEST_CASE("checkpoint round trip is bitwise exact") {
    ToyModel m = sample_model();
    const std::string path = temp_path("roundtrip");
    save_checkpoint(path, m);
    ToyModel back = load_checkpoint(path);

    REQUIRE(back.config.vocab == m.config.vocab);
    REQUIRE(back.config.embed_dim == m.config.embed_dim);
    REQUIRE(back.config.context == m.config.context);
    REQUIRE(back.config.hidden == m.config.hidden);
    REQUIRE(back.corpus_seed == m.corpus_seed);
    REQUIRE(max_abs_diff(back.embedding, m.embedding) == 0.0);
    REQUIRE(max_abs_diff(std::get<DenseLinear>(back.blocks[0]).weight,
                         std::get<DenseLinear>(m.blocks[0]).weight) == 0.0);
    REQUIRE(std::get<DenseLinear>(back.blocks[0]).bias ==
            std::get<DenseLinear>(m.blocks[0]).bias);
    REQUIRE(max_abs_diff(std::get<PairLinear>(back.blocks[1]).first,
                         std::get<PairLinear>(m.blocks[1]).first) == 0.0);
    REQUIRE(max_abs_diff(std::get<PairLinear>(back.blocks[1]).second,
                         std::get<PairLinear>(m.blocks[1]).second) == 0.0);
    REQUIRE(max_abs_diff(back.output.weight, m.output.weight) == 0.0);
    REQUIRE(back.output.bias == m.output.bias);

    // saving the loaded model reproduces the same bytes
    const std::string path2 = temp_path("roundtrip2");
    save_checkpoint(path2, back);
    REQUIRE(read_bytes(path) == read_bytes(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("truncated checkpoint is rejected") {
    ToyModel m = sample_model();
    const std::string path = temp_path("trunc");
    save_checkpoint(path, m);
    std::vector<std::uint8_t> buf = read_bytes(path);
    buf.resize(buf.size() / 2);
    write_bytes(path, buf);
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
    buf.resize(5);
    write_bytes(path, buf);
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("too short"));
    std::remove(path.c_str());
}

TEST_CASE("flipped payload byte reports a crc mismatch naming the region") {
    ToyModel m = sample_model();
    const std::string path = temp_path("flip");
    save_checkpoint(path, m);
    std::vector<std::uint8_t> buf = read_bytes(path);
    buf[buf.size() / 2] ^= 0x40;
    write_bytes(path, buf);
    try {
        load_checkpoint(path);
        FAIL("corrupted checkpoint loaded");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("crc mismatch") != std::string::npos);
        REQUIRE(msg.find("bytes [0,") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("wrong magic and wrong version are distinct errors") {
    ToyModel m = sample_model();
    std::vector<std::uint8_t> good = encode_tensors(model_to_tensors(m));

    std::vector<std::uint8_t> bad_magic = good;
    bad_magic[0] = 'X';
    refresh_crc(bad_magic);
    REQUIRE_THROWS_WITH(decode_tensors(bad_magic),
                        Catch::Matchers::ContainsSubstring("magic"));

    std::vector<std::uint8_t> bad_version = good;
    bad_version[4] = 9;
    refresh_crc(bad_version);
    REQUIRE_THROWS_WITH(decode_tensors(bad_version),
                        Catch::Matchers::ContainsSubstring("version"));
}

TEST_CASE("every single-byte corruption is detected") {
    std::vector<NamedTensor> tensors;
    NamedTensor t;
    t.name = "w";
    t.dims = {4, 3};
    t.data = test_helpers::random_vector(12, 3);
    tensors.push_back(t);
    std::vector<std::uint8_t> good = encode_tensors(tensors);
    for (std::size_t i = 0; i < good.size(); ++i) {
        std::vector<std::uint8_t> bad = good;
        bad[i] ^= 0x01;
        REQUIRE_THROWS(decode_tensors(bad));
    }
}

TEST_CASE("f32 tensors load widened and round-trip their bytes") {
    NamedTensor t;
    t.name = "half";
    t.dtype = 0;
    t.dims = {5};
    t.data = {1.5, -2.25, 0.125, 3.0, -0.5};  // exactly representable in f32
    std::vector<std::uint8_t> buf = encode_tensors({t});
    std::vector<NamedTensor> back = decode_tensors(buf);
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].dtype == 0);
    REQUIRE(back[0].data == t.data);
    REQUIRE(encode_tensors(back) == buf);
}

TEST_CASE("factorized layers cannot be checkpointed") {
    ToyModel m = sample_model();
    auto& dl = std::get<DenseLinear>(m.blocks[0]);
    m.blocks[0] = FactorizedLinear::from_dense(dl.weight, dl.bias, 0, 5);
    REQUIRE_THROWS_WITH(model_to_tensors(m),
                        Catch::Matchers::ContainsSubstring("finalize"));
}
