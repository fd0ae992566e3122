#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bsel/model.hpp"

namespace bsel {

// CRC-32 (IEEE 802.3, reflected, init/final 0xFFFFFFFF)
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

// Tensor container format ("BSCK"):
//   magic "BSCK" | version u16 | tensor count u32 |
//   per tensor: name len u16, name bytes, dtype u8 (0 = f32, 1 = f64),
//               ndim u8, dims u64 each, row-major little-endian payload |
//   trailing CRC32 of all preceding bytes.
struct NamedTensor {
    std::string name;
    std::uint8_t dtype = 1;  // 0 = f32, 1 = f64
    std::vector<std::uint64_t> dims;
    std::vector<double> data;  // always widened to double in memory

    std::size_t count() const {
        std::size_t n = 1;
        for (std::uint64_t d : dims) n *= static_cast<std::size_t>(d);
        return n;
    }
};

namespace ckpt {

constexpr char magic[4] = {'B', 'S', 'C', 'K'};
constexpr std::uint16_t version = 1;

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xFF));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

struct Reader {
    const std::uint8_t* p;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > len)
            throw std::runtime_error("checkpoint: truncated at byte " + std::to_string(pos));
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
};

}  // namespace ckpt

inline std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), ckpt::magic, ckpt::magic + 4);
    ckpt::put_u16(buf, ckpt::version);
    ckpt::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
        if (t.data.size() != t.count())
            throw std::invalid_argument("checkpoint: tensor " + t.name + " dims/data mismatch");
        ckpt::put_u16(buf, static_cast<std::uint16_t>(t.name.size()));
        buf.insert(buf.end(), t.name.begin(), t.name.end());
        buf.push_back(t.dtype);
        buf.push_back(static_cast<std::uint8_t>(t.dims.size()));
        for (std::uint64_t d : t.dims) ckpt::put_u64(buf, d);
        if (t.dtype == 1) {
            for (double v : t.data) ckpt::put_u64(buf, std::bit_cast<std::uint64_t>(v));
        } else if (t.dtype == 0) {
            for (double v : t.data)
                ckpt::put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            throw std::invalid_argument("checkpoint: unknown dtype code " +
                                        std::to_string(t.dtype));
        }
    }
    const std::uint32_t crc = crc32(buf.data(), buf.size());
    ckpt::put_u32(buf, crc);
    return buf;
}

inline std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& buf) {
    if (buf.size() < 14)
        throw std::runtime_error("checkpoint: file too short (" + std::to_string(buf.size()) +
                                 " bytes)");
    // integrity first: any corrupted byte anywhere is reported as a CRC
    // mismatch over the covered region
    const std::size_t body = buf.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(buf[body + i]) << (8 * i);
    const std::uint32_t computed = crc32(buf.data(), body);
    if (stored != computed) {
        char msg[160];
        std::snprintf(msg, sizeof(msg),
                      "checkpoint: crc mismatch over bytes [0, %zu): stored %08x, computed %08x",
                      body, stored, computed);
        throw std::runtime_error(msg);
    }

    ckpt::Reader r{buf.data(), body};
    char m[4];
    r.need(4);
    std::memcpy(m, r.p, 4);
    r.pos = 4;
    if (std::memcmp(m, ckpt::magic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic, not a BSCK file");
    const std::uint16_t ver = r.u16();
    if (ver != ckpt::version)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ver));

    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint16_t name_len = r.u16();
        r.need(name_len);
        t.name.assign(reinterpret_cast<const char*>(r.p + r.pos), name_len);
        r.pos += name_len;
        t.dtype = r.u8();
        const std::uint8_t ndim = r.u8();
        t.dims.resize(ndim);
        for (std::uint8_t d = 0; d < ndim; ++d) t.dims[d] = r.u64();
        const std::size_t n = t.count();
        t.data.resize(n);
        if (t.dtype == 1) {
            for (std::size_t k = 0; k < n; ++k) t.data[k] = std::bit_cast<double>(r.u64());
        } else if (t.dtype == 0) {
            for (std::size_t k = 0; k < n; ++k)
                t.data[k] = static_cast<double>(std::bit_cast<float>(r.u32()));
        } else {
            throw std::runtime_error("checkpoint: unknown dtype code " +
                                     std::to_string(t.dtype) + " for tensor " + t.name);
        }
        tensors.push_back(std::move(t));
    }
    if (r.pos != body)
        throw std::runtime_error("checkpoint: trailing bytes after tensor data");
    return tensors;
}

inline void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
    const std::vector<std::uint8_t> buf = encode_tensors(tensors);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp + " for writing");
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        if (!out) throw std::runtime_error("checkpoint: short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<NamedTensor> read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    return decode_tensors(buf);
}

namespace detail_ckpt {

inline NamedTensor tensor2d(std::string name, const Matrix& m) {
    NamedTensor t;
    t.name = std::move(name);
    t.dims = {m.rows(), m.cols()};
    t.data = m.storage();
    return t;
}

inline NamedTensor tensor1d(std::string name, const std::vector<double>& v) {
    NamedTensor t;
    t.name = std::move(name);
    t.dims = {v.size()};
    t.data = v;
    return t;
}

}  // namespace detail_ckpt

// Models are stored as plain named tensors; block structure is recovered
// from which names are present. Factorized (mid-compression) layers are
// deliberately not serializable: finalize first.
inline std::vector<NamedTensor> model_to_tensors(const ToyModel& model) {
    using detail_ckpt::tensor1d;
    using detail_ckpt::tensor2d;
    std::vector<NamedTensor> out;

    NamedTensor meta;
    meta.name = "meta";
    meta.dims = {8};
    meta.data = {1.0,
                 static_cast<double>(model.config.vocab),
                 static_cast<double>(model.config.embed_dim),
                 static_cast<double>(model.config.context),
                 static_cast<double>(model.blocks.size()),
                 model.config.pool == PoolMode::Concat ? 0.0 : 1.0,
                 static_cast<double>(model.corpus_seed),
                 0.0};
    out.push_back(std::move(meta));

    out.push_back(tensor2d("embed.weight", model.embedding));
    for (std::size_t k = 0; k < model.blocks.size(); ++k) {
        const std::string bn = block_name(k);
        if (const auto* dl = std::get_if<DenseLinear>(&model.blocks[k])) {
            out.push_back(tensor2d(bn + ".weight", dl->weight));
            out.push_back(tensor1d(bn + ".bias", dl->bias));
        } else if (const auto* pl = std::get_if<PairLinear>(&model.blocks[k])) {
            out.push_back(tensor2d(bn + ".first.weight", pl->first));
            out.push_back(tensor2d(bn + ".second.weight", pl->second));
            out.push_back(tensor1d(bn + ".second.bias", pl->bias));
        } else {
            throw std::invalid_argument("checkpoint: " + bn +
                                        " is mid-compression; finalize before saving");
        }
    }
    out.push_back(tensor2d("out.weight", model.output.weight));
    out.push_back(tensor1d("out.bias", model.output.bias));
    return out;
}

inline ToyModel model_from_tensors(const std::vector<NamedTensor>& tensors) {
    auto find = [&](const std::string& name) -> const NamedTensor* {
        for (const NamedTensor& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    };
    auto require = [&](const std::string& name) -> const NamedTensor& {
        const NamedTensor* t = find(name);
        if (!t) throw std::runtime_error("checkpoint: missing tensor " + name);
        return *t;
    };
    auto as_matrix = [](const NamedTensor& t) {
        if (t.dims.size() != 2)
            throw std::runtime_error("checkpoint: tensor " + t.name + " is not 2-d");
        return Matrix(static_cast<std::size_t>(t.dims[0]), static_cast<std::size_t>(t.dims[1]),
                      t.data);
    };

    const NamedTensor& meta = require("meta");
    if (meta.data.size() < 8 || meta.data[0] != 1.0)
        throw std::runtime_error("checkpoint: unrecognized meta layout");

    ToyModel m;
    m.config.vocab = static_cast<std::size_t>(meta.data[1]);
    m.config.embed_dim = static_cast<std::size_t>(meta.data[2]);
    m.config.context = static_cast<std::size_t>(meta.data[3]);
    const std::size_t n_blocks = static_cast<std::size_t>(meta.data[4]);
    m.config.pool = meta.data[5] == 0.0 ? PoolMode::Concat : PoolMode::Mean;
    m.corpus_seed = static_cast<std::uint64_t>(meta.data[6]);

    m.embedding = as_matrix(require("embed.weight"));
    m.config.hidden.clear();
    for (std::size_t k = 0; k < n_blocks; ++k) {
        const std::string bn = block_name(k);
        if (const NamedTensor* w = find(bn + ".weight")) {
            DenseLinear dl;
            dl.weight = as_matrix(*w);
            dl.bias = require(bn + ".bias").data;
            m.config.hidden.push_back(dl.out_dim());
            m.blocks.push_back(std::move(dl));
        } else {
            PairLinear pl;
            pl.first = as_matrix(require(bn + ".first.weight"));
            pl.second = as_matrix(require(bn + ".second.weight"));
            pl.bias = require(bn + ".second.bias").data;
            m.config.hidden.push_back(pl.out_dim());
            m.blocks.push_back(std::move(pl));
        }
    }
    DenseLinear out;
    out.weight = as_matrix(require("out.weight"));
    out.bias = require("out.bias").data;
    m.output = std::move(out);
    return m;
}

inline void save_checkpoint(const std::string& path, const ToyModel& model) {
    write_tensor_file(path, model_to_tensors(model));
}

inline ToyModel load_checkpoint(const std::string& path) {
    return model_from_tensors(read_tensor_file(path));
}

}  // namespace bsel
