#pragma once

// RFWT weight container, little-endian:
//   "RFWT" | u32 version=1 | config block | u32 tensor_count | tensors...
// config block: n_layers, d_model, n_q_heads, n_kv_heads, head_dim, d_ff,
//   vocab_size as u64; rope_theta, rms_eps as f64; max_positions as u64.
// tensor: u16 name_len | name | u8 dtype (0=f32, 1=f16) | u8 rank |
//   u64 dims[rank] | zero padding to an 8-byte file offset | row-major payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "reform/error.hpp"
#include "reform/half.hpp"
#include "reform/model_config.hpp"
#include "reform/weights.hpp"

namespace reform {

enum class DType : std::uint8_t { f32 = 0, f16 = 1 };

inline constexpr std::uint32_t kRfwtVersion = 1;

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void align(std::size_t a) {
        while (buf_.size() % a != 0) {
            buf_.push_back(0);
        }
    }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw CorruptFileError(std::string("truncated file while reading ") + what);
        }
    }
    std::uint8_t u8() {
        need(1, "u8");
        return data_[pos_++];
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n, "string");
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    void skip_to_alignment(std::size_t a) {
        const std::size_t pad = (a - pos_ % a) % a;
        need(pad, "alignment padding");
        pos_ += pad;
    }

private:
    std::uint64_t get_le(int n) {
        need(static_cast<std::size_t>(n), "integer");
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to '" + path.string() + "'");
    }
}

} // namespace detail

inline std::vector<std::uint8_t> encode_rfwt(const ModelConfig& config, const ModelWeights& weights,
                                             DType dtype = DType::f32) {
    detail::ByteWriter w;
    w.bytes("RFWT", 4);
    w.u32(kRfwtVersion);
    w.u64(config.n_layers);
    w.u64(config.d_model);
    w.u64(config.n_q_heads);
    w.u64(config.n_kv_heads);
    w.u64(config.head_dim);
    w.u64(config.d_ff);
    w.u64(config.vocab_size);
    w.f64(config.rope_theta);
    w.f64(config.rms_eps);
    w.u64(config.max_positions);

    // Schema order first, then any extra tensors by name.
    std::vector<const std::pair<const std::string, Tensor>*> ordered;
    std::set<std::string> placed;
    for (const auto& decl : tensor_schema(config)) {
        if (auto it = weights.find(decl.name); it != weights.end()) {
            ordered.push_back(&*it);
            placed.insert(decl.name);
        }
    }
    for (const auto& kv : weights) {
        if (!placed.contains(kv.first)) {
            ordered.push_back(&kv);
        }
    }

    w.u32(static_cast<std::uint32_t>(ordered.size()));
    for (const auto* entry : ordered) {
        const auto& [name, t] = *entry;
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(static_cast<std::uint8_t>(dtype));
        w.u8(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) {
            w.u64(d);
        }
        w.align(8);
        for (float v : t.values.flat()) {
            if (dtype == DType::f32) {
                w.f32(v);
            } else {
                w.u16(float_to_half(v));
            }
        }
    }
    return w.take();
}

inline std::pair<ModelConfig, ModelWeights> decode_rfwt(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader r(bytes.data(), bytes.size());
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "RFWT", 4) != 0) {
        throw FormatError("bad magic: not an RFWT file");
    }
    r.str(4);
    const auto version = r.u32();
    if (version != kRfwtVersion) {
        throw FormatError("unsupported RFWT version " + std::to_string(version));
    }
    ModelConfig c;
    c.n_layers = r.u64();
    c.d_model = r.u64();
    c.n_q_heads = r.u64();
    c.n_kv_heads = r.u64();
    c.head_dim = r.u64();
    c.d_ff = r.u64();
    c.vocab_size = r.u64();
    c.rope_theta = r.f64();
    c.rms_eps = r.f64();
    c.max_positions = r.u64();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid config block: ") + e.what());
    }

    ModelWeights weights;
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.u16();
        std::string name = r.str(name_len);
        const auto dtype = r.u8();
        if (dtype > 1) {
            throw FormatError("tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
        }
        const auto rank = r.u8();
        if (rank < 1 || rank > 2) {
            throw FormatError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
        }
        std::vector<std::uint64_t> dims(rank);
        std::uint64_t count_elems = 1;
        for (auto& d : dims) {
            d = r.u64();
            if (d != 0 && count_elems > UINT64_MAX / d) {
                throw CorruptFileError("tensor '" + name + "' dimensions overflow");
            }
            count_elems *= d;
        }
        r.skip_to_alignment(8);
        const std::size_t elem_size = dtype == 0 ? 4 : 2;
        if (count_elems > r.remaining() / elem_size) {
            throw CorruptFileError("tensor '" + name + "' payload shorter than its declared shape");
        }
        Tensor t = Tensor::zeros(dims);
        for (auto& v : t.values.flat()) {
            v = dtype == 0 ? r.f32() : half_to_float(r.u16());
        }
        if (!weights.emplace(std::move(name), std::move(t)).second) {
            throw CorruptFileError("duplicate tensor name in file");
        }
    }
    if (r.remaining() != 0) {
        throw CorruptFileError("trailing bytes after last tensor");
    }
    validate_weights(c, weights);
    return {c, std::move(weights)};
}

inline void save_weights(const std::filesystem::path& path, const ModelConfig& config,
                         const ModelWeights& weights, DType dtype = DType::f32) {
    detail::write_file_bytes(path, encode_rfwt(config, weights, dtype));
}

inline std::pair<ModelConfig, ModelWeights> load_weights(const std::filesystem::path& path) {
    return decode_rfwt(detail::read_file_bytes(path));
}

} // namespace reform
