#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "reform/error.hpp"
#include "reform/half.hpp"
#include "reform/head_spec.hpp"
#include "reform/model.hpp"
#include "reform/rfwt.hpp"
#include "reform/tensor.hpp"

namespace reform {

enum class StorePrecision : std::uint8_t { f32 = 0, f16 = 1 };

inline std::string_view to_string(StorePrecision p) { return p == StorePrecision::f32 ? "f32" : "f16"; }

inline StorePrecision parse_store_precision(std::string_view s) {
    if (s == "f32") return StorePrecision::f32;
    if (s == "f16") return StorePrecision::f16;
    throw ConfigError("unknown embedding precision '" + std::string(s) + "'");
}

// Raw per-spec segments for every token of a chunk: result[s] is
// [chunk_len, dim_s] for specs[s].
inline std::vector<Matrix> extract(const TappedStates& tapped, const std::vector<HeadSpec>& specs) {
    std::vector<Matrix> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) {
        if (spec.projection == Projection::attention) {
            throw ConfigError("attention taps are scores, not per-token embeddings");
        }
        const Matrix* m = tapped.find(spec);
        if (m == nullptr) {
            throw ConfigError("no tapped state for " + format_head_spec(spec));
        }
        out.push_back(*m);
    }
    return out;
}

// Each segment scaled to unit L2 norm (zero segments stay zero), concatenated.
inline std::vector<float> combine(const std::vector<std::span<const float>>& segments) {
    std::vector<float> out;
    for (const auto& seg : segments) {
        const float n = l2_norm(seg);
        for (float v : seg) {
            out.push_back(n > 0.0f ? v / n : 0.0f);
        }
    }
    return out;
}

// Combined vectors for every row of a chunk.
inline Matrix combine_rows(const std::vector<Matrix>& raw) {
    if (raw.empty()) {
        return {};
    }
    std::size_t dim = 0;
    for (const auto& m : raw) dim += m.cols();
    Matrix out(raw.front().rows(), dim);
    std::vector<std::span<const float>> segs(raw.size());
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t s = 0; s < raw.size(); ++s) {
            segs[s] = raw[s].row(r);
        }
        const auto v = combine(segs);
        std::copy(v.begin(), v.end(), out.row(r).begin());
    }
    return out;
}

// Append-only store of combined context embeddings for every input token.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(std::vector<HeadSpec> specs, std::vector<std::size_t> segment_dims, StorePrecision precision)
        : specs_(std::move(specs)), dims_(std::move(segment_dims)), precision_(precision) {
        if (specs_.size() != dims_.size()) {
            throw SchemaError("embedding store: one dimension per spec is required");
        }
        for (auto d : dims_) dim_ += d;
    }

    static EmbeddingStore for_model(const ModelConfig& c, const std::vector<HeadSpec>& specs, StorePrecision p) {
        std::vector<std::size_t> dims;
        for (const auto& s : specs) {
            validate_head_spec(s, c);
            if (s.projection == Projection::attention) {
                throw SchemaError("attention taps cannot be stored as embeddings");
            }
            dims.push_back(spec_dim(s, c));
        }
        return EmbeddingStore(specs, std::move(dims), p);
    }

    const std::vector<HeadSpec>& specs() const { return specs_; }
    const std::vector<std::size_t>& segment_dims() const { return dims_; }
    StorePrecision precision() const { return precision_; }
    std::size_t dim() const { return dim_; }
    std::size_t token_count() const { return count_; }
    std::size_t bytes_per_element() const { return precision_ == StorePrecision::f32 ? 4 : 2; }
    std::size_t byte_size() const { return count_ * dim_ * bytes_per_element(); }

    void append_tokens(const Matrix& combined) {
        if (combined.rows() > 0 && combined.cols() != dim_) {
            throw SchemaError("embedding store expects dimension " + std::to_string(dim_) + ", got " +
                              std::to_string(combined.cols()));
        }
        for (float v : combined.flat()) {
            if (precision_ == StorePrecision::f32) {
                f32_.push_back(v);
            } else {
                f16_.push_back(float_to_half(v));
            }
        }
        count_ += combined.rows();
    }

    std::vector<float> vector(std::size_t token) const {
        std::vector<float> out(dim_);
        read_into(token, out);
        return out;
    }

    void read_into(std::size_t token, std::span<float> out) const {
        const std::size_t base = token * dim_;
        for (std::size_t i = 0; i < dim_; ++i) {
            out[i] = precision_ == StorePrecision::f32 ? f32_[base + i] : half_to_float(f16_[base + i]);
        }
    }

    // Rows [begin, end) as f32.
    Matrix rows(std::size_t begin, std::size_t end) const {
        Matrix m(end - begin, dim_);
        for (std::size_t t = begin; t < end; ++t) {
            read_into(t, m.row(t - begin));
        }
        return m;
    }

    // Spill format, little-endian: "RFEM" | u32 version=1 | u8 precision |
    // u32 spec_count | per spec (u32 layer, u8 projection, u32 head, u64 dim) |
    // u64 token_count | packed vectors.
    std::vector<std::uint8_t> encode() const {
        detail::ByteWriter w;
        w.bytes("RFEM", 4);
        w.u32(1);
        w.u8(static_cast<std::uint8_t>(precision_));
        w.u32(static_cast<std::uint32_t>(specs_.size()));
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            w.u32(static_cast<std::uint32_t>(specs_[i].layer));
            w.u8(static_cast<std::uint8_t>(specs_[i].projection));
            w.u32(static_cast<std::uint32_t>(specs_[i].head));
            w.u64(dims_[i]);
        }
        w.u64(count_);
        if (precision_ == StorePrecision::f32) {
            for (float v : f32_) w.f32(v);
        } else {
            for (auto v : f16_) w.u16(v);
        }
        return w.take();
    }

    static EmbeddingStore decode(const std::vector<std::uint8_t>& bytes) {
        detail::ByteReader r(bytes.data(), bytes.size());
        if (r.str(std::min<std::size_t>(4, bytes.size())) != "RFEM") {
            throw FormatError("bad magic: not an embedding store");
        }
        if (r.u32() != 1) {
            throw FormatError("unsupported embedding store version");
        }
        const auto prec = r.u8();
        if (prec > 1) {
            throw FormatError("unknown embedding precision tag");
        }
        const auto n_specs = r.u32();
        std::vector<HeadSpec> specs;
        std::vector<std::size_t> dims;
        for (std::uint32_t i = 0; i < n_specs; ++i) {
            HeadSpec s;
            s.layer = r.u32();
            const auto proj = r.u8();
            if (proj > 4) throw FormatError("unknown projection tag");
            s.projection = static_cast<Projection>(proj);
            s.head = r.u32();
            specs.push_back(s);
            dims.push_back(static_cast<std::size_t>(r.u64()));
        }
        EmbeddingStore store(std::move(specs), std::move(dims), static_cast<StorePrecision>(prec));
        const auto count = r.u64();
        const std::size_t elems = static_cast<std::size_t>(count) * store.dim_;
        if (elems > r.remaining() / store.bytes_per_element()) {
            throw CorruptFileError("embedding store payload shorter than its header declares");
        }
        for (std::size_t i = 0; i < elems; ++i) {
            if (store.precision_ == StorePrecision::f32) {
                store.f32_.push_back(r.f32());
            } else {
                store.f16_.push_back(r.u16());
            }
        }
        if (r.remaining() != 0) {
            throw CorruptFileError("trailing bytes after embedding payload");
        }
        store.count_ = static_cast<std::size_t>(count);
        return store;
    }

    void save(const std::filesystem::path& p) const { detail::write_file_bytes(p, encode()); }
    static EmbeddingStore load(const std::filesystem::path& p) { return decode(detail::read_file_bytes(p)); }

private:
    std::vector<HeadSpec> specs_;
    std::vector<std::size_t> dims_;
    StorePrecision precision_ = StorePrecision::f16;
    std::size_t dim_ = 0;
    std::size_t count_ = 0;
    std::vector<float> f32_;
    std::vector<std::uint16_t> f16_;
};

} // namespace reform
