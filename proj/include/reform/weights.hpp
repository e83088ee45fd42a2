#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "reform/error.hpp"
#include "reform/model_config.hpp"
#include "reform/random.hpp"
#include "reform/tensor.hpp"

namespace reform {

// A named tensor. Rank-1 tensors are held as a single-row matrix.
struct Tensor {
    std::vector<std::uint64_t> dims;
    Matrix values;

    static Tensor zeros(std::vector<std::uint64_t> dims) {
        Tensor t;
        t.dims = std::move(dims);
        if (t.dims.size() == 1) {
            t.values = Matrix(1, t.dims[0]);
        } else {
            t.values = Matrix(t.dims[0], t.dims[1]);
        }
        return t;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct TensorDecl {
    std::string name;
    std::vector<std::uint64_t> dims;
};

inline std::string layer_tensor_name(std::size_t layer, const char* leaf) {
    return "layers." + std::to_string(layer) + "." + leaf;
}

// Canonical tensor list for a config, in file order.
inline std::vector<TensorDecl> tensor_schema(const ModelConfig& c) {
    std::vector<TensorDecl> s;
    s.push_back({"tok_embeddings", {c.vocab_size, c.d_model}});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        s.push_back({layer_tensor_name(l, "attn_norm"), {c.d_model}});
        s.push_back({layer_tensor_name(l, "wq"), {c.q_width(), c.d_model}});
        s.push_back({layer_tensor_name(l, "wk"), {c.kv_width(), c.d_model}});
        s.push_back({layer_tensor_name(l, "wv"), {c.kv_width(), c.d_model}});
        s.push_back({layer_tensor_name(l, "wo"), {c.d_model, c.q_width()}});
        s.push_back({layer_tensor_name(l, "mlp_norm"), {c.d_model}});
        s.push_back({layer_tensor_name(l, "w_gate"), {c.d_ff, c.d_model}});
        s.push_back({layer_tensor_name(l, "w_up"), {c.d_ff, c.d_model}});
        s.push_back({layer_tensor_name(l, "w_down"), {c.d_model, c.d_ff}});
    }
    s.push_back({"norm", {c.d_model}});
    s.push_back({"lm_head", {c.vocab_size, c.d_model}});
    return s;
}

using ModelWeights = std::map<std::string, Tensor>;

inline void validate_weights(const ModelConfig& config, const ModelWeights& weights) {
    const auto schema = tensor_schema(config);
    for (const auto& decl : schema) {
        const auto it = weights.find(decl.name);
        if (it == weights.end()) {
            throw ValidationError("missing tensor '" + decl.name + "'");
        }
        if (it->second.dims != decl.dims) {
            throw ValidationError("tensor '" + decl.name + "' has unexpected shape");
        }
        if (!all_finite(it->second.values.flat())) {
            throw ValidationError("tensor '" + decl.name + "' contains non-finite values");
        }
    }
    if (weights.size() != schema.size()) {
        throw ValidationError("weights contain tensors outside the layer schema");
    }
}

// Deterministic initialization: rank-2 tensors uniform with standard deviation
// 1/sqrt(fan_in); norm weights are ones. Tensors are filled in schema order
// from one generator, so (config, seed) fixes every bit.
inline ModelWeights init_random(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ModelWeights w;
    for (const auto& decl : tensor_schema(config)) {
        Tensor t = Tensor::zeros(decl.dims);
        if (decl.dims.size() == 1) {
            std::fill(t.values.flat().begin(), t.values.flat().end(), 1.0f);
        } else {
            const double bound = std::sqrt(3.0 / static_cast<double>(decl.dims[1]));
            for (auto& v : t.values.flat()) {
                v = static_cast<float>(rng.uniform(-bound, bound));
            }
        }
        w.emplace(decl.name, std::move(t));
    }
    return w;
}

} // namespace reform
