#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "reform/head_spec.hpp"
#include "reform/model_config.hpp"
#include "reform/random.hpp"
#include "reform/tokenizer.hpp"
#include "reform/weights.hpp"

namespace reform {

// Hand-built 2-layer model used as a functional oracle.
//
// Residual layout (d_model = 392):
//   [0, 128)    E  token identity: one-hot for ASCII, random unit vector otherwise
//   128         B  constant 1
//   [136, 264)  P  identity of the previous token (written by layer 0)
//   [264, 392)  O  identity of the token to copy (written by layer 1)
//
// Layer 0, kv head 0: a previous-token head driven purely by rotary phase
// (query head 0), whose value is the current token's identity. This value
// head is the designated retrieval head: its states are exact one-hot token
// codes. Kv head 1 carries constant keys and values (an uninformative head).
//
// Layer 1, kv head 0: an induction head. Query head 0 matches the current
// token against each position's previous token and copies the identity of
// what followed, so decoding continues a sequence seen earlier in the cache.
// The MLPs are zero.
struct ProbeModel {
    ModelConfig config;
    ModelWeights weights;
    HeadSpec designated{0, Projection::value, 0};
    std::vector<HeadSpec> uninformative{{0, Projection::value, 1}, {0, Projection::key, 1}};
};

namespace probe {

inline constexpr std::size_t kE = 0;
inline constexpr std::size_t kB = 128;
inline constexpr std::size_t kP = 136;
inline constexpr std::size_t kO = 264;
inline constexpr std::size_t kWidth = 128;
inline constexpr std::size_t kPositionalPairs = 16; // highest-frequency rotary pairs
inline constexpr std::size_t kCodeBegin = 80;       // low-frequency dims used for content matching
inline constexpr double kPositionalAmp = 17.0;
inline constexpr double kInductionGain = 848.0;
inline constexpr double kLogitGain = 20.0;

inline ModelConfig config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 392;
    c.n_q_heads = 4;
    c.n_kv_heads = 2;
    c.head_dim = 128;
    c.d_ff = 8;
    c.vocab_size = kByteVocabSize;
    c.rope_theta = 1e8;
    c.rms_eps = 1e-6;
    c.max_positions = 1u << 16;
    return c;
}

} // namespace probe

inline ProbeModel make_probe_model(std::uint64_t seed = 1) {
    using namespace probe;
    ProbeModel pm;
    pm.config = config();
    const auto& c = pm.config;
    for (const auto& decl : tensor_schema(c)) {
        pm.weights.emplace(decl.name, Tensor::zeros(decl.dims));
    }
    auto w = [&](const std::string& name) -> Matrix& { return pm.weights.at(name).values; };
    Rng rng(seed);

    const auto random_unit = [&](std::size_t n) {
        std::vector<float> v(n);
        double ss = 0;
        for (auto& x : v) {
            x = static_cast<float>(rng.normal());
            ss += static_cast<double>(x) * x;
        }
        for (auto& x : v) x = static_cast<float>(x / std::sqrt(ss));
        return v;
    };

    // Token identity codes.
    Matrix identity(c.vocab_size, kWidth);
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
        if (v < kWidth) {
            identity.row(v)[v] = 1.0f;
        } else {
            const auto u = random_unit(kWidth);
            std::copy(u.begin(), u.end(), identity.row(v).begin());
        }
    }
    // Content codes for the induction match: unit columns of a random 48 x 128 map.
    const std::size_t code_dims = c.head_dim - kCodeBegin;
    Matrix code(code_dims, kWidth);
    for (std::size_t j = 0; j < kWidth; ++j) {
        const auto u = random_unit(code_dims);
        for (std::size_t i = 0; i < code_dims; ++i) code.row(i)[j] = u[i];
    }

    for (std::size_t v = 0; v < c.vocab_size; ++v) {
        auto row = w("tok_embeddings").row(v);
        for (std::size_t i = 0; i < kWidth; ++i) row[kE + i] = identity.row(v)[i];
        row[kB] = 1.0f;
    }
    const float norm_w = static_cast<float>(1.0 / std::sqrt(static_cast<double>(c.d_model)));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        for (auto& x : w(layer_tensor_name(l, "attn_norm")).flat()) x = norm_w;
        for (auto& x : w(layer_tensor_name(l, "mlp_norm")).flat()) x = norm_w;
    }
    for (auto& x : w("norm").flat()) x = norm_w;

    const std::size_t hd = c.head_dim;
    const std::size_t kv1 = hd; // row offset of kv head 1 in wk / wv

    // Layer 0. Normed input = residual / sqrt(2) (E and B are the only live parts).
    {
        const float s2 = static_cast<float>(std::sqrt(2.0));
        auto& wq = w(layer_tensor_name(0, "wq"));
        auto& wk = w(layer_tensor_name(0, "wk"));
        auto& wv = w(layer_tensor_name(0, "wv"));
        auto& wo = w(layer_tensor_name(0, "wo"));
        for (std::size_t i = 0; i < kPositionalPairs; ++i) {
            const double freq = std::pow(c.rope_theta, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
            // q pair is pre-rotated back by one step so it aligns with the key one position earlier.
            wq.row(2 * i)[kB] = static_cast<float>(kPositionalAmp * std::sqrt(2.0) * std::cos(freq));
            wq.row(2 * i + 1)[kB] = static_cast<float>(-kPositionalAmp * std::sqrt(2.0) * std::sin(freq));
            wk.row(2 * i)[kB] = static_cast<float>(kPositionalAmp * std::sqrt(2.0));
        }
        for (std::size_t i = 0; i < kWidth; ++i) {
            wv.row(i)[kE + i] = s2;
            wo.row(kP + i)[i] = 1.0f;
        }
        wk.row(kv1)[kB] = s2;
        wv.row(kv1)[kB] = s2;
    }

    // Layer 1. Normed input = residual / sqrt(3) (E, B and P).
    {
        const float s3 = static_cast<float>(std::sqrt(3.0));
        auto& wq = w(layer_tensor_name(1, "wq"));
        auto& wk = w(layer_tensor_name(1, "wk"));
        auto& wv = w(layer_tensor_name(1, "wv"));
        auto& wo = w(layer_tensor_name(1, "wo"));
        for (std::size_t i = 0; i < code_dims; ++i) {
            for (std::size_t j = 0; j < kWidth; ++j) {
                wq.row(kCodeBegin + i)[kE + j] = static_cast<float>(kInductionGain) * s3 * code.row(i)[j];
                wk.row(kCodeBegin + i)[kP + j] = s3 * code.row(i)[j];
            }
        }
        for (std::size_t i = 0; i < kWidth; ++i) {
            wv.row(i)[kE + i] = s3;
            wo.row(kO + i)[i] = 1.0f;
        }
        wk.row(kv1)[kB] = s3;
        wv.row(kv1)[kB] = s3;
    }

    auto& lm = w("lm_head");
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
        for (std::size_t i = 0; i < kWidth; ++i) {
            lm.row(v)[kO + i] = static_cast<float>(kLogitGain) * identity.row(v)[i];
        }
    }
    validate_weights(c, pm.weights);
    return pm;
}

} // namespace reform
