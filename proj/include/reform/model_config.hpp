#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "reform/error.hpp"

namespace reform {

// Hyperparameters of a pre-norm decoder-only transformer with grouped-query
// attention. The query projection width (n_q_heads * head_dim) need not
// equal d_model; the output projection maps it back.
struct ModelConfig {
    std::uint64_t n_layers = 0;
    std::uint64_t d_model = 0;
    std::uint64_t n_q_heads = 0;
    std::uint64_t n_kv_heads = 0;
    std::uint64_t head_dim = 0;
    std::uint64_t d_ff = 0;
    std::uint64_t vocab_size = 0;
    double rope_theta = 10000.0;
    double rms_eps = 1e-5;
    std::uint64_t max_positions = 0;

    std::uint64_t q_width() const { return n_q_heads * head_dim; }
    std::uint64_t kv_width() const { return n_kv_heads * head_dim; }
    std::uint64_t group_size() const { return n_q_heads / n_kv_heads; }

    void validate() const {
        if (n_layers == 0 || d_model == 0 || head_dim == 0 || d_ff == 0 || vocab_size == 0 ||
            max_positions == 0) {
            throw ConfigError("model config: all sizes must be positive");
        }
        if (n_kv_heads == 0 || n_q_heads == 0 || n_q_heads % n_kv_heads != 0) {
            throw ConfigError("model config: n_q_heads must be a positive multiple of n_kv_heads");
        }
        if (head_dim % 2 != 0) {
            throw ConfigError("model config: head_dim must be even for rotary encoding");
        }
        if (!(rope_theta > 0.0) || !std::isfinite(rope_theta) || !(rms_eps > 0.0) ||
            !std::isfinite(rms_eps)) {
            throw ConfigError("model config: rope_theta and rms_eps must be positive and finite");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

} // namespace reform
