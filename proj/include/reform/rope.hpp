#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "reform/error.hpp"

namespace reform {

// Rotary position encoding over interleaved pairs (2i, 2i+1):
//   angle = pos * theta^(-2i / head_dim)
//   (x, y) -> (x cos(angle) - y sin(angle), x sin(angle) + y cos(angle))
// so head_dim=2, pos=1, (1, 0) maps to (cos 1, sin 1).
class RopeTable {
public:
    RopeTable(std::size_t head_dim, double theta) : head_dim_(head_dim) {
        if (head_dim == 0 || head_dim % 2 != 0) {
            throw ConfigError("rotary encoding needs an even head_dim");
        }
        freqs_.resize(head_dim / 2);
        for (std::size_t i = 0; i < freqs_.size(); ++i) {
            freqs_[i] = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        }
    }

    std::size_t head_dim() const { return head_dim_; }

    void rotate(std::span<float> vec, std::size_t position) const {
        for (std::size_t i = 0; i < freqs_.size(); ++i) {
            const double angle = static_cast<double>(position) * freqs_[i];
            const auto c = static_cast<float>(std::cos(angle));
            const auto s = static_cast<float>(std::sin(angle));
            const float x = vec[2 * i];
            const float y = vec[2 * i + 1];
            vec[2 * i] = x * c - y * s;
            vec[2 * i + 1] = x * s + y * c;
        }
    }

private:
    std::size_t head_dim_;
    std::vector<double> freqs_;
};

// states is [n, head_dim] row-major.
inline std::vector<float> apply_rope(std::span<const float> states, std::size_t head_dim,
                                     std::span<const std::size_t> positions, double theta) {
    const RopeTable table(head_dim, theta);
    if (states.size() != positions.size() * head_dim) {
        throw InputError("rotary encoding: states and positions disagree in length");
    }
    std::vector<float> out(states.begin(), states.end());
    for (std::size_t r = 0; r < positions.size(); ++r) {
        table.rotate(std::span<float>(out).subspan(r * head_dim, head_dim), positions[r]);
    }
    return out;
}

} // namespace reform
