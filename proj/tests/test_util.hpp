#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "reform/reform.hpp"

namespace testutil {

inline reform::ModelConfig tiny_config(std::size_t layers = 2, std::size_t d = 32, std::size_t q = 4, std::size_t kv = 2,
                                       std::size_t hd = 8, std::size_t dff = 48) {
    reform::ModelConfig c;
    c.n_layers = layers;
    c.d_model = d;
    c.n_q_heads = q;
    c.n_kv_heads = kv;
    c.head_dim = hd;
    c.d_ff = dff;
    c.vocab_size = reform::kByteVocabSize;
    c.rope_theta = 10000.0;
    c.rms_eps = 1e-5;
    c.max_positions = 1 << 16;
    return c;
}

inline reform::Model tiny_model(std::uint64_t seed, const reform::ModelConfig& c = tiny_config()) {
    return reform::Model(c, reform::init_random(c, seed));
}

inline std::vector<reform::TokenId> random_tokens(reform::Rng& rng, std::size_t n, std::size_t hi = 256) {
    std::vector<reform::TokenId> out(n);
    for (auto& t : out) t = static_cast<reform::TokenId>(rng.below(hi));
    return out;
}

// Random bytes followed by SEP and a short question.
inline std::vector<reform::TokenId> random_prompt(reform::Rng& rng, std::size_t context, std::size_t query) {
    auto t = random_tokens(rng, context);
    t.push_back(reform::special::sep);
    const auto q = random_tokens(rng, query);
    t.insert(t.end(), q.begin(), q.end());
    return t;
}

// max |a - b| / max |b|
template <typename A, typename B>
double rel_err(const A& a, const B& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        den = std::max(den, std::abs(static_cast<double>(b[i])));
    }
    return den > 0 ? num / den : num;
}

inline std::filesystem::path temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "reform_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace testutil
