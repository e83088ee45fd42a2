#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "reform/error.hpp"
#include "reform/model_config.hpp"

namespace reform {

enum class Projection : std::uint8_t { query = 0, key = 1, value = 2, hidden = 3, attention = 4 };

inline std::string_view to_string(Projection p) {
    switch (p) {
    case Projection::query: return "query";
    case Projection::key: return "key";
    case Projection::value: return "value";
    case Projection::hidden: return "hidden";
    case Projection::attention: return "attention";
    }
    return "?";
}

inline Projection parse_projection(std::string_view s) {
    if (s == "query" || s == "q") return Projection::query;
    if (s == "key" || s == "k") return Projection::key;
    if (s == "value" || s == "v") return Projection::value;
    if (s == "hidden" || s == "h") return Projection::hidden;
    if (s == "attention" || s == "a") return Projection::attention;
    throw ConfigError("unknown projection '" + std::string(s) + "'");
}

// A (layer, projection, head) tap. `head` is ignored for hidden and attention
// taps: hidden slices the whole residual stream and attention is the
// head-averaged pre-rotary Q.K score of the layer.
struct HeadSpec {
    std::size_t layer = 0;
    Projection projection = Projection::value;
    std::size_t head = 0;

    bool per_head() const { return projection == Projection::query || projection == Projection::key ||
                                   projection == Projection::value; }

    friend bool operator==(const HeadSpec& a, const HeadSpec& b) {
        return a.layer == b.layer && a.projection == b.projection && (!a.per_head() || a.head == b.head);
    }
    friend bool operator<(const HeadSpec& a, const HeadSpec& b) {
        if (a.layer != b.layer) return a.layer < b.layer;
        if (a.projection != b.projection) return a.projection < b.projection;
        return a.per_head() && a.head < b.head;
    }
};

inline void validate_head_spec(const HeadSpec& s, const ModelConfig& c) {
    if (s.layer >= c.n_layers) {
        throw ConfigError("head spec layer " + std::to_string(s.layer) + " out of range");
    }
    if (s.projection == Projection::query && s.head >= c.n_q_heads) {
        throw ConfigError("query head " + std::to_string(s.head) + " out of range");
    }
    if ((s.projection == Projection::key || s.projection == Projection::value) && s.head >= c.n_kv_heads) {
        throw ConfigError("key/value head " + std::to_string(s.head) + " out of range");
    }
}

// Width of the per-token vector a spec yields (attention yields a score, not a vector).
inline std::size_t spec_dim(const HeadSpec& s, const ModelConfig& c) {
    switch (s.projection) {
    case Projection::hidden: return c.d_model;
    case Projection::attention: return 0;
    default: return c.head_dim;
    }
}

// Text form "layer:projection:head", e.g. "0:value:3".
inline std::string format_head_spec(const HeadSpec& s) {
    return std::to_string(s.layer) + ":" + std::string(to_string(s.projection)) + ":" +
           std::to_string(s.per_head() ? s.head : 0);
}

namespace detail {
inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::size_t parse_count(std::string_view s, const char* what) {
    s = trim(s);
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw ConfigError(std::string("expected a non-negative integer for ") + what + ", got '" +
                          std::string(s) + "'");
    }
    return static_cast<std::size_t>(std::stoull(std::string(s)));
}
} // namespace detail

inline HeadSpec parse_head_spec(std::string_view text) {
    text = detail::trim(text);
    const auto a = text.find(':');
    const auto b = a == std::string_view::npos ? a : text.find(':', a + 1);
    if (a == std::string_view::npos) {
        throw ConfigError("head spec '" + std::string(text) + "' must look like layer:projection:head");
    }
    HeadSpec s;
    s.layer = detail::parse_count(text.substr(0, a), "head spec layer");
    s.projection = parse_projection(detail::trim(text.substr(a + 1, b == std::string_view::npos ? b : b - a - 1)));
    if (b != std::string_view::npos) {
        s.head = detail::parse_count(text.substr(b + 1), "head spec head");
    } else if (s.per_head()) {
        throw ConfigError("head spec '" + std::string(text) + "' is missing a head index");
    }
    return s;
}

// Comma-separated list.
inline std::vector<HeadSpec> parse_head_specs(std::string_view text) {
    std::vector<HeadSpec> out;
    while (!detail::trim(text).empty()) {
        const auto comma = text.find(',');
        out.push_back(parse_head_spec(text.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

inline std::string format_head_specs(const std::vector<HeadSpec>& specs) {
    std::string out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (i) out += ", ";
        out += format_head_spec(specs[i]);
    }
    return out;
}

} // namespace reform
