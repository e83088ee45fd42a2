#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "reform/error.hpp"
#include "reform/pipeline.hpp"

namespace reform {

// Pipeline configuration as `key = value` lines; `#` starts a comment.
//
//   chunk_size = 512
//   selected_heads = 0:value:0, 1:key:1
//   query_split = separator:259   # or suffix:16
//
// Keys mirror PipelineConfig fields; unknown keys are rejected.

inline std::string format_query_split(const QuerySplitRule& r) {
    if (r.kind == QuerySplitRule::Kind::suffix) {
        return "suffix:" + std::to_string(r.suffix_len);
    }
    return "separator:" + std::to_string(r.separator);
}

inline QuerySplitRule parse_query_split(std::string_view text) {
    text = detail::trim(text);
    QuerySplitRule r;
    const auto colon = text.find(':');
    const auto kind = detail::trim(text.substr(0, colon));
    const std::string_view arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
    if (kind == "separator" || kind == "sep") {
        r.kind = QuerySplitRule::Kind::separator;
        if (!arg.empty()) {
            r.separator = static_cast<TokenId>(detail::parse_count(arg, "separator token"));
        }
    } else if (kind == "suffix") {
        r.kind = QuerySplitRule::Kind::suffix;
        r.suffix_len = detail::parse_count(arg, "suffix length");
    } else {
        throw ConfigError("query_split must be separator[:id] or suffix:N, got '" + std::string(text) + "'");
    }
    return r;
}

// Applies one key/value pair (also used for CLI overrides).
inline void apply_config_value(PipelineConfig& cfg, std::string_view key, std::string_view value) {
    key = detail::trim(key);
    value = detail::trim(value);
    const auto count = [&](const char* what) { return detail::parse_count(value, what); };
    if (key == "chunk_size") cfg.chunk_size = count("chunk_size");
    else if (key == "cache_budget") cfg.cache_budget = count("cache_budget");
    else if (key == "sink_len") cfg.sink_len = count("sink_len");
    else if (key == "recent_len") cfg.recent_len = count("recent_len");
    else if (key == "eviction") cfg.eviction = parse_eviction_policy(value);
    else if (key == "selected_heads") cfg.selected_heads = parse_head_specs(value);
    else if (key == "exit_layer") cfg.exit_layer = count("exit_layer");
    else if (key == "recomputation_budget") cfg.recomputation_budget = count("recomputation_budget");
    else if (key == "query_split") cfg.query_split = parse_query_split(value);
    else if (key == "query_prefix_len") cfg.query_prefix_len = count("query_prefix_len");
    else if (key == "neighbor_window") cfg.neighbor_window = count("neighbor_window");
    else if (key == "observer_window") cfg.observer_window = count("observer_window");
    else if (key == "embedding_precision") cfg.embedding_precision = parse_store_precision(value);
    else throw ConfigError("unknown pipeline config key '" + std::string(key) + "'");
}

inline PipelineConfig parse_pipeline_config(std::string_view text, PipelineConfig cfg = {}) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        try {
            apply_config_value(cfg, body.substr(0, eq), body.substr(eq + 1));
        } catch (const Error& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

inline std::string format_pipeline_config(const PipelineConfig& cfg) {
    std::ostringstream os;
    os << "chunk_size = " << cfg.chunk_size << '\n'
       << "cache_budget = " << cfg.cache_budget << '\n'
       << "sink_len = " << cfg.sink_len << '\n'
       << "recent_len = " << cfg.recent_len << '\n'
       << "eviction = " << to_string(cfg.eviction) << '\n'
       << "selected_heads = " << format_head_specs(cfg.selected_heads) << '\n';
    if (cfg.exit_layer != 0) os << "exit_layer = " << cfg.exit_layer << '\n';
    os << "recomputation_budget = " << cfg.recomputation_budget << '\n'
       << "query_split = " << format_query_split(cfg.query_split) << '\n'
       << "query_prefix_len = " << cfg.query_prefix_len << '\n'
       << "neighbor_window = " << cfg.neighbor_window << '\n'
       << "observer_window = " << cfg.observer_window << '\n'
       << "embedding_precision = " << to_string(cfg.embedding_precision) << '\n';
    return os.str();
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_pipeline_config(ss.str());
}

} // namespace reform
