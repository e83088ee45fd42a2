#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reform/embeddings.hpp"
#include "reform/error.hpp"
#include "reform/head_spec.hpp"
#include "reform/kv_cache.hpp"
#include "reform/model.hpp"
#include "reform/retrieval.hpp"
#include "reform/tokenizer.hpp"

namespace reform {

// How the trailing query is separated from the context.
struct QuerySplitRule {
    enum class Kind { separator, suffix };
    Kind kind = Kind::separator;
    TokenId separator = special::sep; // the last occurrence starts the query and stays with it
    std::size_t suffix_len = 0;
};

struct PipelineConfig {
    std::size_t chunk_size = 512;
    std::size_t cache_budget = 512;
    std::size_t sink_len = 16;
    std::size_t recent_len = 16;
    EvictionPolicy eviction = EvictionPolicy::h2o;
    std::vector<HeadSpec> selected_heads;
    std::size_t exit_layer = 0; // 0 means derive from selected_heads
    std::size_t recomputation_budget = 128;
    QuerySplitRule query_split;
    std::size_t query_prefix_len = 0; // trailing generation-prefix tokens excluded from scoring
    std::size_t neighbor_window = 8;
    std::size_t observer_window = 16;
    StorePrecision embedding_precision = StorePrecision::f16;

    // 1 + the topmost layer any selected head reads from.
    std::size_t derived_exit_layer() const {
        std::size_t top = 0;
        for (const auto& s : selected_heads) top = std::max(top, s.layer + 1);
        return top;
    }

    void validate(const ModelConfig& model) const {
        if (chunk_size == 0) {
            throw ConfigError("chunk_size must be positive");
        }
        if (cache_budget < sink_len + recent_len) {
            throw ConfigError("cache_budget must be at least sink_len + recent_len");
        }
        if (selected_heads.empty()) {
            throw ConfigError("selected_heads is empty");
        }
        for (const auto& s : selected_heads) {
            validate_head_spec(s, model);
            if (s.projection == Projection::attention) {
                throw ConfigError("attention taps cannot build context embeddings");
            }
        }
        if (exit_layer != 0 && exit_layer != derived_exit_layer()) {
            throw ConfigError("exit_layer must equal 1 + the topmost selected head layer (" +
                              std::to_string(derived_exit_layer()) + ")");
        }
        if (query_split.kind == QuerySplitRule::Kind::suffix && query_split.suffix_len == 0) {
            throw ConfigError("suffix query split needs a positive length");
        }
    }
};

struct WorkStats {
    std::size_t layer_executions = 0;
    std::size_t attention_score_ops = 0;
    std::vector<std::size_t> prefill_peak_entries; // per layer, before recomputation
    std::size_t peak_cache_entries = 0;            // any layer, any phase
    std::size_t embedding_store_bytes = 0;
    std::size_t recomputed_tokens = 0;
    std::size_t decode_steps = 0;
    std::size_t chunks = 0;

    void add(const WorkCounters& c) {
        layer_executions += c.layer_executions;
        attention_score_ops += c.attention_score_ops;
    }
    void observe(const KVCacheSet& cache) {
        for (const auto& c : cache) peak_cache_entries = std::max(peak_cache_entries, c.size());
    }
};

struct PrefillResult {
    KVCacheSet cache;              // recomputed (or retained) cache for decoding
    SelectionSet selection;        // input positions the cache holds
    WorkStats stats;
    std::vector<float> scores;     // pooled significance scores (REFORM only)
    std::vector<float> last_logits;
    std::size_t context_len = 0;
    std::size_t input_len = 0;
    EmbeddingStore embeddings;
};

inline std::pair<std::vector<TokenId>, std::vector<TokenId>> split_query(const std::vector<TokenId>& input,
                                                                         const QuerySplitRule& rule) {
    if (input.empty()) {
        throw SplitError("cannot split an empty input");
    }
    std::size_t cut = 0;
    if (rule.kind == QuerySplitRule::Kind::suffix) {
        if (rule.suffix_len == 0 || rule.suffix_len >= input.size()) {
            throw SplitError("query suffix length " + std::to_string(rule.suffix_len) +
                             " must be positive and shorter than the input (" + std::to_string(input.size()) + ")");
        }
        cut = input.size() - rule.suffix_len;
    } else {
        const auto it = std::find(input.rbegin(), input.rend(), rule.separator);
        if (it == input.rend()) {
            throw SplitError("query separator token " + std::to_string(rule.separator) + " not found");
        }
        cut = static_cast<std::size_t>(input.rend() - it) - 1;
    }
    return {std::vector<TokenId>(input.begin(), input.begin() + static_cast<std::ptrdiff_t>(cut)),
            std::vector<TokenId>(input.begin() + static_cast<std::ptrdiff_t>(cut), input.end())};
}

// Chunk boundaries: the context in chunk_size pieces (last one short), then
// the query as its own final chunk.
inline std::vector<std::pair<std::size_t, std::size_t>> chunk_bounds(std::size_t context_len, std::size_t input_len,
                                                                     std::size_t chunk_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < context_len; b += chunk_size) {
        out.emplace_back(b, std::min(context_len, b + chunk_size));
    }
    if (context_len < input_len) {
        out.emplace_back(context_len, input_len);
    }
    return out;
}

struct RecurrentOptions {
    std::size_t chunk_size = 512;
    std::size_t cache_budget = 512;
    std::size_t sink_len = 16;
    std::size_t recent_len = 16;
    EvictionPolicy policy = EvictionPolicy::h2o;
    std::size_t exit_layer = 0;
    std::vector<HeadSpec> taps;
    std::size_t observer_window = 16;
    bool compress_final_chunk = true;
    LogitsMode logits = LogitsMode::last_row;
};

struct RecurrentState {
    KVCacheSet cache;
    WorkStats stats;
    std::vector<float> last_logits;
};

// Chunk callback: (forward result, first input position, chunk length).
using ChunkSink = std::function<void(const ForwardResult&, std::size_t, std::size_t)>;

// Recurrent chunked forwarding: each chunk runs layers [0, exit_layer) on the
// budgeted cache, then every executed layer accumulates observer attention,
// evicts down to budget and renumbers its positions.
inline RecurrentState recurrent_forward(const Model& model, const std::vector<TokenId>& input, std::size_t context_len,
                                        const RecurrentOptions& opts, const ChunkSink& on_chunk = {}) {
    const auto& mc = model.config();
    RecurrentState st;
    st.cache = make_cache_set(mc, opts.cache_budget, opts.sink_len, opts.recent_len);
    st.stats.prefill_peak_entries.assign(mc.n_layers, 0);

    ForwardOptions fo;
    fo.exit_layer = opts.exit_layer;
    fo.taps = opts.taps;
    fo.observer_window = opts.observer_window;
    fo.logits = opts.logits;

    const auto bounds = chunk_bounds(context_len, input.size(), opts.chunk_size);
    for (std::size_t c = 0; c < bounds.size(); ++c) {
        const auto [b, e] = bounds[c];
        const std::span<const TokenId> chunk(input.data() + b, e - b);
        ForwardResult fr = forward_chunk(model, chunk, b, st.cache, fo);
        st.stats.add(fr.counters);
        ++st.stats.chunks;
        for (std::size_t l = 0; l < opts.exit_layer; ++l) {
            st.stats.prefill_peak_entries[l] = std::max(st.stats.prefill_peak_entries[l], st.cache[l].size());
        }
        st.stats.observe(st.cache);
        if (on_chunk) {
            on_chunk(fr, b, e - b);
        }
        const bool last = c + 1 == bounds.size();
        for (std::size_t l = 0; l < opts.exit_layer; ++l) {
            st.cache[l].accumulate_scores(fr.attention[l].observer_mass);
            if (!last || opts.compress_final_chunk) {
                st.cache[l].compress(opts.policy, fr.attention[l].final_token_mass);
                st.cache[l].reassign_positions();
            }
        }
        if (last && fr.logits) {
            const auto row = fr.logits->row(fr.logits->rows() - 1);
            st.last_logits.assign(row.begin(), row.end());
        }
    }
    return st;
}

namespace detail {

// Full-depth forward of `positions` (ascending input indices) on a fresh,
// unbounded cache; rotary positions restart at 0.
inline void forward_fresh(const Model& model, const std::vector<TokenId>& input, const SelectionSet& sel,
                          PrefillResult& out) {
    out.cache = make_cache_set(model.config());
    const auto tokens = gather(input, sel);
    ForwardOptions fo;
    fo.exit_layer = model.config().n_layers;
    fo.logits = LogitsMode::last_row;
    fo.observer_window = 1;
    ForwardResult fr = forward_chunk(model, tokens, sel.indices, out.cache, fo);
    out.stats.add(fr.counters);
    out.stats.recomputed_tokens += tokens.size();
    out.stats.observe(out.cache);
    const auto row = fr.logits->row(0);
    out.last_logits.assign(row.begin(), row.end());
}

inline std::vector<bool> query_scoring_mask(std::span<const TokenId> query, std::size_t prefix_len) {
    std::vector<bool> mask(query.size());
    const std::size_t scored = query.size() > prefix_len ? query.size() - prefix_len : 0;
    for (std::size_t j = 0; j < query.size(); ++j) {
        mask[j] = j < scored && !is_special(query[j]);
    }
    return mask;
}

} // namespace detail

// Recurrent chunked prefill with early exit and embedding collection,
// similarity-based token selection against the query, then a full-depth
// recomputation of the selected tokens.
inline PrefillResult reform_prefill(const Model& model, const std::vector<TokenId>& input, const PipelineConfig& cfg) {
    const auto& mc = model.config();
    cfg.validate(mc);
    const auto [context, query] = split_query(input, cfg.query_split);
    const std::size_t n = input.size();

    PrefillResult out;
    out.input_len = n;
    out.context_len = context.size();
    out.embeddings = EmbeddingStore::for_model(mc, cfg.selected_heads, cfg.embedding_precision);

    RecurrentOptions ro;
    ro.chunk_size = cfg.chunk_size;
    ro.cache_budget = cfg.cache_budget;
    ro.sink_len = cfg.sink_len;
    ro.recent_len = cfg.recent_len;
    ro.policy = cfg.eviction;
    ro.exit_layer = cfg.derived_exit_layer();
    ro.taps = cfg.selected_heads;
    ro.observer_window = cfg.observer_window;

    RecurrentState rs = recurrent_forward(model, input, out.context_len, ro,
                                          [&](const ForwardResult& fr, std::size_t, std::size_t) {
                                              out.embeddings.append_tokens(
                                                  combine_rows(extract(fr.tapped, cfg.selected_heads)));
                                          });
    out.stats = std::move(rs.stats);
    out.stats.embedding_store_bytes = out.embeddings.byte_size();

    if (out.context_len > 0) {
        const Matrix q = out.embeddings.rows(out.context_len, n);
        const Matrix ctx = out.embeddings.rows(0, out.context_len);
        auto sig = score(q, ctx, detail::query_scoring_mask(query, cfg.query_prefix_len));
        smooth_max(sig, cfg.neighbor_window);
        out.scores = std::move(sig.scores);
    }
    out.selection = select(out.scores, cfg.recomputation_budget, cfg.sink_len, cfg.recent_len, n);
    detail::forward_fresh(model, input, out.selection, out);
    return out;
}

// Full attention over the whole input in one pass.
inline PrefillResult dense_prefill(const Model& model, const std::vector<TokenId>& input) {
    PrefillResult out;
    out.input_len = input.size();
    out.context_len = input.size();
    out.selection.indices.resize(input.size());
    std::iota(out.selection.indices.begin(), out.selection.indices.end(), std::size_t{0});
    out.selection.budget = input.size();
    out.stats.prefill_peak_entries.assign(model.config().n_layers, 0);
    detail::forward_fresh(model, input, out.selection, out);
    out.stats.recomputed_tokens = 0;
    for (std::size_t l = 0; l < model.config().n_layers; ++l) {
        out.stats.prefill_peak_entries[l] = out.cache[l].size();
    }
    return out;
}

// Keeps the first ceil(budget/2) and last floor(budget/2) tokens.
inline PrefillResult truncation_prefill(const Model& model, const std::vector<TokenId>& input, std::size_t budget) {
    const std::size_t n = input.size();
    if (budget >= n) {
        return dense_prefill(model, input);
    }
    if (budget == 0) {
        throw ConfigError("truncation budget must be positive");
    }
    PrefillResult out;
    out.input_len = n;
    out.context_len = n;
    const std::size_t head = (budget + 1) / 2;
    const std::size_t tail = budget / 2;
    for (std::size_t i = 0; i < head; ++i) out.selection.indices.push_back(i);
    for (std::size_t i = n - tail; i < n; ++i) out.selection.indices.push_back(i);
    out.selection.budget = budget;
    out.stats.prefill_peak_entries.assign(model.config().n_layers, 0);
    detail::forward_fresh(model, input, out.selection, out);
    out.stats.recomputed_tokens = 0;
    for (std::size_t l = 0; l < model.config().n_layers; ++l) {
        out.stats.prefill_peak_entries[l] = out.cache[l].size();
    }
    return out;
}

// Recurrent compression baseline at full depth (H2O / StreamingLLM / TOVA);
// the final query chunk is not compressed so decoding starts from it.
inline PrefillResult compressive_prefill(const Model& model, const std::vector<TokenId>& input,
                                         const PipelineConfig& cfg, EvictionPolicy policy) {
    if (cfg.cache_budget < cfg.sink_len + cfg.recent_len || cfg.chunk_size == 0) {
        throw ConfigError("invalid cache budget or chunk size");
    }
    const auto [context, query] = split_query(input, cfg.query_split);
    RecurrentOptions ro;
    ro.chunk_size = cfg.chunk_size;
    ro.cache_budget = cfg.cache_budget;
    ro.sink_len = cfg.sink_len;
    ro.recent_len = cfg.recent_len;
    ro.policy = policy;
    ro.exit_layer = model.config().n_layers;
    ro.observer_window = cfg.observer_window;
    ro.compress_final_chunk = false;
    RecurrentState rs = recurrent_forward(model, input, context.size(), ro);

    PrefillResult out;
    out.input_len = input.size();
    out.context_len = context.size();
    out.cache = std::move(rs.cache);
    out.stats = std::move(rs.stats);
    out.last_logits = std::move(rs.last_logits);
    out.selection.indices = out.cache.back().original_positions();
    out.selection.budget = cfg.cache_budget;
    return out;
}

// Greedy decoding from a prefilled cache. Stops at eos (not emitted) or
// after max_new_tokens; every emitted token but the last is fed back.
inline std::vector<TokenId> generate(const Model& model, PrefillResult& prefill, std::size_t max_new_tokens,
                                     TokenId eos = special::eos) {
    std::vector<TokenId> out;
    if (max_new_tokens == 0) {
        return out;
    }
    if (prefill.last_logits.empty()) {
        throw InputError("generate: prefill produced no logits");
    }
    std::vector<float> logits = prefill.last_logits;
    while (true) {
        const auto next = static_cast<TokenId>(argmax(logits));
        if (next == eos) break;
        out.push_back(next);
        if (out.size() == max_new_tokens) break;
        DecodeResult d = decode_token(model, prefill.cache, next);
        prefill.stats.add(d.counters);
        ++prefill.stats.decode_steps;
        prefill.stats.observe(prefill.cache);
        logits = std::move(d.logits);
    }
    return out;
}

enum class Method { reform, h2o, streaming_llm, tova, truncation, dense };

inline std::string_view to_string(Method m) {
    switch (m) {
    case Method::reform: return "reform";
    case Method::h2o: return "h2o";
    case Method::streaming_llm: return "streamingllm";
    case Method::tova: return "tova";
    case Method::truncation: return "truncation";
    case Method::dense: return "dense";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    for (auto m : {Method::reform, Method::h2o, Method::streaming_llm, Method::tova, Method::truncation, Method::dense}) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError("unknown method '" + std::string(s) + "'");
}

inline PrefillResult run_prefill(const Model& model, const std::vector<TokenId>& input, const PipelineConfig& cfg,
                                 Method method) {
    switch (method) {
    case Method::reform: return reform_prefill(model, input, cfg);
    case Method::h2o: return compressive_prefill(model, input, cfg, EvictionPolicy::h2o);
    case Method::streaming_llm: return compressive_prefill(model, input, cfg, EvictionPolicy::streaming_llm);
    case Method::tova: return compressive_prefill(model, input, cfg, EvictionPolicy::tova);
    case Method::truncation: return truncation_prefill(model, input, cfg.cache_budget);
    case Method::dense: return dense_prefill(model, input);
    }
    throw ConfigError("unknown method");
}

} // namespace reform
