#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reform/error.hpp"
#include "reform/head_spec.hpp"
#include "reform/kv_cache.hpp"
#include "reform/model_config.hpp"
#include "reform/rope.hpp"
#include "reform/tensor.hpp"
#include "reform/tokenizer.hpp"
#include "reform/weights.hpp"

namespace reform {

// Immutable config + weights. Safe to share across threads.
class Model {
public:
    struct Layer {
        const Tensor* attn_norm;
        const Tensor* wq;
        const Tensor* wk;
        const Tensor* wv;
        const Tensor* wo;
        const Tensor* mlp_norm;
        const Tensor* w_gate;
        const Tensor* w_up;
        const Tensor* w_down;
    };

    Model(ModelConfig config, ModelWeights weights)
        : config_(config), weights_(std::move(weights)), rope_(config.head_dim, config.rope_theta) {
        config_.validate();
        validate_weights(config_, weights_);
        embed_ = &weights_.at("tok_embeddings");
        norm_ = &weights_.at("norm");
        lm_head_ = &weights_.at("lm_head");
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            auto at = [&](const char* leaf) { return &weights_.at(layer_tensor_name(l, leaf)); };
            layers_.push_back({at("attn_norm"), at("wq"), at("wk"), at("wv"), at("wo"), at("mlp_norm"),
                               at("w_gate"), at("w_up"), at("w_down")});
        }
    }

    Model(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    const ModelWeights& weights() const { return weights_; }
    const RopeTable& rope() const { return rope_; }
    const Layer& layer(std::size_t l) const { return layers_[l]; }
    const Tensor& embeddings() const { return *embed_; }
    const Tensor& final_norm() const { return *norm_; }
    const Tensor& lm_head() const { return *lm_head_; }

private:
    ModelConfig config_;
    ModelWeights weights_;
    RopeTable rope_;
    const Tensor* embed_ = nullptr;
    const Tensor* norm_ = nullptr;
    const Tensor* lm_head_ = nullptr;
    std::vector<Layer> layers_;
};

// Per requested spec: [chunk_len, dim] post-projection, pre-rotary states.
// Hidden taps hold the residual stream after the layer. Attention taps hold
// the layer's pre-rotary queries followed by its keys: [chunk_len, q_width + kv_width].
struct TappedStates {
    std::vector<std::pair<HeadSpec, Matrix>> entries;

    const Matrix* find(const HeadSpec& spec) const {
        for (const auto& [s, m] : entries) {
            if (s == spec) return &m;
        }
        return nullptr;
    }
    bool empty() const { return entries.empty(); }
};

// Attention mass (summed over every query head of the layer) received by
// each cache entry: from the chunk's trailing observer rows, and from the
// chunk's final row alone.
struct LayerAttention {
    std::vector<float> observer_mass;
    std::vector<float> final_token_mass;
};

struct WorkCounters {
    std::size_t layer_executions = 0;    // token-layer forwards
    std::size_t attention_score_ops = 0; // sum of query_rows * cache_len per layer

    WorkCounters& operator+=(const WorkCounters& o) {
        layer_executions += o.layer_executions;
        attention_score_ops += o.attention_score_ops;
        return *this;
    }
};

enum class LogitsMode { all_rows, last_row };

struct ForwardOptions {
    std::size_t exit_layer = 0;
    std::vector<HeadSpec> taps;
    std::size_t observer_window = 128;
    LogitsMode logits = LogitsMode::all_rows;
};

struct ForwardResult {
    Matrix hidden;                // residual stream after the last executed layer
    std::optional<Matrix> logits; // only when every layer ran
    TappedStates tapped;
    std::vector<LayerAttention> attention; // one per executed layer
    WorkCounters counters;
};

namespace detail {

inline Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t width) {
    Matrix out(m.rows(), width);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto src = m.row(r).subspan(begin, width);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

inline Matrix hconcat(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.row(r);
        std::copy(a.row(r).begin(), a.row(r).end(), dst.begin());
        std::copy(b.row(r).begin(), b.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
}

} // namespace detail

// Runs layers [0, exit_layer) over one chunk conditioned on `cache`, appending
// the chunk's keys/values to each executed layer. Attention is causal inside
// the chunk and full onto earlier cache entries; rotary positions come from
// each layer's cache (consecutive after its last assigned position).
inline ForwardResult forward_chunk(const Model& model, std::span<const TokenId> tokens,
                                   std::span<const std::size_t> original_positions, KVCacheSet& cache,
                                   const ForwardOptions& opts) {
    const auto& cfg = model.config();
    const std::size_t T = tokens.size();
    if (T == 0) {
        throw InputError("forward_chunk: empty chunk");
    }
    if (original_positions.size() != T) {
        throw InputError("forward_chunk: one original position per token is required");
    }
    if (opts.exit_layer > cfg.n_layers) {
        throw ConfigError("exit layer " + std::to_string(opts.exit_layer) + " exceeds the model depth");
    }
    if (cache.size() != cfg.n_layers) {
        throw ConfigError("cache set has " + std::to_string(cache.size()) + " layers, model has " +
                          std::to_string(cfg.n_layers));
    }
    for (TokenId t : tokens) {
        if (t >= cfg.vocab_size) {
            throw InputError("token id " + std::to_string(t) + " is outside the vocabulary");
        }
    }
    for (const auto& spec : opts.taps) {
        validate_head_spec(spec, cfg);
        if (spec.layer >= opts.exit_layer) {
            throw ConfigError("tap " + format_head_spec(spec) + " lies above the exit layer");
        }
    }
    for (std::size_t l = 0; l < opts.exit_layer; ++l) {
        if (cache[l].width() != cfg.kv_width()) {
            throw ConfigError("cache width does not match the model");
        }
        if (cache[l].next_position() + T > cfg.max_positions) {
            throw PositionError("position " + std::to_string(cache[l].next_position() + T - 1) +
                                " exceeds max_positions " + std::to_string(cfg.max_positions));
        }
    }

    ForwardResult res;
    const std::size_t D = cfg.d_model;
    const std::size_t hd = cfg.head_dim;
    const std::size_t group = cfg.group_size();
    const auto eps = static_cast<float>(cfg.rms_eps);
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    Matrix x(T, D);
    for (std::size_t t = 0; t < T; ++t) {
        const auto e = model.embeddings().values.row(tokens[t]);
        std::copy(e.begin(), e.end(), x.row(t).begin());
    }

    std::vector<float> probs;
    for (std::size_t l = 0; l < opts.exit_layer; ++l) {
        const auto& L = model.layer(l);
        const Matrix xn = rms_norm(x, L.attn_norm->values.row(0), eps);
        Matrix q = matmul_nt(xn, L.wq->values);
        Matrix k = matmul_nt(xn, L.wk->values);
        Matrix v = matmul_nt(xn, L.wv->values);

        for (const auto& spec : opts.taps) {
            if (spec.layer != l) continue;
            switch (spec.projection) {
            case Projection::query: res.tapped.entries.emplace_back(spec, detail::column_slice(q, spec.head * hd, hd)); break;
            case Projection::key: res.tapped.entries.emplace_back(spec, detail::column_slice(k, spec.head * hd, hd)); break;
            case Projection::value: res.tapped.entries.emplace_back(spec, detail::column_slice(v, spec.head * hd, hd)); break;
            case Projection::attention: res.tapped.entries.emplace_back(spec, detail::hconcat(q, k)); break;
            case Projection::hidden: break; // filled after the layer
            }
        }

        LayerKVCache& lc = cache[l];
        lc.append(k, v, original_positions);
        lc.refresh_rotated_keys(model.rope());
        const std::size_t n_entries = lc.size();
        const std::size_t prior = n_entries - T;

        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t pos = lc.assigned_positions()[prior + t];
            auto qrow = q.row(t);
            for (std::size_t h = 0; h < cfg.n_q_heads; ++h) {
                model.rope().rotate(qrow.subspan(h * hd, hd), pos);
            }
        }

        LayerAttention la;
        la.observer_mass.assign(n_entries, 0.0f);
        la.final_token_mass.assign(n_entries, 0.0f);
        const std::size_t observers = std::min(opts.observer_window, T);

        Matrix attn(T, cfg.q_width());
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t visible = prior + t + 1;
            const bool observer = t >= T - observers;
            const bool last = t + 1 == T;
            for (std::size_t h = 0; h < cfg.n_q_heads; ++h) {
                const std::size_t kvh = h / group;
                const auto qh = q.row(t).subspan(h * hd, hd);
                probs.resize(visible);
                for (std::size_t j = 0; j < visible; ++j) {
                    probs[j] = dot(qh, lc.rotated_key(j).subspan(kvh * hd, hd)) * scale;
                }
                softmax(probs);
                auto out = attn.row(t).subspan(h * hd, hd);
                for (std::size_t j = 0; j < visible; ++j) {
                    const float p = probs[j];
                    axpy(p, lc.value(j).subspan(kvh * hd, hd), out);
                    if (observer) la.observer_mass[j] += p;
                    if (last) la.final_token_mass[j] += p;
                }
            }
        }
        res.counters.attention_score_ops += T * n_entries;
        res.counters.layer_executions += T;

        const Matrix o = matmul_nt(attn, L.wo->values);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.flat()[i] += o.flat()[i];
        }

        const Matrix xm = rms_norm(x, L.mlp_norm->values.row(0), eps);
        Matrix gate = matmul_nt(xm, L.w_gate->values);
        const Matrix up = matmul_nt(xm, L.w_up->values);
        for (std::size_t i = 0; i < gate.size(); ++i) {
            gate.flat()[i] = silu(gate.flat()[i]) * up.flat()[i];
        }
        const Matrix down = matmul_nt(gate, L.w_down->values);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.flat()[i] += down.flat()[i];
        }

        for (const auto& spec : opts.taps) {
            if (spec.layer == l && spec.projection == Projection::hidden) {
                res.tapped.entries.emplace_back(spec, x);
            }
        }
        res.attention.push_back(std::move(la));
    }

    if (opts.exit_layer == cfg.n_layers) {
        Matrix rows = x;
        if (opts.logits == LogitsMode::last_row) {
            rows = Matrix(1, D);
            std::copy(x.row(T - 1).begin(), x.row(T - 1).end(), rows.row(0).begin());
        }
        const Matrix xf = rms_norm(rows, model.final_norm().values.row(0), eps);
        res.logits = matmul_nt(xf, model.lm_head().values);
    }
    res.hidden = std::move(x);
    return res;
}

// Convenience: original positions start..start+len-1.
inline ForwardResult forward_chunk(const Model& model, std::span<const TokenId> tokens, std::size_t first_original,
                                   KVCacheSet& cache, const ForwardOptions& opts) {
    std::vector<std::size_t> pos(tokens.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
        pos[i] = first_original + i;
    }
    return forward_chunk(model, tokens, pos, cache, opts);
}

struct DecodeResult {
    std::vector<float> logits;
    WorkCounters counters;
};

// Single-token step through every layer; the token is appended to each
// layer's cache one original position past the current last entry.
inline DecodeResult decode_token(const Model& model, KVCacheSet& cache, TokenId last_token) {
    const auto& cfg = model.config();
    if (cache.size() != cfg.n_layers ||
        std::any_of(cache.begin(), cache.end(), [](const LayerKVCache& c) { return c.empty(); })) {
        throw InputError("decode_token: every layer cache must be non-empty");
    }
    const std::size_t next_original = cache.front().original_positions().back() + 1;
    ForwardOptions opts;
    opts.exit_layer = cfg.n_layers;
    opts.logits = LogitsMode::last_row;
    opts.observer_window = 1;
    const TokenId tok[1] = {last_token};
    auto r = forward_chunk(model, tok, next_original, cache, opts);
    const auto row = r.logits->row(0);
    return {{row.begin(), row.end()}, r.counters};
}

} // namespace reform
