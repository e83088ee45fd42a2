#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "reform/error.hpp"
#include "reform/model_config.hpp"
#include "reform/rope.hpp"
#include "reform/tensor.hpp"

namespace reform {

inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

enum class EvictionPolicy { h2o, streaming_llm, tova };

inline std::string_view to_string(EvictionPolicy p) {
    switch (p) {
    case EvictionPolicy::h2o: return "h2o";
    case EvictionPolicy::streaming_llm: return "streamingllm";
    case EvictionPolicy::tova: return "tova";
    }
    return "?";
}

inline EvictionPolicy parse_eviction_policy(std::string_view s) {
    if (s == "h2o") return EvictionPolicy::h2o;
    if (s == "streamingllm" || s == "streaming_llm") return EvictionPolicy::streaming_llm;
    if (s == "tova") return EvictionPolicy::tova;
    throw ConfigError("unknown eviction policy '" + std::string(s) + "'");
}

struct CacheEntry {
    std::vector<float> key;   // [n_kv_heads * head_dim], pre-rotary
    std::vector<float> value; // [n_kv_heads * head_dim]
    std::size_t original_position = 0;
    std::size_t assigned_position = 0;
    float cum_score = 0.0f;
};

// One layer's budgeted cache. Entries are kept sorted by original position
// and stored column-wise; keys are stored before rotary encoding so that
// position reassignment never has to undo a rotation.
class LayerKVCache {
public:
    LayerKVCache() = default;
    LayerKVCache(std::size_t width, std::size_t budget = kUnbounded, std::size_t sink_len = 0,
                 std::size_t recent_len = 0)
        : width_(width), budget_(budget), sink_len_(sink_len), recent_len_(recent_len) {}

    std::size_t size() const { return original_.size(); }
    bool empty() const { return original_.empty(); }
    std::size_t width() const { return width_; }
    std::size_t budget() const { return budget_; }
    std::size_t sink_len() const { return sink_len_; }
    std::size_t recent_len() const { return recent_len_; }

    std::span<const float> key(std::size_t i) const { return {keys_.data() + i * width_, width_}; }
    std::span<const float> value(std::size_t i) const { return {values_.data() + i * width_, width_}; }
    const std::vector<float>& keys_flat() const { return keys_; }
    const std::vector<float>& values_flat() const { return values_; }
    const std::vector<std::size_t>& original_positions() const { return original_; }
    const std::vector<std::size_t>& assigned_positions() const { return assigned_; }
    const std::vector<float>& cum_scores() const { return scores_; }

    CacheEntry entry(std::size_t i) const {
        const auto k = key(i);
        const auto v = value(i);
        return {{k.begin(), k.end()}, {v.begin(), v.end()}, original_[i], assigned_[i], scores_[i]};
    }

    // Position id the next appended token receives.
    std::size_t next_position() const { return empty() ? base_position_ : assigned_.back() + 1; }

    // Only meaningful while empty: start assigning positions from `p`.
    void set_base_position(std::size_t p) { base_position_ = p; }

    void append(const Matrix& keys, const Matrix& values, std::span<const std::size_t> original_positions) {
        if (keys.rows() != original_positions.size() || values.rows() != original_positions.size() ||
            keys.cols() != width_ || values.cols() != width_) {
            throw InputError("cache append: key/value/position shapes disagree");
        }
        bool have_last = !empty();
        std::size_t last = have_last ? original_.back() : 0;
        for (auto p : original_positions) {
            if (have_last && p <= last) {
                throw InputError("cache append: original positions must be strictly increasing");
            }
            last = p;
            have_last = true;
        }
        std::size_t next = next_position();
        keys_.insert(keys_.end(), keys.flat().begin(), keys.flat().end());
        values_.insert(values_.end(), values.flat().begin(), values.flat().end());
        for (auto p : original_positions) {
            original_.push_back(p);
            assigned_.push_back(next++);
            scores_.push_back(0.0f);
        }
    }

    void accumulate_scores(std::span<const float> observer_attention) {
        if (observer_attention.size() != size()) {
            throw InputError("accumulate_scores: expected " + std::to_string(size()) + " values, got " +
                             std::to_string(observer_attention.size()));
        }
        for (float v : observer_attention) {
            if (!(v >= 0.0f)) {
                throw InputError("accumulate_scores: attention mass must be non-negative");
            }
        }
        for (std::size_t i = 0; i < size(); ++i) {
            scores_[i] += observer_attention[i];
        }
    }

    // Evicts down to the budget. Sink and recent entries always survive; the
    // remaining slots go to the best-ranked middle entries for the policy,
    // ties favouring the later original position. `final_token_attention`
    // is read only by TOVA. Returns evicted original positions, ascending.
    std::vector<std::size_t> compress(EvictionPolicy policy, std::span<const float> final_token_attention = {}) {
        if (budget_ != kUnbounded && budget_ < sink_len_ + recent_len_) {
            throw ConfigError("cache budget " + std::to_string(budget_) + " is smaller than sink + recent (" +
                              std::to_string(sink_len_ + recent_len_) + ")");
        }
        const std::size_t n = size();
        if (n <= budget_) {
            return {};
        }
        if (policy == EvictionPolicy::tova && final_token_attention.size() != n) {
            throw InputError("TOVA eviction needs final-token attention for every entry");
        }
        const std::size_t mid_begin = sink_len_;
        const std::size_t mid_end = n - recent_len_;
        const std::size_t slots = budget_ - sink_len_ - recent_len_;

        std::vector<std::size_t> middle(mid_end - mid_begin);
        std::iota(middle.begin(), middle.end(), mid_begin);
        auto rank_key = [&](std::size_t i) -> float {
            switch (policy) {
            case EvictionPolicy::h2o: return scores_[i];
            case EvictionPolicy::tova: return final_token_attention[i];
            case EvictionPolicy::streaming_llm: return 0.0f; // recency tie-break decides
            }
            return 0.0f;
        };
        std::sort(middle.begin(), middle.end(), [&](std::size_t a, std::size_t b) {
            const float ka = rank_key(a);
            const float kb = rank_key(b);
            if (ka != kb) return ka > kb;
            return original_[a] > original_[b];
        });

        std::vector<bool> keep(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            keep[i] = i < mid_begin || i >= mid_end;
        }
        for (std::size_t r = 0; r < slots && r < middle.size(); ++r) {
            keep[middle[r]] = true;
        }

        std::vector<std::size_t> evicted;
        std::size_t out = 0;
        std::size_t still_rotated = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!keep[i]) {
                evicted.push_back(original_[i]);
                continue;
            }
            if (out != i) {
                std::copy_n(keys_.begin() + static_cast<std::ptrdiff_t>(i * width_), width_,
                            keys_.begin() + static_cast<std::ptrdiff_t>(out * width_));
                std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(i * width_), width_,
                            values_.begin() + static_cast<std::ptrdiff_t>(out * width_));
                if (i < rotated_rows_) {
                    std::copy_n(rotated_.begin() + static_cast<std::ptrdiff_t>(i * width_), width_,
                                rotated_.begin() + static_cast<std::ptrdiff_t>(out * width_));
                }
                original_[out] = original_[i];
                assigned_[out] = assigned_[i];
                scores_[out] = scores_[i];
            }
            if (i < rotated_rows_) {
                ++still_rotated;
            }
            ++out;
        }
        keys_.resize(out * width_);
        values_.resize(out * width_);
        original_.resize(out);
        assigned_.resize(out);
        scores_.resize(out);
        rotated_rows_ = still_rotated;
        return evicted;
    }

    // assigned_position[i] = i.
    void reassign_positions() {
        for (std::size_t i = 0; i < size(); ++i) {
            if (assigned_[i] != i) {
                assigned_[i] = i;
                rotated_rows_ = std::min(rotated_rows_, i);
            }
        }
        if (empty()) {
            base_position_ = 0;
        }
    }

    // Key row i with rotary applied at its assigned position. Call
    // refresh_rotated_keys() after any mutation before reading.
    std::span<const float> rotated_key(std::size_t i) const { return {rotated_.data() + i * width_, width_}; }

    void refresh_rotated_keys(const RopeTable& rope) {
        rotated_.resize(size() * width_);
        const std::size_t hd = rope.head_dim();
        for (std::size_t i = rotated_rows_; i < size(); ++i) {
            std::span<float> dst(rotated_.data() + i * width_, width_);
            const auto src = key(i);
            std::copy(src.begin(), src.end(), dst.begin());
            for (std::size_t off = 0; off < width_; off += hd) {
                rope.rotate(dst.subspan(off, hd), assigned_[i]);
            }
        }
        rotated_rows_ = size();
    }

    std::string debug_table() const {
        std::ostringstream os;
        os << "original_position\tassigned_position\tcum_score\n";
        for (std::size_t i = 0; i < size(); ++i) {
            os << original_[i] << '\t' << assigned_[i] << '\t' << scores_[i] << '\n';
        }
        return os.str();
    }

private:
    std::size_t width_ = 0;
    std::size_t budget_ = kUnbounded;
    std::size_t sink_len_ = 0;
    std::size_t recent_len_ = 0;
    std::size_t base_position_ = 0;
    std::vector<float> keys_;
    std::vector<float> values_;
    std::vector<float> rotated_;
    std::size_t rotated_rows_ = 0;
    std::vector<std::size_t> original_;
    std::vector<std::size_t> assigned_;
    std::vector<float> scores_;
};

using KVCacheSet = std::vector<LayerKVCache>;

inline KVCacheSet make_cache_set(const ModelConfig& c, std::size_t budget = kUnbounded, std::size_t sink_len = 0,
                                 std::size_t recent_len = 0) {
    return KVCacheSet(c.n_layers, LayerKVCache(c.kv_width(), budget, sink_len, recent_len));
}

} // namespace reform
