#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "reform/error.hpp"
#include "reform/tensor.hpp"
#include "reform/tokenizer.hpp"

namespace reform {

struct SignificanceScores {
    std::vector<float> scores; // one per context token
    bool query_max_pooled = true;
    std::size_t neighbor_window = 0; // 0 until smooth_max is applied
};

struct SelectionSet {
    std::vector<std::size_t> indices; // ascending original positions
    std::size_t budget = 0;
    std::size_t sink_len = 0;
    std::size_t recent_len = 0;

    bool contains(std::size_t pos) const { return std::binary_search(indices.begin(), indices.end(), pos); }
};

inline float cosine(std::span<const float> a, std::span<const float> b) {
    const float na = l2_norm(a);
    const float nb = l2_norm(b);
    if (na == 0.0f || nb == 0.0f) {
        return 0.0f;
    }
    return dot(a, b) / (na * nb);
}

// scores[i] = max over valid query rows j of cosine(query[j], context[i]).
inline SignificanceScores score(const Matrix& query_embs, const Matrix& context_embs,
                                const std::vector<bool>& valid_query_mask) {
    if (query_embs.rows() > 0 && context_embs.rows() > 0 && query_embs.cols() != context_embs.cols()) {
        throw SchemaError("query and context embeddings differ in dimension");
    }
    if (valid_query_mask.size() != query_embs.rows()) {
        throw QueryError("query mask length does not match the query");
    }
    std::vector<std::size_t> valid;
    for (std::size_t j = 0; j < valid_query_mask.size(); ++j) {
        if (valid_query_mask[j]) valid.push_back(j);
    }
    if (valid.empty()) {
        throw QueryError("every query token is masked");
    }
    // Precompute unit query rows so each context row costs one norm.
    Matrix unit(valid.size(), query_embs.cols());
    for (std::size_t v = 0; v < valid.size(); ++v) {
        const auto src = query_embs.row(valid[v]);
        const float n = l2_norm(src);
        auto dst = unit.row(v);
        for (std::size_t d = 0; d < src.size(); ++d) {
            dst[d] = n > 0.0f ? src[d] / n : 0.0f;
        }
    }
    SignificanceScores out;
    out.scores.resize(context_embs.rows());
    for (std::size_t i = 0; i < context_embs.rows(); ++i) {
        const auto c = context_embs.row(i);
        const float nc = l2_norm(c);
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t v = 0; v < unit.rows(); ++v) {
            best = std::max(best, nc > 0.0f ? dot(unit.row(v), c) / nc : 0.0f);
        }
        out.scores[i] = best;
    }
    return out;
}

// out[i] = max(scores[i-window .. i+window]) clipped to bounds; O(n).
inline std::vector<float> smooth_max(const std::vector<float>& scores, std::size_t window) {
    const std::size_t n = scores.size();
    std::vector<float> out(n);
    std::deque<std::size_t> dq;
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t hi = window >= n - i ? n - 1 : i + window;
        for (; j <= hi; ++j) {
            while (!dq.empty() && scores[dq.back()] <= scores[j]) dq.pop_back();
            dq.push_back(j);
        }
        const std::size_t lo = i >= window ? i - window : 0;
        while (dq.front() < lo) dq.pop_front();
        out[i] = scores[dq.front()];
    }
    return out;
}

inline void smooth_max(SignificanceScores& s, std::size_t window) {
    s.scores = smooth_max(s.scores, window);
    s.neighbor_window = window;
}

// Forced positions (sink, recent, and the query [context_len, input_len))
// are counted inside total_budget; the rest goes to the highest-scoring
// context positions, earlier position first among equal scores.
inline SelectionSet select(const std::vector<float>& scores, std::size_t total_budget, std::size_t sink_len,
                           std::size_t recent_len, std::size_t input_len) {
    const std::size_t context_len = scores.size();
    if (context_len > input_len) {
        throw InputError("more scores than input tokens");
    }
    SelectionSet sel{{}, total_budget, sink_len, recent_len};
    if (total_budget >= input_len) {
        sel.indices.resize(input_len);
        std::iota(sel.indices.begin(), sel.indices.end(), std::size_t{0});
        return sel;
    }
    std::vector<bool> forced(input_len, false);
    for (std::size_t i = 0; i < std::min(sink_len, input_len); ++i) forced[i] = true;
    for (std::size_t i = input_len - std::min(recent_len, input_len); i < input_len; ++i) forced[i] = true;
    for (std::size_t i = context_len; i < input_len; ++i) forced[i] = true;
    const auto n_forced = static_cast<std::size_t>(std::count(forced.begin(), forced.end(), true));
    if (n_forced > total_budget) {
        throw SelectionError("recomputation budget " + std::to_string(total_budget) +
                             " cannot hold the " + std::to_string(n_forced) + " forced sink/recent/query tokens");
    }
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < context_len; ++i) {
        if (!forced[i]) candidates.push_back(i);
    }
    const std::size_t take = std::min(total_budget - n_forced, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    for (std::size_t r = 0; r < take; ++r) forced[candidates[r]] = true;
    for (std::size_t i = 0; i < input_len; ++i) {
        if (forced[i]) sel.indices.push_back(i);
    }
    return sel;
}

inline std::vector<TokenId> gather(const std::vector<TokenId>& tokens, const SelectionSet& selection) {
    std::vector<TokenId> out;
    out.reserve(selection.indices.size());
    for (auto i : selection.indices) {
        if (i >= tokens.size()) {
            throw std::out_of_range("selection index " + std::to_string(i) + " beyond input length");
        }
        out.push_back(tokens[i]);
    }
    return out;
}

// position \t score \t selected (context positions only).
inline std::string selection_debug_tsv(const std::vector<float>& scores, const SelectionSet& sel) {
    std::ostringstream os;
    os << "position\tscore\tselected\n";
    for (std::size_t i = 0; i < scores.size(); ++i) {
        os << i << '\t' << scores[i] << '\t' << (sel.contains(i) ? 1 : 0) << '\n';
    }
    return os.str();
}

} // namespace reform
