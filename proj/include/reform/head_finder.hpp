#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "reform/datasets.hpp"
#include "reform/error.hpp"
#include "reform/head_spec.hpp"
#include "reform/model.hpp"
#include "reform/parallel.hpp"
#include "reform/pipeline.hpp"
#include "reform/random.hpp"
#include "reform/retrieval.hpp"

namespace reform {

// Mean normalized rank of the gold tokens: rank 1 is the highest score,
// tied blocks share their average rank, and each rank is divided by n.
inline double mnr(const std::vector<float>& scores, const std::vector<bool>& gold) {
    if (scores.size() != gold.size()) {
        throw DataError("mnr: scores and gold mask differ in length");
    }
    const auto n_gold = static_cast<std::size_t>(std::count(gold.begin(), gold.end(), true));
    if (n_gold == 0) {
        throw DataError("mnr: no gold tokens");
    }
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t k = 0; k < n;) {
        std::size_t e = k + 1;
        while (e < n && scores[order[e]] == scores[order[k]]) ++e;
        const double r = static_cast<double>(k) + static_cast<double>(e - k + 1) / 2.0;
        for (std::size_t i = k; i < e; ++i) rank[order[i]] = r;
        k = e;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (gold[i]) sum += rank[i];
    }
    return sum / (static_cast<double>(n_gold) * static_cast<double>(n));
}

// out[i] = mean of scores[i-window .. i+window], clipped to the bounds.
inline std::vector<float> smooth_mean(const std::vector<float>& scores, std::size_t window) {
    const std::size_t n = scores.size();
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + scores[i];
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i > window ? i - window : 0;
        const std::size_t hi = std::min(n - 1, i + window);
        out[i] = static_cast<float>((prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1));
    }
    return out;
}

struct HeadEvalConfig {
    std::size_t chunk_size = 512;
    std::size_t cache_budget = 512;
    std::size_t sink_len = 16;
    std::size_t recent_len = 16;
    EvictionPolicy policy = EvictionPolicy::h2o;
    std::size_t observer_window = 16;
    std::size_t pool_window = 20;
    std::size_t jobs = 1;
};

struct HeadEvalResult {
    HeadSpec spec;
    double mnr = 0.0;
    std::string dataset;
    std::size_t samples = 0;
};

// Every (layer, projection, head) candidate: per layer the query heads, key
// heads, value heads, the hidden state and the head-averaged attention score.
inline std::vector<HeadSpec> enumerate_candidates(const ModelConfig& c) {
    std::vector<HeadSpec> out;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        for (std::size_t h = 0; h < c.n_q_heads; ++h) out.push_back({l, Projection::query, h});
        for (std::size_t h = 0; h < c.n_kv_heads; ++h) out.push_back({l, Projection::key, h});
        for (std::size_t h = 0; h < c.n_kv_heads; ++h) out.push_back({l, Projection::value, h});
        out.push_back({l, Projection::hidden, 0});
        out.push_back({l, Projection::attention, 0});
    }
    return out;
}

namespace detail {

// Pre-rotary query-key score, averaged over query heads, max over the
// valid question tokens. states rows are [q (q_width) | k (kv_width)].
inline std::vector<float> attention_scores(const Matrix& states, const ModelConfig& c, std::size_t context_len,
                                           const std::vector<bool>& valid) {
    const std::size_t hd = c.head_dim;
    const std::size_t qw = c.q_width();
    const std::size_t group = c.group_size();
    std::vector<float> out(context_len, -std::numeric_limits<float>::infinity());
    for (std::size_t j = 0; j < valid.size(); ++j) {
        if (!valid[j]) continue;
        const auto q = states.row(context_len + j);
        for (std::size_t i = 0; i < context_len; ++i) {
            const auto k = states.row(i).subspan(qw);
            float acc = 0.0f;
            for (std::size_t h = 0; h < c.n_q_heads; ++h) {
                acc += dot(q.subspan(h * hd, hd), k.subspan((h / group) * hd, hd));
            }
            out[i] = std::max(out[i], acc / static_cast<float>(c.n_q_heads));
        }
    }
    return out;
}

inline std::vector<double> eval_sample(const Model& model, const PlantedSample& sample,
                                       const std::vector<HeadSpec>& candidates, const HeadEvalConfig& cfg) {
    const auto& mc = model.config();
    const std::size_t context_len = sample.question_begin;
    if (context_len == 0 || context_len >= sample.tokens.size()) {
        throw DataError("sample needs a nonempty context and question");
    }
    RecurrentOptions ro;
    ro.chunk_size = cfg.chunk_size;
    ro.cache_budget = cfg.cache_budget;
    ro.sink_len = cfg.sink_len;
    ro.recent_len = cfg.recent_len;
    ro.policy = cfg.policy;
    ro.observer_window = cfg.observer_window;
    ro.logits = LogitsMode::last_row;
    for (const auto& s : candidates) {
        validate_head_spec(s, mc);
        ro.exit_layer = std::max(ro.exit_layer, s.layer + 1);
        if (std::find(ro.taps.begin(), ro.taps.end(), s) == ro.taps.end()) ro.taps.push_back(s);
    }
    std::vector<Matrix> states(ro.taps.size());
    recurrent_forward(model, sample.tokens, context_len, ro, [&](const ForwardResult& fr, std::size_t, std::size_t) {
        for (std::size_t t = 0; t < ro.taps.size(); ++t) {
            const Matrix* m = fr.tapped.find(ro.taps[t]);
            for (std::size_t r = 0; r < m->rows(); ++r) states[t].append_row(m->row(r));
        }
    });

    const std::span<const TokenId> question(sample.tokens.data() + context_len, sample.tokens.size() - context_len);
    const auto valid = query_scoring_mask(question, 0);
    const std::vector<bool> gold(sample.gold_mask.begin(),
                                 sample.gold_mask.begin() + static_cast<std::ptrdiff_t>(context_len));
    std::vector<double> out;
    for (const auto& spec : candidates) {
        const auto t = static_cast<std::size_t>(std::find(ro.taps.begin(), ro.taps.end(), spec) - ro.taps.begin());
        std::vector<float> scores;
        if (spec.projection == Projection::attention) {
            scores = attention_scores(states[t], mc, context_len, valid);
        } else {
            const Matrix& m = states[t];
            scores = score(m.slice_rows(context_len, m.rows()), m.slice_rows(0, context_len), valid).scores;
        }
        out.push_back(mnr(smooth_mean(scores, cfg.pool_window), gold));
    }
    return out;
}

} // namespace detail

// MNR of every candidate on the dataset, averaged over samples. Samples run
// on up to cfg.jobs threads; the reduction is in sample order.
inline std::vector<HeadEvalResult> eval_heads_mnr(const Model& model, const PlantedDataset& dataset,
                                                  const std::vector<HeadSpec>& candidates, const HeadEvalConfig& cfg) {
    if (dataset.samples.empty()) {
        throw DataError("dataset has no samples");
    }
    const std::size_t n = dataset.samples.size();
    std::vector<std::vector<double>> per_sample(n);
    parallel_for(n, cfg.jobs, [&](std::size_t s) {
        per_sample[s] = detail::eval_sample(model, dataset.samples[s], candidates, cfg);
    });
    std::vector<HeadEvalResult> out;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        double sum = 0.0;
        for (std::size_t s = 0; s < n; ++s) sum += per_sample[s][c];
        out.push_back({candidates[c], sum / static_cast<double>(n), dataset.kind, n});
    }
    return out;
}

inline HeadEvalResult eval_head_mnr(const Model& model, const PlantedDataset& dataset, const HeadSpec& candidate,
                                    const HeadEvalConfig& cfg) {
    return eval_heads_mnr(model, dataset, {candidate}, cfg).front();
}

namespace detail {

inline std::vector<HeadEvalResult> ranked(std::vector<HeadEvalResult> r) {
    std::stable_sort(r.begin(), r.end(), [](const HeadEvalResult& a, const HeadEvalResult& b) { return a.mnr < b.mnr; });
    return r;
}

// Only per-head Q/K/V states can feed the pipeline's embeddings.
inline bool pipeline_usable(const HeadSpec& s) { return s.per_head(); }

} // namespace detail

// n_per_dataset lowest-MNR heads from each dataset. Pattern-matching picks
// are limited to layers strictly below depth_cap * n_layers; QA picks skip
// heads already chosen and backfill with the next best.
inline std::vector<HeadSpec> select_heads(const std::vector<HeadEvalResult>& pattern,
                                          const std::vector<HeadEvalResult>& qa, std::size_t n_layers,
                                          std::size_t n_per_dataset = 2, double depth_cap = 0.7) {
    if (pattern.empty() || qa.empty()) {
        throw SelectionError("select_heads needs results for both datasets");
    }
    std::vector<HeadSpec> chosen;
    const auto take = [&](const std::vector<HeadEvalResult>& results, bool capped, const char* name) {
        std::size_t got = 0;
        for (const auto& r : detail::ranked(results)) {
            if (got == n_per_dataset) break;
            if (!detail::pipeline_usable(r.spec)) continue;
            if (capped && !(static_cast<double>(r.spec.layer) < depth_cap * static_cast<double>(n_layers))) continue;
            if (std::find(chosen.begin(), chosen.end(), r.spec) != chosen.end()) continue;
            chosen.push_back(r.spec);
            ++got;
        }
        if (got < n_per_dataset) {
            throw SelectionError(std::string("not enough eligible ") + name + " candidates (" + std::to_string(got) +
                                 " of " + std::to_string(n_per_dataset) + ")");
        }
    };
    take(pattern, true, "pattern-matching");
    take(qa, false, "QA");
    return chosen;
}

// Heads with the worst MNR averaged over both datasets.
inline std::vector<HeadSpec> bad_heads(const std::vector<HeadEvalResult>& pattern,
                                       const std::vector<HeadEvalResult>& qa, std::size_t n) {
    std::vector<HeadEvalResult> avg;
    for (const auto& p : pattern) {
        if (!detail::pipeline_usable(p.spec)) continue;
        for (const auto& q : qa) {
            if (q.spec == p.spec) {
                avg.push_back({p.spec, (p.mnr + q.mnr) / 2.0, "both", p.samples + q.samples});
                break;
            }
        }
    }
    std::stable_sort(avg.begin(), avg.end(), [](const HeadEvalResult& a, const HeadEvalResult& b) { return a.mnr > b.mnr; });
    if (avg.size() < n) {
        throw SelectionError("not enough candidates for the bad-head set");
    }
    std::vector<HeadSpec> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(avg[i].spec);
    return out;
}

// n distinct Q/K/V heads drawn with the given seed.
inline std::vector<HeadSpec> random_heads(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
    std::vector<HeadSpec> pool;
    for (const auto& s : enumerate_candidates(c)) {
        if (detail::pipeline_usable(s)) pool.push_back(s);
    }
    if (pool.size() < n) {
        throw SelectionError("model has fewer than " + std::to_string(n) + " heads");
    }
    Rng rng(seed);
    rng.shuffle(pool);
    pool.resize(n);
    return pool;
}

// layer \t projection \t head \t mnr \t dataset, ascending MNR within each
// dataset (datasets in first-appearance order).
inline std::string head_eval_report(const std::vector<HeadEvalResult>& results) {
    std::vector<std::string> order;
    for (const auto& r : results) {
        if (std::find(order.begin(), order.end(), r.dataset) == order.end()) order.push_back(r.dataset);
    }
    std::ostringstream os;
    os.precision(9);
    os << "layer\tprojection\thead\tmnr\tdataset\n";
    for (const auto& name : order) {
        std::vector<HeadEvalResult> rows;
        for (const auto& r : results) {
            if (r.dataset == name) rows.push_back(r);
        }
        for (const auto& r : detail::ranked(rows)) {
            os << r.spec.layer << '\t' << to_string(r.spec.projection) << '\t' << r.spec.head << '\t' << r.mnr << '\t'
               << r.dataset << '\n';
        }
    }
    return os.str();
}

} // namespace reform
