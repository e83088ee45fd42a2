// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance                      run everything
//   acceptance --criterion <name>   run one (exit 1 on FAIL)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "oracle/dense_oracle.hpp"
#include "test_util.hpp"

using namespace reform;

namespace {

// tolerances
constexpr double kDenseLogitTol = 1e-4;
constexpr double kDenseSeconds = 60.0;
constexpr double kCombineTol = 1e-6;
constexpr double kMeanPoolTol = 1e-6;
constexpr double kProbeSeconds = 300.0;

struct Verdict {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Dense equivalence: unbounded cache + full recomputation + exit at the top
// layer reproduces the dense baseline, which itself matches a double
// precision reference.
Verdict dense_equivalence() {
    const auto t0 = Clock::now();
    Rng rng(101);
    std::size_t pairs = 0, token_mismatch = 0, logit_fail = 0, oracle_fail = 0;
    double worst = 0.0, worst_oracle = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto cfg = testutil::tiny_config(2 + seed % 3, 32, 4, seed % 2 ? 2 : 4, 8, 48);
        const auto model = testutil::tiny_model(1000 + seed, cfg);
        const oracle::DenseOracle ref(cfg, model.weights());
        for (int p = 0; p < 5; ++p) {
            const auto input = testutil::random_prompt(rng, 20 + rng.below(80), 2 + rng.below(8));
            PipelineConfig pc;
            pc.chunk_size = 8 + rng.below(32);
            pc.cache_budget = input.size() + rng.below(10);
            pc.sink_len = rng.below(4);
            pc.recent_len = rng.below(4);
            pc.recomputation_budget = input.size() + rng.below(10);
            pc.neighbor_window = rng.below(4);
            pc.observer_window = 1 + rng.below(8);
            pc.selected_heads = {{cfg.n_layers - 1, Projection::value, 0}, {0, Projection::key, 1}};
            PrefillResult r = reform_prefill(model, input, pc);
            PrefillResult d = dense_prefill(model, input);
            const double err = testutil::rel_err(r.last_logits, d.last_logits);
            const double err_ref = testutil::rel_err(d.last_logits, ref.last_logits(input));
            worst = std::max(worst, err);
            worst_oracle = std::max(worst_oracle, err_ref);
            logit_fail += err > kDenseLogitTol;
            oracle_fail += err_ref > kDenseLogitTol;
            const auto a = generate(model, r, 12);
            const auto b = generate(model, d, 12);
            token_mismatch += a != b;
            ++pairs;
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << pairs << " pairs, token mismatches " << token_mismatch << ", logit rel err max " << worst
       << " (vs reference " << worst_oracle << "), " << secs << " s";
    return {pairs >= 100 && token_mismatch == 0 && logit_fail == 0 && oracle_fail == 0 && secs < kDenseSeconds,
            os.str()};
}

double ref_cos(const std::vector<float>& a, const std::vector<float>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// cos of two combined vectors == mean of per-head cosines.
Verdict combination_identity() {
    Rng rng(202);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t heads = 1 + rng.below(8);
        std::vector<std::vector<float>> xa(heads), xb(heads);
        double mean = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t dim = 1 + rng.below(64);
            const double scale_a = std::exp(rng.uniform(-4, 4));
            const double scale_b = std::exp(rng.uniform(-4, 4));
            xa[h].resize(dim);
            xb[h].resize(dim);
            for (auto& v : xa[h]) v = static_cast<float>(rng.normal() * scale_a);
            for (auto& v : xb[h]) v = static_cast<float>(rng.normal() * scale_b);
            mean += ref_cos(xa[h], xb[h]);
        }
        mean /= static_cast<double>(heads);
        std::vector<std::span<const float>> sa, sb;
        for (std::size_t h = 0; h < heads; ++h) {
            sa.emplace_back(xa[h]);
            sb.emplace_back(xb[h]);
        }
        const auto ea = combine(sa);
        const auto eb = combine(sb);
        worst = std::max(worst, std::abs(static_cast<double>(cosine(ea, eb)) - mean));
    }
    std::ostringstream os;
    os << "1000 sets, max |cos(comb) - mean cos| = " << worst;
    return {worst <= kCombineTol, os.str()};
}

// Random chunk streams through one cache per policy.
Verdict cache_budget() {
    std::size_t violations = 0, compressions = 0;
    std::ostringstream os;
    for (auto policy : {EvictionPolicy::h2o, EvictionPolicy::streaming_llm, EvictionPolicy::tova}) {
        Rng rng(303 + static_cast<std::uint64_t>(policy));
        std::size_t steps = 0;
        while (steps < 10000) {
            const std::size_t sink = rng.below(5);
            const std::size_t recent = rng.below(5);
            const std::size_t budget = sink + recent + rng.below(40);
            const std::size_t width = 2;
            LayerKVCache cache(width, budget, sink, recent);
            std::size_t next_pos = 0;
            const std::size_t stream_steps = 20 + rng.below(80);
            for (std::size_t s = 0; s < stream_steps && steps < 10000; ++s, ++steps) {
                const std::size_t chunk = 1 + rng.below(24);
                Matrix k(chunk, width), v(chunk, width);
                for (auto& x : k.flat()) x = static_cast<float>(rng.normal());
                for (auto& x : v.flat()) x = static_cast<float>(rng.normal());
                std::vector<std::size_t> pos(chunk);
                std::iota(pos.begin(), pos.end(), next_pos);
                next_pos += chunk;
                cache.append(k, v, pos);
                std::vector<float> obs(cache.size()), fin(cache.size());
                for (auto& x : obs) x = rng.below(4) == 0 ? 0.5f : static_cast<float>(rng.uniform());
                for (auto& x : fin) x = static_cast<float>(rng.uniform());
                cache.accumulate_scores(obs);
                const auto before = cache.original_positions();
                const auto evicted = cache.compress(policy, fin);
                cache.reassign_positions();
                ++compressions;

                const auto& orig = cache.original_positions();
                bool bad = cache.size() > budget;
                bad |= before.size() != orig.size() + evicted.size();
                bad |= !std::is_sorted(orig.begin(), orig.end());
                for (std::size_t p = 0; p < std::min(sink, next_pos); ++p) {
                    bad |= !std::binary_search(orig.begin(), orig.end(), p);
                }
                for (std::size_t p = next_pos - std::min(recent, next_pos); p < next_pos; ++p) {
                    bad |= !std::binary_search(orig.begin(), orig.end(), p);
                }
                for (std::size_t i = 0; i < cache.size(); ++i) bad |= cache.assigned_positions()[i] != i;
                for (auto e : evicted) bad |= std::binary_search(orig.begin(), orig.end(), e);
                violations += bad;
            }
        }
        os << to_string(policy) << " " << steps << " steps; ";
    }
    os << compressions << " compressions, " << violations << " violations";
    return {violations == 0, os.str()};
}

// Rank by counting: 1 + #strictly greater + (#equal others) / 2.
double naive_mnr(const std::vector<float>& s, const std::vector<bool>& g) {
    const std::size_t n = s.size();
    double sum = 0.0;
    std::size_t n_gold = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!g[i]) continue;
        std::size_t greater = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (s[j] > s[i]) ++greater;
            if (j != i && s[j] == s[i]) ++equal;
        }
        sum += 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
        ++n_gold;
    }
    return sum / (static_cast<double>(n_gold) * static_cast<double>(n));
}

Verdict mnr_oracle() {
    Rng rng(404);
    std::size_t mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng.below(200);
        std::vector<float> s(n);
        // coarse levels force ties
        const std::size_t levels = 1 + rng.below(t % 2 ? 5 : 1000);
        for (auto& v : s) v = static_cast<float>(rng.below(levels)) / static_cast<float>(levels);
        std::vector<bool> g(n, false);
        g[rng.below(n)] = true;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng.below(10) == 0) g[i] = true;
        }
        mismatches += mnr(s, g) != naive_mnr(s, g);
    }

    // top-1 of 100, top-4 of 100, and a lone gold token ranked last of 10
    std::vector<float> s1(100, 0.0f);
    std::vector<bool> g1(100, false);
    s1[37] = 1.0f;
    g1[37] = true;
    std::vector<float> s2(100);
    std::vector<bool> g2(100, false);
    for (std::size_t i = 0; i < 100; ++i) s2[i] = static_cast<float>(100 - i);
    for (std::size_t i = 0; i < 4; ++i) g2[i] = true;
    std::vector<float> s3(10, 1.0f);
    std::vector<bool> g3(10, false);
    s3[4] = 0.0f;
    g3[4] = true;
    const double a = mnr(s1, g1), b = mnr(s2, g2), c = mnr(s3, g3);
    const bool closed = a == 0.01 && b == 0.025 && c == 1.0;

    std::ostringstream os;
    os << "1000 random cases, " << mismatches << " mismatches; closed forms " << a << " " << b << " " << c;
    return {mismatches == 0 && closed, os.str()};
}

Verdict probe_niah() {
    const auto t0 = Clock::now();
    const ProbeModel pm = make_probe_model();
    const Model model(pm.config, pm.weights);
    const Tokenizer tok;
    const std::size_t budget = 128;
    PipelineConfig cfg;
    cfg.chunk_size = 128;
    cfg.cache_budget = budget;
    cfg.sink_len = 4;
    cfg.recent_len = 4;
    cfg.recomputation_budget = 96;
    cfg.selected_heads = {pm.designated};

    NiahGridSpec grid;
    grid.lengths = {budget * 4, budget * 8, budget * 16, budget * 32};
    grid.depths = {0, 25, 50, 75, 100};
    grid.samples = 2;
    grid.max_new_tokens = 8;
    grid.seed = 11;
    grid.needle = probe_niah_spec();
    const auto corpus = synthetic_corpus(grid.lengths.back(), 17);

    const auto r = run_niah_grid(model, tok, corpus, cfg, Method::reform, grid);
    auto mid = grid;
    mid.depths = {25, 50, 75};
    const auto t = run_niah_grid(model, tok, corpus, cfg, Method::truncation, mid);

    double worst_sel = 1.0;
    for (const auto& c : r.cells) worst_sel = std::min(worst_sel, c.selection_recall);
    double trunc_best = 0.0;
    for (const auto& c : t.cells) trunc_best = std::max(trunc_best, c.recall);
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "lengths up to " << grid.lengths.back() << " (32x budget " << budget << "): min selection recall "
       << worst_sel << ", reform answer recall " << r.mean_recall() << ", truncation mid-depth recall max "
       << trunc_best << ", " << secs << " s";
    return {worst_sel == 1.0 && trunc_best == 0.0 && secs < kProbeSeconds, os.str()};
}

Verdict work_accounting() {
    Rng rng(606);
    std::size_t formula_fail = 0, compared = 0, ops_fail = 0;
    std::ostringstream fails;
    for (int t = 0; t < 50; ++t) {
        const std::size_t layers = 2 + rng.below(3);
        const auto mc = testutil::tiny_config(layers);
        const auto model = testutil::tiny_model(700 + t, mc);
        PipelineConfig pc;
        pc.cache_budget = 16 + rng.below(48);
        pc.chunk_size = 8 + rng.below(pc.cache_budget);
        pc.sink_len = rng.below(5);
        pc.recent_len = rng.below(5);
        pc.observer_window = 1 + rng.below(8);
        pc.neighbor_window = rng.below(4);
        const std::size_t query_len = 2 + rng.below(6);
        pc.recomputation_budget = pc.sink_len + pc.recent_len + query_len + 1 + rng.below(pc.cache_budget);
        pc.selected_heads = {{rng.below(layers), Projection::value, rng.below(2)}};
        const std::size_t exit_layer = pc.derived_exit_layer();
        const std::size_t context = 10 + rng.below(pc.cache_budget * 8);
        const auto input = testutil::random_prompt(rng, context, query_len);
        const std::size_t n = input.size();

        PrefillResult r = reform_prefill(model, input, pc);
        generate(model, r, 1 + rng.below(6), special::pad);
        std::size_t chunked = 0;
        for (const auto& [b, e] : chunk_bounds(r.context_len, n, pc.chunk_size)) chunked += e - b;
        const std::size_t expect =
            chunked * exit_layer + r.selection.indices.size() * layers + r.stats.decode_steps * layers;
        if (r.stats.layer_executions != expect || chunked != n) {
            ++formula_fail;
        }

        if (n > pc.cache_budget) {
            PrefillResult d = dense_prefill(model, input);
            // same number of fed-back tokens as the REFORM run
            generate(model, d, r.stats.decode_steps + 1, special::pad);
            ++compared;
            if (r.stats.attention_score_ops >= d.stats.attention_score_ops) {
                ++ops_fail;
                fails << " [n=" << n << " L=" << layers << " exit=" << exit_layer << " chunk=" << pc.chunk_size
                      << " budget=" << pc.cache_budget << " recompute=" << pc.recomputation_budget
                      << ": reform " << r.stats.attention_score_ops << " >= dense " << d.stats.attention_score_ops
                      << "]";
            }
        }
    }
    // Outside the sampled domain: input barely over budget with exit at the
    // top layer, so the chunked pass is already dense. Reported, not gated.
    std::size_t edge_reform = 0, edge_dense = 0;
    {
        const auto model = testutil::tiny_model(3);
        PipelineConfig pc;
        pc.chunk_size = 16;
        pc.cache_budget = 32;
        pc.sink_len = 2;
        pc.recent_len = 2;
        pc.recomputation_budget = 32;
        pc.selected_heads = {{1, Projection::value, 0}};
        Rng edge_rng(1);
        const auto input = testutil::random_prompt(edge_rng, 40, 4);
        edge_reform = reform_prefill(model, input, pc).stats.attention_score_ops;
        edge_dense = dense_prefill(model, input).stats.attention_score_ops;
    }
    std::ostringstream os;
    os << "50 configs, formula mismatches " << formula_fail << "; ops comparisons " << compared << ", reform not cheaper in "
       << ops_fail << fails.str() << "; note: n=45 budget=32 exit=L gives reform " << edge_reform << " vs dense "
       << edge_dense;
    return {formula_fail == 0 && ops_fail == 0, os.str()};
}

std::vector<float> naive_max(const std::vector<float>& s, std::size_t w) {
    std::vector<float> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j < s.size(); ++j) {
            if ((i > j ? i - j : j - i) <= w) best = std::max(best, s[j]);
        }
        out[i] = best;
    }
    return out;
}

std::vector<double> naive_mean(const std::vector<float>& s, std::size_t w) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        double sum = 0;
        std::size_t cnt = 0;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if ((i > j ? i - j : j - i) <= w) {
                sum += s[j];
                ++cnt;
            }
        }
        out[i] = sum / static_cast<double>(cnt);
    }
    return out;
}

Verdict pooling_oracles() {
    Rng rng(808);
    std::size_t max_fail = 0;
    double worst_mean = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng.below(300);
        const std::size_t w = rng.below(t % 3 ? 40 : 400);
        std::vector<float> s(n);
        for (auto& v : s) v = static_cast<float>(rng.uniform(-1, 1));
        if (t % 5 == 0) {
            for (auto& v : s) v = std::round(v * 3.0f) / 3.0f; // plateaus
        }
        max_fail += smooth_max(s, w) != naive_max(s, w);
        const auto m = smooth_mean(s, w);
        const auto ref = naive_mean(s, w);
        for (std::size_t i = 0; i < n; ++i) worst_mean = std::max(worst_mean, std::abs(m[i] - ref[i]));
    }
    std::ostringstream os;
    os << "1000 vectors, max-pool mismatches " << max_fail << ", mean-pool max abs err " << worst_mean;
    return {max_fail == 0 && worst_mean <= kMeanPoolTol, os.str()};
}

// Growing the budget only adds positions; positive scaling and shifting of
// scores never changes the selection.
Verdict selection_properties() {
    Rng rng(909);
    std::size_t mono_fail = 0, scale_fail = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t ctx = 1 + rng.below(200);
        const std::size_t input = ctx + rng.below(10);
        std::vector<float> s(ctx);
        const std::size_t levels = t % 2 ? 4 : 1 << 20;
        for (auto& v : s) v = static_cast<float>(rng.below(levels)) / static_cast<float>(levels);
        const std::size_t sink = rng.below(4), recent = rng.below(4);
        const std::size_t forced = std::min(input, sink + recent + (input - ctx));
        std::vector<std::size_t> prev;
        for (std::size_t b = forced; b <= input + 1; ++b) {
            const auto sel = select(s, b, sink, recent, input);
            mono_fail += sel.indices.size() != std::min(b, input);
            mono_fail += !std::includes(sel.indices.begin(), sel.indices.end(), prev.begin(), prev.end());
            prev = sel.indices;
        }
        const float a = static_cast<float>(std::ldexp(1.0, static_cast<int>(rng.below(9)) - 4));
        std::vector<float> scaled(s);
        for (auto& v : scaled) v *= a;
        const std::size_t b = forced + rng.below(input - forced + 1);
        scale_fail += select(s, b, sink, recent, input).indices != select(scaled, b, sink, recent, input).indices;
    }
    std::ostringstream os;
    os << "1000 vectors, monotonicity violations " << mono_fail << ", scale-invariance violations " << scale_fail;
    return {mono_fail == 0 && scale_fail == 0, os.str()};
}

const std::vector<std::pair<std::string, std::function<Verdict()>>>& criteria() {
    static const std::vector<std::pair<std::string, std::function<Verdict()>>> all{
        {"dense_equivalence", dense_equivalence},   {"combination_identity", combination_identity},
        {"cache_budget", cache_budget},             {"mnr_oracle", mnr_oracle},
        {"probe_niah", probe_niah},                 {"work_accounting", work_accounting},
        {"pooling_oracles", pooling_oracles},       {"selection_properties", selection_properties},
    };
    return all;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string only;
    std::vector<std::string> names;
    for (const auto& [name, fn] : criteria()) names.push_back(name);
    app.add_option("--criterion", only, "run a single criterion")->check(CLI::IsMember(names));
    CLI11_PARSE(app, argc, argv);

    int failed = 0;
    for (const auto& [name, fn] : criteria()) {
        if (!only.empty() && name != only) continue;
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
        failed += !v.pass;
    }
    return failed == 0 ? 0 : 1;
}
