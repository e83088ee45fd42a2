#include <gtest/gtest.h>

#include <fstream>

#include "oracle/dense_oracle.hpp"
#include "test_util.hpp"

using namespace reform;

namespace {

PipelineConfig small_config() {
    PipelineConfig cfg;
    cfg.chunk_size = 16;
    cfg.cache_budget = 24;
    cfg.sink_len = 2;
    cfg.recent_len = 4;
    cfg.selected_heads = {{0, Projection::value, 1}};
    cfg.recomputation_budget = 24;
    cfg.neighbor_window = 2;
    cfg.observer_window = 4;
    return cfg;
}

} // namespace

TEST(SplitQuery, SuffixRule) {
    std::vector<TokenId> in(10);
    for (TokenId i = 0; i < 10; ++i) in[i] = i;
    QuerySplitRule r;
    r.kind = QuerySplitRule::Kind::suffix;
    r.suffix_len = 4;
    const auto [c, q] = split_query(in, r);
    EXPECT_EQ(c.size(), 6u);
    EXPECT_EQ(q, (std::vector<TokenId>{6, 7, 8, 9}));
    r.suffix_len = 10;
    EXPECT_THROW(split_query(in, r), SplitError);
}

TEST(SplitQuery, LastSeparatorStaysWithQuery) {
    std::vector<TokenId> in{1, 2, special::sep, 3, 4, 5, special::sep, 7, 8};
    const auto [c, q] = split_query(in, {});
    EXPECT_EQ(c, (std::vector<TokenId>{1, 2, special::sep, 3, 4, 5}));
    EXPECT_EQ(q, (std::vector<TokenId>{special::sep, 7, 8}));
    EXPECT_THROW(split_query({1, 2, 3}, {}), SplitError);
    EXPECT_THROW(split_query({}, {}), SplitError);
}

TEST(ChunkBounds, ShortLastContextChunkThenQuery) {
    const auto b = chunk_bounds(37, 42, 16);
    ASSERT_EQ(b.size(), 4u);
    EXPECT_EQ(b[2], (std::pair<std::size_t, std::size_t>{32, 37}));
    EXPECT_EQ(b[3], (std::pair<std::size_t, std::size_t>{37, 42}));
}

TEST(PipelineConfig, Validation) {
    const auto mc = testutil::tiny_config();
    auto cfg = small_config();
    EXPECT_NO_THROW(cfg.validate(mc));
    EXPECT_EQ(cfg.derived_exit_layer(), 1u);
    auto bad = cfg;
    bad.exit_layer = 2;
    EXPECT_THROW(bad.validate(mc), ConfigError);
    bad = cfg;
    bad.cache_budget = 5;
    EXPECT_THROW(bad.validate(mc), ConfigError);
    bad = cfg;
    bad.selected_heads.clear();
    EXPECT_THROW(bad.validate(mc), ConfigError);
    bad = cfg;
    bad.selected_heads = {{0, Projection::attention, 0}};
    EXPECT_THROW(bad.validate(mc), ConfigError);
    bad = cfg;
    bad.chunk_size = 0;
    EXPECT_THROW(bad.validate(mc), ConfigError);
}

TEST(PipelineConfig, FileRoundTrip) {
    auto cfg = small_config();
    cfg.eviction = EvictionPolicy::tova;
    cfg.query_split.kind = QuerySplitRule::Kind::suffix;
    cfg.query_split.suffix_len = 7;
    cfg.embedding_precision = StorePrecision::f32;
    cfg.selected_heads = {{0, Projection::value, 1}, {1, Projection::key, 0}};
    const auto text = format_pipeline_config(cfg);
    const auto back = parse_pipeline_config(text);
    EXPECT_EQ(format_pipeline_config(back), text);
    EXPECT_EQ(back.selected_heads, cfg.selected_heads);

    const auto p = testutil::temp_path("pipeline.cfg");
    {
        std::ofstream out(p);
        out << "# comment\nchunk_size = 64  # trailing\n\nselected_heads = 1:value:0\n";
    }
    const auto loaded = load_pipeline_config(p);
    EXPECT_EQ(loaded.chunk_size, 64u);
    EXPECT_EQ(loaded.selected_heads.size(), 1u);
    EXPECT_THROW(parse_pipeline_config("bogus = 1\n"), ConfigError);
    EXPECT_THROW(parse_pipeline_config("chunk_size 3\n"), ConfigError);
    EXPECT_THROW(parse_pipeline_config("chunk_size = -3\n"), ConfigError);
    EXPECT_THROW(load_pipeline_config(testutil::temp_path("nope.cfg")), IoError);
}

TEST(Pipeline, DegenerateConfigMatchesDense) {
    Rng rng(10);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto m = testutil::tiny_model(seed);
        const auto input = testutil::random_prompt(rng, 40, 6);
        auto cfg = small_config();
        cfg.cache_budget = input.size();
        cfg.recomputation_budget = input.size();
        cfg.selected_heads = {{1, Projection::key, 0}};
        PrefillResult r = reform_prefill(m, input, cfg);
        PrefillResult d = dense_prefill(m, input);
        EXPECT_EQ(r.selection.indices.size(), input.size());
        EXPECT_LT(testutil::rel_err(r.last_logits, d.last_logits), 1e-6);
        EXPECT_EQ(generate(m, r, 10), generate(m, d, 10));
    }
}

TEST(Pipeline, DenseAgreesWithOracle) {
    const auto m = testutil::tiny_model(21);
    const oracle::DenseOracle ref(m.config(), m.weights());
    Rng rng(4);
    const auto input = testutil::random_prompt(rng, 30, 4);
    PrefillResult d = dense_prefill(m, input);
    EXPECT_LT(testutil::rel_err(d.last_logits, ref.last_logits(input)), 1e-4);
}

TEST(Pipeline, MemoryCeilingAndEarlyExit) {
    const auto m = testutil::tiny_model(2, testutil::tiny_config(3));
    Rng rng(6);
    const auto input = testutil::random_prompt(rng, 150, 5);
    auto cfg = small_config();
    cfg.selected_heads = {{1, Projection::value, 0}};
    const auto r = reform_prefill(m, input, cfg);
    ASSERT_EQ(r.stats.prefill_peak_entries.size(), 3u);
    for (std::size_t l = 0; l < 2; ++l) {
        EXPECT_LE(r.stats.prefill_peak_entries[l], cfg.cache_budget + cfg.chunk_size);
        EXPECT_GT(r.stats.prefill_peak_entries[l], cfg.cache_budget);
    }
    EXPECT_EQ(r.stats.prefill_peak_entries[2], 0u);
    for (const auto& c : r.cache) EXPECT_EQ(c.size(), r.selection.indices.size());
    EXPECT_EQ(r.selection.indices.size(), cfg.recomputation_budget);
    EXPECT_EQ(r.embeddings.token_count(), input.size());
    EXPECT_EQ(r.stats.embedding_store_bytes, input.size() * m.config().head_dim * 2);
}

TEST(Pipeline, RecomputationIsDenseForwardOfGathered) {
    const auto m = testutil::tiny_model(8);
    Rng rng(7);
    const auto input = testutil::random_prompt(rng, 100, 6);
    const auto r = reform_prefill(m, input, small_config());
    const auto d = dense_prefill(m, gather(input, r.selection));
    EXPECT_EQ(r.last_logits, d.last_logits);
    for (std::size_t l = 0; l < r.cache.size(); ++l) {
        EXPECT_EQ(r.cache[l].keys_flat(), d.cache[l].keys_flat());
        EXPECT_EQ(r.cache[l].values_flat(), d.cache[l].values_flat());
        EXPECT_EQ(r.cache[l].original_positions(), r.selection.indices);
        for (std::size_t i = 0; i < r.cache[l].size(); ++i) EXPECT_EQ(r.cache[l].assigned_positions()[i], i);
    }
}

TEST(Pipeline, WorkFormula) {
    const auto m = testutil::tiny_model(5, testutil::tiny_config(3));
    Rng rng(8);
    const auto input = testutil::random_prompt(rng, 90, 5);
    auto cfg = small_config();
    cfg.selected_heads = {{1, Projection::query, 2}};
    PrefillResult r = reform_prefill(m, input, cfg);
    const auto out = generate(m, r, 5);
    const std::size_t L = 3;
    EXPECT_EQ(r.stats.chunks, 7u); // 6 context chunks (90 tokens) + query
    EXPECT_EQ(r.stats.layer_executions,
              input.size() * 2 + r.selection.indices.size() * L + r.stats.decode_steps * L);
    // the final emitted token is never fed back
    EXPECT_EQ(r.stats.decode_steps, out.size() == 5 ? 4u : out.size());
    EXPECT_EQ(r.stats.recomputed_tokens, r.selection.indices.size());
}

TEST(Pipeline, Deterministic) {
    const auto m = testutil::tiny_model(12);
    Rng rng(9);
    const auto input = testutil::random_prompt(rng, 80, 4);
    PrefillResult a = reform_prefill(m, input, small_config());
    PrefillResult b = reform_prefill(m, input, small_config());
    EXPECT_EQ(a.selection.indices, b.selection.indices);
    EXPECT_EQ(a.scores, b.scores);
    EXPECT_EQ(generate(m, a, 6), generate(m, b, 6));
    EXPECT_TRUE(generate(m, a, 0).empty());
}

TEST(Pipeline, RecomputationBudgetTooSmall) {
    const auto m = testutil::tiny_model(1);
    Rng rng(3);
    const auto input = testutil::random_prompt(rng, 60, 10);
    auto cfg = small_config();
    cfg.recomputation_budget = 8;
    EXPECT_THROW(reform_prefill(m, input, cfg), SelectionError);
}

TEST(Baselines, TruncationKeepsHeadAndTail) {
    const auto m = testutil::tiny_model(1);
    Rng rng(2);
    const auto input = testutil::random_prompt(rng, 50, 4);
    const auto r = truncation_prefill(m, input, 7);
    EXPECT_EQ(r.selection.indices, (std::vector<std::size_t>{0, 1, 2, 3, 52, 53, 54}));
    EXPECT_EQ(r.cache[0].size(), 7u);
}

TEST(Baselines, CompressiveKeepsQueryUncompressed) {
    const auto m = testutil::tiny_model(4);
    Rng rng(11);
    const auto input = testutil::random_prompt(rng, 120, 9);
    const auto cfg = small_config();
    for (auto p : {EvictionPolicy::h2o, EvictionPolicy::streaming_llm, EvictionPolicy::tova}) {
        PrefillResult r = compressive_prefill(m, input, cfg, p);
        for (const auto& c : r.cache) {
            EXPECT_LE(c.size(), cfg.cache_budget + 10);
            EXPECT_EQ(c.original_positions().back(), input.size() - 1);
        }
        EXPECT_EQ(r.stats.layer_executions, input.size() * m.config().n_layers);
        EXPECT_FALSE(generate(m, r, 3).empty());
    }
}

TEST(Baselines, MethodNames) {
    for (auto mth : {Method::reform, Method::h2o, Method::streaming_llm, Method::tova, Method::truncation, Method::dense})
        EXPECT_EQ(parse_method(to_string(mth)), mth);
    EXPECT_THROW(parse_method("rag"), ConfigError);
}
