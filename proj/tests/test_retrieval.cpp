#include <gtest/gtest.h>

#include <algorithm>

#include "test_util.hpp"

using namespace reform;

namespace {

Matrix rows_of(std::vector<std::vector<float>> r) {
    Matrix m;
    for (const auto& v : r) m.append_row(v);
    return m;
}

std::vector<float> naive_smooth_max(const std::vector<float>& s, std::size_t w) {
    std::vector<float> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        float best = s[i];
        for (std::size_t j = 0; j < s.size(); ++j) {
            const std::size_t d = i > j ? i - j : j - i;
            if (d <= w) best = std::max(best, s[j]);
        }
        out[i] = best;
    }
    return out;
}

} // namespace

TEST(Score, SelfSimilarityAndOrthogonal) {
    const Matrix q = rows_of({{1, 2, 3}});
    const Matrix ctx = rows_of({{0, 0, 0}, {2, 4, 6}, {-2, 1, 0}});
    const auto s = score(q, ctx, {true});
    EXPECT_FLOAT_EQ(s.scores[1], 1.0f);
    EXPECT_FLOAT_EQ(s.scores[2], 0.0f);
    EXPECT_FLOAT_EQ(s.scores[0], 0.0f);
}

TEST(Score, MaxOverCosineMatrix) {
    const Matrix q = rows_of({{1, 0}, {1, 1}});
    const Matrix ctx = rows_of({{0, 1}, {1, 0}, {-1, 0.5}});
    const auto s = score(q, ctx, {true, true});
    for (std::size_t i = 0; i < 3; ++i) {
        float best = -2;
        for (std::size_t j = 0; j < 2; ++j) best = std::max(best, cosine(q.row(j), ctx.row(i)));
        EXPECT_FLOAT_EQ(s.scores[i], best);
    }
}

TEST(Score, MaskedQueryRowsContributeNothing) {
    Rng rng(2);
    Matrix q(4, 6), ctx(20, 6);
    for (auto& v : q.flat()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : ctx.flat()) v = static_cast<float>(rng.uniform(-1, 1));
    const auto base = score(q.slice_rows(0, 2), ctx, {true, true});
    // adding masked rows never changes a score
    const auto more = score(q, ctx, {true, true, false, false});
    EXPECT_EQ(base.scores, more.scores);
    EXPECT_THROW(score(q, ctx, {false, false, false, false}), QueryError);
    EXPECT_THROW(score(q, ctx, {true}), QueryError);
    EXPECT_THROW(score(q, Matrix(3, 5), {true, true, true, true}), SchemaError);
}

TEST(Score, QueryMaskDropsSpecialsAndPrefix) {
    const std::vector<TokenId> query{special::sep, 'a', 'b', special::eos, 'c', 'd'};
    const auto m = detail::query_scoring_mask(query, 2);
    EXPECT_EQ(m, (std::vector<bool>{false, true, true, false, false, false}));
}

TEST(SmoothMax, WindowZeroIsIdentity) {
    const std::vector<float> s{3, 1, 4, 1, 5};
    EXPECT_EQ(smooth_max(s, 0), s);
    EXPECT_TRUE(smooth_max(std::vector<float>{}, 3).empty());
}

TEST(SmoothMax, SpikeBecomesPlateau) {
    std::vector<float> s(21, 0.0f);
    s[10] = 1.0f;
    const auto out = smooth_max(s, 3);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(out[i], (i >= 7 && i <= 13) ? 1.0f : 0.0f) << i;
}

TEST(SmoothMax, MatchesNaiveOracle) {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<float> s(32);
        for (auto& v : s) v = static_cast<float>(rng.uniform(-1, 1));
        EXPECT_EQ(smooth_max(s, 3), naive_smooth_max(s, 3));
        EXPECT_EQ(smooth_max(s, 40), naive_smooth_max(s, 40));
    }
}

TEST(Select, SaturationSelectsAll) {
    const std::vector<float> s{0.1f, 0.2f, 0.3f};
    const auto sel = select(s, 5, 1, 1, 5);
    EXPECT_EQ(sel.indices, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Select, HandExample) {
    const std::vector<float> s{0, 0, .1f, .9f, .2f, .9f, .3f, .4f, 0, 0};
    const auto sel = select(s, 6, 2, 2, 10);
    EXPECT_EQ(sel.indices, (std::vector<std::size_t>{0, 1, 3, 5, 8, 9}));
}

TEST(Select, EqualScoresPreferEarlier) {
    const std::vector<float> s(10, 0.5f);
    const auto sel = select(s, 6, 1, 1, 12);
    // query {10,11} (recent falls in it), sink {0}, then 1,2,3
    EXPECT_EQ(sel.indices, (std::vector<std::size_t>{0, 1, 2, 3, 10, 11}));
}

TEST(Select, ForcedTokensMustFit) {
    const std::vector<float> s(10, 0.0f);
    EXPECT_THROW(select(s, 4, 2, 3, 12), SelectionError); // {0,1} + {9,10,11}
    EXPECT_NO_THROW(select(s, 4, 2, 2, 12));              // recent overlaps the query
    EXPECT_THROW(select(std::vector<float>(5), 2, 0, 0, 4), InputError);
}

TEST(Gather, SubsequenceInOrder) {
    const auto toks = Tokenizer{}.encode("abcdef");
    SelectionSet sel;
    sel.indices = {0, 3, 5};
    EXPECT_EQ(Tokenizer{}.decode(gather(toks, sel)), "adf");
    sel.indices = {0, 1, 2, 3, 4, 5};
    EXPECT_EQ(gather(toks, sel), toks);
    sel.indices = {6};
    EXPECT_THROW(gather(toks, sel), std::out_of_range);
}

TEST(Select, DebugTsv) {
    const std::vector<float> s{0.5f, 0.25f};
    SelectionSet sel;
    sel.indices = {1};
    EXPECT_EQ(selection_debug_tsv(s, sel), "position\tscore\tselected\n0\t0.5\t0\n1\t0.25\t1\n");
}
