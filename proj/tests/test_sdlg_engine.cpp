#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "sdlg/sdlg.hpp"
#include "sdlg/toy_lm.hpp"
#include "toys.hpp"

using namespace sdlg;

namespace {

const TokenSeq kNoInput;

struct Toy {
    toys::Layered t;
    ToyNli nli;
};

Toy make_toy(std::uint64_t seed, std::size_t n_first = 4, std::size_t n_second = 4)
{
    auto t = toys::layered(seed, n_first, n_second);
    auto nli = toys::semantic_nli(t.meaning, seed);
    return {std::move(t), std::move(nli)};
}

// Independent min-max-then-average ranking value for one entry.
double reference_combined(const std::vector<RankedSubstitution>& all, const RankedSubstitution& r)
{
    auto norm = [&](auto field) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& x : all) {
            lo = std::min(lo, field(x));
            hi = std::max(hi, field(x));
        }
        return hi > lo ? (field(r) - lo) / (hi - lo) : 0.0;
    };
    return (norm([](const RankedSubstitution& x) { return x.attribution; }) +
            norm([](const RankedSubstitution& x) { return x.substitution; }) +
            norm([](const RankedSubstitution& x) { return x.importance; })) /
           3.0;
}

}  // namespace

TEST(Scores, Attribution)
{
    const std::vector<double> z{1.0, 1.0}, g{2.0, 3.0};
    EXPECT_NEAR(attribution_score(z, g), std::sqrt(13.0), 1e-15);
    EXPECT_EQ(attribution_score(std::vector<double>{0.0, 0.0}, g), 0.0);
    EXPECT_THROW((void)attribution_score(z, std::vector<double>{1.0}), InvalidArgument);
}

TEST(Scores, Substitution)
{
    const std::vector<double> zi{1.0, 0.0}, g{1.0, 0.0};
    EXPECT_NEAR(substitution_score(zi, std::vector<double>{0.0, 0.0}, g), 1.0, 1e-15);
    EXPECT_NEAR(substitution_score(zi, std::vector<double>{2.0, 0.0}, g), -1.0, 1e-15);
    EXPECT_NEAR(substitution_score(zi, std::vector<double>{1.0, 1.0}, g), 0.0, 1e-15);
    // degenerate: identical embeddings or a zero gradient
    EXPECT_EQ(substitution_score(zi, zi, g), 0.0);
    EXPECT_EQ(substitution_score(zi, std::vector<double>{0.0, 0.0}, std::vector<double>{0.0, 0.0}), 0.0);
}

TEST(Scores, Importance)
{
    ContextTableLM lm(Vocabulary(4, 0), 1);
    lm.set({}, {{1, 0.7}, {2, 0.3}});
    lm.set({1}, {{0, 1.0}});
    lm.set({2}, {{0, 1.0}});
    EXPECT_EQ(importance_score(lm, kNoInput, TokenSeq{}, 2), 0.3);
    EXPECT_EQ(importance_score(lm, kNoInput, TokenSeq{}, 3), 0.0);
    EXPECT_THROW((void)importance_score(lm, kNoInput, TokenSeq{}, 4), InvalidArgument);
}

TEST(Combiner, MatchesReferenceAndSortsDescending)
{
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<RankedSubstitution> v(1 + rng.below(20));
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k].position = rng.below(4);
            v[k].candidate = static_cast<TokenId>(k);
            v[k].attribution = rng.uniform() * 5;
            v[k].substitution = 2 * rng.uniform() - 1;
            v[k].importance = rng.uniform();
        }
        const auto original = v;
        combine_and_sort(v, ScoreCombiner::mean_of_normalized);
        for (const auto& r : v) EXPECT_NEAR(r.combined, reference_combined(original, r), 1e-15);
        for (std::size_t k = 1; k < v.size(); ++k) EXPECT_GE(v[k - 1].combined, v[k].combined);
    }
}

TEST(Combiner, RawMeanAndTies)
{
    std::vector<RankedSubstitution> v(3);
    v[0] = {2, 5, 0.5, 0.5, 0.2, 0};
    v[1] = {1, 6, 0.5, 0.5, 0.2, 0};
    v[2] = {1, 4, 0.5, 0.5, 0.2, 0};
    combine_and_sort(v, ScoreCombiner::raw_mean);
    EXPECT_NEAR(v[0].combined, 0.4, 1e-15);
    // equal scores: lower position, then lower token id
    EXPECT_EQ(v[0].candidate, TokenId{4});
    EXPECT_EQ(v[1].candidate, TokenId{6});
    EXPECT_EQ(v[2].candidate, TokenId{5});

    // constant columns normalize to 0
    combine_and_sort(v, ScoreCombiner::mean_of_normalized);
    for (const auto& r : v) EXPECT_EQ(r.combined, 0.0);
}

TEST(Combiner, RaisingOneScoreNeverLowersRank)
{
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<RankedSubstitution> v(6);
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] = {k, static_cast<TokenId>(k), rng.uniform(), rng.uniform(), rng.uniform(), 0};
        }
        auto before = v;
        combine_and_sort(before, ScoreCombiner::mean_of_normalized);
        auto rank_of = [](const std::vector<RankedSubstitution>& r, TokenId c) {
            for (std::size_t k = 0; k < r.size(); ++k)
                if (r[k].candidate == c) return k;
            return r.size();
        };
        const auto pick = static_cast<TokenId>(rng.below(v.size()));
        auto after = v;
        after[static_cast<std::size_t>(pick)].importance += 0.5;
        combine_and_sort(after, ScoreCombiner::mean_of_normalized);
        EXPECT_LE(rank_of(after, pick), rank_of(before, pick));
    }
}

TEST(Ranking, ThresholdAndAdmissibility)
{
    // token 3 has probability 0.0005 < 0.001 and is dropped; eos is never a candidate.
    ContextTableLM lm(Vocabulary(5, 0, {true, true, true, true, false}), 1);
    lm.set({}, {{1, 0.6}, {2, 0.3}, {3, 0.0005}, {4, 0.0995}});
    for (TokenId t : {1, 2, 3, 4}) lm.set({t}, {{0, 1.0}});
    const auto nli = toys::semantic_nli({-1, 0, 1, 2, 3});
    const auto initial = beam_search(lm, kNoInput, 5);
    ASSERT_EQ(initial.tokens, (TokenSeq{1, 0}));

    SdlgConfig c;
    auto ranking = rank_token_pairs(lm, nli, kNoInput, initial, c);
    ASSERT_EQ(ranking.size(), 1u);
    EXPECT_EQ(ranking[0].candidate, TokenId{2});  // 4 does not begin a word
    EXPECT_EQ(ranking[0].position, 0u);
    EXPECT_EQ(ranking[0].importance, 0.3);

    c.word_begin_only = false;
    ranking = rank_token_pairs(lm, nli, kNoInput, initial, c);
    EXPECT_EQ(ranking.size(), 2u);
    c.importance_threshold = 0.0;
    ranking = rank_token_pairs(lm, nli, kNoInput, initial, c);
    EXPECT_EQ(ranking.size(), 3u);
    for (const auto& r : ranking) {
        EXPECT_NE(r.candidate, TokenId{0});
        EXPECT_NE(r.candidate, TokenId{1});
    }
}

TEST(GenerateDiverse, StructuralContractOnRandomToys)
{
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto toy = make_toy(seed);
        SdlgConfig c;
        c.n_sequences = 2 + seed % 9;
        Rng rng(seed);
        const auto g = generate_diverse(*toy.t.lm, toy.nli, kNoInput, c, rng);
        ASSERT_FALSE(g.records.empty());
        const auto& initial = g.records.front();
        EXPECT_EQ(initial.tokens, beam_search(*toy.t.lm, kNoInput, 5).tokens);
        EXPECT_EQ(is_weight(initial), 1.0);
        std::set<TokenSeq> distinct;
        for (const auto& r : g.records) {
            EXPECT_NO_THROW(r.validate());
            EXPECT_TRUE(distinct.insert(r.tokens).second) << "duplicate sequence, seed " << seed;
            EXPECT_EQ(r.step_probs, sequence_probability(*toy.t.lm, kNoInput, r.tokens).step_probs);
            if (!r.substituted_index) continue;
            const std::size_t i = *r.substituted_index;
            ASSERT_LT(i, initial.tokens.size());
            EXPECT_TRUE(std::equal(initial.tokens.begin(), initial.tokens.begin() + static_cast<long>(i), r.tokens.begin()));
            EXPECT_NE(r.tokens[i], initial.tokens[i]);
            EXPECT_EQ(is_weight(r), r.step_probs[i]);
            EXPECT_EQ(is_weight(r), *r.substituted_prob);
            EXPECT_FALSE(r.fallback);
        }
        if (!g.ranking_exhausted) {
            EXPECT_EQ(g.records.size(), c.n_sequences);
        }
        if (!g.budget_exhausted) {
            EXPECT_EQ(g.records.size(), c.n_sequences);
        }
    }
}

TEST(GenerateDiverse, SubstitutionsFollowRankingOrder)
{
    auto toy = make_toy(11, 5, 3);
    SdlgConfig c;
    c.n_sequences = 4;
    Rng rng(1);
    const auto g = generate_diverse(*toy.t.lm, toy.nli, kNoInput, c, rng);
    const auto ranking = rank_token_pairs(*toy.t.lm, toy.nli, kNoInput, g.records.front(), c);
    ASSERT_GE(ranking.size(), 3u);
    // the first substitution is the top-ranked pair (never a duplicate of the initial answer)
    ASSERT_TRUE(g.records[1].substituted_index.has_value());
    EXPECT_EQ(*g.records[1].substituted_index, ranking[0].position);
    EXPECT_EQ(g.records[1].tokens[ranking[0].position], ranking[0].candidate);
}

TEST(GenerateDiverse, SingleSequenceIsTheInitialAnswer)
{
    auto toy = make_toy(2);
    SdlgConfig c;
    c.n_sequences = 1;
    Rng rng(0);
    const auto g = generate_diverse(*toy.t.lm, toy.nli, kNoInput, c, rng);
    ASSERT_EQ(g.records.size(), 1u);
    EXPECT_EQ(g.ranking_size, 0u);
}

TEST(GenerateDiverse, FallbackWhenRankingIsEmpty)
{
    // one admissible first token: nothing to substitute at position 0, and
    // the second position only offers the token already there
    ContextTableLM lm(Vocabulary(4, 0), 1);
    lm.set({}, {{1, 1.0}});
    lm.set({1}, {{2, 0.5}, {3, 0.5}});
    lm.set({2}, {{0, 1.0}});
    lm.set({3}, {{0, 1.0}});
    const auto nli = toys::semantic_nli({-1, 0, 1, 2});
    SdlgConfig c;
    c.n_sequences = 5;
    Rng rng(4);
    const auto g = generate_diverse(lm, nli, kNoInput, c, rng);
    // only two distinct sequences exist
    EXPECT_EQ(g.records.size(), 2u);
    EXPECT_TRUE(g.ranking_exhausted);
    EXPECT_TRUE(g.budget_exhausted);
    EXPECT_TRUE(g.records[1].substituted_index.has_value());
}

TEST(GenerateDiverse, MultinomialFallbackFlagged)
{
    ContextTableLM lm(Vocabulary(4, 0), 1);
    lm.set({}, {{1, 0.5}, {2, 0.25}, {3, 0.25}});
    for (TokenId t : {1, 2, 3}) lm.set({t}, {{0, 1.0}});
    const auto nli = toys::semantic_nli({-1, 0, 1, 2});
    SdlgConfig c;
    c.n_sequences = 3;
    c.importance_threshold = 0.3;  // only the initial answer's position survives, no candidates above 0.3
    Rng rng(9);
    const auto g = generate_diverse(lm, nli, kNoInput, c, rng);
    EXPECT_EQ(g.ranking_size, 0u);
    EXPECT_EQ(g.records.size(), 3u);
    for (std::size_t k = 1; k < g.records.size(); ++k) {
        EXPECT_TRUE(g.records[k].fallback);
        EXPECT_EQ(is_weight(g.records[k]), 1.0);
    }
}

TEST(GenerateDiverse, DeterministicForSeed)
{
    auto toy = make_toy(5);
    SdlgConfig c;
    Rng a(77), b(77);
    const auto x = generate_diverse(*toy.t.lm, toy.nli, kNoInput, c, a);
    const auto y = generate_diverse(*toy.t.lm, toy.nli, kNoInput, c, b);
    ASSERT_EQ(x.records.size(), y.records.size());
    for (std::size_t k = 0; k < x.records.size(); ++k) EXPECT_EQ(x.records[k].tokens, y.records[k].tokens);
}

TEST(IsWeight, Examples)
{
    auto r = toys::record({1, 2, 0}, {0.5, 0.2, 1.0});
    EXPECT_EQ(is_weight(r), 1.0);
    r.substituted_index = 1;
    r.substituted_prob = 0.2;
    EXPECT_EQ(is_weight(r), 0.2);
}
