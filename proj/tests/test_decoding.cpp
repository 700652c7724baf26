#include <cmath>
#include <map>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "sdlg/decoding.hpp"
#include "sdlg/toy_lm.hpp"
#include "toys.hpp"

using namespace sdlg;

namespace {

const TokenSeq kNoInput;

// Greedy takes "a" (0.6) but the a-branch is flat, so "b f" wins after
// length normalization.
ContextTableLM greedy_trap()
{
    ContextTableLM lm(Vocabulary(7, 0), 1);
    lm.set({}, {{1, 0.6}, {2, 0.4}});
    lm.set({1}, {{3, 0.34}, {4, 0.33}, {5, 0.33}});
    lm.set({2}, {{6, 1.0}});
    for (TokenId t : {3, 4, 5, 6}) lm.set({t}, {{0, 1.0}});
    return lm;
}

GenerationRecord greedy(const LanguageModel& lm, std::size_t max_length = 16)
{
    GenerationRecord r;
    while (r.tokens.size() < max_length && (r.tokens.empty() || r.tokens.back() != lm.vocabulary().eos())) {
        const auto d = lm.next_token_distribution(kNoInput, r.tokens);
        std::size_t best = 0;
        for (std::size_t k = 1; k < d.probs.size(); ++k)
            if (d.probs[k] > d.probs[best]) best = k;
        r.tokens.push_back(static_cast<TokenId>(best));
        r.step_probs.push_back(d.probs[best]);
    }
    return r;
}

}  // namespace

TEST(Multinomial, FixedSeedIsReproducible)
{
    auto t = toys::layered(3, 3, 3);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng a(seed), b(seed);
        const auto ra = sample_multinomial(*t.lm, kNoInput, 0.7, a);
        const auto rb = sample_multinomial(*t.lm, kNoInput, 0.7, b);
        EXPECT_EQ(ra.tokens, rb.tokens);
        EXPECT_EQ(ra.step_probs, rb.step_probs);
    }
}

TEST(Multinomial, RecordsUntemperedProbabilities)
{
    auto t = toys::layered(4, 3, 3);
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto r = sample_multinomial(*t.lm, kNoInput, 0.3, rng);
        EXPECT_EQ(r.step_probs, sequence_probability(*t.lm, kNoInput, r.tokens).step_probs);
        EXPECT_FALSE(r.substituted_index.has_value());
    }
    EXPECT_THROW((void)sample_multinomial(*t.lm, kNoInput, 0.0, rng), InvalidArgument);
}

TEST(Multinomial, LowTemperatureIsGreedy)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto t = toys::layered(seed, 3, 3);
        Rng rng(seed);
        EXPECT_EQ(sample_multinomial(*t.lm, kNoInput, 1e-3, rng).tokens, greedy(*t.lm).tokens);
    }
}

TEST(Multinomial, SingleTokenFrequenciesWithinThreeSigma)
{
    ContextTableLM lm(Vocabulary(4, 0), 0);
    lm.set({}, {{0, 0.5}, {1, 0.3}, {2, 0.15}, {3, 0.05}});
    // each length-1 sequence is just "eos"; probabilities of the first token
    std::map<TokenId, int> counts;
    Rng rng(77);
    const int n = 50'000;
    for (int i = 0; i < n; ++i) {
        counts[sample_multinomial(lm, kNoInput, 1.0, rng, 1).tokens.front()]++;
    }
    for (TokenId t = 0; t < 4; ++t) {
        const double p = lm.next_token_distribution(kNoInput, {}).probs[static_cast<std::size_t>(t)];
        const double sigma = std::sqrt(n * p * (1 - p));
        EXPECT_NEAR(counts[t], n * p, 3 * sigma) << "token " << t;
    }
}

TEST(Multinomial, ChiSquareAgainstEnumeration)
{
    auto t = toys::layered(21, 3, 4);
    const auto e = enumerate_sequences(*t.lm, kNoInput, 4);
    ASSERT_LE(e.sequences.size(), 32u);
    std::map<TokenSeq, int> counts;
    Rng rng(2024);
    const int n = 50'000;
    for (int i = 0; i < n; ++i) counts[sample_multinomial(*t.lm, kNoInput, 1.0, rng).tokens]++;
    double chi2 = 0.0;
    int seen = 0;
    for (const auto& s : e.sequences) {
        const double expected = n * s.probability;
        const double d = counts[s.tokens] - expected;
        chi2 += d * d / expected;
        seen += counts[s.tokens];
    }
    EXPECT_EQ(seen, n);  // nothing outside the enumerated support
    boost::math::chi_squared dist(static_cast<double>(e.sequences.size() - 1));
    EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01) << "chi2 = " << chi2;
}

TEST(BeamSearch, OneBeamIsGreedy)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto t = toys::layered(seed, 4, 3);
        EXPECT_EQ(beam_search(*t.lm, kNoInput, 1).tokens, greedy(*t.lm).tokens);
    }
}

TEST(BeamSearch, RecoversBetterSequenceThanGreedy)
{
    const auto lm = greedy_trap();
    const auto g = beam_search(lm, kNoInput, 1);
    const auto b = beam_search(lm, kNoInput, 2);
    EXPECT_EQ(g.tokens, (TokenSeq{1, 3, 0}));
    EXPECT_EQ(b.tokens, (TokenSeq{2, 6, 0}));
    // the beam answer is the best sequence by length-normalized likelihood
    const auto e = enumerate_sequences(lm, kNoInput, 8);
    double best = 0.0;
    for (const auto& s : e.sequences) best = std::max(best, std::pow(s.probability, 1.0 / s.tokens.size()));
    EXPECT_NEAR(length_normalized_probability(b), best, 1e-15);
    EXPECT_GE(length_normalized_probability(b), length_normalized_probability(g));
}

TEST(BeamSearch, DeterministicModel)
{
    ContextTableLM lm(Vocabulary(3, 0), 1);
    lm.set({}, {{2, 1.0}});
    lm.set({2}, {{1, 1.0}});
    lm.set({1}, {{0, 1.0}});
    EXPECT_EQ(beam_search(lm, kNoInput, 5).tokens, (TokenSeq{2, 1, 0}));
}

TEST(BeamSearch, WiderBeamNeverWorseOnRandomToys)
{
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto t = toys::layered(1000 + seed, 2 + seed % 4, 2 + seed % 3);
        const double one = length_normalized_probability(beam_search(*t.lm, kNoInput, 1));
        for (std::size_t k : {2, 3, 5}) {
            EXPECT_GE(length_normalized_probability(beam_search(*t.lm, kNoInput, k)), one - 1e-15)
                << "seed " << seed << " beams " << k;
        }
    }
}

TEST(BeamSearch, StepProbsAreModelProbabilities)
{
    auto t = toys::layered(8, 4, 4);
    const auto r = beam_search(*t.lm, kNoInput, 3);
    EXPECT_EQ(r.step_probs, sequence_probability(*t.lm, kNoInput, r.tokens).step_probs);
}

TEST(DiverseBeamSearch, ZeroPenaltyRepeatsBeamSearch)
{
    auto t = toys::layered(5, 4, 3);
    const auto groups = diverse_beam_search(*t.lm, kNoInput, 4, 0.0);
    ASSERT_EQ(groups.size(), 4u);
    for (const auto& g : groups) EXPECT_EQ(g.tokens, beam_search(*t.lm, kNoInput, 1).tokens);
}

TEST(DiverseBeamSearch, LargePenaltySplitsNearTies)
{
    ContextTableLM lm(Vocabulary(4, 0), 1);
    lm.set({}, {{1, 0.51}, {2, 0.49}});
    lm.set({1}, {{0, 1.0}});
    lm.set({2}, {{0, 1.0}});
    const auto groups = diverse_beam_search(lm, kNoInput, 2, 10.0);
    ASSERT_EQ(groups.size(), 2u);
    // the two best sequences by enumeration
    EXPECT_EQ(groups[0].tokens, (TokenSeq{1, 0}));
    EXPECT_EQ(groups[1].tokens, (TokenSeq{2, 0}));
    // penalties never leak into the recorded probabilities
    EXPECT_EQ(groups[1].step_probs, (std::vector<double>{0.49, 1.0}));
}

TEST(DiverseBeamSearch, OneGroupEqualsBeamSearch)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto t = toys::layered(seed, 4, 4);
        EXPECT_EQ(diverse_beam_search(*t.lm, kNoInput, 1, 0.7).front().tokens, beam_search(*t.lm, kNoInput, 1).tokens);
        EXPECT_EQ(diverse_beam_search(*t.lm, kNoInput, 1, 0.7, kDefaultMaxLength, 3).front().tokens,
                  beam_search(*t.lm, kNoInput, 3).tokens);
    }
}

TEST(DiverseBeamSearch, RejectsBadArguments)
{
    auto t = toys::layered(1, 2, 2);
    EXPECT_THROW((void)diverse_beam_search(*t.lm, kNoInput, 0, 0.5), InvalidArgument);
    EXPECT_THROW((void)diverse_beam_search(*t.lm, kNoInput, 2, -1.0), InvalidArgument);
}
