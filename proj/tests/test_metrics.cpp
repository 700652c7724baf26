#include <cmath>

#include <gtest/gtest.h>

#include "sdlg/metrics.hpp"
#include "sdlg/rng.hpp"

using namespace sdlg;

namespace {

// Exhaustive pairwise definition, ties count one half.
double pairwise_auroc(const std::vector<ScoredAnswer>& s)
{
    double wins = 0.0, pairs = 0.0;
    for (const auto& bad : s) {
        if (bad.is_correct) continue;
        for (const auto& good : s) {
            if (!good.is_correct) continue;
            pairs += 1.0;
            if (bad.uncertainty > good.uncertainty) wins += 1.0;
            else if (bad.uncertainty == good.uncertainty) wins += 0.5;
        }
    }
    return wins / pairs;
}

}  // namespace

TEST(Rouge, Examples)
{
    EXPECT_NEAR(rouge_l_f1("the dog sat", "the cat sat"), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(rouge_l_f1("a b", "b c"), 0.5, 1e-15);
    EXPECT_EQ(rouge_l_f1("Paris", "paris."), 1.0);
    EXPECT_EQ(rouge_l_f1("", "paris"), 0.0);
    EXPECT_EQ(rouge_l_f1("x y", "z"), 0.0);
    // order matters for LCS but not for unigram overlap
    EXPECT_NEAR(rouge_l_f1("b a", "a b"), 0.5, 1e-15);
    EXPECT_EQ(rouge_1_f1("b a", "a b"), 1.0);
    EXPECT_NEAR(rouge_1_f1("a a a", "a b"), 2 * (1.0 / 3) * 0.5 / (1.0 / 3 + 0.5), 1e-15);
}

TEST(Rouge, Normalization)
{
    EXPECT_EQ(normalize_tokens("The  Capital, is PARIS!"), (std::vector<std::string>{"the", "capital", "is", "paris"}));
    EXPECT_TRUE(normalize_tokens(" ,; ").empty());
}

TEST(Correctness, TrueMinusFalse)
{
    QAInstance q{"q1", "?", {"Paris", "The capital is Paris"}, {"Lyon"}, {}};
    EXPECT_EQ(correctness(q, "paris", CorrectnessMetric::rouge_l), 1.0);
    EXPECT_EQ(correctness(q, "lyon", CorrectnessMetric::rouge_l), -1.0);
    EXPECT_NEAR(correctness(q, "the capital is lyon", CorrectnessMetric::rouge_l), 0.75 - 0.4, 1e-15);
    QAInstance bad{"q2", "?", {}, {}, {}};
    EXPECT_THROW((void)correctness(bad, "x", CorrectnessMetric::rouge_l), InvalidArgument);
}

TEST(Auroc, Examples)
{
    const std::vector<ScoredAnswer> perfect{{0.1, true}, {0.2, true}, {0.8, false}, {0.9, false}};
    EXPECT_EQ(auroc(perfect), 1.0);
    const std::vector<ScoredAnswer> inverted{{0.9, true}, {0.8, true}, {0.2, false}, {0.1, false}};
    EXPECT_EQ(auroc(inverted), 0.0);
    const std::vector<ScoredAnswer> ties{{0.5, true}, {0.5, false}};
    EXPECT_EQ(auroc(ties), 0.5);
    const std::vector<ScoredAnswer> all_good{{0.1, true}, {0.3, true}};
    EXPECT_THROW((void)auroc(all_good), DegenerateLabels);
    EXPECT_THROW((void)auroc(std::span<const ScoredAnswer>()), DegenerateLabels);
}

TEST(Auroc, MatchesPairwiseOracle)
{
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ScoredAnswer> s(2 + rng.below(60));
        for (auto& x : s) {
            x.uncertainty = static_cast<double>(rng.below(12)) / 4.0;  // coarse grid forces ties
            x.is_correct = rng.uniform() < 0.5;
        }
        s[0].is_correct = true;
        s[1].is_correct = false;
        EXPECT_NEAR(auroc(s), pairwise_auroc(s), 1e-12);
    }
}

TEST(Auroc, InvariantUnderMonotoneTransform)
{
    Rng rng(18);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ScoredAnswer> s(10 + rng.below(30));
        for (auto& x : s) {
            x.uncertainty = rng.uniform();
            x.is_correct = rng.uniform() < 0.4;
        }
        s[0].is_correct = true;
        s[1].is_correct = false;
        auto t = s;
        for (auto& x : t) x.uncertainty = std::exp(3 * x.uncertainty) - 7;
        EXPECT_EQ(auroc(s), auroc(t));
    }
}
