#include <cmath>

#include <gtest/gtest.h>

#include "sdlg/decoding.hpp"
#include "sdlg/estimators.hpp"
#include "sdlg/prob.hpp"
#include "sdlg/toy_lm.hpp"
#include "toys.hpp"

using namespace sdlg;

namespace {

const TokenSeq kNoInput;

// Four single-token outcomes y0..y3 (token ids 1..4), then eos.
// y0, y1 share a meaning; y2, y3 share another.
struct TwoClusterToy {
    ContextTableLM lm{Vocabulary(5, 0), 1};
    ToyNli nli = toys::semantic_nli({-1, 0, 0, 1, 1});
    TwoClusterToy()
    {
        lm.set({}, {{1, 0.15}, {2, 0.1}, {3, 0.3}, {4, 0.45}});
        for (TokenId t : {1, 2, 3, 4}) lm.set({t}, {{0, 1.0}});
    }
};

GenerationRecord outcome(TokenId y, double p) { return toys::record({y, 0}, {p, 1.0}); }

Clustering cluster_records(const NliModel& nli, const std::vector<GenerationRecord>& records)
{
    return assign_clusters(nli, std::span<const GenerationRecord>(records));
}

}  // namespace

TEST(ExactClusterDistribution, TwoClusterToy)
{
    const TwoClusterToy toy;
    const auto exact = exact_cluster_distribution(toy.lm, toy.nli, kNoInput, 4);
    ASSERT_EQ(exact.estimate.masses.size(), 2u);
    EXPECT_EQ(exact.estimate.masses[0], 0.25);
    EXPECT_EQ(exact.estimate.masses[1], 0.75);
    EXPECT_EQ(exact.estimate.residual_mass, 0.0);
    EXPECT_TRUE(exact.estimate.normalized);
    EXPECT_NEAR(semantic_entropy_proper(exact.estimate).value, 0.562335, 1e-6);
    EXPECT_NEAR(semantic_entropy_proper(exact.estimate).value, entropy(ProbVector(exact.estimate.masses)), 1e-12);
}

TEST(ExactClusterDistribution, MatchesEntropyOnRandomToys)
{
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto t = toys::layered(seed, 3, 4);
        const auto nli = toys::semantic_nli(t.meaning, seed);
        const auto exact = exact_cluster_distribution(*t.lm, nli, kNoInput, 4);
        EXPECT_NEAR(exact.estimate.total() + exact.estimate.residual_mass, 1.0, 1e-9);
        EXPECT_NEAR(semantic_entropy_proper(exact.estimate).value, entropy(ProbVector::normalized(exact.estimate.masses)),
                    1e-12);
    }
}

TEST(McClusterDistribution, Examples)
{
    const TwoClusterToy toy;
    const std::vector<GenerationRecord> samples{outcome(4, 0.45), outcome(4, 0.45), outcome(1, 0.15), outcome(3, 0.3)};
    const auto c = cluster_records(toy.nli, samples);
    const auto mc = mc_cluster_distribution(c, samples);
    EXPECT_EQ(mc.masses, (std::vector<double>{0.75, 0.25}));
    EXPECT_TRUE(mc.normalized);

    const std::vector<GenerationRecord> same(3, outcome(2, 0.1));
    EXPECT_EQ(mc_cluster_distribution(cluster_records(toy.nli, same)).masses, (std::vector<double>{1.0}));
    EXPECT_THROW((void)mc_cluster_distribution(c, std::span<const GenerationRecord>(samples).first(2)),
                 InvalidArgument);
}

TEST(McClusterDistribution, ConvergesOnTwoClusterToy)
{
    const TwoClusterToy toy;
    Rng rng(31);
    std::vector<GenerationRecord> samples;
    for (int i = 0; i < 10'000; ++i) samples.push_back(sample_multinomial(toy.lm, kNoInput, 1.0, rng));
    const auto c = cluster_records(toy.nli, samples);
    const auto mc = mc_cluster_distribution(c, samples);
    ASSERT_EQ(mc.masses.size(), 2u);
    // cluster labels follow first appearance; map back to meanings
    const bool first_is_low = samples[c[0].representative].tokens[0] <= 2;
    const double low = first_is_low ? mc.masses[0] : mc.masses[1];
    EXPECT_NEAR(low, 0.25, 0.02);
    EXPECT_NEAR(1.0 - low, 0.75, 0.02);
}

TEST(WeightedClusterDistribution, LikelihoodExample)
{
    const TwoClusterToy toy;
    const std::vector<GenerationRecord> samples{outcome(1, 0.15), outcome(3, 0.3), outcome(4, 0.45)};
    const auto c = cluster_records(toy.nli, samples);
    const auto w = weighted_cluster_distribution(c, samples, WeightMode::likelihood, LikelihoodKind::raw);
    EXPECT_FALSE(w.normalized);
    ASSERT_EQ(w.masses.size(), 2u);
    EXPECT_NEAR(w.masses[0], 0.15, 1e-15);
    EXPECT_NEAR(w.masses[1], 0.75, 1e-15);
    const auto n = normalize(w);
    EXPECT_NEAR(n.masses[0], 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(n.masses[1], 5.0 / 6.0, 1e-15);

    // duplicates contribute once
    auto doubled = samples;
    doubled.push_back(outcome(4, 0.45));
    const auto d = weighted_cluster_distribution(cluster_records(toy.nli, doubled), doubled, WeightMode::likelihood,
                                                 LikelihoodKind::raw);
    EXPECT_EQ(d.masses, w.masses);
}

TEST(WeightedClusterDistribution, LengthNormalizedDefault)
{
    const auto r = toys::record({1, 0}, {0.25, 1.0});
    EXPECT_NEAR(record_weight(r, WeightMode::likelihood), 0.5, 1e-15);
    EXPECT_NEAR(record_weight(r, WeightMode::likelihood, LikelihoodKind::raw), 0.25, 1e-15);
    EXPECT_THROW((void)record_weight(r, WeightMode::count), InvalidArgument);
}

TEST(WeightedClusterDistribution, IsFactor)
{
    const TwoClusterToy toy;
    auto plain = outcome(3, 0.3);
    std::vector<GenerationRecord> one{plain};
    const auto c = cluster_records(toy.nli, one);
    EXPECT_EQ(weighted_cluster_distribution(c, one, WeightMode::sdlg_is).masses,
              weighted_cluster_distribution(c, one, WeightMode::likelihood).masses);
    EXPECT_EQ(normalize(weighted_cluster_distribution(c, one, WeightMode::likelihood)).masses,
              (std::vector<double>{1.0}));

    auto sub = outcome(3, 0.3);
    sub.substituted_index = 0;
    sub.substituted_prob = 0.3;
    std::vector<GenerationRecord> s{sub};
    EXPECT_NEAR(weighted_cluster_distribution(c, s, WeightMode::sdlg_is).masses[0], std::sqrt(0.3) * 0.3, 1e-15);
    EXPECT_THROW((void)weighted_cluster_distribution(c, s, WeightMode::count), InvalidArgument);
}

TEST(SemanticEntropy, ImproperExamples)
{
    ClusterDistributionEstimate e;
    e.masses = {0.15, 0.75};
    EXPECT_NEAR(semantic_entropy_improper(e).value, 1.092401, 1e-6);
    EXPECT_NEAR(semantic_entropy_improper(e).value, -0.5 * (std::log(0.15) + std::log(0.75)), 1e-15);
    e.masses = {1.0};
    EXPECT_EQ(semantic_entropy_improper(e).value, 0.0);
    e.masses.assign(5, 0.2);
    EXPECT_NEAR(semantic_entropy_improper(e).value, std::log(5.0), 1e-15);
    e.masses = {0.5, 0.0};
    EXPECT_THROW((void)semantic_entropy_improper(e), InvalidArgument);
}

TEST(SemanticEntropy, ProperExamples)
{
    ClusterDistributionEstimate e;
    e.masses = {1.0 / 6.0, 5.0 / 6.0};
    EXPECT_NEAR(semantic_entropy_proper(e).value, 0.450561, 1e-6);
    e.masses = {0.15, 0.75};  // normalized inside
    EXPECT_NEAR(semantic_entropy_proper(e).value, 0.450561, 1e-6);
    const double lognorm = -(1.0 / 6.0) * std::log(0.15) - (5.0 / 6.0) * std::log(0.75);
    EXPECT_NEAR(semantic_entropy_proper(e, EntropyVariant::lognorm).value, lognorm, 1e-15);
    EXPECT_EQ(semantic_entropy_proper(e, EntropyVariant::lognorm).method, Method::se_proper_lognorm);
    e.masses = {0.3};
    EXPECT_EQ(semantic_entropy_proper(e).value, 0.0);
    e.masses = {0.0, 0.0};
    EXPECT_THROW((void)semantic_entropy_proper(e), InvalidArgument);
}

TEST(SemanticEntropy, PermutationInvariant)
{
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        ClusterDistributionEstimate a;
        a.masses.resize(1 + rng.below(7));
        for (double& m : a.masses) m = 0.01 + rng.uniform();
        auto b = a;
        std::reverse(b.masses.begin(), b.masses.end());
        EXPECT_NEAR(semantic_entropy_improper(a).value, semantic_entropy_improper(b).value, 1e-12);
        EXPECT_NEAR(semantic_entropy_proper(a).value, semantic_entropy_proper(b).value, 1e-12);
        EXPECT_NEAR(semantic_entropy_proper(a, EntropyVariant::lognorm).value,
                    semantic_entropy_proper(b, EntropyVariant::lognorm).value, 1e-12);
    }
}

TEST(PredictiveEntropy, Examples)
{
    const std::vector<GenerationRecord> one{toys::record({1, 0}, {1.0, 1.0})};
    EXPECT_EQ(predictive_entropy(one, false).value, 0.0);
    const std::vector<GenerationRecord> two{toys::record({1, 0}, {0.5, 1.0}), toys::record({2, 0}, {0.25, 1.0})};
    EXPECT_NEAR(predictive_entropy(two, false).value, 1.039721, 1e-6);
    for (std::size_t len : {1u, 3u, 9u}) {
        const std::vector<GenerationRecord> r{toys::record(TokenSeq(len, 1), std::vector<double>(len, 0.3))};
        EXPECT_NEAR(predictive_entropy(r, true).value, -std::log(0.3), 1e-12);
    }
    EXPECT_THROW((void)predictive_entropy(std::span<const GenerationRecord>(), true), InvalidArgument);
}

TEST(PredictiveEntropy, NonNegativeOnSamples)
{
    auto t = toys::layered(3, 4, 4);
    Rng rng(2);
    std::vector<GenerationRecord> r;
    for (int i = 0; i < 20; ++i) r.push_back(sample_multinomial(*t.lm, kNoInput, 1.0, rng));
    EXPECT_GE(predictive_entropy(r, false).value, 0.0);
    EXPECT_GE(predictive_entropy(r, true).value, 0.0);
}
