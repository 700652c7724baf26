#pragma once

// Cluster-distribution estimators and the semantic-entropy / predictive-entropy
// uncertainty scores built on them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdlg/error.hpp"
#include "sdlg/prob.hpp"
#include "sdlg/sdlg.hpp"
#include "sdlg/semantics.hpp"
#include "sdlg/sequence.hpp"

namespace sdlg {

enum class WeightMode { count, likelihood, sdlg_is, exact };

inline std::string_view to_string(WeightMode m)
{
    switch (m) {
    case WeightMode::count: return "count";
    case WeightMode::likelihood: return "likelihood";
    case WeightMode::sdlg_is: return "sdlg-is";
    case WeightMode::exact: return "exact";
    }
    return "?";
}

/// Which sequence likelihood the likelihood-based weights use.
enum class LikelihoodKind { length_normalized, raw };

/// Estimated p(c | x) over the observed clusters of a Clustering.
struct ClusterDistributionEstimate {
    std::vector<double> masses;
    WeightMode mode = WeightMode::count;
    bool normalized = false;
    /// Only set by the exact estimator: mass of non-terminated paths.
    double residual_mass = 0.0;

    [[nodiscard]] double total() const { return std::accumulate(masses.begin(), masses.end(), 0.0); }
};

/// Rescales an estimate to sum to one.
inline ClusterDistributionEstimate normalize(const ClusterDistributionEstimate& e)
{
    const double total = e.total();
    if (!(total > 0.0)) {
        throw InvalidArgument("cannot normalize a cluster estimate with zero total mass");
    }
    ClusterDistributionEstimate out = e;
    for (double& m : out.masses) {
        m /= total;
    }
    out.normalized = true;
    return out;
}

struct ExactClusterDistribution {
    ClusterDistributionEstimate estimate;
    Clustering clustering;
    std::vector<EnumeratedSequence> sequences;
};

/// Enumerates the output space, clusters it and sums exact probabilities per
/// cluster. Sequences are clustered in enumeration order.
inline ExactClusterDistribution exact_cluster_distribution(const LanguageModel& lm, const NliModel& nli,
                                                           std::span<const TokenId> input, std::size_t max_length,
                                                           std::size_t budget = kDefaultEnumerationBudget)
{
    Enumeration en = enumerate_sequences(lm, input, max_length, budget);
    if (en.sequences.empty()) {
        throw InvalidArgument("exact_cluster_distribution: no terminated sequence within the maximum length");
    }
    std::vector<TokenSeq> seqs;
    seqs.reserve(en.sequences.size());
    for (const auto& s : en.sequences) {
        seqs.push_back(s.tokens);
    }
    ExactClusterDistribution out;
    out.clustering = assign_clusters(nli, std::span<const TokenSeq>(seqs));
    out.estimate.mode = WeightMode::exact;
    out.estimate.masses.assign(out.clustering.size(), 0.0);
    for (std::size_t i = 0; i < en.sequences.size(); ++i) {
        out.estimate.masses[out.clustering.cluster_of(i)] += en.sequences[i].probability;
    }
    out.estimate.residual_mass = en.residual_mass;
    out.estimate.normalized = std::abs(out.estimate.total() - 1.0) <= kNormalizationTolerance;
    out.sequences = std::move(en.sequences);
    return out;
}

/// Frequency estimate: cluster mass = member count / N.
inline ClusterDistributionEstimate mc_cluster_distribution(const Clustering& clustering)
{
    if (clustering.n_items() == 0) {
        throw InvalidArgument("mc_cluster_distribution: no samples");
    }
    ClusterDistributionEstimate out;
    out.mode = WeightMode::count;
    const double n = static_cast<double>(clustering.n_items());
    for (const auto& c : clustering.clusters()) {
        out.masses.push_back(static_cast<double>(c.members.size()) / n);
    }
    out.normalized = true;
    return out;
}

inline ClusterDistributionEstimate mc_cluster_distribution(const Clustering& clustering,
                                                           std::span<const GenerationRecord> records)
{
    if (records.empty()) {
        throw InvalidArgument("mc_cluster_distribution: no samples");
    }
    if (records.size() != clustering.n_items()) {
        throw InvalidArgument("mc_cluster_distribution: clustering does not match the records");
    }
    return mc_cluster_distribution(clustering);
}

/// Weight of one record under a likelihood-based mode.
inline double record_weight(const GenerationRecord& record, WeightMode mode,
                            LikelihoodKind kind = LikelihoodKind::length_normalized)
{
    const double likelihood =
        kind == LikelihoodKind::length_normalized ? length_normalized_probability(record) : record.probability();
    switch (mode) {
    case WeightMode::likelihood: return likelihood;
    case WeightMode::sdlg_is: return likelihood * is_weight(record);
    default: throw InvalidArgument("record_weight: mode is not likelihood-based");
    }
}

/// Sum of per-record weights in each cluster, left unnormalized. Exact
/// duplicates contribute once.
inline ClusterDistributionEstimate weighted_cluster_distribution(const Clustering& clustering,
                                                                 std::span<const GenerationRecord> records,
                                                                 WeightMode mode,
                                                                 LikelihoodKind kind = LikelihoodKind::length_normalized)
{
    if (mode != WeightMode::likelihood && mode != WeightMode::sdlg_is) {
        throw InvalidArgument("weighted_cluster_distribution: mode must be likelihood or sdlg-is");
    }
    if (records.empty() || records.size() != clustering.n_items()) {
        throw InvalidArgument("weighted_cluster_distribution: clustering does not match the records");
    }
    ClusterDistributionEstimate out;
    out.mode = mode;
    out.masses.assign(clustering.size(), 0.0);
    std::set<TokenSeq> seen;
    for (std::size_t n = 0; n < records.size(); ++n) {
        if (!seen.insert(records[n].tokens).second) {
            continue;
        }
        out.masses[clustering.cluster_of(n)] += record_weight(records[n], mode, kind);
    }
    if (!(out.total() > 0.0)) {
        throw InvalidArgument("weighted_cluster_distribution: all weights are zero");
    }
    out.normalized = false;
    return out;
}

enum class Method { se_improper, se_proper, se_proper_lognorm, pe, ln_pe };

inline std::string_view to_string(Method m)
{
    switch (m) {
    case Method::se_improper: return "SE_improper";
    case Method::se_proper: return "SE_proper";
    case Method::se_proper_lognorm: return "SE_proper_lognorm";
    case Method::pe: return "PE";
    case Method::ln_pe: return "LN-PE";
    }
    return "?";
}

struct UncertaintyScore {
    Method method = Method::se_proper;
    double value = 0.0;
    std::size_t n_samples = 0;
    std::size_t n_clusters = 0;
};

namespace detail {

inline void require_positive_masses(const ClusterDistributionEstimate& e, const char* who)
{
    if (e.masses.empty()) {
        throw InvalidArgument(std::string(who) + ": no clusters");
    }
    for (double m : e.masses) {
        if (!(m > 0.0)) {
            throw InvalidArgument(std::string(who) + ": zero-mass cluster");
        }
    }
}

}  // namespace detail

/// -(1/M) sum_m ln mass(c_m) over the M observed clusters, on raw masses.
/// Treats the observed clusters as if they had been drawn from p(c | x).
inline UncertaintyScore semantic_entropy_improper(const ClusterDistributionEstimate& estimate, std::size_t n_samples = 0)
{
    detail::require_positive_masses(estimate, "semantic_entropy_improper");
    double sum = 0.0;
    for (double m : estimate.masses) {
        sum += std::log(m);
    }
    const double M = static_cast<double>(estimate.masses.size());
    return {Method::se_improper, -sum / M, std::max(n_samples, estimate.masses.size()), estimate.masses.size()};
}

enum class EntropyVariant {
    /// Normalize the masses, then -sum p ln p.
    plain,
    /// -sum p_normalized ln mass_unnormalized.
    lognorm,
};

inline UncertaintyScore semantic_entropy_proper(const ClusterDistributionEstimate& estimate,
                                                EntropyVariant variant = EntropyVariant::plain,
                                                std::size_t n_samples = 0)
{
    detail::require_positive_masses(estimate, "semantic_entropy_proper");
    const ClusterDistributionEstimate p = normalize(estimate);
    double h = 0.0;
    for (std::size_t m = 0; m < p.masses.size(); ++m) {
        const double inside = variant == EntropyVariant::plain ? p.masses[m] : estimate.masses[m];
        h -= p.masses[m] * std::log(inside);
    }
    return {variant == EntropyVariant::plain ? Method::se_proper : Method::se_proper_lognorm, h,
            std::max(n_samples, estimate.masses.size()), estimate.masses.size()};
}

/// PE = -(1/N) sum ln p(y^n); LN-PE replaces ln p with the mean per-token
/// log-probability.
inline UncertaintyScore predictive_entropy(std::span<const GenerationRecord> records, bool length_normalized)
{
    if (records.empty()) {
        throw InvalidArgument("predictive_entropy: no records");
    }
    double sum = 0.0;
    for (const auto& r : records) {
        r.validate();
        const double lp = r.log_probability();
        sum += length_normalized ? lp / static_cast<double>(r.step_probs.size()) : lp;
    }
    const double n = static_cast<double>(records.size());
    return {length_normalized ? Method::ln_pe : Method::pe, -sum / n, records.size(), 0};
}

}  // namespace sdlg
