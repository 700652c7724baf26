#pragma once

// Exact discrete-probability utilities. All quantities are in nats.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdlg/error.hpp"

namespace sdlg {

inline constexpr double kNormalizationTolerance = 1e-9;
/// Mass at or below this is treated as exactly zero (0 ln 0 = 0).
inline constexpr double kZeroMass = 1e-15;

/// Finite discrete distribution (or non-negative mass vector).
///
/// A vector built through `normalized()` is checked to sum to one; a vector
/// built through the plain constructor only has to be non-negative.
class ProbVector {
public:
    explicit ProbVector(std::vector<double> values) : values_(std::move(values))
    {
        if (values_.empty()) {
            throw InvalidArgument("ProbVector must have at least one entry");
        }
        for (double v : values_) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
                throw InvalidArgument("ProbVector entries must be finite and non-negative");
            }
        }
        normalized_ = std::abs(sum() - 1.0) <= kNormalizationTolerance;
    }

    ProbVector(std::initializer_list<double> values) : ProbVector(std::vector<double>(values)) {}

    /// Builds a vector and rejects it unless it sums to one.
    static ProbVector normalized(std::vector<double> values)
    {
        ProbVector p(std::move(values));
        if (!p.is_normalized()) {
            throw InvalidArgument("ProbVector does not sum to 1 (sum = " + std::to_string(p.sum()) + ")");
        }
        return p;
    }

    static ProbVector uniform(std::size_t n)
    {
        if (n == 0) {
            throw InvalidArgument("uniform distribution needs at least one outcome");
        }
        return ProbVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
    }

    /// Rescales non-negative masses to sum to one.
    static ProbVector normalize(std::span<const double> masses)
    {
        const double total = std::accumulate(masses.begin(), masses.end(), 0.0);
        if (!(total > 0.0)) {
            throw InvalidArgument("cannot normalize a vector with zero total mass");
        }
        std::vector<double> out(masses.begin(), masses.end());
        for (double& v : out) {
            v /= total;
        }
        return ProbVector(std::move(out));
    }

    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] double operator[](std::size_t k) const { return values_[k]; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }
    [[nodiscard]] bool is_normalized() const noexcept { return normalized_; }
    [[nodiscard]] double sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

    auto begin() const noexcept { return values_.begin(); }
    auto end() const noexcept { return values_.end(); }

private:
    std::vector<double> values_;
    bool normalized_ = false;
};

struct UncertaintyDecomposition {
    double total = 0.0;
    double aleatoric = 0.0;
    double epistemic = 0.0;
};

namespace detail {

inline void require_normalized(const ProbVector& p, const char* what)
{
    if (!p.is_normalized()) {
        throw InvalidArgument(std::string(what) + ": distribution is not normalized");
    }
}

inline void require_same_length(const ProbVector& p, const ProbVector& q)
{
    if (p.size() != q.size()) {
        throw InvalidArgument("distributions have different lengths");
    }
}

}  // namespace detail

/// Shannon entropy -sum p ln p.
inline double entropy(const ProbVector& p)
{
    detail::require_normalized(p, "entropy");
    double h = 0.0;
    for (double pk : p) {
        if (pk > kZeroMass) {
            h -= pk * std::log(pk);
        }
    }
    return h;
}

/// -sum p ln q. Throws SupportMismatch if p has mass where q has none.
inline double cross_entropy(const ProbVector& p, const ProbVector& q)
{
    detail::require_normalized(p, "cross_entropy");
    detail::require_normalized(q, "cross_entropy");
    detail::require_same_length(p, q);
    double ce = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] <= kZeroMass) {
            continue;
        }
        if (q[k] <= kZeroMass) {
            throw SupportMismatch("cross_entropy: q has no mass at outcome " + std::to_string(k));
        }
        ce -= p[k] * std::log(q[k]);
    }
    return ce;
}

/// KL(p || q), summed term by term as p ln(p/q).
inline double kl_divergence(const ProbVector& p, const ProbVector& q)
{
    detail::require_normalized(p, "kl_divergence");
    detail::require_normalized(q, "kl_divergence");
    detail::require_same_length(p, q);
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] <= kZeroMass) {
            continue;
        }
        if (q[k] <= kZeroMass) {
            throw SupportMismatch("kl_divergence: q has no mass at outcome " + std::to_string(k));
        }
        kl += p[k] * std::log(p[k] / q[k]);
    }
    return kl;
}

struct EnsembleMember {
    ProbVector distribution;
    double weight = 0.0;
};

/// Splits the expected cross-entropy between the given model and an ensemble
/// of candidate models into the given model's entropy (aleatoric) and the
/// expected KL (epistemic).
inline UncertaintyDecomposition decompose_uncertainty(const ProbVector& given, std::span<const EnsembleMember> ensemble)
{
    detail::require_normalized(given, "decompose_uncertainty");
    if (ensemble.empty()) {
        throw InvalidArgument("decompose_uncertainty: empty ensemble");
    }
    double weight_sum = 0.0;
    for (const auto& member : ensemble) {
        if (!(member.weight >= 0.0)) {
            throw InvalidArgument("decompose_uncertainty: negative posterior weight");
        }
        weight_sum += member.weight;
    }
    if (std::abs(weight_sum - 1.0) > kNormalizationTolerance) {
        throw InvalidArgument("decompose_uncertainty: posterior weights do not sum to 1");
    }

    UncertaintyDecomposition out;
    out.aleatoric = entropy(given);
    for (const auto& member : ensemble) {
        out.total += member.weight * cross_entropy(given, member.distribution);
        out.epistemic += member.weight * kl_divergence(given, member.distribution);
    }
    // total is summed independently of the two parts.
    if (std::abs(out.total - (out.aleatoric + out.epistemic)) > kNormalizationTolerance) {
        throw Error("decompose_uncertainty: total != aleatoric + epistemic");
    }
    return out;
}

}  // namespace sdlg
