#pragma once

// NLI capability, bidirectional entailment and greedy semantic clustering.

#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdlg/error.hpp"
#include "sdlg/prob.hpp"
#include "sdlg/sequence.hpp"

namespace sdlg {

/// Class order of every NLI output vector.
enum class NliClass : std::size_t { entailment = 0, neutral = 1, contradiction = 2 };

inline constexpr std::size_t kNliClasses = 3;

struct PositionGradient {
    std::vector<double> embedding;  // z_i
    std::vector<double> gradient;   // dL/dz_i
};

/// Contradiction loss of classify(seq, seq) and its gradients per position.
struct ContradictionGradients {
    double loss = 0.0;
    std::vector<PositionGradient> positions;
};

class NliModel {
public:
    virtual ~NliModel() = default;

    /// Distribution over (entailment, neutral, contradiction).
    [[nodiscard]] virtual ProbVector classify(std::span<const TokenId> premise, std::span<const TokenId> hypothesis) const = 0;

    /// L = -ln classify(seq, seq)[contradiction] and dL/dz_i for every
    /// position, where z_i is the token embedding at position i (shared by
    /// the premise and hypothesis copies).
    [[nodiscard]] virtual ContradictionGradients contradiction_gradients(std::span<const TokenId> seq) const = 0;

    [[nodiscard]] virtual std::vector<double> embedding(TokenId token) const = 0;
    [[nodiscard]] virtual std::size_t embedding_dim() const = 0;
    [[nodiscard]] virtual std::string identity() const = 0;
};

inline NliClass argmax_class(const ProbVector& p)
{
    if (p.size() != kNliClasses) {
        throw SchemaError("NLI output must have three classes");
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNliClasses; ++k) {
        if (p[k] > p[best]) {
            best = k;
        }
    }
    return static_cast<NliClass>(best);
}

/// True iff entailment is the argmax of classify(a, b) and of classify(b, a).
inline bool bidirectional_entailment(const NliModel& nli, std::span<const TokenId> a, std::span<const TokenId> b)
{
    if (a.empty() || b.empty()) {
        throw InvalidArgument("bidirectional_entailment: empty sequence");
    }
    return argmax_class(nli.classify(a, b)) == NliClass::entailment &&
           argmax_class(nli.classify(b, a)) == NliClass::entailment;
}

/// Memoizes classify() on (premise, hypothesis) token ids; safe for
/// concurrent use. Other calls are forwarded unchanged.
class CachingNli final : public NliModel {
public:
    explicit CachingNli(const NliModel& inner) : inner_(inner) {}

    [[nodiscard]] ProbVector classify(std::span<const TokenId> premise, std::span<const TokenId> hypothesis) const override
    {
        Key key{TokenSeq(premise.begin(), premise.end()), TokenSeq(hypothesis.begin(), hypothesis.end())};
        {
            std::lock_guard lock(mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) {
                return it->second;
            }
        }
        ProbVector result = inner_.classify(premise, hypothesis);
        std::lock_guard lock(mutex_);
        cache_.emplace(std::move(key), result);
        return result;
    }

    [[nodiscard]] ContradictionGradients contradiction_gradients(std::span<const TokenId> seq) const override
    {
        return inner_.contradiction_gradients(seq);
    }
    [[nodiscard]] std::vector<double> embedding(TokenId token) const override { return inner_.embedding(token); }
    [[nodiscard]] std::size_t embedding_dim() const override { return inner_.embedding_dim(); }
    [[nodiscard]] std::string identity() const override { return inner_.identity(); }

    [[nodiscard]] std::size_t cached_verdicts() const
    {
        std::lock_guard lock(mutex_);
        return cache_.size();
    }

private:
    using Key = std::pair<TokenSeq, TokenSeq>;
    const NliModel& inner_;
    mutable std::mutex mutex_;
    mutable std::map<Key, ProbVector> cache_;
};

struct Cluster {
    std::vector<std::size_t> members;
    std::size_t representative = 0;
};

/// Partition of a generation list into semantic clusters.
class Clustering {
public:
    Clustering() = default;

    Clustering(std::vector<Cluster> clusters, std::size_t n_items) : clusters_(std::move(clusters)), assignment_(n_items)
    {
        std::vector<bool> seen(n_items, false);
        for (std::size_t c = 0; c < clusters_.size(); ++c) {
            if (clusters_[c].members.empty()) {
                throw InvalidArgument("clustering contains an empty cluster");
            }
            for (std::size_t m : clusters_[c].members) {
                if (m >= n_items || seen[m]) {
                    throw InvalidArgument("clusters are not a partition of the items");
                }
                seen[m] = true;
                assignment_[m] = c;
            }
        }
        for (bool s : seen) {
            if (!s) {
                throw InvalidArgument("clusters do not cover every item");
            }
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return clusters_.size(); }
    [[nodiscard]] std::size_t n_items() const noexcept { return assignment_.size(); }
    [[nodiscard]] const std::vector<Cluster>& clusters() const noexcept { return clusters_; }
    [[nodiscard]] const Cluster& operator[](std::size_t c) const { return clusters_.at(c); }
    [[nodiscard]] std::size_t cluster_of(std::size_t item) const { return assignment_.at(item); }
    [[nodiscard]] const std::vector<std::size_t>& assignment() const noexcept { return assignment_; }

private:
    std::vector<Cluster> clusters_;
    std::vector<std::size_t> assignment_;
};

/// Greedy clustering in list order: each sequence joins the first cluster
/// whose representative it bidirectionally entails, otherwise it founds a new
/// cluster. Exact duplicates join their twin's cluster without an NLI call.
inline Clustering assign_clusters(const NliModel& nli, std::span<const TokenSeq> sequences)
{
    if (sequences.empty()) {
        throw InvalidArgument("assign_clusters: no sequences");
    }
    std::vector<Cluster> clusters;
    std::map<TokenSeq, std::size_t> seen;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        const TokenSeq& seq = sequences[i];
        if (auto it = seen.find(seq); it != seen.end()) {
            clusters[it->second].members.push_back(i);
            continue;
        }
        std::size_t target = clusters.size();
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            if (bidirectional_entailment(nli, seq, sequences[clusters[c].representative])) {
                target = c;
                break;
            }
        }
        if (target == clusters.size()) {
            clusters.push_back({{}, i});
        }
        clusters[target].members.push_back(i);
        seen.emplace(seq, target);
    }
    return Clustering(std::move(clusters), sequences.size());
}

inline Clustering assign_clusters(const NliModel& nli, std::span<const GenerationRecord> records)
{
    std::vector<TokenSeq> sequences;
    sequences.reserve(records.size());
    for (const auto& r : records) {
        sequences.push_back(r.tokens);
    }
    return assign_clusters(nli, std::span<const TokenSeq>(sequences));
}

}  // namespace sdlg
