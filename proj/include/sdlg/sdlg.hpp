#pragma once

// Semantically diverse generation: gradient-based token-pair ranking, the
// substitute-and-complete generation loop and the induced importance weight.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <span>
#include <vector>

#include "sdlg/decoding.hpp"
#include "sdlg/error.hpp"
#include "sdlg/rng.hpp"
#include "sdlg/semantics.hpp"
#include "sdlg/sequence.hpp"

namespace sdlg {

enum class ScoreCombiner {
    /// Min-max normalize each score over the candidate set, then average.
    mean_of_normalized,
    /// Average the raw scores.
    raw_mean,
};

struct SdlgConfig {
    std::size_t n_sequences = 10;
    double importance_threshold = 0.001;
    bool word_begin_only = true;
    ScoreCombiner combiner = ScoreCombiner::mean_of_normalized;
    bool dedupe = true;
    std::size_t initial_beams = 5;
    double suffix_temperature = 1.0;
    std::size_t max_length = kDefaultMaxLength;
    /// Fallback multinomial draws allowed per missing sequence before giving up
    /// on finding a new distinct sequence.
    std::size_t fallback_attempts = 20;

    void validate() const
    {
        if (n_sequences == 0) {
            throw InvalidArgument("SDLG: n_sequences must be at least 1");
        }
        if (!(importance_threshold >= 0.0 && importance_threshold < 1.0)) {
            throw InvalidArgument("SDLG: importance threshold must lie in [0, 1)");
        }
        if (initial_beams == 0 || !(suffix_temperature > 0.0) || max_length == 0) {
            throw InvalidArgument("SDLG: invalid decoding settings");
        }
    }
};

struct RankedSubstitution {
    std::size_t position = 0;
    TokenId candidate = 0;
    double attribution = 0.0;
    double substitution = 0.0;
    double importance = 0.0;
    double combined = 0.0;
};

/// ||z_i * grad_i||_2 (elementwise product).
inline double attribution_score(std::span<const double> embedding, std::span<const double> gradient)
{
    if (embedding.size() != gradient.size()) {
        throw InvalidArgument("attribution_score: dimension mismatch");
    }
    double sq = 0.0;
    for (std::size_t k = 0; k < embedding.size(); ++k) {
        const double v = embedding[k] * gradient[k];
        sq += v * v;
    }
    return std::sqrt(sq);
}

/// Cosine similarity of (z_i - z_j) and grad_i. Degenerate inputs (z_i == z_j
/// or a zero gradient) carry no direction and score 0.
inline double substitution_score(std::span<const double> original, std::span<const double> candidate,
                                 std::span<const double> gradient)
{
    if (original.size() != candidate.size() || original.size() != gradient.size()) {
        throw InvalidArgument("substitution_score: dimension mismatch");
    }
    double dot = 0.0;
    double diff_sq = 0.0;
    double grad_sq = 0.0;
    for (std::size_t k = 0; k < original.size(); ++k) {
        const double diff = original[k] - candidate[k];
        dot += diff * gradient[k];
        diff_sq += diff * diff;
        grad_sq += gradient[k] * gradient[k];
    }
    if (diff_sq == 0.0 || grad_sq == 0.0) {
        return 0.0;
    }
    return std::clamp(dot / (std::sqrt(diff_sq) * std::sqrt(grad_sq)), -1.0, 1.0);
}

/// p(candidate | x, y_<i) from the backend.
inline double importance_score(const LanguageModel& lm, std::span<const TokenId> input, std::span<const TokenId> prefix,
                               TokenId candidate)
{
    if (!lm.vocabulary().contains(candidate)) {
        throw InvalidArgument("importance_score: candidate outside the vocabulary");
    }
    return lm.next_token_distribution(input, prefix).probs.at(static_cast<std::size_t>(candidate));
}

namespace detail {

inline void min_max_normalize(std::vector<double>& values)
{
    if (values.empty()) {
        return;
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double low = *lo;
    const double range = *hi - *lo;
    for (double& v : values) {
        // a constant score carries no ranking information
        v = range > 0.0 ? (v - low) / range : 0.0;
    }
}

}  // namespace detail

/// Fills `combined` for every entry and sorts descending; ties go to higher
/// importance, then lower position, then lower token id.
inline void combine_and_sort(std::vector<RankedSubstitution>& ranking, ScoreCombiner combiner)
{
    if (combiner == ScoreCombiner::raw_mean) {
        for (auto& r : ranking) {
            r.combined = (r.attribution + r.substitution + r.importance) / 3.0;
        }
    } else {
        std::vector<double> a, s, i;
        a.reserve(ranking.size());
        s.reserve(ranking.size());
        i.reserve(ranking.size());
        for (const auto& r : ranking) {
            a.push_back(r.attribution);
            s.push_back(r.substitution);
            i.push_back(r.importance);
        }
        detail::min_max_normalize(a);
        detail::min_max_normalize(s);
        detail::min_max_normalize(i);
        for (std::size_t n = 0; n < ranking.size(); ++n) {
            ranking[n].combined = (a[n] + s[n] + i[n]) / 3.0;
        }
    }
    std::sort(ranking.begin(), ranking.end(), [](const RankedSubstitution& x, const RankedSubstitution& y) {
        if (x.combined != y.combined) return x.combined > y.combined;
        if (x.importance != y.importance) return x.importance > y.importance;
        if (x.position != y.position) return x.position < y.position;
        return x.candidate < y.candidate;
    });
}

/// Scores every admissible (position, candidate) pair of the initial sequence.
///
/// The contradiction loss and its gradients are computed once. Positions
/// holding eos are never substituted and eos is never a candidate. With
/// `word_begin_only`, both the replaced token and the candidate must start a
/// word. Candidates need non-zero importance of at least the threshold. An
/// empty result tells the caller to fall back to multinomial sampling.
inline std::vector<RankedSubstitution> rank_token_pairs(const LanguageModel& lm, const NliModel& nli,
                                                        std::span<const TokenId> input, const GenerationRecord& initial,
                                                        const SdlgConfig& config)
{
    if (initial.tokens.empty()) {
        throw InvalidArgument("rank_token_pairs: empty initial sequence");
    }
    const Vocabulary& vocab = lm.vocabulary();
    const TokenId eos = vocab.eos();
    const ContradictionGradients grads = nli.contradiction_gradients(initial.tokens);
    if (grads.positions.size() != initial.tokens.size()) {
        throw SchemaError("NLI returned gradients for the wrong number of positions");
    }

    std::vector<std::vector<double>> candidate_embeddings(vocab.size());
    auto candidate_embedding = [&](TokenId j) -> const std::vector<double>& {
        auto& slot = candidate_embeddings[static_cast<std::size_t>(j)];
        if (slot.empty()) {
            slot = nli.embedding(j);
        }
        return slot;
    };

    std::vector<RankedSubstitution> ranking;
    for (std::size_t i = 0; i < initial.tokens.size(); ++i) {
        const TokenId original = initial.tokens[i];
        if (original == eos || (config.word_begin_only && !vocab.word_begin(original))) {
            continue;
        }
        const auto& z_i = grads.positions[i].embedding;
        const auto& g_i = grads.positions[i].gradient;
        const double attribution = attribution_score(z_i, g_i);
        const auto dist = lm.next_token_distribution(input, std::span(initial.tokens).first(i));
        for (std::size_t k = 0; k < dist.probs.size(); ++k) {
            const auto j = static_cast<TokenId>(k);
            const double importance = dist.probs[k];
            if (j == original || j == eos || importance <= 0.0 || importance < config.importance_threshold) {
                continue;
            }
            if (config.word_begin_only && !vocab.word_begin(j)) {
                continue;
            }
            RankedSubstitution r;
            r.position = i;
            r.candidate = j;
            r.attribution = attribution;
            r.substitution = substitution_score(z_i, candidate_embedding(j), g_i);
            r.importance = importance;
            ranking.push_back(r);
        }
    }
    combine_and_sort(ranking, config.combiner);
    return ranking;
}

/// Keeps initial[<position], places `candidate` at `position` and samples the
/// rest from the model.
inline GenerationRecord complete_substitution(const LanguageModel& lm, std::span<const TokenId> input,
                                              const GenerationRecord& initial, const RankedSubstitution& pair,
                                              double temperature, std::size_t max_length, Rng& rng)
{
    GenerationRecord r;
    r.tokens.assign(initial.tokens.begin(), initial.tokens.begin() + static_cast<std::ptrdiff_t>(pair.position));
    r.step_probs.assign(initial.step_probs.begin(),
                        initial.step_probs.begin() + static_cast<std::ptrdiff_t>(pair.position));
    r.tokens.push_back(pair.candidate);
    r.step_probs.push_back(pair.importance);
    r.substituted_index = pair.position;
    r.substituted_prob = pair.importance;
    if (pair.candidate != lm.vocabulary().eos()) {
        auto rest = lm.sample_continuation(input, r.tokens, temperature, max_length, rng);
        r.tokens.insert(r.tokens.end(), rest.tokens.begin(), rest.tokens.end());
        r.step_probs.insert(r.step_probs.end(), rest.step_probs.begin(), rest.step_probs.end());
    }
    return r;
}

struct DiverseGeneration {
    std::vector<GenerationRecord> records;
    std::size_t ranking_size = 0;
    /// Every ranked pair was consumed before N sequences were produced.
    bool ranking_exhausted = false;
    /// Fewer than N distinct sequences could be produced.
    bool budget_exhausted = false;
};

/// Generates up to N sequences: the beam-search answer first, then one
/// sequence per consumed ranked pair, then multinomial fallbacks.
inline DiverseGeneration generate_diverse(const LanguageModel& lm, const NliModel& nli, std::span<const TokenId> input,
                                          const SdlgConfig& config, Rng& rng,
                                          const GenerationRecord* initial_answer = nullptr)
{
    config.validate();
    DiverseGeneration out;
    out.records.push_back(initial_answer ? *initial_answer
                                         : beam_search(lm, input, config.initial_beams, config.max_length));
    if (config.n_sequences == 1) {
        return out;
    }
    const GenerationRecord initial = out.records.front();  // records reallocates below
    const auto ranking = rank_token_pairs(lm, nli, input, initial, config);
    out.ranking_size = ranking.size();

    std::set<TokenSeq> seen{initial.tokens};
    std::size_t cursor = 0;
    while (out.records.size() < config.n_sequences && cursor < ranking.size()) {
        GenerationRecord r = complete_substitution(lm, input, initial, ranking[cursor++], config.suffix_temperature,
                                                   config.max_length, rng);
        if (config.dedupe && !seen.insert(r.tokens).second) {
            continue;
        }
        out.records.push_back(std::move(r));
    }
    if (out.records.size() < config.n_sequences) {
        out.ranking_exhausted = true;
        std::size_t attempts = config.fallback_attempts * (config.n_sequences - out.records.size());
        while (out.records.size() < config.n_sequences && attempts-- > 0) {
            GenerationRecord r = sample_multinomial(lm, input, config.suffix_temperature, rng, config.max_length);
            r.fallback = true;
            if (config.dedupe && !seen.insert(r.tokens).second) {
                continue;
            }
            out.records.push_back(std::move(r));
        }
        out.budget_exhausted = out.records.size() < config.n_sequences;
    }
    return out;
}

/// p(y)/q(y) for the SDLG proposal: the model probability of the exchanged
/// token, or 1 for a record without a substitution.
inline double is_weight(const GenerationRecord& record)
{
    if (!record.substituted_index) {
        return 1.0;
    }
    return record.step_probs.at(*record.substituted_index);
}

}  // namespace sdlg
