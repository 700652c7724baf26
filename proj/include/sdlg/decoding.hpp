#pragma once

// Decoding strategies: multinomial sampling, beam search and diverse beam
// search. Every returned record carries untempered, unpenalized step
// probabilities so that estimators can weight by the model likelihood.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "sdlg/error.hpp"
#include "sdlg/rng.hpp"
#include "sdlg/sequence.hpp"

namespace sdlg {

/// Ancestral sampling from p^(1/temperature) until eos or `max_length`.
inline GenerationRecord sample_multinomial(const LanguageModel& lm, std::span<const TokenId> input, double temperature,
                                           Rng& rng, std::size_t max_length = kDefaultMaxLength)
{
    if (!(temperature > 0.0)) {
        throw InvalidArgument("sample_multinomial: temperature must be positive");
    }
    auto cont = lm.sample_continuation(input, {}, temperature, max_length, rng);
    GenerationRecord record;
    record.tokens = std::move(cont.tokens);
    record.step_probs = std::move(cont.step_probs);
    return record;
}

namespace detail {

struct Hypothesis {
    TokenSeq tokens;
    std::vector<double> steps;
    double log_p = 0.0;

    [[nodiscard]] double normalized_score() const { return log_p / static_cast<double>(tokens.size()); }
};

inline bool better(const Hypothesis& a, double score_a, const Hypothesis& b, double score_b)
{
    if (score_a != score_b) {
        return score_a > score_b;
    }
    return a.tokens < b.tokens;
}

inline GenerationRecord to_record(Hypothesis h)
{
    GenerationRecord r;
    r.tokens = std::move(h.tokens);
    r.step_probs = std::move(h.steps);
    return r;
}

/// Step-synchronous group beam search. Candidates are ranked by
/// length-normalized log-probability minus `penalty` times the number of
/// earlier groups that picked the same token at this step.
inline std::vector<GenerationRecord> group_beam_search(const LanguageModel& lm, std::span<const TokenId> input,
                                                       std::size_t groups, std::size_t beams_per_group,
                                                       double penalty, std::size_t max_length)
{
    if (groups == 0 || beams_per_group == 0) {
        throw InvalidArgument("beam search needs at least one group and one beam");
    }
    if (!(penalty >= 0.0)) {
        throw InvalidArgument("diversity penalty must be non-negative");
    }
    if (max_length == 0) {
        throw InvalidArgument("beam search: max_length must be positive");
    }
    const TokenId eos = lm.vocabulary().eos();
    std::vector<std::vector<Hypothesis>> alive(groups, std::vector<Hypothesis>(1));
    std::vector<std::vector<Hypothesis>> finished(groups);

    struct Candidate {
        Hypothesis hyp;
        double score;
    };

    bool any_alive = true;
    while (any_alive) {
        any_alive = false;
        std::map<TokenId, std::size_t> chosen_this_step;
        for (std::size_t g = 0; g < groups; ++g) {
            if (alive[g].empty()) {
                continue;
            }
            std::vector<Candidate> candidates;
            for (const Hypothesis& beam : alive[g]) {
                const auto dist = lm.next_token_distribution(input, beam.tokens);
                for (std::size_t k = 0; k < dist.probs.size(); ++k) {
                    const double p = dist.probs[k];
                    if (p <= 0.0) {
                        continue;
                    }
                    Hypothesis next = beam;
                    next.tokens.push_back(static_cast<TokenId>(k));
                    next.steps.push_back(p);
                    next.log_p += std::log(p);
                    double score = next.normalized_score();
                    if (auto it = chosen_this_step.find(static_cast<TokenId>(k)); it != chosen_this_step.end()) {
                        score -= penalty * static_cast<double>(it->second);
                    }
                    candidates.push_back({std::move(next), score});
                }
            }
            if (candidates.empty()) {
                throw BackendError("beam search: next-token distribution has no mass");
            }
            const std::size_t keep = std::min(beams_per_group, candidates.size());
            std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                              [](const Candidate& a, const Candidate& b) { return better(a.hyp, a.score, b.hyp, b.score); });
            alive[g].clear();
            for (std::size_t c = 0; c < keep; ++c) {
                Hypothesis& h = candidates[c].hyp;
                ++chosen_this_step[h.tokens.back()];
                if (h.tokens.back() == eos || h.tokens.size() >= max_length) {
                    finished[g].push_back(std::move(h));
                } else {
                    alive[g].push_back(std::move(h));
                }
            }
            any_alive = any_alive || !alive[g].empty();
        }
    }

    std::vector<GenerationRecord> out;
    out.reserve(groups);
    for (auto& pool : finished) {
        auto best = std::min_element(pool.begin(), pool.end(), [](const Hypothesis& a, const Hypothesis& b) {
            return better(a, a.normalized_score(), b, b.normalized_score());
        });
        out.push_back(to_record(std::move(*best)));
    }
    return out;
}

}  // namespace detail

/// Length-normalized beam search; returns the best finished hypothesis.
inline GenerationRecord beam_search(const LanguageModel& lm, std::span<const TokenId> input, std::size_t beams,
                                    std::size_t max_length = kDefaultMaxLength)
{
    return detail::group_beam_search(lm, input, 1, beams, 0.0, max_length).front();
}

/// Diverse beam search with a Hamming diversity penalty between groups.
/// Returns one record per group.
inline std::vector<GenerationRecord> diverse_beam_search(const LanguageModel& lm, std::span<const TokenId> input,
                                                         std::size_t groups, double penalty,
                                                         std::size_t max_length = kDefaultMaxLength,
                                                         std::size_t beams_per_group = 1)
{
    return detail::group_beam_search(lm, input, groups, beams_per_group, penalty, max_length);
}

}  // namespace sdlg
