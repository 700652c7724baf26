#pragma once

// Token sequences, the autoregressive language-model capability, sequence
// likelihoods and the exhaustive enumeration oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdlg/error.hpp"
#include "sdlg/prob.hpp"
#include "sdlg/rng.hpp"

namespace sdlg {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::size_t kDefaultMaxLength = 64;
inline constexpr std::size_t kDefaultEnumerationBudget = 1'000'000;

class Vocabulary {
public:
    Vocabulary() = default;

    Vocabulary(std::size_t size, TokenId eos, std::vector<bool> word_begin = {}, std::vector<std::string> strings = {})
        : size_(size), eos_(eos), word_begin_(std::move(word_begin)), strings_(std::move(strings))
    {
        if (size_ < 2) {
            throw InvalidArgument("vocabulary needs an eos token and at least one other token");
        }
        if (eos_ < 0 || static_cast<std::size_t>(eos_) >= size_) {
            throw InvalidArgument("eos id outside the vocabulary");
        }
        if (word_begin_.empty()) {
            word_begin_.assign(size_, true);
        }
        if (word_begin_.size() != size_) {
            throw InvalidArgument("word_begin flags do not match vocabulary size");
        }
        if (!strings_.empty() && strings_.size() != size_) {
            throw InvalidArgument("token strings do not match vocabulary size");
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return size_; }
    [[nodiscard]] TokenId eos() const noexcept { return eos_; }
    [[nodiscard]] bool contains(TokenId t) const noexcept { return t >= 0 && static_cast<std::size_t>(t) < size_; }
    [[nodiscard]] bool word_begin(TokenId t) const { return word_begin_.at(static_cast<std::size_t>(t)); }
    [[nodiscard]] const std::vector<bool>& word_begin_flags() const noexcept { return word_begin_; }
    [[nodiscard]] bool has_strings() const noexcept { return !strings_.empty(); }
    [[nodiscard]] const std::vector<std::string>& strings() const noexcept { return strings_; }

    [[nodiscard]] std::string token_string(TokenId t) const
    {
        if (has_strings()) {
            return strings_.at(static_cast<std::size_t>(t));
        }
        return "t" + std::to_string(t);
    }

    [[nodiscard]] std::optional<TokenId> find(std::string_view word) const
    {
        for (std::size_t i = 0; i < strings_.size(); ++i) {
            if (strings_[i] == word) {
                return static_cast<TokenId>(i);
            }
        }
        return std::nullopt;
    }

    /// Space-joined token strings, eos omitted.
    [[nodiscard]] std::string detokenize(std::span<const TokenId> tokens) const
    {
        std::string out;
        for (TokenId t : tokens) {
            if (t == eos_) {
                continue;
            }
            if (!out.empty()) {
                out += ' ';
            }
            out += token_string(t);
        }
        return out;
    }

private:
    std::size_t size_ = 0;
    TokenId eos_ = 0;
    std::vector<bool> word_begin_;
    std::vector<std::string> strings_;
};

/// Checks the TokenSeq invariants: non-empty, ids in range, eos only last.
inline void validate_sequence(std::span<const TokenId> seq, const Vocabulary& vocab)
{
    if (seq.empty()) {
        throw InvalidArgument("token sequence is empty");
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!vocab.contains(seq[i])) {
            throw InvalidArgument("token id " + std::to_string(seq[i]) + " outside the vocabulary");
        }
        if (seq[i] == vocab.eos() && i + 1 != seq.size()) {
            throw InvalidArgument("eos may only appear at the final position");
        }
    }
}

/// A generated output sequence together with its per-step model probabilities.
struct GenerationRecord {
    TokenSeq tokens;
    /// p(y_t | x, y_<t) under the untempered model.
    std::vector<double> step_probs;
    /// Position whose token was exchanged by SDLG, if any.
    std::optional<std::size_t> substituted_index;
    /// Model probability of the exchanged token; equals step_probs[*substituted_index].
    std::optional<double> substituted_prob;
    /// Produced by plain multinomial sampling after the substitution ranking ran out.
    bool fallback = false;

    [[nodiscard]] std::size_t size() const noexcept { return tokens.size(); }

    [[nodiscard]] double log_probability() const
    {
        double lp = 0.0;
        for (double p : step_probs) {
            lp += std::log(p);
        }
        return lp;
    }

    [[nodiscard]] double probability() const { return std::exp(log_probability()); }

    void validate() const
    {
        if (tokens.empty()) {
            throw InvalidArgument("generation record has no tokens");
        }
        if (step_probs.size() != tokens.size()) {
            throw InvalidArgument("step_probs length differs from token count");
        }
        for (double p : step_probs) {
            if (!(p > 0.0 && p <= 1.0)) {
                throw InvalidArgument("step probability outside (0, 1]");
            }
        }
        if (substituted_index.has_value() != substituted_prob.has_value()) {
            throw InvalidArgument("substituted_index and substituted_prob must be set together");
        }
        if (substituted_index) {
            if (*substituted_index >= tokens.size()) {
                throw InvalidArgument("substituted_index out of range");
            }
            if (*substituted_prob != step_probs[*substituted_index]) {
                throw InvalidArgument("substituted_prob differs from the recorded step probability");
            }
        }
    }
};

/// Next-token distribution, dense over the vocabulary.
///
/// Sparse backends report the mass they did not attribute to any listed token
/// in `residual_mass`; it is never assigned to a specific token.
struct NextTokenDistribution {
    std::vector<double> probs;
    double residual_mass = 0.0;
};

struct Continuation {
    TokenSeq tokens;
    std::vector<double> step_probs;
};

namespace detail {

/// Draws an index proportionally to p^(1/temperature) over the listed entries.
inline std::size_t sample_tempered(std::span<const double> probs, double temperature, Rng& rng)
{
    double max_p = 0.0;
    for (double p : probs) {
        max_p = std::max(max_p, p);
    }
    if (!(max_p > 0.0)) {
        throw BackendError("next-token distribution has no mass");
    }
    const double inv_t = 1.0 / temperature;
    const double log_max = std::log(max_p);
    std::vector<double> weights(probs.size(), 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (probs[k] > 0.0) {
            weights[k] = std::exp((std::log(probs[k]) - log_max) * inv_t);
            total += weights[k];
        }
    }
    double u = rng.uniform() * total;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k] <= 0.0) {
            continue;
        }
        last_positive = k;
        if (u < weights[k]) {
            return k;
        }
        u -= weights[k];
    }
    return last_positive;
}

inline TokenSeq concat(std::span<const TokenId> a, std::span<const TokenId> b)
{
    TokenSeq out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace detail

/// Autoregressive model capability: p(y_t | x, y_<t).
///
/// Implementations must be deterministic for fixed inputs and safe for
/// concurrent const calls.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;

    [[nodiscard]] virtual const Vocabulary& vocabulary() const = 0;

    [[nodiscard]] virtual NextTokenDistribution next_token_distribution(std::span<const TokenId> input,
                                                                        std::span<const TokenId> prefix) const = 0;

    [[nodiscard]] virtual std::string identity() const = 0;

    /// Extends `prefix` by ancestral sampling until eos or `max_total_length`
    /// tokens. Returned step probabilities are untempered. Only the newly
    /// generated tokens are returned.
    [[nodiscard]] virtual Continuation sample_continuation(std::span<const TokenId> input, std::span<const TokenId> prefix,
                                                           double temperature, std::size_t max_total_length,
                                                           Rng& rng) const
    {
        Continuation out;
        TokenSeq current(prefix.begin(), prefix.end());
        const TokenId eos = vocabulary().eos();
        while (current.size() < max_total_length && (current.empty() || current.back() != eos)) {
            const NextTokenDistribution dist = next_token_distribution(input, current);
            const std::size_t k = detail::sample_tempered(dist.probs, temperature, rng);
            const auto token = static_cast<TokenId>(k);
            current.push_back(token);
            out.tokens.push_back(token);
            out.step_probs.push_back(dist.probs[k]);
        }
        return out;
    }
};

struct SequenceLikelihood {
    double probability = 0.0;
    std::vector<double> step_probs;
};

/// prod_t p(y_t | x, y_<t), plus the per-step factors.
inline SequenceLikelihood sequence_probability(const LanguageModel& lm, std::span<const TokenId> input,
                                               std::span<const TokenId> output,
                                               std::size_t max_length = kDefaultMaxLength)
{
    if (output.empty()) {
        throw InvalidArgument("sequence_probability: empty output sequence");
    }
    if (output.size() > max_length) {
        throw LengthOverflow("sequence_probability: sequence longer than the maximum length");
    }
    validate_sequence(output, lm.vocabulary());
    SequenceLikelihood out;
    out.step_probs.reserve(output.size());
    double log_p = 0.0;
    bool zero = false;
    for (std::size_t t = 0; t < output.size(); ++t) {
        const auto dist = lm.next_token_distribution(input, output.first(t));
        const double p = dist.probs.at(static_cast<std::size_t>(output[t]));
        out.step_probs.push_back(p);
        if (p <= 0.0) {
            zero = true;
        } else {
            log_p += std::log(p);
        }
    }
    out.probability = zero ? 0.0 : std::exp(log_p);
    return out;
}

/// Geometric mean of the step probabilities.
inline double length_normalized_probability(const GenerationRecord& record)
{
    record.validate();
    return std::exp(record.log_probability() / static_cast<double>(record.step_probs.size()));
}

struct EnumeratedSequence {
    TokenSeq tokens;
    double probability = 0.0;
    std::vector<double> step_probs;
};

struct Enumeration {
    /// Every eos-terminated sequence with non-zero probability, in
    /// depth-first token-id order.
    std::vector<EnumeratedSequence> sequences;
    /// Mass of paths cut at the maximum length plus mass a sparse backend left
    /// unattributed.
    double residual_mass = 0.0;

    [[nodiscard]] double terminated_mass() const
    {
        double m = 0.0;
        for (const auto& s : sequences) {
            m += s.probability;
        }
        return m;
    }
};

/// Brute-force enumeration of the output space up to `max_length` tokens.
///
/// `budget` bounds the number of visited leaves (terminated plus truncated
/// paths); exceeding it throws BudgetExceeded.
inline Enumeration enumerate_sequences(const LanguageModel& lm, std::span<const TokenId> input, std::size_t max_length,
                                       std::size_t budget = kDefaultEnumerationBudget)
{
    if (max_length == 0) {
        throw InvalidArgument("enumerate_sequences: max_length must be positive");
    }
    Enumeration out;
    std::size_t leaves = 0;
    const TokenId eos = lm.vocabulary().eos();

    TokenSeq prefix;
    std::vector<double> steps;
    auto visit = [&](auto&& self, double mass) -> void {
        const auto dist = lm.next_token_distribution(input, prefix);
        out.residual_mass += mass * dist.residual_mass;
        for (std::size_t k = 0; k < dist.probs.size(); ++k) {
            const double p = dist.probs[k];
            if (p <= 0.0) {
                continue;
            }
            const auto token = static_cast<TokenId>(k);
            const double child = mass * p;
            prefix.push_back(token);
            steps.push_back(p);
            if (token == eos) {
                if (++leaves > budget) {
                    throw BudgetExceeded("enumerate_sequences: leaf budget exceeded");
                }
                out.sequences.push_back({prefix, child, steps});
            } else if (prefix.size() >= max_length) {
                if (++leaves > budget) {
                    throw BudgetExceeded("enumerate_sequences: leaf budget exceeded");
                }
                out.residual_mass += child;
            } else {
                self(self, child);
            }
            prefix.pop_back();
            steps.pop_back();
        }
    };
    visit(visit, 1.0);
    return out;
}

}  // namespace sdlg
