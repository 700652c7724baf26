#pragma once

// Correctness metrics (Rouge-L / Rouge-1 F1) and AUROC.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sdlg/error.hpp"

namespace sdlg {

/// Lowercases, turns ASCII punctuation into spaces and splits on whitespace.
inline std::vector<std::string> normalize_tokens(std::string_view text)
{
    std::vector<std::string> out;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c) || std::ispunct(c)) {
            if (!current.empty()) {
                out.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!current.empty()) {
        out.push_back(std::move(current));
    }
    return out;
}

inline std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b)
{
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

namespace detail {

inline double f1(double overlap, std::size_t cand_len, std::size_t ref_len)
{
    if (cand_len == 0 || ref_len == 0 || overlap == 0.0) {
        return 0.0;
    }
    const double p = overlap / static_cast<double>(cand_len);
    const double r = overlap / static_cast<double>(ref_len);
    return 2.0 * p * r / (p + r);
}

}  // namespace detail

inline double rouge_l_f1(std::string_view candidate, std::string_view reference)
{
    const auto c = normalize_tokens(candidate);
    const auto r = normalize_tokens(reference);
    return detail::f1(static_cast<double>(lcs_length(c, r)), c.size(), r.size());
}

/// Unigram-overlap F1 with clipped counts.
inline double rouge_1_f1(std::string_view candidate, std::string_view reference)
{
    const auto c = normalize_tokens(candidate);
    const auto r = normalize_tokens(reference);
    std::map<std::string, std::size_t> ref_counts;
    for (const auto& w : r) ++ref_counts[w];
    std::size_t overlap = 0;
    for (const auto& w : c) {
        auto it = ref_counts.find(w);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    return detail::f1(static_cast<double>(overlap), c.size(), r.size());
}

enum class CorrectnessMetric { rouge_l, rouge_1 };

inline double score_text(CorrectnessMetric metric, std::string_view candidate, std::string_view reference)
{
    return metric == CorrectnessMetric::rouge_l ? rouge_l_f1(candidate, reference) : rouge_1_f1(candidate, reference);
}

struct QAInstance {
    std::string id;
    std::string prompt;
    std::vector<std::string> true_references;
    std::vector<std::string> false_references;
    /// Optional pre-tokenized prompt for backends without a tokenizer.
    std::vector<int> input_tokens;

    void validate() const
    {
        if (id.empty()) {
            throw InvalidArgument("QA instance without id");
        }
        if (true_references.empty()) {
            throw InvalidArgument("QA instance '" + id + "' has no true reference");
        }
    }
};

/// max over true references minus max over false references (0 if none).
inline double correctness(const QAInstance& instance, std::string_view answer, CorrectnessMetric metric)
{
    instance.validate();
    double best_true = 0.0;
    for (const auto& ref : instance.true_references) {
        best_true = std::max(best_true, score_text(metric, answer, ref));
    }
    double best_false = 0.0;
    for (const auto& ref : instance.false_references) {
        best_false = std::max(best_false, score_text(metric, answer, ref));
    }
    return best_true - best_false;
}

struct ScoredAnswer {
    double uncertainty = 0.0;
    bool is_correct = false;
};

/// Probability that a random incorrect answer has higher uncertainty than a
/// random correct one, ties counting one half (Mann-Whitney U with mid-ranks).
inline double auroc(std::span<const ScoredAnswer> scores)
{
    std::size_t n_incorrect = 0;
    for (const auto& s : scores) n_incorrect += s.is_correct ? 0 : 1;
    const std::size_t n_correct = scores.size() - n_incorrect;
    if (n_incorrect == 0 || n_correct == 0) {
        throw DegenerateLabels("auroc needs at least one correct and one incorrect answer");
    }
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a].uncertainty < scores[b].uncertainty; });
    // Twice the rank sum keeps mid-ranks integral.
    std::size_t twice_rank_sum = 0;
    for (std::size_t start = 0; start < order.size();) {
        std::size_t end = start;
        while (end < order.size() && scores[order[end]].uncertainty == scores[order[start]].uncertainty) ++end;
        const std::size_t twice_mid_rank = (start + 1) + end;  // ranks are 1-based
        for (std::size_t k = start; k < end; ++k) {
            if (!scores[order[k]].is_correct) twice_rank_sum += twice_mid_rank;
        }
        start = end;
    }
    const double twice_u = static_cast<double>(twice_rank_sum) - static_cast<double>(n_incorrect * (n_incorrect + 1));
    return twice_u / (2.0 * static_cast<double>(n_incorrect) * static_cast<double>(n_correct));
}

}  // namespace sdlg
