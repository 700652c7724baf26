#pragma once

// Context-window categorical language model loaded from a text manifest.
//
// Manifest format (UTF-8, one directive per line, '#' starts a comment):
//
//   vocab 6                      number of tokens (required, first)
//   eos 5                        end-of-sequence id (required)
//   order 2                      context window k (optional, default: longest context seen)
//   tokens <bos> a b c d </s>    token strings (optional)
//   word_begin 1 1 1 0 1 0       per-token word-begin flags (optional, default all 1)
//   0 1 -> 2:0.7, 3:0.3          distribution after the context "0 1"
//   -> 0:0.5, 1:0.5              distribution for the empty context
//
// Contexts are matched against the last `order` tokens of input ++ prefix;
// when no entry exists the model backs off to shorter suffixes. Context and
// target tokens may be given as ids or, when `tokens` is declared, as strings.
// Probabilities on a line must sum to 1 within 1e-6.

#include <cstddef>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sdlg/error.hpp"
#include "sdlg/sequence.hpp"

namespace sdlg {

inline constexpr double kManifestTolerance = 1e-6;

class ContextTableLM final : public LanguageModel {
public:
    ContextTableLM(Vocabulary vocab, std::size_t order, std::string identity = "toy-lm")
        : vocab_(std::move(vocab)), order_(order), identity_(std::move(identity))
    {
    }

    /// Sets the distribution following `context` (at most `order` tokens).
    void set(const TokenSeq& context, const std::vector<std::pair<TokenId, double>>& entries)
    {
        if (context.size() > order_) {
            throw InvalidArgument("context longer than the model order");
        }
        std::vector<double> dense(vocab_.size(), 0.0);
        double total = 0.0;
        for (auto [token, p] : entries) {
            if (!vocab_.contains(token)) {
                throw InvalidArgument("manifest token " + std::to_string(token) + " outside the vocabulary");
            }
            if (!(p >= 0.0)) {
                throw InvalidArgument("manifest probability must be non-negative");
            }
            dense[static_cast<std::size_t>(token)] += p;
            total += p;
        }
        if (std::abs(total - 1.0) > kManifestTolerance) {
            throw InvalidArgument("manifest probabilities sum to " + std::to_string(total));
        }
        table_[context] = std::move(dense);
    }

    [[nodiscard]] const Vocabulary& vocabulary() const override { return vocab_; }
    [[nodiscard]] std::string identity() const override { return identity_; }
    [[nodiscard]] std::size_t order() const noexcept { return order_; }
    [[nodiscard]] const std::map<TokenSeq, std::vector<double>>& table() const noexcept { return table_; }

    [[nodiscard]] NextTokenDistribution next_token_distribution(std::span<const TokenId> input,
                                                                std::span<const TokenId> prefix) const override
    {
        const std::size_t available = input.size() + prefix.size();
        TokenSeq context;
        for (std::size_t len = std::min(order_, available) + 1; len-- > 0;) {
            context.clear();
            for (std::size_t pos = available - len; pos < available; ++pos) {
                context.push_back(pos < input.size() ? input[pos] : prefix[pos - input.size()]);
            }
            if (auto it = table_.find(context); it != table_.end()) {
                return {it->second, 0.0};
            }
        }
        throw BackendError("toy LM has no distribution for the current context");
    }

    static ContextTableLM parse(std::istream& in, std::string identity = "toy-lm")
    {
        std::size_t size = 0;
        std::optional<TokenId> eos;
        std::optional<std::size_t> order;
        std::vector<std::string> strings;
        std::vector<bool> word_begin;
        std::vector<std::pair<TokenSeq, std::vector<std::pair<TokenId, double>>>> rows;

        auto token_of = [&](const std::string& word) -> TokenId {
            if (!strings.empty()) {
                for (std::size_t i = 0; i < strings.size(); ++i) {
                    if (strings[i] == word) {
                        return static_cast<TokenId>(i);
                    }
                }
            }
            try {
                std::size_t used = 0;
                const int id = std::stoi(word, &used);
                if (used == word.size()) {
                    return static_cast<TokenId>(id);
                }
            } catch (const std::exception&) {
            }
            throw InvalidArgument("manifest: unknown token '" + word + "'");
        };

        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) {
                line.erase(hash);
            }
            const auto arrow = line.find("->");
            if (arrow == std::string::npos) {
                std::istringstream words(line);
                std::string key;
                if (!(words >> key)) {
                    continue;
                }
                if (key == "vocab") {
                    words >> size;
                } else if (key == "eos") {
                    TokenId id = 0;
                    words >> id;
                    eos = id;
                } else if (key == "order") {
                    std::size_t k = 0;
                    words >> k;
                    order = k;
                } else if (key == "tokens") {
                    std::string w;
                    while (words >> w) {
                        strings.push_back(w);
                    }
                } else if (key == "word_begin") {
                    int flag = 0;
                    while (words >> flag) {
                        word_begin.push_back(flag != 0);
                    }
                } else {
                    throw InvalidArgument("manifest line " + std::to_string(line_no) + ": unknown directive '" + key + "'");
                }
                continue;
            }
            TokenSeq context;
            {
                std::istringstream words(line.substr(0, arrow));
                std::string w;
                while (words >> w) {
                    context.push_back(token_of(w));
                }
            }
            std::vector<std::pair<TokenId, double>> entries;
            std::string rest = line.substr(arrow + 2);
            std::istringstream items(rest);
            std::string item;
            while (std::getline(items, item, ',')) {
                const auto first = item.find_first_not_of(" \t\r");
                if (first == std::string::npos) {
                    continue;
                }
                const auto last = item.find_last_not_of(" \t\r");
                item = item.substr(first, last - first + 1);
                const auto colon = item.rfind(':');
                if (colon == std::string::npos) {
                    throw InvalidArgument("manifest line " + std::to_string(line_no) + ": expected token:prob");
                }
                entries.emplace_back(token_of(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
            }
            rows.emplace_back(std::move(context), std::move(entries));
        }
        if (size == 0 || !eos) {
            throw InvalidArgument("manifest must declare 'vocab' and 'eos'");
        }
        std::size_t k = 0;
        for (const auto& row : rows) {
            k = std::max(k, row.first.size());
        }
        ContextTableLM lm(Vocabulary(size, *eos, std::move(word_begin), std::move(strings)), order.value_or(k),
                          std::move(identity));
        for (const auto& [context, entries] : rows) {
            lm.set(context, entries);
        }
        return lm;
    }

    static ContextTableLM load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw Error("cannot open toy LM manifest: " + path);
        }
        return parse(in, "toy-lm:" + path);
    }

    /// Writes a manifest that `parse` reads back to an identical table.
    void write(std::ostream& out) const
    {
        out << "vocab " << vocab_.size() << "\n";
        out << "eos " << vocab_.eos() << "\n";
        out << "order " << order_ << "\n";
        if (vocab_.has_strings()) {
            out << "tokens";
            for (const auto& s : vocab_.strings()) {
                out << ' ' << s;
            }
            out << "\n";
        }
        out << "word_begin";
        for (bool b : vocab_.word_begin_flags()) {
            out << ' ' << (b ? 1 : 0);
        }
        out << "\n";
        std::ostringstream num;
        num.precision(17);
        for (const auto& [context, dense] : table_) {
            for (std::size_t i = 0; i < context.size(); ++i) {
                out << (i ? " " : "") << context[i];
            }
            out << (context.empty() ? "->" : " ->");
            bool first = true;
            for (std::size_t k = 0; k < dense.size(); ++k) {
                if (dense[k] <= 0.0) {
                    continue;
                }
                num.str("");
                num << dense[k];
                out << (first ? " " : ", ") << k << ':' << num.str();
                first = false;
            }
            out << "\n";
        }
    }

private:
    Vocabulary vocab_;
    std::size_t order_;
    std::string identity_;
    std::map<TokenSeq, std::vector<double>> table_;
};

}  // namespace sdlg
