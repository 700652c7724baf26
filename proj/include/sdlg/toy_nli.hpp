#pragma once

// Differentiable reference NLI model small enough to check by hand.
//
//   token embeddings (dim d) -> mean-pool premise, mean-pool hypothesis
//   -> concat (2d) -> tanh hidden layer (width h) -> 3-way softmax
//
// Weights file (JSON, "format": "sdlg-toy-nli-v1"):
//   vocab_size, dim, hidden : integers
//   embeddings : vocab_size x dim
//   w1 : hidden x (2 dim)   rows act on [mean(premise); mean(hypothesis)]
//   b1 : hidden
//   w2 : 3 x hidden         rows are (entailment, neutral, contradiction)
//   b2 : 3

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "sdlg/error.hpp"
#include "sdlg/prob.hpp"
#include "sdlg/rng.hpp"
#include "sdlg/semantics.hpp"
#include "sdlg/sequence.hpp"

namespace sdlg {

using Matrix = std::vector<std::vector<double>>;

struct ToyNliWeights {
    std::size_t vocab_size = 0;
    std::size_t dim = 8;
    std::size_t hidden = 16;
    Matrix embeddings;
    Matrix w1;
    std::vector<double> b1;
    Matrix w2;
    std::vector<double> b2;

    void validate() const
    {
        auto check = [](const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
            if (m.size() != rows) {
                throw InvalidArgument(std::string("toy NLI: ") + name + " has the wrong number of rows");
            }
            for (const auto& row : m) {
                if (row.size() != cols) {
                    throw InvalidArgument(std::string("toy NLI: ") + name + " has the wrong number of columns");
                }
            }
        };
        if (vocab_size == 0 || dim == 0 || hidden == 0) {
            throw InvalidArgument("toy NLI: dimensions must be positive");
        }
        check(embeddings, vocab_size, dim, "embeddings");
        check(w1, hidden, 2 * dim, "w1");
        check(w2, kNliClasses, hidden, "w2");
        if (b1.size() != hidden || b2.size() != kNliClasses) {
            throw InvalidArgument("toy NLI: bias has the wrong length");
        }
    }
};

inline void to_json(nlohmann::json& j, const ToyNliWeights& w)
{
    j = nlohmann::json{{"format", "sdlg-toy-nli-v1"},
                       {"vocab_size", w.vocab_size},
                       {"dim", w.dim},
                       {"hidden", w.hidden},
                       {"embeddings", w.embeddings},
                       {"w1", w.w1},
                       {"b1", w.b1},
                       {"w2", w.w2},
                       {"b2", w.b2}};
}

inline void from_json(const nlohmann::json& j, ToyNliWeights& w)
{
    if (j.value("format", "") != "sdlg-toy-nli-v1") {
        throw SchemaError("toy NLI weights: unsupported format tag");
    }
    j.at("vocab_size").get_to(w.vocab_size);
    j.at("dim").get_to(w.dim);
    j.at("hidden").get_to(w.hidden);
    j.at("embeddings").get_to(w.embeddings);
    j.at("w1").get_to(w.w1);
    j.at("b1").get_to(w.b1);
    j.at("w2").get_to(w.w2);
    j.at("b2").get_to(w.b2);
}

class ToyNli final : public NliModel {
public:
    struct Forward {
        std::vector<double> input;   // [mean premise; mean hypothesis]
        std::vector<double> hidden;  // tanh activations
        std::vector<double> logits;
        std::vector<double> probs;
    };

    explicit ToyNli(ToyNliWeights weights, std::string identity = "toy-nli")
        : w_(std::move(weights)), identity_(std::move(identity))
    {
        w_.validate();
    }

    /// Uniform(-scale, scale) weights from a seed.
    static ToyNli random(std::size_t vocab_size, std::uint64_t seed, std::size_t dim = 8, std::size_t hidden = 16,
                         double scale = 1.0)
    {
        Rng rng(seed);
        auto draw = [&] { return scale * (2.0 * rng.uniform() - 1.0); };
        ToyNliWeights w;
        w.vocab_size = vocab_size;
        w.dim = dim;
        w.hidden = hidden;
        w.embeddings.assign(vocab_size, std::vector<double>(dim));
        w.w1.assign(hidden, std::vector<double>(2 * dim));
        w.b1.assign(hidden, 0.0);
        w.w2.assign(kNliClasses, std::vector<double>(hidden));
        w.b2.assign(kNliClasses, 0.0);
        for (auto& row : w.embeddings) {
            for (double& v : row) v = draw();
        }
        for (auto& row : w.w1) {
            for (double& v : row) v = draw();
        }
        for (double& v : w.b1) v = draw();
        for (auto& row : w.w2) {
            for (double& v : row) v = draw();
        }
        for (double& v : w.b2) v = draw();
        return ToyNli(std::move(w), "toy-nli:random:" + std::to_string(seed));
    }

    static ToyNli load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw Error("cannot open toy NLI weights: " + path);
        }
        const auto j = nlohmann::json::parse(in);
        if (j.value("format", "") == "sdlg-semantic-layout-v1") {
            return from_layout_json(j, "toy-nli:" + path);
        }
        return ToyNli(j.get<ToyNliWeights>(), "toy-nli:" + path);
    }

    /// {"format": "sdlg-semantic-layout-v1", "meaning": [...], "qualifier": [...], "noise_seed": n}
    static ToyNli from_layout_json(const nlohmann::json& j, std::string identity);

    void save(const std::string& path) const
    {
        std::ofstream out(path);
        if (!out) {
            throw Error("cannot write toy NLI weights: " + path);
        }
        out << nlohmann::json(w_).dump() << "\n";
    }

    [[nodiscard]] const ToyNliWeights& weights() const noexcept { return w_; }

    [[nodiscard]] Forward forward_vectors(std::span<const std::vector<double>> premise,
                                          std::span<const std::vector<double>> hypothesis) const
    {
        if (premise.empty() || hypothesis.empty()) {
            throw InvalidArgument("toy NLI: empty sequence");
        }
        const std::size_t d = w_.dim;
        Forward f;
        f.input.assign(2 * d, 0.0);
        auto pool = [&](std::span<const std::vector<double>> vecs, std::size_t offset) {
            const double inv = 1.0 / static_cast<double>(vecs.size());
            for (const auto& v : vecs) {
                if (v.size() != d) {
                    throw InvalidArgument("toy NLI: embedding dimension mismatch");
                }
                for (std::size_t k = 0; k < d; ++k) {
                    f.input[offset + k] += inv * v[k];
                }
            }
        };
        pool(premise, 0);
        pool(hypothesis, d);

        f.hidden.resize(w_.hidden);
        for (std::size_t j = 0; j < w_.hidden; ++j) {
            double a = w_.b1[j];
            for (std::size_t k = 0; k < 2 * d; ++k) {
                a += w_.w1[j][k] * f.input[k];
            }
            f.hidden[j] = std::tanh(a);
        }
        f.logits.resize(kNliClasses);
        for (std::size_t c = 0; c < kNliClasses; ++c) {
            double z = w_.b2[c];
            for (std::size_t j = 0; j < w_.hidden; ++j) {
                z += w_.w2[c][j] * f.hidden[j];
            }
            f.logits[c] = z;
        }
        double max_logit = f.logits[0];
        for (double z : f.logits) max_logit = std::max(max_logit, z);
        f.probs.resize(kNliClasses);
        double total = 0.0;
        for (std::size_t c = 0; c < kNliClasses; ++c) {
            f.probs[c] = std::exp(f.logits[c] - max_logit);
            total += f.probs[c];
        }
        for (double& p : f.probs) p /= total;
        return f;
    }

    [[nodiscard]] ProbVector classify(std::span<const TokenId> premise, std::span<const TokenId> hypothesis) const override
    {
        const auto p = embed(premise);
        const auto h = embed(hypothesis);
        return ProbVector(forward_vectors(p, h).probs);
    }

    [[nodiscard]] ContradictionGradients contradiction_gradients(std::span<const TokenId> seq) const override
    {
        const auto vecs = embed(seq);
        const Forward f = forward_vectors(vecs, vecs);
        const std::size_t d = w_.dim;
        const auto contra = static_cast<std::size_t>(NliClass::contradiction);

        // d(-ln softmax_c)/dlogits = probs - onehot(c)
        std::vector<double> dlogits = f.probs;
        dlogits[contra] -= 1.0;
        std::vector<double> dpre(w_.hidden, 0.0);
        for (std::size_t j = 0; j < w_.hidden; ++j) {
            double dh = 0.0;
            for (std::size_t c = 0; c < kNliClasses; ++c) {
                dh += w_.w2[c][j] * dlogits[c];
            }
            dpre[j] = dh * (1.0 - f.hidden[j] * f.hidden[j]);
        }
        std::vector<double> dinput(2 * d, 0.0);
        for (std::size_t j = 0; j < w_.hidden; ++j) {
            for (std::size_t k = 0; k < 2 * d; ++k) {
                dinput[k] += w_.w1[j][k] * dpre[j];
            }
        }
        // z_i sits in both pooled means with weight 1/T.
        const double inv = 1.0 / static_cast<double>(seq.size());
        std::vector<double> grad(d);
        for (std::size_t k = 0; k < d; ++k) {
            grad[k] = inv * (dinput[k] + dinput[d + k]);
        }

        ContradictionGradients out;
        out.loss = -std::log(f.probs[contra]);
        out.positions.reserve(seq.size());
        for (const auto& v : vecs) {
            out.positions.push_back({v, grad});
        }
        return out;
    }

    [[nodiscard]] std::vector<double> embedding(TokenId token) const override
    {
        if (token < 0 || static_cast<std::size_t>(token) >= w_.vocab_size) {
            throw InvalidArgument("toy NLI: token outside the vocabulary");
        }
        return w_.embeddings[static_cast<std::size_t>(token)];
    }

    [[nodiscard]] std::size_t embedding_dim() const override { return w_.dim; }
    [[nodiscard]] std::size_t vocab_size() const noexcept { return w_.vocab_size; }
    [[nodiscard]] std::string identity() const override { return identity_; }

private:
    [[nodiscard]] std::vector<std::vector<double>> embed(std::span<const TokenId> seq) const
    {
        std::vector<std::vector<double>> out;
        out.reserve(seq.size());
        for (TokenId t : seq) {
            out.push_back(embedding(t));
        }
        return out;
    }

    ToyNliWeights w_;
    std::string identity_;
};

/// Layout for a hand-built toy NLI whose verdicts follow token "meanings".
///
/// Embedding dims 0-3 hold a one-hot meaning class, dims 4-5 a one-hot
/// qualifier, dims 6-7 small per-token noise so that distinct tokens have
/// distinct embeddings. With mean pooling, two sequences of equal length
/// entail each other iff their meaning multisets agree, and a hypothesis that
/// carries a qualifier the premise lacks is judged neutral. Sequences of
/// different length differ in their pooled meaning and contradict. Verdicts
/// are reliable for sequences of up to 10 tokens.
struct SemanticLayout {
    static constexpr int kMeaningClasses = 4;
    static constexpr int kQualifiers = 2;

    /// Per token: meaning class in [0, 4) or -1 for a content-free token.
    std::vector<int> meaning;
    /// Per token: qualifier in [0, 2) or -1.
    std::vector<int> qualifier;
    std::uint64_t noise_seed = 0;
};

inline ToyNli semantic_toy_nli(const SemanticLayout& layout, std::string identity = "toy-nli:semantic")
{
    constexpr std::size_t dim = 8;
    constexpr std::size_t hidden = 16;
    constexpr double sharpness = 20.0;   // difference-unit slope
    constexpr double offset = 2.0;       // difference-unit bias
    constexpr double contra_gain = 3.0;
    constexpr double probe_gain = 0.3;
    constexpr double probe_slope = 2.0;
    constexpr double neutral_gain = 3.0;
    constexpr double entail_bias = 2.0;
    constexpr std::size_t M = SemanticLayout::kMeaningClasses;

    const std::size_t vocab = layout.meaning.size();
    if (vocab == 0 || (!layout.qualifier.empty() && layout.qualifier.size() != vocab)) {
        throw InvalidArgument("semantic layout: inconsistent per-token tables");
    }
    ToyNliWeights w;
    w.vocab_size = vocab;
    w.dim = dim;
    w.hidden = hidden;
    w.embeddings.assign(vocab, std::vector<double>(dim, 0.0));
    Rng rng(layout.noise_seed);
    for (std::size_t t = 0; t < vocab; ++t) {
        const int m = layout.meaning[t];
        if (m >= static_cast<int>(M)) {
            throw InvalidArgument("semantic layout: meaning class out of range");
        }
        if (m >= 0) {
            w.embeddings[t][static_cast<std::size_t>(m)] = 1.0;
        }
        const int q = layout.qualifier.empty() ? -1 : layout.qualifier[t];
        if (q >= SemanticLayout::kQualifiers) {
            throw InvalidArgument("semantic layout: qualifier out of range");
        }
        if (q >= 0) {
            w.embeddings[t][M + static_cast<std::size_t>(q)] = 1.0;
        }
        w.embeddings[t][6] = 0.1 + 0.4 * rng.uniform();
        w.embeddings[t][7] = -0.25 + 0.5 * rng.uniform();
    }

    w.w1.assign(hidden, std::vector<double>(2 * dim, 0.0));
    w.b1.assign(hidden, 0.0);
    w.w2.assign(kNliClasses, std::vector<double>(hidden, 0.0));
    w.b2.assign(kNliClasses, 0.0);
    const auto E = static_cast<std::size_t>(NliClass::entailment);
    const auto N = static_cast<std::size_t>(NliClass::neutral);
    const auto C = static_cast<std::size_t>(NliClass::contradiction);

    // Units 0-7: tanh(a x - b) + tanh(-a x - b) with x = premise_k - hypothesis_k;
    // even in x, zero at x = 0 after the 2 tanh(b) shift in b2.
    for (std::size_t k = 0; k < M; ++k) {
        const std::size_t u = 2 * k;
        w.w1[u][k] = sharpness;
        w.w1[u][dim + k] = -sharpness;
        w.b1[u] = -offset;
        w.w1[u + 1][k] = -sharpness;
        w.w1[u + 1][dim + k] = sharpness;
        w.b1[u + 1] = -offset;
        w.w2[C][u] = contra_gain;
        w.w2[C][u + 1] = contra_gain;
        w.b2[C] += 2.0 * contra_gain * std::tanh(offset);
    }
    // Units 8-11: content probes on premise + hypothesis; they give the
    // contradiction loss a non-zero gradient on a self-pair.
    for (std::size_t k = 0; k < M; ++k) {
        const std::size_t u = 2 * M + k;
        w.w1[u][k] = probe_slope;
        w.w1[u][dim + k] = probe_slope;
        w.w2[C][u] = probe_gain;
    }
    // Units 12-13: neutral when the hypothesis carries a qualifier the premise lacks.
    for (std::size_t q = 0; q < static_cast<std::size_t>(SemanticLayout::kQualifiers); ++q) {
        const std::size_t u = 3 * M + q;
        w.w1[u][M + q] = -sharpness;
        w.w1[u][dim + M + q] = sharpness;
        w.b1[u] = -offset;
        w.w2[N][u] = neutral_gain;
        w.b2[N] += neutral_gain * std::tanh(offset);
    }
    w.b2[E] = entail_bias;
    return ToyNli(std::move(w), std::move(identity));
}

inline ToyNli ToyNli::from_layout_json(const nlohmann::json& j, std::string identity)
{
    SemanticLayout layout;
    try {
        j.at("meaning").get_to(layout.meaning);
        if (j.contains("qualifier")) j.at("qualifier").get_to(layout.qualifier);
        layout.noise_seed = j.value("noise_seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("semantic layout: ") + e.what());
    }
    return semantic_toy_nli(layout, std::move(identity));
}

}  // namespace sdlg
