#pragma once

// JSON-over-HTTP client for external LM and NLI servers (wire protocol v1).
//
//   GET  /v1/meta             -> {vocab_size, vocab_hash, embedding_dim, word_begin (base64 bitset), model_id}
//   POST /v1/next_token_dist  {input, prefix} -> {probs: {id: p}, residual_mass}
//   POST /v1/generate         {input, prefix, temperature, max_tokens, seed} -> {tokens, step_probs}
//   POST /v1/nli/classify     {premise, hypothesis} -> {entail, neutral, contradiction}
//   POST /v1/nli/gradients    {seq} -> {loss, embeddings, grads}
//   POST /v1/nli/embeddings   {tokens} -> {vectors}
//
// HTTP 4xx is a client/schema fault and fatal; 5xx and transport failures are
// retried up to the endpoint's retry budget. Every response is validated
// before any of it is used.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "sdlg/error.hpp"
#include "sdlg/prob.hpp"
#include "sdlg/semantics.hpp"
#include "sdlg/sequence.hpp"

namespace sdlg::remote {

using nlohmann::json;

inline constexpr double kProtocolTolerance = 1e-6;

struct BackendEndpoint {
    std::string base_url;
    int timeout_ms = 30'000;
    int retries = 2;
    std::size_t max_in_flight = 8;
};

struct BackendMeta {
    std::size_t vocab_size = 0;
    std::string vocab_hash;
    std::size_t embedding_dim = 0;
    std::vector<bool> word_begin;
    std::string model_id;
    /// Optional extensions: token strings for detokenizing answers, eos id.
    std::vector<std::string> tokens;
    std::optional<TokenId> eos;
    std::vector<std::string> warnings;
};

/// Standard base64 (RFC 4648) decoding; padding optional, whitespace ignored.
inline std::vector<std::uint8_t> base64_decode(std::string_view text)
{
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+' || c == '-') return 62;
        if (c == '/' || c == '_') return 63;
        return -1;
    };
    std::vector<std::uint8_t> out;
    std::uint32_t buffer = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r' || c == ' ') {
            continue;
        }
        const int v = value(c);
        if (v < 0) {
            throw SchemaError("invalid base64 character");
        }
        buffer = (buffer << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((buffer >> bits) & 0xFF));
        }
    }
    return out;
}

/// Bit i of the bitset is bit (i % 8) of byte i / 8, least significant first.
inline std::vector<bool> decode_bitset(std::string_view base64, std::size_t n_bits)
{
    const auto bytes = base64_decode(base64);
    if (bytes.size() * 8 < n_bits) {
        throw SchemaError("word_begin bitset is shorter than the vocabulary");
    }
    std::vector<bool> out(n_bits);
    for (std::size_t i = 0; i < n_bits; ++i) {
        out[i] = (bytes[i / 8] >> (i % 8)) & 1U;
    }
    return out;
}

/// Shared HTTP plumbing: retries, in-flight limit and a request counter.
class Transport {
public:
    explicit Transport(BackendEndpoint endpoint)
        : endpoint_(std::move(endpoint)), slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, endpoint_.max_in_flight)))
    {
        if (endpoint_.timeout_ms <= 0) {
            throw InvalidArgument("endpoint timeout must be positive");
        }
        if (endpoint_.base_url.empty()) {
            throw InvalidArgument("endpoint URL is empty");
        }
        // split "scheme://host:port/prefix" into client address and path prefix
        const auto scheme = endpoint_.base_url.find("://");
        const auto path_start = endpoint_.base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        host_ = endpoint_.base_url.substr(0, path_start);
        if (path_start != std::string::npos) {
            prefix_ = endpoint_.base_url.substr(path_start);
            while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
        }
    }

    [[nodiscard]] const BackendEndpoint& endpoint() const noexcept { return endpoint_; }
    [[nodiscard]] std::size_t requests() const noexcept { return requests_.load(); }

    json get(const std::string& path) const { return call(path, nullptr); }
    json post(const std::string& path, const json& body) const { return call(path, &body); }

private:
    json call(const std::string& path, const json* body) const
    {
        std::counting_semaphore<>& slots = slots_;
        slots.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots};

        std::string last_error;
        for (int attempt = 0; attempt <= endpoint_.retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(10 * attempt));
            }
            httplib::Client client(host_);
            const auto timeout = std::chrono::milliseconds(endpoint_.timeout_ms);
            client.set_connection_timeout(timeout);
            client.set_read_timeout(timeout);
            client.set_write_timeout(timeout);
            ++requests_;
            const std::string full = prefix_ + path;
            auto res = body ? client.Post(full, body->dump(), "application/json") : client.Get(full);
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "server error " + std::to_string(res->status) + ": " + res->body;
                continue;
            }
            if (res->status >= 400) {
                throw SchemaError(path + " rejected the request (HTTP " + std::to_string(res->status) + "): " + res->body);
            }
            try {
                return json::parse(res->body);
            } catch (const json::parse_error& e) {
                throw SchemaError(path + " returned invalid JSON: " + e.what());
            }
        }
        throw BackendError(endpoint_.base_url + path + " failed after retries: " + last_error);
    }

    BackendEndpoint endpoint_;
    std::string host_;
    std::string prefix_;
    mutable std::counting_semaphore<> slots_;
    mutable std::atomic<std::size_t> requests_{0};
};

namespace detail {

template <typename T>
T field(const json& j, const char* key, const char* where)
{
    if (!j.is_object() || !j.contains(key)) {
        throw SchemaError(std::string(where) + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string(where) + ": bad field '" + key + "': " + e.what());
    }
}

inline std::vector<std::vector<double>> matrix(const json& j, const char* key, std::size_t cols, const char* where)
{
    auto m = field<std::vector<std::vector<double>>>(j, key, where);
    for (const auto& row : m) {
        if (row.size() != cols) {
            throw SchemaError(std::string(where) + ": '" + key + "' row has dimension " + std::to_string(row.size()) +
                              ", expected " + std::to_string(cols));
        }
        for (double v : row) {
            if (!std::isfinite(v)) throw SchemaError(std::string(where) + ": non-finite value in '" + key + "'");
        }
    }
    return m;
}

}  // namespace detail

/// GET /v1/meta. A missing word_begin bitmap defaults to all-true with a warning.
inline BackendMeta handshake(const Transport& transport)
{
    const json j = transport.get("/v1/meta");
    constexpr const char* where = "/v1/meta";
    BackendMeta meta;
    meta.vocab_size = detail::field<std::size_t>(j, "vocab_size", where);
    meta.vocab_hash = detail::field<std::string>(j, "vocab_hash", where);
    meta.embedding_dim = detail::field<std::size_t>(j, "embedding_dim", where);
    meta.model_id = detail::field<std::string>(j, "model_id", where);
    if (meta.vocab_size == 0) {
        throw SchemaError("/v1/meta: vocab_size must be positive");
    }
    if (j.contains("word_begin") && !j["word_begin"].is_null()) {
        meta.word_begin = decode_bitset(detail::field<std::string>(j, "word_begin", where), meta.vocab_size);
    } else {
        meta.word_begin.assign(meta.vocab_size, true);
        meta.warnings.push_back("word_begin missing from /v1/meta; treating every token as word-initial");
        std::clog << "warning: " << meta.warnings.back() << " (" << transport.endpoint().base_url << ")\n";
    }
    if (j.contains("tokens")) {
        meta.tokens = detail::field<std::vector<std::string>>(j, "tokens", where);
        if (meta.tokens.size() != meta.vocab_size) {
            throw SchemaError("/v1/meta: tokens list does not match vocab_size");
        }
    }
    if (j.contains("eos_id")) {
        meta.eos = detail::field<TokenId>(j, "eos_id", where);
    }
    return meta;
}

/// Cross-vocabulary alignment is not supported: both servers must agree.
inline void require_shared_vocabulary(const BackendMeta& lm, const BackendMeta& nli)
{
    if (lm.vocab_hash != nli.vocab_hash || lm.vocab_size != nli.vocab_size) {
        throw SchemaError("LM and NLI servers use different vocabularies (hash " + lm.vocab_hash + " vs " +
                          nli.vocab_hash + ")");
    }
}

inline json ids(std::span<const TokenId> tokens) { return json(std::vector<TokenId>(tokens.begin(), tokens.end())); }

class RemoteLanguageModel final : public LanguageModel {
public:
    /// The eos id is not part of the core metadata: it comes from the caller
    /// or from the optional `eos_id` field of /v1/meta.
    explicit RemoteLanguageModel(BackendEndpoint endpoint, std::optional<TokenId> eos = std::nullopt,
                                 bool server_side_sampling = true)
        : transport_(std::make_unique<Transport>(std::move(endpoint))),
          meta_(handshake(*transport_)),
          vocab_(meta_.vocab_size, resolve_eos(eos, meta_), meta_.word_begin, meta_.tokens),
          server_side_sampling_(server_side_sampling)
    {
    }

    [[nodiscard]] const Vocabulary& vocabulary() const override { return vocab_; }
    [[nodiscard]] std::string identity() const override { return meta_.model_id; }
    [[nodiscard]] const BackendMeta& meta() const noexcept { return meta_; }
    [[nodiscard]] const Transport& transport() const noexcept { return *transport_; }

    [[nodiscard]] NextTokenDistribution next_token_distribution(std::span<const TokenId> input,
                                                                std::span<const TokenId> prefix) const override
    {
        Key key{TokenSeq(input.begin(), input.end()), TokenSeq(prefix.begin(), prefix.end())};
        {
            std::lock_guard lock(mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        const json j = transport_->post("/v1/next_token_dist", {{"input", ids(input)}, {"prefix", ids(prefix)}});
        NextTokenDistribution dist = parse_distribution(j, vocab_.size());
        std::lock_guard lock(mutex_);
        cache_.emplace(std::move(key), dist);
        return dist;
    }

    [[nodiscard]] Continuation sample_continuation(std::span<const TokenId> input, std::span<const TokenId> prefix,
                                                   double temperature, std::size_t max_total_length,
                                                   Rng& rng) const override
    {
        if (!server_side_sampling_) {
            return LanguageModel::sample_continuation(input, prefix, temperature, max_total_length, rng);
        }
        Continuation out;
        if (prefix.size() >= max_total_length || (!prefix.empty() && prefix.back() == vocab_.eos())) {
            return out;
        }
        const json body{{"input", ids(input)},
                        {"prefix", ids(prefix)},
                        {"temperature", temperature},
                        {"max_tokens", max_total_length - prefix.size()},
                        {"seed", rng.next_u64() >> 11}};
        const json j = transport_->post("/v1/generate", body);
        constexpr const char* where = "/v1/generate";
        out.tokens = detail::field<std::vector<TokenId>>(j, "tokens", where);
        out.step_probs = detail::field<std::vector<double>>(j, "step_probs", where);
        if (out.tokens.size() != out.step_probs.size()) {
            throw SchemaError("/v1/generate: tokens and step_probs differ in length");
        }
        if (out.tokens.size() > max_total_length - prefix.size()) {
            throw SchemaError("/v1/generate: more tokens than requested");
        }
        for (std::size_t t = 0; t < out.tokens.size(); ++t) {
            if (!vocab_.contains(out.tokens[t])) throw SchemaError("/v1/generate: token outside the vocabulary");
            if (!(out.step_probs[t] > 0.0 && out.step_probs[t] <= 1.0)) {
                throw SchemaError("/v1/generate: step probability outside (0, 1]");
            }
            if (out.tokens[t] == vocab_.eos() && t + 1 != out.tokens.size()) {
                throw SchemaError("/v1/generate: tokens continue after eos");
            }
        }
        return out;
    }

    static NextTokenDistribution parse_distribution(const json& j, std::size_t vocab_size)
    {
        constexpr const char* where = "/v1/next_token_dist";
        if (!j.is_object() || !j.contains("probs") || !j["probs"].is_object()) {
            throw SchemaError("/v1/next_token_dist: 'probs' must be an object");
        }
        NextTokenDistribution dist;
        dist.probs.assign(vocab_size, 0.0);
        dist.residual_mass = detail::field<double>(j, "residual_mass", where);
        if (!(dist.residual_mass >= 0.0 && dist.residual_mass <= 1.0 + kProtocolTolerance)) {
            throw SchemaError("/v1/next_token_dist: residual_mass outside [0, 1]");
        }
        double total = dist.residual_mass;
        for (const auto& [key, value] : j["probs"].items()) {
            std::size_t used = 0;
            long id = -1;
            try {
                id = std::stol(key, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != key.size() || id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
                throw SchemaError("/v1/next_token_dist: invalid token id '" + key + "'");
            }
            if (!value.is_number()) {
                throw SchemaError("/v1/next_token_dist: probability must be a number");
            }
            const double p = value.get<double>();
            if (!(p >= 0.0 && p <= 1.0)) {
                throw SchemaError("/v1/next_token_dist: probability outside [0, 1]");
            }
            dist.probs[static_cast<std::size_t>(id)] = p;
            total += p;
        }
        if (std::abs(total - 1.0) > kProtocolTolerance) {
            throw SchemaError("/v1/next_token_dist: probabilities and residual sum to " + std::to_string(total));
        }
        return dist;
    }

private:
    static TokenId resolve_eos(std::optional<TokenId> eos, const BackendMeta& meta)
    {
        if (eos) return *eos;
        if (meta.eos) return *meta.eos;
        throw InvalidArgument("remote LM: eos id neither given nor reported by /v1/meta");
    }

    using Key = std::pair<TokenSeq, TokenSeq>;
    std::unique_ptr<Transport> transport_;
    BackendMeta meta_;
    Vocabulary vocab_;
    bool server_side_sampling_;
    mutable std::mutex mutex_;
    mutable std::map<Key, NextTokenDistribution> cache_;
};

class RemoteNli final : public NliModel {
public:
    explicit RemoteNli(BackendEndpoint endpoint)
        : transport_(std::make_unique<Transport>(std::move(endpoint))), meta_(handshake(*transport_))
    {
        if (meta_.embedding_dim == 0) {
            throw SchemaError("/v1/meta: NLI server reports embedding_dim 0");
        }
    }

    [[nodiscard]] const BackendMeta& meta() const noexcept { return meta_; }
    [[nodiscard]] const Transport& transport() const noexcept { return *transport_; }

    [[nodiscard]] ProbVector classify(std::span<const TokenId> premise, std::span<const TokenId> hypothesis) const override
    {
        Key key{TokenSeq(premise.begin(), premise.end()), TokenSeq(hypothesis.begin(), hypothesis.end())};
        {
            std::lock_guard lock(mutex_);
            if (auto it = classify_cache_.find(key); it != classify_cache_.end()) return it->second;
        }
        const json j = transport_->post("/v1/nli/classify", {{"premise", ids(premise)}, {"hypothesis", ids(hypothesis)}});
        ProbVector p = parse_classification(j);
        std::lock_guard lock(mutex_);
        classify_cache_.emplace(std::move(key), p);
        return p;
    }

    [[nodiscard]] ContradictionGradients contradiction_gradients(std::span<const TokenId> seq) const override
    {
        constexpr const char* where = "/v1/nli/gradients";
        const json j = transport_->post(where, {{"seq", ids(seq)}});
        ContradictionGradients out;
        out.loss = detail::field<double>(j, "loss", where);
        auto embeddings = detail::matrix(j, "embeddings", meta_.embedding_dim, where);
        auto grads = detail::matrix(j, "grads", meta_.embedding_dim, where);
        if (embeddings.size() != seq.size() || grads.size() != seq.size()) {
            throw SchemaError("/v1/nli/gradients: expected one row per position");
        }
        for (std::size_t i = 0; i < seq.size(); ++i) {
            out.positions.push_back({std::move(embeddings[i]), std::move(grads[i])});
        }
        return out;
    }

    [[nodiscard]] std::vector<double> embedding(TokenId token) const override
    {
        {
            std::lock_guard lock(mutex_);
            if (auto it = embedding_cache_.find(token); it != embedding_cache_.end()) return it->second;
        }
        constexpr const char* where = "/v1/nli/embeddings";
        const json j = transport_->post(where, {{"tokens", std::vector<TokenId>{token}}});
        auto vectors = detail::matrix(j, "vectors", meta_.embedding_dim, where);
        if (vectors.size() != 1) {
            throw SchemaError("/v1/nli/embeddings: expected one vector per token");
        }
        std::lock_guard lock(mutex_);
        return embedding_cache_.emplace(token, std::move(vectors.front())).first->second;
    }

    [[nodiscard]] std::size_t embedding_dim() const override { return meta_.embedding_dim; }
    [[nodiscard]] std::string identity() const override { return meta_.model_id; }

    static ProbVector parse_classification(const json& j)
    {
        constexpr const char* where = "/v1/nli/classify";
        const double e = detail::field<double>(j, "entail", where);
        const double n = detail::field<double>(j, "neutral", where);
        const double c = detail::field<double>(j, "contradiction", where);
        if (!(e >= 0.0 && n >= 0.0 && c >= 0.0) || std::abs(e + n + c - 1.0) > kProtocolTolerance) {
            throw SchemaError("/v1/nli/classify: class probabilities do not form a distribution");
        }
        const double total = e + n + c;
        return ProbVector({e / total, n / total, c / total});
    }

private:
    using Key = std::pair<TokenSeq, TokenSeq>;
    std::unique_ptr<Transport> transport_;
    BackendMeta meta_;
    mutable std::mutex mutex_;
    mutable std::map<Key, ProbVector> classify_cache_;
    mutable std::map<TokenId, std::vector<double>> embedding_cache_;
};

}  // namespace sdlg::remote
