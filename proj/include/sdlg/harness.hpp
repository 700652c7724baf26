#pragma once

// Benchmark runner: per question, a shared beam-search answer, method-specific
// sample sets, clustering, uncertainty scores and correctness; AUROC per
// method and correctness threshold; deterministic result files.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

#include "sdlg/decoding.hpp"
#include "sdlg/error.hpp"
#include "sdlg/estimators.hpp"
#include "sdlg/metrics.hpp"
#include "sdlg/rng.hpp"
#include "sdlg/sdlg.hpp"
#include "sdlg/semantics.hpp"
#include "sdlg/sequence.hpp"

namespace sdlg::harness {

using nlohmann::json;

enum class RunMethod { se_sdlg, se_ms, se_dbs, se_ms_improper, pe, ln_pe };

inline constexpr RunMethod kAllMethods[] = {RunMethod::se_sdlg, RunMethod::se_ms, RunMethod::se_dbs,
                                            RunMethod::se_ms_improper, RunMethod::pe, RunMethod::ln_pe};

inline std::string_view to_string(RunMethod m)
{
    switch (m) {
    case RunMethod::se_sdlg: return "SE_SDLG";
    case RunMethod::se_ms: return "SE_MS";
    case RunMethod::se_dbs: return "SE_DBS";
    case RunMethod::se_ms_improper: return "SE_MS_improper";
    case RunMethod::pe: return "PE";
    case RunMethod::ln_pe: return "LN-PE";
    }
    return "?";
}

inline RunMethod parse_method(std::string_view name)
{
    for (RunMethod m : kAllMethods) {
        if (to_string(m) == name) return m;
    }
    throw InvalidArgument("unknown method '" + std::string(name) + "'");
}

inline CorrectnessMetric parse_metric(std::string_view name)
{
    if (name == "rouge-l") return CorrectnessMetric::rouge_l;
    if (name == "rouge-1") return CorrectnessMetric::rouge_1;
    throw InvalidArgument("unknown metric '" + std::string(name) + "' (rouge-l, rouge-1)");
}

inline std::string_view to_string(CorrectnessMetric m) { return m == CorrectnessMetric::rouge_l ? "rouge-l" : "rouge-1"; }

inline std::vector<double> default_thresholds()
{
    std::vector<double> t;
    for (int k = 1; k <= 10; ++k) t.push_back(k / 10.0);
    return t;
}

struct RunConfig {
    std::vector<RunMethod> methods{std::begin(kAllMethods), std::end(kAllMethods)};
    std::size_t n_samples = 10;
    double temperature = 1.0;
    double dbs_penalty = 0.5;
    SdlgConfig sdlg;
    CorrectnessMetric metric = CorrectnessMetric::rouge_l;
    std::vector<double> thresholds = default_thresholds();
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    EntropyVariant entropy_variant = EntropyVariant::plain;
    LikelihoodKind likelihood = LikelihoodKind::length_normalized;
    std::size_t initial_beams = 5;
    std::size_t max_length = kDefaultMaxLength;
    double max_skip_fraction = 0.10;

    void validate() const
    {
        if (methods.empty()) throw InvalidArgument("run: no methods selected");
        if (n_samples == 0) throw InvalidArgument("run: n_samples must be at least 1");
        if (!(temperature > 0.0)) throw InvalidArgument("run: temperature must be positive");
        if (!(dbs_penalty >= 0.0)) throw InvalidArgument("run: DBS penalty must be non-negative");
        if (thresholds.empty()) throw InvalidArgument("run: empty threshold grid");
        for (double t : thresholds) {
            if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument("run: thresholds must lie in (0, 1]");
        }
        if (workers == 0) throw InvalidArgument("run: workers must be at least 1");
        if (initial_beams == 0 || max_length == 0) throw InvalidArgument("run: invalid decoding settings");
    }

    [[nodiscard]] json to_json() const
    {
        json m = json::array();
        for (RunMethod r : methods) m.push_back(std::string(to_string(r)));
        return {
            {"methods", m},
            {"n_samples", n_samples},
            {"temperature", temperature},
            {"dbs_penalty", dbs_penalty},
            {"sdlg",
             {{"importance_threshold", sdlg.importance_threshold},
              {"word_begin_only", sdlg.word_begin_only},
              {"combiner", sdlg.combiner == ScoreCombiner::mean_of_normalized ? "mean-of-normalized" : "raw-mean"},
              {"dedupe", sdlg.dedupe},
              {"suffix_temperature", sdlg.suffix_temperature},
              {"fallback_attempts", sdlg.fallback_attempts}}},
            {"metric", std::string(to_string(metric))},
            {"thresholds", thresholds},
            {"seed", seed},
            {"entropy_variant", entropy_variant == EntropyVariant::plain ? "plain" : "lognorm"},
            {"likelihood", likelihood == LikelihoodKind::length_normalized ? "length-normalized" : "raw"},
            {"initial_beams", initial_beams},
            {"max_length", max_length},
        };
    }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Digest of a sample set: token ids in order, sequences separated.
inline std::string records_digest(std::span<const GenerationRecord> records)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& r : records) {
        for (TokenId t : r.tokens) {
            h = fnv1a(std::to_string(t) + ",", h);
        }
        h = fnv1a(";", h);
    }
    return hex64(h);
}

// --- dataset -------------------------------------------------------------

inline QAInstance parse_instance(const json& j)
{
    QAInstance q;
    try {
        q.id = j.at("id").get<std::string>();
        q.prompt = j.value("prompt", std::string());
        q.true_references = j.at("true_references").get<std::vector<std::string>>();
        if (j.contains("false_references")) {
            q.false_references = j.at("false_references").get<std::vector<std::string>>();
        }
        if (j.contains("input_tokens")) {
            q.input_tokens = j.at("input_tokens").get<std::vector<int>>();
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("dataset record: ") + e.what());
    }
    q.validate();
    return q;
}

inline json to_json(const QAInstance& q)
{
    json j{{"id", q.id}, {"prompt", q.prompt}, {"true_references", q.true_references}};
    if (!q.false_references.empty()) j["false_references"] = q.false_references;
    if (!q.input_tokens.empty()) j["input_tokens"] = q.input_tokens;
    return j;
}

/// One QAInstance per line; blank lines are ignored; ids must be unique.
inline std::vector<QAInstance> read_dataset(std::istream& in)
{
    std::vector<QAInstance> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
        QAInstance q = parse_instance(j);
        if (!ids.insert(q.id).second) {
            throw SchemaError("dataset line " + std::to_string(line_no) + ": duplicate id '" + q.id + "'");
        }
        out.push_back(std::move(q));
    }
    if (out.empty()) {
        throw SchemaError("dataset is empty");
    }
    return out;
}

inline std::vector<QAInstance> load_dataset(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset " + path.string());
    return read_dataset(in);
}

inline void write_dataset(std::ostream& out, std::span<const QAInstance> data)
{
    for (const auto& q : data) out << to_json(q).dump() << '\n';
}

/// Prompt tokens: explicit input_tokens, else prompt words looked up in the
/// vocabulary strings (unknown words are dropped).
inline TokenSeq prompt_tokens(const QAInstance& q, const Vocabulary& vocab)
{
    if (!q.input_tokens.empty()) {
        TokenSeq out(q.input_tokens.begin(), q.input_tokens.end());
        for (TokenId t : out) {
            if (!vocab.contains(t)) throw InvalidArgument("question '" + q.id + "': input token outside the vocabulary");
        }
        return out;
    }
    if (!vocab.has_strings()) {
        throw InvalidArgument("question '" + q.id + "': no input_tokens and the vocabulary has no token strings");
    }
    TokenSeq out;
    for (const auto& word : normalize_tokens(q.prompt)) {
        if (auto id = vocab.find(word)) out.push_back(*id);
    }
    return out;
}

// --- per-question evaluation ---------------------------------------------

struct MethodOutcome {
    double value = 0.0;
    std::size_t n_samples = 0;
    std::size_t n_clusters = 0;
    std::string digest;
};

struct QuestionResult {
    std::string id;
    std::string answer;
    double correctness = 0.0;
    std::map<RunMethod, MethodOutcome> scores;
    bool skipped = false;
    std::string error;
};

struct RunResult {
    RunConfig config;
    std::vector<QuestionResult> questions;
    /// auroc[method][k] for thresholds[k]; empty when labels are degenerate.
    std::map<RunMethod, std::vector<std::optional<double>>> auroc;
    std::size_t skipped = 0;
    json manifest;
};

namespace detail {

inline bool needs(const RunConfig& c, std::initializer_list<RunMethod> any)
{
    for (RunMethod m : any) {
        if (std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end()) return true;
    }
    return false;
}

inline MethodOutcome semantic_score(const NliModel& nli, std::span<const GenerationRecord> records, WeightMode mode,
                                    bool proper, const RunConfig& c)
{
    const Clustering clustering = assign_clusters(nli, records);
    const auto est = weighted_cluster_distribution(clustering, records, mode, c.likelihood);
    const UncertaintyScore s = proper ? semantic_entropy_proper(est, c.entropy_variant, records.size())
                                      : semantic_entropy_improper(est, records.size());
    return {s.value, records.size(), clustering.size(), records_digest(records)};
}

}  // namespace detail

struct PromptScores {
    GenerationRecord initial;
    std::string answer;
    std::map<RunMethod, MethodOutcome> scores;
};

/// Scores one prompt with every configured method. `stream` keys the derived
/// random streams, so distinct questions sample independently.
inline PromptScores score_input(const LanguageModel& lm, const NliModel& nli, std::span<const TokenId> input,
                                std::uint64_t stream, const RunConfig& c)
{
    PromptScores out;
    out.initial = beam_search(lm, input, c.initial_beams, c.max_length);
    out.answer = lm.vocabulary().detokenize(out.initial.tokens);
    const GenerationRecord& initial = out.initial;

    if (detail::needs(c, {RunMethod::se_ms, RunMethod::se_ms_improper, RunMethod::pe, RunMethod::ln_pe})) {
        Rng rng(Rng::derive(c.seed, {stream, 1}));
        std::vector<GenerationRecord> samples{initial};
        while (samples.size() < c.n_samples) {
            samples.push_back(sample_multinomial(lm, input, c.temperature, rng, c.max_length));
        }
        const std::string digest = records_digest(samples);
        for (RunMethod m : c.methods) {
            if (m == RunMethod::se_ms) {
                out.scores[m] = detail::semantic_score(nli, samples, WeightMode::likelihood, true, c);
            } else if (m == RunMethod::se_ms_improper) {
                out.scores[m] = detail::semantic_score(nli, samples, WeightMode::likelihood, false, c);
            } else if (m == RunMethod::pe || m == RunMethod::ln_pe) {
                const auto s = predictive_entropy(samples, m == RunMethod::ln_pe);
                out.scores[m] = {s.value, samples.size(), 0, digest};
            }
        }
    }
    if (detail::needs(c, {RunMethod::se_sdlg})) {
        Rng rng(Rng::derive(c.seed, {stream, 2}));
        SdlgConfig sc = c.sdlg;
        sc.n_sequences = c.n_samples;
        sc.initial_beams = c.initial_beams;
        sc.max_length = c.max_length;
        const auto gen = generate_diverse(lm, nli, input, sc, rng, &initial);
        out.scores[RunMethod::se_sdlg] = detail::semantic_score(nli, gen.records, WeightMode::sdlg_is, true, c);
    }
    if (detail::needs(c, {RunMethod::se_dbs})) {
        std::vector<GenerationRecord> records{initial};
        if (c.n_samples > 1) {
            auto groups = diverse_beam_search(lm, input, c.n_samples - 1, c.dbs_penalty, c.max_length);
            records.insert(records.end(), groups.begin(), groups.end());
        }
        out.scores[RunMethod::se_dbs] = detail::semantic_score(nli, records, WeightMode::likelihood, true, c);
    }
    return out;
}

inline QuestionResult evaluate_question(const LanguageModel& lm, const NliModel& nli, const QAInstance& q,
                                        std::size_t index, const RunConfig& c)
{
    const TokenSeq input = prompt_tokens(q, lm.vocabulary());
    PromptScores s = score_input(lm, nli, input, index, c);
    QuestionResult out;
    out.id = q.id;
    out.answer = std::move(s.answer);
    out.correctness = correctness(q, out.answer, c.metric);
    out.scores = std::move(s.scores);
    return out;
}

inline json dataset_digest(std::span<const QAInstance> data)
{
    std::ostringstream s;
    write_dataset(s, data);
    return {{"n_questions", data.size()}, {"hash", hex64(fnv1a(s.str()))}};
}

/// Runs every question with `config.workers` threads. Questions whose backend
/// calls fail are skipped and counted; more than `max_skip_fraction` skipped
/// questions fails the run.
inline RunResult run_benchmark(std::span<const QAInstance> data, const LanguageModel& lm, const NliModel& nli,
                               const RunConfig& config)
{
    config.validate();
    if (data.empty()) throw InvalidArgument("run: empty dataset");
    if (nli.embedding_dim() == 0) throw InvalidArgument("run: NLI backend reports no embedding dimension");

    const CachingNli cached(nli);
    RunResult result;
    result.config = config;
    result.questions.resize(data.size());

    std::atomic<std::size_t> next{0};
    std::mutex fatal_mutex;
    std::exception_ptr fatal;
    auto worker = [&] {
        for (std::size_t i = next++; i < data.size(); i = next++) {
            try {
                result.questions[i] = evaluate_question(lm, cached, data[i], i, config);
            } catch (const BackendError& e) {
                result.questions[i].id = data[i].id;
                result.questions[i].skipped = true;
                result.questions[i].error = e.what();
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
                next = data.size();
            }
        }
    };
    const std::size_t n_threads = std::min(config.workers, data.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (fatal) std::rethrow_exception(fatal);

    for (const auto& q : result.questions) result.skipped += q.skipped ? 1 : 0;
    if (static_cast<double>(result.skipped) > config.max_skip_fraction * static_cast<double>(data.size())) {
        throw BackendError("run: " + std::to_string(result.skipped) + " of " + std::to_string(data.size()) +
                           " questions failed, above the skip tolerance");
    }

    for (RunMethod m : config.methods) {
        auto& row = result.auroc[m];
        for (double threshold : config.thresholds) {
            std::vector<ScoredAnswer> scored;
            for (const auto& q : result.questions) {
                if (q.skipped) continue;
                scored.push_back({q.scores.at(m).value, q.correctness >= threshold});
            }
            try {
                row.push_back(auroc(scored));
            } catch (const DegenerateLabels&) {
                row.push_back(std::nullopt);
            }
        }
    }

    const json cfg = config.to_json();
    result.manifest = {
        {"format", "sdlg-run-v1"},
        {"config", cfg},
        {"config_hash", hex64(fnv1a(cfg.dump()))},
        {"seed", config.seed},
        {"lm", lm.identity()},
        {"nli", nli.identity()},
        {"dataset", dataset_digest(data)},
    };
    return result;
}

// --- output --------------------------------------------------------------

inline json to_json(const RunResult& r)
{
    json j;
    j["manifest"] = r.manifest;
    j["skipped"] = r.skipped;
    json questions = json::array();
    json rows = json::array();
    for (const auto& q : r.questions) {
        json jq{{"id", q.id}, {"skipped", q.skipped}};
        if (q.skipped) {
            jq["error"] = q.error;
            questions.push_back(std::move(jq));
            continue;
        }
        jq["answer"] = q.answer;
        jq["correctness"] = q.correctness;
        json scores = json::object();
        for (const auto& [m, s] : q.scores) {
            scores[std::string(to_string(m))] = {
                {"value", s.value}, {"n_samples", s.n_samples}, {"n_clusters", s.n_clusters}, {"digest", s.digest}};
        }
        jq["scores"] = scores;
        questions.push_back(std::move(jq));
        for (double t : r.config.thresholds) {
            json values = json::object();
            for (const auto& [m, s] : q.scores) values[std::string(to_string(m))] = s.value;
            rows.push_back({{"id", q.id}, {"threshold", t}, {"correctness", q.correctness},
                            {"is_correct", q.correctness >= t}, {"uncertainty", values}});
        }
    }
    j["questions"] = std::move(questions);
    j["rows"] = std::move(rows);
    json au = json::object();
    for (const auto& [m, values] : r.auroc) {
        json row = json::array();
        for (std::size_t k = 0; k < values.size(); ++k) {
            row.push_back({{"threshold", r.config.thresholds[k]},
                           {"auroc", values[k] ? json(*values[k]) : json(nullptr)}});
        }
        au[std::string(to_string(m))] = std::move(row);
    }
    j["auroc"] = std::move(au);
    return j;
}

inline std::string format_threshold(double t)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", t);
    return buf;
}

/// method,<thresholds...>; empty cells for degenerate thresholds.
inline std::string auroc_csv(const RunResult& r)
{
    std::string out = "method";
    for (double t : r.config.thresholds) out += "," + format_threshold(t);
    out += '\n';
    for (RunMethod m : r.config.methods) {
        out += to_string(m);
        for (const auto& v : r.auroc.at(m)) {
            out += ',';
            if (v) {
                char buf[40];
                std::snprintf(buf, sizeof buf, "%.17g", *v);
                out += buf;
            }
        }
        out += '\n';
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

/// Writes result.json, auroc.csv and manifest.json into `dir`.
inline void write_run(const RunResult& r, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    write_text(dir / "result.json", to_json(r).dump(2) + "\n");
    write_text(dir / "auroc.csv", auroc_csv(r));
    write_text(dir / "manifest.json", r.manifest.dump(2) + "\n");
}

}  // namespace sdlg::harness
