// sdlg: command-line front end.
//
//   sdlg run <dataset.jsonl> --toy-lm lm.txt --toy-nli nli.json --out dir
//   sdlg lab --out dir
//   sdlg score --prompt "..." --toy-lm lm.txt --toy-nli nli.json
//   sdlg cluster --toy-nli nli.json < sequences.txt
//
// Endpoints fall back to SDLG_LM_ENDPOINT / SDLG_NLI_ENDPOINT, and the request
// timeout to SDLG_REQUEST_TIMEOUT_MS, when not given on the command line.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sdlg/harness.hpp"
#include "sdlg/lab.hpp"
#include "sdlg/remote.hpp"
#include "sdlg/toy_lm.hpp"
#include "sdlg/toy_nli.hpp"

namespace {

using namespace sdlg;
using nlohmann::json;

struct BackendOptions {
    std::string toy_lm;
    std::string toy_nli;
    std::string lm_endpoint;
    std::string nli_endpoint;
    int timeout_ms = 0;
    int retries = 2;
    std::optional<int> eos;
    std::size_t max_in_flight = 8;
};

std::string env_or(const char* name, const std::string& fallback)
{
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

void add_backend_flags(CLI::App& cmd, BackendOptions& b, bool need_lm)
{
    if (need_lm) {
        cmd.add_option("--toy-lm", b.toy_lm, "toy LM manifest")->check(CLI::ExistingFile);
        cmd.add_option("--lm-endpoint", b.lm_endpoint, "LM server base URL (env SDLG_LM_ENDPOINT)");
        cmd.add_option("--eos", b.eos, "eos id for a remote LM that does not report one");
    }
    cmd.add_option("--toy-nli", b.toy_nli, "toy NLI weights (JSON)")->check(CLI::ExistingFile);
    cmd.add_option("--nli-endpoint", b.nli_endpoint, "NLI server base URL (env SDLG_NLI_ENDPOINT)");
    cmd.add_option("--timeout-ms", b.timeout_ms, "request timeout (env SDLG_REQUEST_TIMEOUT_MS, default 30000)");
    cmd.add_option("--retries", b.retries, "retries for 5xx and transport failures")->check(CLI::NonNegativeNumber);
}

remote::BackendEndpoint endpoint(const std::string& url, const BackendOptions& b)
{
    remote::BackendEndpoint e;
    e.base_url = url;
    e.timeout_ms = b.timeout_ms > 0 ? b.timeout_ms : std::stoi(env_or("SDLG_REQUEST_TIMEOUT_MS", "30000"));
    e.retries = b.retries;
    e.max_in_flight = b.max_in_flight;
    return e;
}

struct Backends {
    std::unique_ptr<LanguageModel> lm;
    std::unique_ptr<NliModel> nli;
};

Backends open_backends(const BackendOptions& b, bool need_lm)
{
    Backends out;
    const std::string lm_url = b.lm_endpoint.empty() ? env_or("SDLG_LM_ENDPOINT", "") : b.lm_endpoint;
    const std::string nli_url = b.nli_endpoint.empty() ? env_or("SDLG_NLI_ENDPOINT", "") : b.nli_endpoint;

    std::optional<remote::BackendMeta> lm_meta;
    if (need_lm) {
        if (!b.toy_lm.empty()) {
            out.lm = std::make_unique<ContextTableLM>(ContextTableLM::load(b.toy_lm));
        } else if (!lm_url.empty()) {
            auto r = std::make_unique<remote::RemoteLanguageModel>(endpoint(lm_url, b), b.eos);
            lm_meta = r->meta();
            out.lm = std::move(r);
        } else {
            throw InvalidArgument("no language model: pass --toy-lm or --lm-endpoint");
        }
    }
    if (!b.toy_nli.empty()) {
        out.nli = std::make_unique<ToyNli>(ToyNli::load(b.toy_nli));
    } else if (!nli_url.empty()) {
        auto r = std::make_unique<remote::RemoteNli>(endpoint(nli_url, b));
        if (lm_meta) remote::require_shared_vocabulary(*lm_meta, r->meta());
        out.nli = std::move(r);
    } else {
        throw InvalidArgument("no NLI model: pass --toy-nli or --nli-endpoint");
    }
    if (auto* toy = dynamic_cast<const ToyNli*>(out.nli.get()); toy && out.lm) {
        if (toy->vocab_size() != out.lm->vocabulary().size()) {
            throw InvalidArgument("LM and NLI vocabularies differ in size");
        }
    }
    return out;
}

std::vector<double> parse_reals(const std::string& list)
{
    std::vector<double> out;
    std::stringstream s(list);
    std::string item;
    while (std::getline(s, item, ',')) {
        std::size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw InvalidArgument("bad number '" + item + "'");
    }
    return out;
}

std::vector<harness::RunMethod> parse_methods(const std::vector<std::string>& names)
{
    std::vector<harness::RunMethod> out;
    for (const auto& entry : names) {
        std::stringstream s(entry);
        std::string item;
        while (std::getline(s, item, ',')) out.push_back(harness::parse_method(item));
    }
    return out;
}

struct RunOptions {
    std::vector<std::string> methods;
    std::size_t n_samples = 10;
    double temperature = 1.0;
    double dbs_penalty = 0.5;
    std::string metric = "rouge-l";
    std::string thresholds;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    bool lognorm = false;
    bool raw_likelihood = false;
    bool raw_mean = false;
    double importance_threshold = 0.001;
    bool all_positions = false;
    std::size_t max_length = kDefaultMaxLength;
};

void add_run_flags(CLI::App& cmd, RunOptions& o)
{
    cmd.add_option("--method", o.methods,
                   "SE_SDLG, SE_MS, SE_DBS, SE_MS_improper, PE, LN-PE (repeatable or comma list; default all)");
    cmd.add_option("--n-samples", o.n_samples, "output sequences per method")->check(CLI::PositiveNumber);
    cmd.add_option("--temperature", o.temperature, "multinomial sampling temperature");
    cmd.add_option("--dbs-penalty", o.dbs_penalty, "diverse beam search penalty");
    cmd.add_option("--metric", o.metric, "rouge-l or rouge-1");
    cmd.add_option("--thresholds", o.thresholds, "comma-separated correctness thresholds (default 0.1,...,1.0)");
    cmd.add_option("--seed", o.seed, "base seed");
    cmd.add_option("--workers", o.workers, "questions processed in parallel")->check(CLI::PositiveNumber);
    cmd.add_flag("--lognorm", o.lognorm, "entropy with the log of unnormalized masses");
    cmd.add_flag("--raw-likelihood", o.raw_likelihood, "weight by p(y) instead of the length-normalized p");
    cmd.add_flag("--raw-mean", o.raw_mean, "SDLG: average raw scores instead of min-max normalized ones");
    cmd.add_option("--importance-threshold", o.importance_threshold, "SDLG: minimum candidate probability");
    cmd.add_flag("--all-positions", o.all_positions, "SDLG: also substitute tokens that do not begin a word");
    cmd.add_option("--max-length", o.max_length, "maximum output length")->check(CLI::PositiveNumber);
}

harness::RunConfig to_config(const RunOptions& o)
{
    harness::RunConfig c;
    if (!o.methods.empty()) c.methods = parse_methods(o.methods);
    c.n_samples = o.n_samples;
    c.temperature = o.temperature;
    c.dbs_penalty = o.dbs_penalty;
    c.metric = harness::parse_metric(o.metric);
    if (!o.thresholds.empty()) c.thresholds = parse_reals(o.thresholds);
    c.seed = o.seed;
    c.workers = o.workers;
    c.entropy_variant = o.lognorm ? EntropyVariant::lognorm : EntropyVariant::plain;
    c.likelihood = o.raw_likelihood ? LikelihoodKind::raw : LikelihoodKind::length_normalized;
    c.sdlg.combiner = o.raw_mean ? ScoreCombiner::raw_mean : ScoreCombiner::mean_of_normalized;
    c.sdlg.importance_threshold = o.importance_threshold;
    c.sdlg.word_begin_only = !o.all_positions;
    c.max_length = o.max_length;
    c.validate();
    return c;
}

TokenSeq parse_sequence(const std::string& line, const Vocabulary* vocab)
{
    TokenSeq out;
    std::istringstream words(line);
    std::string w;
    while (words >> w) {
        std::size_t used = 0;
        int id = -1;
        try {
            id = std::stoi(w, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == w.size()) {
            out.push_back(id);
        } else if (vocab && vocab->find(w)) {
            out.push_back(*vocab->find(w));
        } else {
            throw InvalidArgument("unknown token '" + w + "'");
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Semantic uncertainty with semantically diverse generation"};
    app.require_subcommand(1);

    BackendOptions run_backends;
    RunOptions run_opts;
    std::string dataset;
    std::string run_out = "run";
    auto* run = app.add_subcommand("run", "score a JSONL dataset and compute AUROC");
    run->add_option("dataset", dataset, "JSONL dataset")->required()->check(CLI::ExistingFile);
    add_run_flags(*run, run_opts);
    add_backend_flags(*run, run_backends, true);
    run->add_option("--out", run_out, "output directory");

    std::uint64_t lab_seed = 0;
    std::size_t lab_runs = 200;
    std::size_t lab_max_n = 30;
    std::string lab_out = "lab";
    auto* lab = app.add_subcommand("lab", "synthetic bias/variance study of cluster estimators");
    lab->add_option("--seed", lab_seed, "base seed");
    lab->add_option("--runs", lab_runs, "runs per sample size")->check(CLI::PositiveNumber);
    lab->add_option("--max-n", lab_max_n, "largest sample size")->check(CLI::PositiveNumber);
    lab->add_option("--out", lab_out, "output directory");

    BackendOptions score_backends;
    RunOptions score_opts;
    std::string prompt;
    std::string input_ids;
    std::string score_out;
    auto* score = app.add_subcommand("score", "uncertainty scores for a single prompt");
    score->add_option("--prompt", prompt, "prompt text (words looked up in the vocabulary)");
    score->add_option("--input-tokens", input_ids, "prompt as space-separated token ids");
    add_run_flags(*score, score_opts);
    add_backend_flags(*score, score_backends, true);
    score->add_option("--out", score_out, "also write the scores to this JSON file");

    BackendOptions cluster_backends;
    std::string cluster_out;
    auto* cluster = app.add_subcommand("cluster", "cluster sequences read from stdin (one per line)");
    add_backend_flags(*cluster, cluster_backends, true);
    cluster->add_option("--out", cluster_out, "also write the assignment to this JSON file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto config = to_config(run_opts);
            const auto backends = open_backends(run_backends, true);
            const auto data = harness::load_dataset(dataset);
            const auto result = harness::run_benchmark(data, *backends.lm, *backends.nli, config);
            harness::write_run(result, run_out);
            std::cout << harness::auroc_csv(result);
            if (result.skipped) std::cerr << result.skipped << " question(s) skipped\n";
        } else if (*lab) {
            auto s = lab::two_cluster_scenario(lab_seed);
            s.runs = lab_runs;
            s.sample_grid.resize(lab_max_n);
            for (std::size_t n = 0; n < lab_max_n; ++n) s.sample_grid[n] = n + 1;
            const auto result = lab::run_scenario(s);
            std::filesystem::create_directories(lab_out);
            lab::emit_plot_data(result, std::filesystem::path(lab_out) / "lab.csv");
            std::cout << "wrote " << (std::filesystem::path(lab_out) / "lab.csv").string() << " and lab.json\n";
        } else if (*score) {
            const auto config = to_config(score_opts);
            const auto backends = open_backends(score_backends, true);
            TokenSeq input;
            if (!input_ids.empty()) {
                input = parse_sequence(input_ids, nullptr);
            } else {
                QAInstance q;
                q.id = "prompt";
                q.prompt = prompt;
                input = harness::prompt_tokens(q, backends.lm->vocabulary());
            }
            const CachingNli nli(*backends.nli);
            const auto s = harness::score_input(*backends.lm, nli, input, 0, config);
            json j{{"answer", s.answer}, {"answer_tokens", s.initial.tokens}, {"scores", json::object()}};
            for (const auto& [m, v] : s.scores) {
                j["scores"][std::string(harness::to_string(m))] = {
                    {"value", v.value}, {"n_samples", v.n_samples}, {"n_clusters", v.n_clusters}};
            }
            std::cout << j.dump(2) << "\n";
            if (!score_out.empty()) harness::write_text(score_out, j.dump(2) + "\n");
        } else if (*cluster) {
            // the LM is optional here; it only supplies token strings
            const bool have_lm = !cluster_backends.toy_lm.empty();
            const auto backends = open_backends(cluster_backends, have_lm);
            const Vocabulary* vocab = have_lm ? &backends.lm->vocabulary() : nullptr;
            std::vector<TokenSeq> seqs;
            std::string line;
            while (std::getline(std::cin, line)) {
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                seqs.push_back(parse_sequence(line, vocab));
            }
            const auto clustering = assign_clusters(*backends.nli, std::span<const TokenSeq>(seqs));
            json j{{"n_sequences", seqs.size()}, {"assignment", clustering.assignment()}, {"clusters", json::array()}};
            for (const auto& c : clustering.clusters()) {
                j["clusters"].push_back({{"representative", c.representative}, {"members", c.members}});
            }
            std::cout << j.dump(2) << "\n";
            if (!cluster_out.empty()) harness::write_text(cluster_out, j.dump(2) + "\n");
        }
    } catch (const std::exception& e) {
        std::cerr << "sdlg: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
