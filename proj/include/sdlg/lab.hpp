#pragma once

// Synthetic bias/variance experiments for cluster-distribution estimators.
// Samples are drawn directly from a categorical outcome distribution, without
// a language model in between.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "sdlg/error.hpp"
#include "sdlg/prob.hpp"
#include "sdlg/rng.hpp"

namespace sdlg::lab {

struct SyntheticScenario {
    ProbVector outcome_probs{1.0};
    std::vector<std::size_t> cluster_map;  // outcome -> cluster
    std::size_t runs = 200;
    std::vector<std::size_t> sample_grid;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t n_clusters() const
    {
        std::size_t n = 0;
        for (std::size_t c : cluster_map) n = std::max(n, c + 1);
        return n;
    }

    void validate() const
    {
        if (!outcome_probs.is_normalized()) {
            throw InvalidArgument("scenario: outcome probabilities must be normalized");
        }
        if (cluster_map.size() != outcome_probs.size()) {
            throw InvalidArgument("scenario: cluster map must cover every outcome");
        }
        if (runs == 0) {
            throw InvalidArgument("scenario: runs must be at least 1");
        }
        for (std::size_t n : sample_grid) {
            if (n == 0) throw InvalidArgument("scenario: sample sizes must be positive");
        }
    }

    [[nodiscard]] std::vector<double> true_cluster_distribution() const
    {
        std::vector<double> p(n_clusters(), 0.0);
        for (std::size_t y = 0; y < outcome_probs.size(); ++y) {
            p[cluster_map[y]] += outcome_probs[y];
        }
        return p;
    }
};

/// Outcome probabilities (0.15, 0.1, 0.3, 0.45), clusters {y0, y1} and
/// {y2, y3}, 200 runs over N = 1..30.
inline SyntheticScenario two_cluster_scenario(std::uint64_t seed = 0)
{
    SyntheticScenario s;
    s.outcome_probs = ProbVector::normalized({0.15, 0.1, 0.3, 0.45});
    s.cluster_map = {0, 0, 1, 1};
    s.runs = 200;
    s.sample_grid.resize(30);
    std::iota(s.sample_grid.begin(), s.sample_grid.end(), std::size_t{1});
    s.seed = seed;
    return s;
}

enum class LabEstimator {
    /// Member count / N.
    count,
    /// Sum of the outcome probabilities of the distinct sampled outcomes per
    /// cluster, normalized.
    likelihood,
};

inline const char* name(LabEstimator e) { return e == LabEstimator::count ? "count" : "likelihood"; }

struct GridPoint {
    std::size_t n = 0;
    std::vector<double> bias;
    std::vector<double> variance;
};

struct EstimatorCurve {
    std::string estimator;
    std::vector<GridPoint> points;
};

struct ScenarioResult {
    std::vector<double> truth;
    std::vector<EstimatorCurve> curves;
};

inline std::vector<double> estimate_clusters(LabEstimator estimator, const SyntheticScenario& s,
                                             const std::vector<std::size_t>& outcomes)
{
    std::vector<double> est(s.n_clusters(), 0.0);
    if (estimator == LabEstimator::count) {
        for (std::size_t y : outcomes) est[s.cluster_map[y]] += 1.0;
        for (double& v : est) v /= static_cast<double>(outcomes.size());
        return est;
    }
    std::vector<bool> seen(s.outcome_probs.size(), false);
    double total = 0.0;
    for (std::size_t y : outcomes) {
        if (seen[y]) continue;
        seen[y] = true;
        est[s.cluster_map[y]] += s.outcome_probs[y];
        total += s.outcome_probs[y];
    }
    for (double& v : est) v /= total;
    return est;
}

inline std::size_t draw_outcome(const ProbVector& p, Rng& rng)
{
    double u = rng.uniform();
    std::size_t last = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] <= 0.0) continue;
        last = k;
        if (u < p[k]) return k;
        u -= p[k];
    }
    return last;
}

/// For every N in the grid, draws `runs` independent sample sets and reports
/// per-cluster bias (mean estimate - truth) and variance (population) of each
/// estimator. Each (N, run) pair has its own derived seed; both estimators see
/// the same samples.
inline ScenarioResult run_scenario(const SyntheticScenario& s)
{
    s.validate();
    ScenarioResult out;
    out.truth = s.true_cluster_distribution();
    const std::vector<LabEstimator> estimators{LabEstimator::count, LabEstimator::likelihood};
    const std::size_t K = out.truth.size();
    for (LabEstimator e : estimators) {
        out.curves.push_back({name(e), {}});
    }
    for (std::size_t n : s.sample_grid) {
        std::vector<std::vector<double>> sum(estimators.size(), std::vector<double>(K, 0.0));
        std::vector<std::vector<double>> sum_sq(estimators.size(), std::vector<double>(K, 0.0));
        std::vector<std::size_t> outcomes(n);
        for (std::size_t run = 0; run < s.runs; ++run) {
            Rng rng(Rng::derive(s.seed, {n, run}));
            for (auto& y : outcomes) y = draw_outcome(s.outcome_probs, rng);
            for (std::size_t e = 0; e < estimators.size(); ++e) {
                const auto est = estimate_clusters(estimators[e], s, outcomes);
                for (std::size_t c = 0; c < K; ++c) {
                    sum[e][c] += est[c];
                    sum_sq[e][c] += est[c] * est[c];
                }
            }
        }
        const double runs = static_cast<double>(s.runs);
        for (std::size_t e = 0; e < estimators.size(); ++e) {
            GridPoint point{n, std::vector<double>(K), std::vector<double>(K)};
            for (std::size_t c = 0; c < K; ++c) {
                const double mean = sum[e][c] / runs;
                point.bias[c] = mean - out.truth[c];
                point.variance[c] = std::max(0.0, sum_sq[e][c] / runs - mean * mean);
            }
            out.curves[e].points.push_back(std::move(point));
        }
    }
    return out;
}

inline std::string format_real(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline nlohmann::json to_json(const ScenarioResult& r)
{
    nlohmann::json j;
    j["truth"] = r.truth;
    j["estimators"] = nlohmann::json::array();
    for (const auto& curve : r.curves) {
        nlohmann::json c{{"estimator", curve.estimator}, {"points", nlohmann::json::array()}};
        for (const auto& p : curve.points) {
            c["points"].push_back({{"n", p.n}, {"bias", p.bias}, {"variance", p.variance}});
        }
        j["estimators"].push_back(std::move(c));
    }
    return j;
}

/// Writes `<path>` as CSV (estimator,N,cluster,bias,variance) and a JSON
/// mirror next to it with the extension replaced by ".json".
inline void emit_plot_data(const ScenarioResult& r, const std::filesystem::path& path)
{
    {
        std::ofstream csv(path, std::ios::binary);
        if (!csv) {
            throw Error("cannot write " + path.string());
        }
        csv << "estimator,N,cluster,bias,variance\n";
        for (const auto& curve : r.curves) {
            for (const auto& p : curve.points) {
                for (std::size_t c = 0; c < p.bias.size(); ++c) {
                    csv << curve.estimator << ',' << p.n << ',' << c << ',' << format_real(p.bias[c]) << ','
                        << format_real(p.variance[c]) << '\n';
                }
            }
        }
        if (!csv) {
            throw Error("failed writing " + path.string());
        }
    }
    auto json_path = path;
    json_path.replace_extension(".json");
    std::ofstream js(json_path, std::ios::binary);
    if (!js) {
        throw Error("cannot write " + json_path.string());
    }
    js << to_json(r).dump(2) << '\n';
    if (!js) {
        throw Error("failed writing " + json_path.string());
    }
}

}  // namespace sdlg::lab
