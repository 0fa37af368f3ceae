#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "modsel/baselines.hpp"
#include "modsel/environment.hpp"
#include "modsel/exp4ix.hpp"
#include "modsel/learner.hpp"
#include "modsel/modcb.hpp"

namespace modsel {

// Configuration problems get their own type so the CLI can map them to a
// distinct exit code.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class AlgorithmKind { ModCB, LinUCB, Exp4IXOnly, Oracle, ExploreFirst, Uniform };

inline const char* kind_name(AlgorithmKind kind) {
    switch (kind) {
        case AlgorithmKind::ModCB: return "modcb";
        case AlgorithmKind::LinUCB: return "linucb";
        case AlgorithmKind::Exp4IXOnly: return "exp4ix";
        case AlgorithmKind::Oracle: return "oracle";
        case AlgorithmKind::ExploreFirst: return "explore_first";
        case AlgorithmKind::Uniform: return "uniform";
    }
    return "unknown";
}

struct AlgorithmConfig {
    AlgorithmKind kind = AlgorithmKind::Uniform;
    std::string name;  // CSV identifier; defaulted from the kind when empty

    // ModCB
    double delta = 0.05;
    double kappa = 1.0 / 3.0;
    double c1 = 1.0;
    double c2 = 1.0;
    int policy_budget = 512;
    long test_every = 1;
    double witness_scale = 1.0;
    bool preprocess = false;  // apply the log-T feature-map thinning

    // LinUCB
    double premultiplier = 1.0;
    double ridge = 1.0;

    // Exp4IXOnly / Oracle (class_index is 0-based in memory, 1-based in JSON)
    int class_index = 0;
    double explore_scale = 1.0;  // scales the witnessing length; the swept knob

    // ExploreFirst
    double delta_constant = 1.0;
    int policy_budget1 = 64;
    int policy_budget2 = 512;
};

struct ExperimentConfig {
    EnvironmentSpec environment;
    std::vector<AlgorithmConfig> algorithms;
    long horizon = 1000;
    int replicates = 1;
    std::uint64_t base_seed = 1;
    std::string output_path = "out";

    void validate() const {
        environment.validate();
        if (horizon < 1) throw ConfigError("ExperimentConfig: horizon must be >= 1");
        if (replicates < 1) throw ConfigError("ExperimentConfig: replicates must be >= 1");
        if (algorithms.empty()) throw ConfigError("ExperimentConfig: needs at least one algorithm");
    }
};

struct RoundRecord {
    long t = 0;
    int action = 0;
    double loss = 0.0;
    double pseudo_regret_increment = 0.0;    // f*(x,a) - f*(x, best a); never negative
    double realized_regret_increment = 0.0;  // realized loss difference; may be negative
    int m_hat = 0;                           // 1-based candidate class, 0 for non-selecting learners
    bool explored = false;
};

struct ReplicateRun {
    int replicate = 0;
    std::uint64_t env_stream_hash = 0;
    std::vector<RoundRecord> rounds;
};

struct AlgorithmResult {
    AlgorithmConfig algorithm;
    std::vector<ReplicateRun> replicates;
};

struct ExperimentResult {
    std::vector<AlgorithmResult> algorithms;
    std::vector<std::string> errors;  // per-replicate failures, empty on success
};

// --- seeding and hashing ------------------------------------------------------

inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

inline const std::uint64_t kEnvStreamKey = fnv1a(std::string("environment"));

// --- learner construction ------------------------------------------------------

inline std::unique_ptr<Learner> make_learner(const EnvironmentSpec& env,
                                             const AlgorithmConfig& algo, long horizon) {
    const int num_classes = env.features.num_classes;
    switch (algo.kind) {
        case AlgorithmKind::ModCB: {
            ModCBConfig cfg;
            cfg.dims = env.features.dims;
            if (algo.preprocess) cfg.dims = preprocess_maps(env.features.dims, horizon).dims;
            if (cfg.dims.empty()) throw ConfigError("ModCB: preprocessing removed every map");
            cfg.params.tau = env.tau;
            cfg.params.gamma = env.gamma;
            cfg.params.delta = algo.delta;
            cfg.params.kappa = algo.kappa;
            cfg.params.c1 = algo.c1;
            cfg.params.c2 = algo.c2;
            cfg.params.num_actions = env.features.num_actions;
            cfg.params.num_classes = static_cast<int>(cfg.dims.size());
            cfg.params.horizon = horizon;
            cfg.policy_budget = algo.policy_budget;
            cfg.test_every = algo.test_every;
            cfg.witness_scale = algo.witness_scale;
            return std::make_unique<ModCB>(cfg);
        }
        case AlgorithmKind::LinUCB: {
            LinUCBConfig cfg;
            cfg.dim = env.features.ambient_dim();
            cfg.premultiplier = algo.premultiplier;
            cfg.ridge = algo.ridge;
            return std::make_unique<LinUCB>(cfg);
        }
        case AlgorithmKind::Exp4IXOnly:
        case AlgorithmKind::Oracle: {
            int klass = algo.kind == AlgorithmKind::Oracle ? env.m_star : algo.class_index;
            if (klass < 0 || klass >= num_classes) {
                throw ConfigError("Exp4IXOnly: class_index out of range");
            }
            Exp4Config cfg;
            cfg.dim = env.features.dims[klass];
            cfg.num_actions = env.features.num_actions;
            cfg.horizon = horizon;
            cfg.delta = algo.delta;
            cfg.tau = env.tau;
            cfg.gamma = env.gamma;
            cfg.policy_budget = algo.policy_budget;
            cfg.witness_scale = algo.explore_scale;
            return std::make_unique<Exp4IX>(cfg);
        }
        case AlgorithmKind::ExploreFirst: {
            ExploreFirstConfig cfg;
            cfg.dim1 = env.features.dims.front();
            cfg.dim2 = env.features.dims.back();
            cfg.num_actions = env.features.num_actions;
            cfg.horizon = horizon;
            cfg.tau = env.tau;
            cfg.gamma = env.gamma;
            cfg.delta_constant = algo.delta_constant;
            cfg.policy_budget1 = algo.policy_budget1;
            cfg.policy_budget2 = algo.policy_budget2;
            return std::make_unique<ExploreFirst>(cfg);
        }
        case AlgorithmKind::Uniform:
            return std::make_unique<UniformPolicy>();
    }
    throw ConfigError("make_learner: unknown algorithm kind");
}

// --- simulation ---------------------------------------------------------------

// Runs one algorithm over one replicate. The context/loss stream depends only
// on (base_seed, replicate), so every algorithm in a config faces the same
// stream; learner randomness is keyed by the algorithm name.
inline ReplicateRun run_replicate(const EnvironmentSpec& env, const AlgorithmConfig& algo,
                                  long horizon, std::uint64_t base_seed, int replicate) {
    Rng env_rng = Rng::keyed(base_seed, kEnvStreamKey, static_cast<std::uint64_t>(replicate));
    Rng learner_rng =
        Rng::keyed(base_seed, fnv1a(algo.name), static_cast<std::uint64_t>(replicate));
    std::unique_ptr<Learner> learner = make_learner(env, algo, horizon);

    ReplicateRun run;
    run.replicate = replicate;
    run.rounds.reserve(horizon);
    std::uint64_t hash = 1469598103934665603ULL;
    for (long t = 1; t <= horizon; ++t) {
        const RoundSample sample = sample_round(env, env_rng);
        for (const auto& phi : sample.features) {
            hash = fnv1a(phi.data(), sizeof(double) * phi.size(), hash);
        }
        hash = fnv1a(sample.loss.data(), sizeof(double) * sample.loss.size(), hash);

        const int action = learner->act(sample.features, learner_rng);
        const double loss = sample.loss[action];
        learner->update(sample.features, action, loss);

        const int best = optimal_action(env, sample);
        RoundRecord rec;
        rec.t = t;
        rec.action = action;
        rec.loss = loss;
        rec.pseudo_regret_increment =
            true_expected_loss(env, sample, action) - true_expected_loss(env, sample, best);
        rec.realized_regret_increment = loss - sample.loss[best];
        rec.m_hat = learner->active_class() + 1;
        rec.explored = learner->explored_last();
        run.rounds.push_back(rec);
    }
    run.env_stream_hash = hash;
    return run;
}

inline int thread_budget() {
    if (const char* env = std::getenv("MODSEL_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs every (algorithm, replicate) pair. Replicates execute in parallel up to
// the thread budget; output containers are indexed by replicate so scheduling
// never changes the results.
inline ExperimentResult run_experiment(const ExperimentConfig& config,
                                       int max_threads = thread_budget()) {
    config.validate();
    ExperimentResult result;
    result.algorithms.resize(config.algorithms.size());
    for (std::size_t a = 0; a < config.algorithms.size(); ++a) {
        result.algorithms[a].algorithm = config.algorithms[a];
        result.algorithms[a].replicates.resize(config.replicates);
    }
    std::vector<std::string> errors(config.replicates);
    std::vector<char> failed(config.replicates, 0);

    std::atomic<int> next{0};
    auto worker = [&]() {
        while (true) {
            const int r = next.fetch_add(1);
            if (r >= config.replicates) return;
            try {
                std::uint64_t stream_hash = 0;
                for (std::size_t a = 0; a < config.algorithms.size(); ++a) {
                    ReplicateRun run = run_replicate(config.environment, config.algorithms[a],
                                                     config.horizon, config.base_seed, r);
                    if (a == 0) {
                        stream_hash = run.env_stream_hash;
                    } else if (run.env_stream_hash != stream_hash) {
                        throw std::logic_error("environment stream diverged across algorithms");
                    }
                    result.algorithms[a].replicates[r] = std::move(run);
                }
            } catch (const std::exception& e) {
                failed[r] = 1;
                errors[r] = "replicate " + std::to_string(r) + ": " + e.what();
            }
        }
    };

    const int n_threads = std::max(1, std::min<int>(max_threads, config.replicates));
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    for (int r = 0; r < config.replicates; ++r) {
        if (failed[r]) result.errors.push_back(errors[r]);
    }
    if (!result.errors.empty()) {
        // Drop failed replicates so partial output stays well-formed.
        for (auto& algo : result.algorithms) {
            std::vector<ReplicateRun> kept;
            for (int r = 0; r < config.replicates; ++r) {
                if (!failed[r]) kept.push_back(std::move(algo.replicates[r]));
            }
            algo.replicates = std::move(kept);
        }
    }
    return result;
}

// --- summaries ------------------------------------------------------------------

struct SummaryRow {
    std::string algorithm;
    long t = 0;
    double pseudo_regret_mean = 0.0;
    double pseudo_regret_se = 0.0;
    double realized_regret_mean = 0.0;
    double realized_regret_se = 0.0;
    int n_replicates = 0;
    bool se_degenerate = false;  // single replicate: SE reported as zero
};

// Roughly geometric grid of round indices, always ending at the horizon.
inline std::vector<long> log_grid(long horizon) {
    std::vector<long> grid;
    long t = 1;
    while (t < horizon) {
        grid.push_back(t);
        t = std::max(t + 1, static_cast<long>(std::llround(t * 1.3)));
    }
    grid.push_back(horizon);
    return grid;
}

inline std::vector<SummaryRow> summarize(const ExperimentResult& result, long horizon) {
    const std::vector<long> grid = log_grid(horizon);
    std::vector<SummaryRow> rows;
    for (const AlgorithmResult& algo : result.algorithms) {
        const int n = static_cast<int>(algo.replicates.size());
        if (n == 0) continue;
        // cumulative regret per replicate at each grid point
        std::vector<std::vector<double>> pseudo(grid.size(), std::vector<double>(n, 0.0));
        std::vector<std::vector<double>> realized(grid.size(), std::vector<double>(n, 0.0));
        for (int r = 0; r < n; ++r) {
            double cum_p = 0.0, cum_r = 0.0;
            std::size_t g = 0;
            for (const RoundRecord& rec : algo.replicates[r].rounds) {
                cum_p += rec.pseudo_regret_increment;
                cum_r += rec.realized_regret_increment;
                while (g < grid.size() && grid[g] == rec.t) {
                    pseudo[g][r] = cum_p;
                    realized[g][r] = cum_r;
                    ++g;
                }
            }
        }
        auto mean_se = [n](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= n;
            if (n < 2) return std::pair<double, double>{mean, 0.0};
            double ss = 0.0;
            for (double x : v) ss += (x - mean) * (x - mean);
            return std::pair<double, double>{mean, std::sqrt(ss / (n - 1) / n)};
        };
        for (std::size_t g = 0; g < grid.size(); ++g) {
            SummaryRow row;
            row.algorithm = algo.algorithm.name;
            row.t = grid[g];
            std::tie(row.pseudo_regret_mean, row.pseudo_regret_se) = mean_se(pseudo[g]);
            std::tie(row.realized_regret_mean, row.realized_regret_se) = mean_se(realized[g]);
            row.n_replicates = n;
            row.se_degenerate = n < 2;
            rows.push_back(row);
        }
    }
    return rows;
}

struct FinalRegret {
    double mean = 0.0;
    double se = 0.0;
    int n = 0;
};

inline FinalRegret final_pseudo_regret(const AlgorithmResult& algo) {
    const int n = static_cast<int>(algo.replicates.size());
    std::vector<double> totals(n, 0.0);
    for (int r = 0; r < n; ++r) {
        for (const RoundRecord& rec : algo.replicates[r].rounds) {
            totals[r] += rec.pseudo_regret_increment;
        }
    }
    FinalRegret out;
    out.n = n;
    for (double x : totals) out.mean += x;
    out.mean /= std::max(1, n);
    if (n >= 2) {
        double ss = 0.0;
        for (double x : totals) ss += (x - out.mean) * (x - out.mean);
        out.se = std::sqrt(ss / (n - 1) / n);
    }
    return out;
}

// --- CSV output -----------------------------------------------------------------

inline constexpr const char* kRoundsCsvHeader =
    "replicate,t,algorithm,action,loss,pseudo_regret_cum,realized_regret_cum,m_hat,explored";

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline void write_rounds_csv(const std::filesystem::path& path, const ExperimentResult& result) {
    std::ofstream out(path, std::ios::binary);  // LF endings on every platform
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << kRoundsCsvHeader << '\n';
    if (result.algorithms.empty()) return;
    const std::size_t n_reps = result.algorithms.front().replicates.size();
    for (std::size_t r = 0; r < n_reps; ++r) {
        for (const AlgorithmResult& algo : result.algorithms) {
            const ReplicateRun& run = algo.replicates[r];
            double cum_p = 0.0, cum_r = 0.0;
            for (const RoundRecord& rec : run.rounds) {
                cum_p += rec.pseudo_regret_increment;
                cum_r += rec.realized_regret_increment;
                out << run.replicate << ',' << rec.t << ',' << algo.algorithm.name << ','
                    << rec.action << ',' << format_double(rec.loss) << ','
                    << format_double(cum_p) << ',' << format_double(cum_r) << ',' << rec.m_hat
                    << ',' << (rec.explored ? 1 : 0) << '\n';
            }
        }
    }
}

inline void write_summary_csv(const std::filesystem::path& path,
                              const std::vector<SummaryRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "algorithm,t,pseudo_regret_mean,pseudo_regret_se,realized_regret_mean,"
           "realized_regret_se,n_replicates,se_degenerate\n";
    for (const SummaryRow& row : rows) {
        out << row.algorithm << ',' << row.t << ',' << format_double(row.pseudo_regret_mean)
            << ',' << format_double(row.pseudo_regret_se) << ','
            << format_double(row.realized_regret_mean) << ','
            << format_double(row.realized_regret_se) << ',' << row.n_replicates << ','
            << (row.se_degenerate ? 1 : 0) << '\n';
    }
}

// --- configuration JSON -----------------------------------------------------------

inline AlgorithmKind kind_from_string(const std::string& s) {
    if (s == "ModCB") return AlgorithmKind::ModCB;
    if (s == "LinUCB") return AlgorithmKind::LinUCB;
    if (s == "Exp4IXOnly") return AlgorithmKind::Exp4IXOnly;
    if (s == "Oracle") return AlgorithmKind::Oracle;
    if (s == "ExploreFirst") return AlgorithmKind::ExploreFirst;
    if (s == "Uniform") return AlgorithmKind::Uniform;
    throw ConfigError("unknown algorithm type '" + s + "'");
}

inline const char* kind_to_string(AlgorithmKind kind) {
    switch (kind) {
        case AlgorithmKind::ModCB: return "ModCB";
        case AlgorithmKind::LinUCB: return "LinUCB";
        case AlgorithmKind::Exp4IXOnly: return "Exp4IXOnly";
        case AlgorithmKind::Oracle: return "Oracle";
        case AlgorithmKind::ExploreFirst: return "ExploreFirst";
        case AlgorithmKind::Uniform: return "Uniform";
    }
    return "Unknown";
}

inline AlgorithmConfig algorithm_from_json(const nlohmann::json& j) {
    AlgorithmConfig algo;
    algo.kind = kind_from_string(j.at("type").get<std::string>());
    algo.name = j.value("name", std::string{});
    algo.delta = j.value("delta", algo.delta);
    algo.kappa = j.value("kappa", algo.kappa);
    algo.c1 = j.value("C1", algo.c1);
    algo.c2 = j.value("C2", algo.c2);
    algo.policy_budget = j.value("policy_budget", algo.policy_budget);
    algo.test_every = j.value("test_every", algo.test_every);
    algo.witness_scale = j.value("witness_scale", algo.witness_scale);
    algo.preprocess = j.value("preprocess", algo.preprocess);
    algo.premultiplier = j.value("premultiplier", algo.premultiplier);
    algo.ridge = j.value("ridge", algo.ridge);
    if (j.contains("class_index")) algo.class_index = j.at("class_index").get<int>() - 1;
    algo.explore_scale = j.value("explore_scale", algo.explore_scale);
    algo.delta_constant = j.value("delta_constant", algo.delta_constant);
    algo.policy_budget1 = j.value("policy_budget1", algo.policy_budget1);
    algo.policy_budget2 = j.value("policy_budget2", algo.policy_budget2);
    return algo;
}

inline nlohmann::json to_json(const AlgorithmConfig& algo) {
    nlohmann::json j;
    j["type"] = kind_to_string(algo.kind);
    j["name"] = algo.name;
    switch (algo.kind) {
        case AlgorithmKind::ModCB:
            j["delta"] = algo.delta;
            j["kappa"] = algo.kappa;
            j["C1"] = algo.c1;
            j["C2"] = algo.c2;
            j["policy_budget"] = algo.policy_budget;
            j["test_every"] = algo.test_every;
            j["witness_scale"] = algo.witness_scale;
            j["preprocess"] = algo.preprocess;
            break;
        case AlgorithmKind::LinUCB:
            j["premultiplier"] = algo.premultiplier;
            j["ridge"] = algo.ridge;
            break;
        case AlgorithmKind::Exp4IXOnly:
            j["class_index"] = algo.class_index + 1;
            [[fallthrough]];
        case AlgorithmKind::Oracle:
            j["delta"] = algo.delta;
            j["policy_budget"] = algo.policy_budget;
            j["explore_scale"] = algo.explore_scale;
            break;
        case AlgorithmKind::ExploreFirst:
            j["delta_constant"] = algo.delta_constant;
            j["policy_budget1"] = algo.policy_budget1;
            j["policy_budget2"] = algo.policy_budget2;
            break;
        case AlgorithmKind::Uniform:
            break;
    }
    return j;
}

inline void finalize_names(ExperimentConfig& config) {
    for (auto& algo : config.algorithms) {
        if (algo.name.empty()) algo.name = kind_name(algo.kind);
    }
    for (std::size_t i = 0; i < config.algorithms.size(); ++i) {
        int clash = 1;
        for (std::size_t k = 0; k < i; ++k) {
            if (config.algorithms[k].name == config.algorithms[i].name) ++clash;
        }
        if (clash > 1) config.algorithms[i].name += "_" + std::to_string(clash);
    }
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig config;
    try {
        config.environment = environment_from_json(j.at("environment"));
        for (const auto& a : j.at("algorithms")) config.algorithms.push_back(algorithm_from_json(a));
        config.horizon = j.at("horizon").get<long>();
        config.replicates = j.at("replicates").get<int>();
        config.base_seed = j.value("base_seed", config.base_seed);
        config.output_path = j.value("output_path", config.output_path);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config validation error: ") + e.what());
    }
    finalize_names(config);
    config.validate();
    return config;
}

inline nlohmann::json to_json(const ExperimentConfig& config) {
    nlohmann::json j;
    j["environment"] = to_json(config.environment);
    nlohmann::json algos = nlohmann::json::array();
    for (const auto& a : config.algorithms) algos.push_back(to_json(a));
    j["algorithms"] = algos;
    j["horizon"] = config.horizon;
    j["replicates"] = config.replicates;
    j["base_seed"] = config.base_seed;
    j["output_path"] = config.output_path;
    return j;
}

// Applies a single-hyperparameter override to every algorithm that owns the
// knob. Returns how many algorithms were touched.
inline int apply_param_override(ExperimentConfig& config, const std::string& param, double value) {
    int touched = 0;
    for (auto& algo : config.algorithms) {
        if (param == "C1" && algo.kind == AlgorithmKind::ModCB) {
            algo.c1 = value;
            ++touched;
        } else if (param == "C2" && algo.kind == AlgorithmKind::ModCB) {
            algo.c2 = value;
            ++touched;
        } else if (param == "premultiplier" && algo.kind == AlgorithmKind::LinUCB) {
            algo.premultiplier = value;
            ++touched;
        } else if (param == "explore_scale" && (algo.kind == AlgorithmKind::Exp4IXOnly ||
                                                algo.kind == AlgorithmKind::Oracle)) {
            algo.explore_scale = value;
            ++touched;
        } else if (param == "delta_constant" && algo.kind == AlgorithmKind::ExploreFirst) {
            algo.delta_constant = value;
            ++touched;
        }
    }
    return touched;
}

// Convenience wrapper: run, then drop rounds.csv and summary.csv in out_dir.
inline ExperimentResult run_and_write(const ExperimentConfig& config,
                                      const std::filesystem::path& out_dir,
                                      int max_threads = thread_budget()) {
    std::filesystem::create_directories(out_dir);
    ExperimentResult result = run_experiment(config, max_threads);
    write_rounds_csv(out_dir / "rounds.csv", result);
    write_summary_csv(out_dir / "summary.csv", summarize(result, config.horizon));
    return result;
}

}  // namespace modsel
