// Command-line front end: seeded bandit simulations, hyperparameter sweeps,
// and a file-based interface to the square-loss gap estimator.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "modsel/modsel.hpp"

namespace fs = std::filesystem;
using namespace modsel;

namespace {

std::vector<std::vector<double>> read_csv_numeric(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                row.push_back(v);
                (void)used;
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (first) {
                first = false;
                continue;  // header row
            }
            throw ConfigError("non-numeric cell in " + path.string() + ": " + line);
        }
        first = false;
        if (!rows.empty() && rows.front().size() != row.size()) {
            throw ConfigError("ragged CSV rows in " + path.string());
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ConfigError("empty CSV file: " + path.string());
    return rows;
}

SymMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows, const fs::path& path) {
    const int n = static_cast<int>(rows.size());
    if (static_cast<int>(rows.front().size()) != n) {
        throw ConfigError("matrix CSV must be square: " + path.string());
    }
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) m(i, j) = rows[i][j];
    }
    return SymMatrix(m);
}

ExperimentConfig load_config(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    std::ifstream in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return experiment_from_json(j);
}

int run_simulate(const std::string& config_path, std::uint64_t seed, bool seed_set,
                 const std::string& out_override) {
    ExperimentConfig config = load_config(config_path);
    if (seed_set) config.base_seed = seed;
    const fs::path out_dir = out_override.empty() ? fs::path(config.output_path)
                                                  : fs::path(out_override);
    const ExperimentResult result = run_and_write(config, out_dir);
    for (const std::string& err : result.errors) std::cerr << "error: " << err << '\n';
    if (!result.errors.empty()) return 1;
    std::cout << "wrote " << (out_dir / "rounds.csv").string() << " and "
              << (out_dir / "summary.csv").string() << '\n';
    return 0;
}

int run_sweep(const std::string& config_path, const std::string& param,
              const std::string& values_csv, std::uint64_t seed, bool seed_set,
              const std::string& out_override) {
    const ExperimentConfig base = load_config(config_path);
    std::vector<double> values;
    std::vector<std::string> value_labels;
    {
        std::stringstream ss(values_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) continue;
            try {
                values.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ConfigError("sweep value is not a number: " + tok);
            }
            value_labels.push_back(tok);
        }
    }
    if (values.empty()) throw ConfigError("sweep needs at least one value");

    const fs::path out_root = out_override.empty() ? fs::path(base.output_path)
                                                   : fs::path(out_override);
    fs::create_directories(out_root);

    struct SweepRow {
        std::string algorithm;
        std::string value;
        FinalRegret final;
    };
    std::vector<SweepRow> table;
    bool any_errors = false;
    for (std::size_t v = 0; v < values.size(); ++v) {
        ExperimentConfig config = base;
        if (seed_set) config.base_seed = seed;
        if (apply_param_override(config, param, values[v]) == 0) {
            throw ConfigError("parameter '" + param + "' does not apply to any configured algorithm");
        }
        const fs::path out_dir = out_root / (param + "=" + value_labels[v]);
        const ExperimentResult result = run_and_write(config, out_dir);
        for (const std::string& err : result.errors) {
            std::cerr << "error (" << param << "=" << value_labels[v] << "): " << err << '\n';
            any_errors = true;
        }
        for (const AlgorithmResult& algo : result.algorithms) {
            table.push_back({algo.algorithm.name, value_labels[v], final_pseudo_regret(algo)});
        }
    }

    std::ofstream out(out_root / "sweep_summary.csv", std::ios::binary);
    out << "algorithm,param,value,final_pseudo_regret_mean,final_pseudo_regret_se,"
           "n_replicates,is_best\n";
    for (const SweepRow& row : table) {
        bool best = true;
        for (const SweepRow& other : table) {
            if (other.algorithm == row.algorithm && other.final.mean < row.final.mean) best = false;
        }
        out << row.algorithm << ',' << param << ',' << row.value << ','
            << format_double(row.final.mean) << ',' << format_double(row.final.se) << ','
            << row.final.n << ',' << (best ? 1 : 0) << '\n';
    }
    std::cout << "wrote " << (out_root / "sweep_summary.csv").string() << '\n';
    return any_errors ? 1 : 0;
}

int run_estimate_gap(const std::string& samples_path, const std::string& sigma_path,
                     const std::string& sigma1_path, int d1) {
    const auto sample_rows = read_csv_numeric(samples_path);
    const SymMatrix sigma = matrix_from_rows(read_csv_numeric(sigma_path), sigma_path);
    const SymMatrix sigma1 = matrix_from_rows(read_csv_numeric(sigma1_path), sigma1_path);
    const int d = sigma.dim();
    if (sigma1.dim() != d1) {
        throw ConfigError("--d1 does not match the sigma1 matrix dimension");
    }
    if (d1 >= d) throw ConfigError("--d1 must be smaller than the sigma dimension");
    if (static_cast<int>(sample_rows.front().size()) != d + 1) {
        throw ConfigError("sample rows must have sigma-dim feature columns plus one loss column");
    }
    std::vector<LabeledSample> samples;
    samples.reserve(sample_rows.size());
    for (const auto& row : sample_rows) {
        LabeledSample s;
        s.x = Eigen::Map<const Eigen::VectorXd>(row.data(), d);
        s.y = row.back();
        samples.push_back(std::move(s));
    }
    const double estimate = estimate_residual(samples, sigma1, sigma);
    std::printf("%.10g\n", estimate);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic linear contextual bandit simulator with online model selection"};
    app.require_subcommand(1);

    std::string config_path, out_override, param, values_csv;
    std::string samples_path, sigma_path, sigma1_path;
    std::uint64_t seed = 0;
    int d1 = 0;

    CLI::App* simulate = app.add_subcommand("simulate", "Run every configured algorithm over seeded replicates");
    simulate->add_option("--config", config_path, "experiment config (JSON)")->required();
    CLI::Option* sim_seed = simulate->add_option("--seed", seed, "override the base seed");
    simulate->add_option("--out", out_override, "output directory (default: config output_path)");

    CLI::App* sweep = app.add_subcommand("sweep", "Re-run the experiment across hyperparameter values");
    sweep->add_option("--config", config_path, "experiment config (JSON)")->required();
    sweep->add_option("--param", param, "knob to sweep: C1, C2, premultiplier, explore_scale, delta_constant")
        ->required();
    sweep->add_option("--values", values_csv, "comma-separated values")->required();
    CLI::Option* sweep_seed = sweep->add_option("--seed", seed, "override the base seed");
    sweep->add_option("--out", out_override, "output directory root");

    CLI::App* gap = app.add_subcommand("estimate-gap", "Run the square-loss gap estimator on CSV inputs");
    gap->add_option("--samples", samples_path, "labeled samples, one row per sample: features then loss")
        ->required();
    gap->add_option("--sigma", sigma_path, "full second-moment matrix (d x d CSV)")->required();
    gap->add_option("--sigma1", sigma1_path, "restricted second-moment matrix (d1 x d1 CSV)")
        ->required();
    gap->add_option("--d1", d1, "restricted dimension")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help exits clean; bad usage is a config error
    }

    try {
        if (simulate->parsed()) {
            return run_simulate(config_path, seed, !sim_seed->empty(), out_override);
        }
        if (sweep->parsed()) {
            return run_sweep(config_path, param, values_csv, seed, !sweep_seed->empty(),
                             out_override);
        }
        if (gap->parsed()) {
            return run_estimate_gap(samples_path, sigma_path, sigma1_path, d1);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
