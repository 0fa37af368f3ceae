#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modsel/learner.hpp"
#include "modsel/policy.hpp"

namespace modsel {

struct Exp4Config {
    int dim = 1;          // policy-class dimension (features are truncated to it)
    int num_actions = 2;  // K
    long horizon = 1;     // T
    double delta = 0.05;
    double tau = 1.0;
    double gamma = 1.0;
    int policy_budget = 512;     // coefficient vectors sampled per epoch
    double witness_scale = 1.0;  // multiplies the witnessing length n_k
    double clip_factor = 4.0;    // b = clip_factor * tau * sqrt(log(2TK/delta))
    // Nonempty: run on this fixed finite policy set, skipping witnessing.
    std::vector<LinearPolicy> fixed_policies;
};

// Exponential-weights contextual bandit with implicit exploration, doubling
// epochs, and per-epoch policy-set construction from witnessed contexts.
// Losses are clipped to [-b, b] before the update; clips are counted.
class Exp4IX : public Learner {
public:
    enum class Phase { Witnessing, Playing };

    explicit Exp4IX(Exp4Config cfg) : cfg_(std::move(cfg)) {
        if (cfg_.dim < 1 || cfg_.num_actions < 1 || cfg_.horizon < 1) {
            throw std::invalid_argument("Exp4IX: dim, K, T must be positive");
        }
        if (cfg_.delta <= 0.0 || cfg_.delta >= 1.0) {
            throw std::invalid_argument("Exp4IX: delta must lie in (0, 1)");
        }
        if (cfg_.fixed_policies.empty() && cfg_.policy_budget < 2) {
            throw std::invalid_argument("Exp4IX: policy_budget must be >= 2");
        }
        enter_epoch(0);
    }

    // eta_k = sqrt(d log(TK/delta) / (2^k K))
    double eta(int epoch) const {
        return std::sqrt(cfg_.dim * log_factor() /
                         (std::pow(2.0, epoch) * cfg_.num_actions));
    }

    // n_k = ceil(scale * sqrt(2^k d log(TK/delta))); zero in fixed-set mode.
    long witness_length(int epoch) const {
        if (!cfg_.fixed_policies.empty()) return 0;
        return static_cast<long>(
            std::ceil(cfg_.witness_scale * std::sqrt(std::pow(2.0, epoch) * cfg_.dim * log_factor())));
    }

    double witness_length_raw(int epoch) const {
        return std::sqrt(std::pow(2.0, epoch) * cfg_.dim * log_factor());
    }

    // Loss clip level b = clip_factor * tau * sqrt(log(2TK/delta)).
    double clip_level() const {
        return cfg_.clip_factor * cfg_.tau *
               std::sqrt(std::log(2.0 * static_cast<double>(cfg_.horizon) * cfg_.num_actions /
                                  cfg_.delta));
    }

    int act(const ActionFeatures& features, Rng& rng) override {
        advance_epochs();
        if (phase_ == Phase::Witnessing) {
            maybe_start_playing(rng);
        }
        int action;
        if (phase_ == Phase::Witnessing) {
            witnessed_.push_back(truncate(features));
            action = rng.uniform_int(cfg_.num_actions);
        } else {
            action = sample_action(features, rng).first;
        }
        ++t_;
        return action;
    }

    void update(const ActionFeatures& features, int action, double loss) override {
        if (phase_ != Phase::Playing || policies_.empty()) return;
        if (!std::isfinite(loss)) throw std::invalid_argument("Exp4IX: non-finite loss");
        const double b = clip_level();
        double clipped = loss;
        if (loss > b || loss < -b) {
            clipped = std::clamp(loss, -b, b);
            ++clip_count_;
        }

        const std::vector<int> chosen = policy_actions(features);
        double action_prob = 0.0;
        for (std::size_t i = 0; i < policies_.size(); ++i) {
            if (chosen[i] == action) action_prob += weights_[i];
        }
        const double eta_k = eta(epoch_);
        const double scale = 2.0 * eta_k * (clipped / b + 1.0) / (action_prob + eta_k);
        double total = 0.0;
        for (std::size_t i = 0; i < policies_.size(); ++i) {
            if (chosen[i] == action) weights_[i] *= std::exp(-scale);
            total += weights_[i];
        }
        for (double& w : weights_) w /= total;
    }

    // Induced action distribution and a draw from it.
    std::pair<int, double> sample_action(const ActionFeatures& features, Rng& rng) const {
        const std::vector<double> dist = action_distribution(features);
        const double u = rng.uniform01();
        double cum = 0.0;
        for (int a = 0; a < cfg_.num_actions; ++a) {
            cum += dist[a];
            if (u < cum) return {a, dist[a]};
        }
        return {cfg_.num_actions - 1, dist[cfg_.num_actions - 1]};
    }

    std::vector<double> action_distribution(const ActionFeatures& features) const {
        std::vector<double> dist(cfg_.num_actions, 0.0);
        if (phase_ == Phase::Witnessing || policies_.empty()) {
            for (double& p : dist) p = 1.0 / cfg_.num_actions;
            return dist;
        }
        const std::vector<int> chosen = policy_actions(features);
        for (std::size_t i = 0; i < policies_.size(); ++i) dist[chosen[i]] += weights_[i];
        return dist;
    }

    Phase phase() const { return phase_; }
    int epoch() const { return epoch_; }
    long round() const { return t_; }
    long clipped_updates() const { return clip_count_; }
    const std::vector<LinearPolicy>& policy_set() const { return policies_; }
    const std::vector<double>& weights() const { return weights_; }
    const Exp4Config& config() const { return cfg_; }

    nlohmann::json snapshot() const {
        nlohmann::json j;
        j["dim"] = cfg_.dim;
        j["num_actions"] = cfg_.num_actions;
        j["horizon"] = cfg_.horizon;
        j["delta"] = cfg_.delta;
        j["tau"] = cfg_.tau;
        j["gamma"] = cfg_.gamma;
        j["policy_budget"] = cfg_.policy_budget;
        j["witness_scale"] = cfg_.witness_scale;
        j["clip_factor"] = cfg_.clip_factor;
        j["fixed_policies"] = betas_to_json(cfg_.fixed_policies);
        j["t"] = t_;
        j["epoch"] = epoch_;
        j["phase"] = phase_ == Phase::Witnessing ? "witnessing" : "playing";
        j["clip_count"] = clip_count_;
        j["policies"] = betas_to_json(policies_);
        j["weights"] = weights_;
        nlohmann::json contexts = nlohmann::json::array();
        for (const auto& ctx : witnessed_) {
            nlohmann::json per_action = nlohmann::json::array();
            for (const auto& v : ctx) {
                per_action.push_back(std::vector<double>(v.data(), v.data() + v.size()));
            }
            contexts.push_back(per_action);
        }
        j["witnessed"] = contexts;
        return j;
    }

    static Exp4IX from_snapshot(const nlohmann::json& j) {
        Exp4Config cfg;
        cfg.dim = j.at("dim").get<int>();
        cfg.num_actions = j.at("num_actions").get<int>();
        cfg.horizon = j.at("horizon").get<long>();
        cfg.delta = j.at("delta").get<double>();
        cfg.tau = j.at("tau").get<double>();
        cfg.gamma = j.at("gamma").get<double>();
        cfg.policy_budget = j.at("policy_budget").get<int>();
        cfg.witness_scale = j.at("witness_scale").get<double>();
        cfg.clip_factor = j.value("clip_factor", 4.0);
        cfg.fixed_policies = betas_from_json(j.at("fixed_policies"));
        Exp4IX out(cfg);
        out.t_ = j.at("t").get<long>();
        out.epoch_ = j.at("epoch").get<int>();
        out.phase_ = j.at("phase").get<std::string>() == "witnessing" ? Phase::Witnessing
                                                                      : Phase::Playing;
        out.clip_count_ = j.at("clip_count").get<long>();
        out.policies_ = betas_from_json(j.at("policies"));
        out.weights_ = j.at("weights").get<std::vector<double>>();
        out.witnessed_.clear();
        for (const auto& ctx : j.at("witnessed")) {
            ActionFeatures features;
            for (const auto& v : ctx) {
                const auto vals = v.get<std::vector<double>>();
                features.push_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size()));
            }
            out.witnessed_.push_back(std::move(features));
        }
        return out;
    }

private:
    double log_factor() const {
        return std::log(static_cast<double>(cfg_.horizon) * cfg_.num_actions / cfg_.delta);
    }

    ActionFeatures truncate(const ActionFeatures& features) const {
        ActionFeatures out;
        out.reserve(features.size());
        for (const auto& phi : features) out.push_back(phi.head(cfg_.dim).eval());
        return out;
    }

    std::vector<int> policy_actions(const ActionFeatures& features) const {
        std::vector<int> chosen(policies_.size());
        for (std::size_t i = 0; i < policies_.size(); ++i) chosen[i] = policies_[i].action(features);
        return chosen;
    }

    void enter_epoch(int epoch) {
        epoch_ = epoch;
        witnessed_.clear();
        if (!cfg_.fixed_policies.empty()) {
            policies_ = cfg_.fixed_policies;
            weights_.assign(policies_.size(), 1.0 / policies_.size());
            phase_ = Phase::Playing;
        } else {
            policies_.clear();
            weights_.clear();
            phase_ = Phase::Witnessing;
        }
    }

    void advance_epochs() {
        // Epoch k covers learner rounds [2^k, 2^{k+1}).
        while (t_ >= (2L << epoch_)) enter_epoch(epoch_ + 1);
    }

    void maybe_start_playing(Rng& rng) {
        if (static_cast<long>(witnessed_.size()) < witness_length(epoch_)) return;
        if (witnessed_.empty()) return;  // the set needs at least one context
        policies_ = build_policy_set(witnessed_, cfg_.dim, cfg_.policy_budget, cfg_.tau,
                                     cfg_.gamma, rng);
        weights_.assign(policies_.size(), 1.0 / policies_.size());
        phase_ = Phase::Playing;
    }

    static nlohmann::json betas_to_json(const std::vector<LinearPolicy>& policies) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : policies) {
            arr.push_back(std::vector<double>(p.beta.data(), p.beta.data() + p.beta.size()));
        }
        return arr;
    }

    static std::vector<LinearPolicy> betas_from_json(const nlohmann::json& arr) {
        std::vector<LinearPolicy> out;
        for (const auto& b : arr) {
            const auto vals = b.get<std::vector<double>>();
            out.push_back({Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size())});
        }
        return out;
    }

    Exp4Config cfg_;
    long t_ = 1;  // 1-based round counter; epoch k starts at round 2^k
    int epoch_ = 0;
    Phase phase_ = Phase::Witnessing;
    std::vector<ActionFeatures> witnessed_;
    std::vector<LinearPolicy> policies_;
    std::vector<double> weights_;
    long clip_count_ = 0;
};

}  // namespace modsel
