#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "modsel/learner.hpp"
#include "modsel/policy.hpp"

namespace modsel {

// Uniform-random play; the cheapest sanity baseline.
class UniformPolicy : public Learner {
public:
    int act(const ActionFeatures& features, Rng& rng) override {
        return rng.uniform_int(static_cast<int>(features.size()));
    }
    void update(const ActionFeatures&, int, double) override {}
    bool explored_last() const override { return true; }
};

struct LinUCBConfig {
    int dim = 1;
    double premultiplier = 1.0;  // confidence width scale; 0 plays greedily
    double ridge = 1.0;          // Gram regularization, must be positive
};

// Ridge-regression bandit with optimistic (loss minus width) scoring. The
// Gram inverse is maintained by rank-one updates and refreshed periodically.
class LinUCB : public Learner {
public:
    explicit LinUCB(LinUCBConfig cfg) : cfg_(cfg) {
        if (cfg_.dim < 1) throw std::invalid_argument("LinUCB: dim must be >= 1");
        if (cfg_.ridge <= 0.0) throw std::invalid_argument("LinUCB: ridge must be positive");
        gram_ = cfg_.ridge * Eigen::MatrixXd::Identity(cfg_.dim, cfg_.dim);
        gram_inv_ = (1.0 / cfg_.ridge) * Eigen::MatrixXd::Identity(cfg_.dim, cfg_.dim);
        moment_ = Eigen::VectorXd::Zero(cfg_.dim);
    }

    int act(const ActionFeatures& features, Rng&) override {
        const Eigen::VectorXd beta_hat = gram_inv_ * moment_;
        int best = 0;
        double best_score = std::numeric_limits<double>::infinity();
        for (int a = 0; a < static_cast<int>(features.size()); ++a) {
            const Eigen::VectorXd phi = features[a].head(cfg_.dim);
            const double width = std::sqrt(std::max(0.0, phi.dot(gram_inv_ * phi)));
            const double score = beta_hat.dot(phi) - cfg_.premultiplier * width;
            if (score < best_score) {
                best = a;
                best_score = score;
            }
        }
        return best;
    }

    void update(const ActionFeatures& features, int action, double loss) override {
        const Eigen::VectorXd phi = features[action].head(cfg_.dim);
        gram_.selfadjointView<Eigen::Lower>().rankUpdate(phi, 1.0);
        moment_ += phi * loss;
        // Sherman-Morrison step for the inverse.
        const Eigen::VectorXd u = gram_inv_ * phi;
        gram_inv_ -= u * u.transpose() / (1.0 + phi.dot(u));
        if (++updates_ % 512 == 0) refresh_inverse();
    }

    Eigen::MatrixXd gram() const { return gram_.selfadjointView<Eigen::Lower>(); }
    const Eigen::VectorXd& moment_vector() const { return moment_; }

    // Direct state injection, used by tests to pin the estimate.
    void set_state(const Eigen::MatrixXd& gram, const Eigen::VectorXd& moment) {
        gram_ = gram;
        moment_ = moment;
        refresh_inverse();
    }

private:
    void refresh_inverse() {
        gram_inv_ = Eigen::MatrixXd(gram_.selfadjointView<Eigen::Lower>())
                        .ldlt()
                        .solve(Eigen::MatrixXd::Identity(cfg_.dim, cfg_.dim));
    }

    LinUCBConfig cfg_;
    Eigen::MatrixXd gram_;
    Eigen::MatrixXd gram_inv_;
    Eigen::VectorXd moment_;
    long updates_ = 0;
};

struct ExploreFirstConfig {
    int dim1 = 1;  // smaller class
    int dim2 = 2;  // larger class
    int num_actions = 2;
    long horizon = 1;
    double tau = 1.0;
    double gamma = 1.0;
    double delta_constant = 1.0;  // scale on the acceptance margin
    int policy_budget1 = 64;
    int policy_budget2 = 512;
};

// Adaptive explore-first over two policy classes: explore uniformly for t1
// rounds, compare the classes' empirical minimizers, and either commit to the
// small-class minimizer or keep exploring until t2 and commit to the
// large-class one.
class ExploreFirst : public Learner {
public:
    enum class Phase { Explore1, Committed1, Explore2, Committed2 };

    explicit ExploreFirst(ExploreFirstConfig cfg) : cfg_(cfg) {
        if (cfg_.dim1 > cfg_.dim2) throw std::invalid_argument("ExploreFirst: dim1 must be <= dim2");
        if (cfg_.policy_budget1 > cfg_.policy_budget2) {
            throw std::invalid_argument("ExploreFirst: |Pi_1| must be <= |Pi_2|");
        }
        t1_ = phase_length(cfg_.horizon, cfg_.num_actions, std::log(double(cfg_.policy_budget1)));
        t2_ = phase_length(cfg_.horizon, cfg_.num_actions, std::log(double(cfg_.policy_budget2)));
        threshold_ = cfg_.delta_constant *
                     std::cbrt(cfg_.num_actions /
                               (static_cast<double>(cfg_.horizon) *
                                std::log(static_cast<double>(cfg_.horizon) * cfg_.policy_budget1))) *
                     std::sqrt(std::log(static_cast<double>(cfg_.horizon) * cfg_.policy_budget2));
    }

    // t_i = ceil(T^{2/3} (K log |Pi_i|)^{1/3})
    static long phase_length(long horizon, int num_actions, double log_policy_count) {
        return static_cast<long>(std::ceil(std::pow(static_cast<double>(horizon), 2.0 / 3.0) *
                                           std::cbrt(num_actions * log_policy_count)));
    }

    int act(const ActionFeatures& features, Rng& rng) override {
        if (policies1_.empty()) {
            policies1_ = sample_policies(cfg_.dim1, cfg_.policy_budget1, cfg_.tau / cfg_.gamma, rng);
            if (cfg_.dim1 == cfg_.dim2 && cfg_.policy_budget1 == cfg_.policy_budget2) {
                policies2_ = policies1_;  // identical classes share one realization
            } else {
                policies2_ = sample_policies(cfg_.dim2, cfg_.policy_budget2, cfg_.tau / cfg_.gamma, rng);
            }
        }
        ++t_;
        switch (phase_) {
            case Phase::Explore1:
            case Phase::Explore2:
                explored_ = true;
                return rng.uniform_int(cfg_.num_actions);
            case Phase::Committed1:
                explored_ = false;
                return committed_->action(features);
            case Phase::Committed2:
            default:
                explored_ = false;
                return committed_->action(features);
        }
    }

    void update(const ActionFeatures& features, int action, double loss) override {
        if (phase_ == Phase::Explore1 || phase_ == Phase::Explore2) {
            history_.push_back({truncate(features, cfg_.dim2), action, loss});
        }
        if (phase_ == Phase::Explore1 && t_ >= t1_) {
            const LinearPolicy* best1 = empirical_minimizer(policies1_);
            const LinearPolicy* best2 = empirical_minimizer(policies2_);
            if (empirical_loss(*best1) <= empirical_loss(*best2) + threshold_) {
                committed_ = best1;
                phase_ = Phase::Committed1;
            } else {
                phase_ = (t_ >= t2_) ? Phase::Committed2 : Phase::Explore2;
                if (phase_ == Phase::Committed2) committed_ = empirical_minimizer(policies2_);
            }
        } else if (phase_ == Phase::Explore2 && t_ >= t2_) {
            committed_ = empirical_minimizer(policies2_);
            phase_ = Phase::Committed2;
        }
    }

    bool explored_last() const override { return explored_; }
    Phase phase() const { return phase_; }
    long t1() const { return t1_; }
    long t2() const { return t2_; }
    double threshold() const { return threshold_; }
    const LinearPolicy* committed_policy() const { return committed_; }

private:
    struct Record {
        ActionFeatures features;
        int action;
        double loss;
    };

    static ActionFeatures truncate(const ActionFeatures& features, int dim) {
        ActionFeatures out;
        out.reserve(features.size());
        for (const auto& phi : features) out.push_back(phi.head(dim).eval());
        return out;
    }

    double empirical_loss(const LinearPolicy& policy) const {
        double total = 0.0;
        for (const auto& rec : history_) {
            if (policy.action(rec.features) == rec.action) total += rec.loss;
        }
        return total;
    }

    const LinearPolicy* empirical_minimizer(const std::vector<LinearPolicy>& policies) const {
        const LinearPolicy* best = &policies.front();
        double best_loss = empirical_loss(*best);
        for (const auto& p : policies) {
            const double l = empirical_loss(p);
            if (l < best_loss) {
                best = &p;
                best_loss = l;
            }
        }
        return best;
    }

    ExploreFirstConfig cfg_;
    Phase phase_ = Phase::Explore1;
    long t_ = 0;
    long t1_ = 0;
    long t2_ = 0;
    double threshold_ = 0.0;
    bool explored_ = false;
    std::vector<LinearPolicy> policies1_, policies2_;
    std::vector<Record> history_;
    const LinearPolicy* committed_ = nullptr;
};

}  // namespace modsel
