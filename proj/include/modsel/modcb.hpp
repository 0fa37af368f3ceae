#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "modsel/exp4ix.hpp"
#include "modsel/learner.hpp"
#include "modsel/residual.hpp"

namespace modsel {

struct ModCBConfig {
    std::vector<int> dims;  // strictly increasing class dimensions
    AlgorithmParams params;
    int policy_budget = 512;
    long test_every = 1;  // gap-test stride; 1 reproduces the per-round test
    double witness_scale = 1.0;

    void validate() const {
        params.validate();
        if (dims.empty()) throw std::invalid_argument("ModCBConfig: dims must be nonempty");
        int prev = 0;
        for (int d : dims) {
            if (d <= prev) throw std::invalid_argument("ModCBConfig: dims must be strictly increasing");
            prev = d;
        }
        if (static_cast<int>(dims.size()) != params.num_classes) {
            throw std::invalid_argument("ModCBConfig: params.num_classes must match dims");
        }
        if (test_every < 1) throw std::invalid_argument("ModCBConfig: test_every must be >= 1");
    }
};

struct ModCBStepResult {
    int action = 0;
    bool explored = false;
    int class_index = 0;  // 0-based candidate class after the round
    bool advanced = false;
    std::vector<GapEstimate> gaps;  // estimates evaluated this round
};

// Class-selection orchestrator. Keeps a candidate class index, mixes decaying
// uniform exploration into an embedded exponential-weights base learner,
// accumulates second moments from every round's contexts, and advances the
// candidate when the pairwise gap estimator clears its confidence threshold.
//
// Incremental state (running second-moment inverses, labeled-sample cross
// sums) makes the per-round test O(d^2); tests assert that the fast estimate
// matches the from-scratch estimator on the same statistics.
class ModCB : public Learner {
public:
    explicit ModCB(ModCBConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int ambient = cfg_.dims.back();
        ctx_sum_ = Eigen::MatrixXd::Zero(ambient, ambient);
        xy_sum_ = Eigen::VectorXd::Zero(ambient);
        g_sum_ = Eigen::MatrixXd::Zero(ambient, ambient);
        caches_.resize(cfg_.dims.size());
        base_ = std::make_unique<Exp4IX>(base_config(0));
    }

    ModCB(const ModCB& other) : cfg_(other.cfg_) { copy_state(other); }
    ModCB& operator=(const ModCB& other) {
        cfg_ = other.cfg_;
        copy_state(other);
        return *this;
    }

    int act(const ActionFeatures& features, Rng& rng) override {
        ++t_;
        ingest_contexts(features);
        const double mu = exploration_probability(cfg_.params, t_);
        last_explored_ = rng.bernoulli(mu);
        if (last_explored_) {
            last_action_ = rng.uniform_int(cfg_.params.num_actions);
        } else {
            last_action_ = base_->act(features, rng);
        }
        return last_action_;
    }

    void update(const ActionFeatures& features, int action, double loss) override {
        if (last_explored_) {
            const Eigen::VectorXd x = features[action].head(ambient_dim()).eval();
            explore_rounds_.push_back(t_);
            buffer_.push_back({x, loss});
            xy_sum_ += x * loss;
            g_sum_ += (loss * loss) * x * x.transpose();
        } else {
            base_->update(features, action, loss);
        }
        last_gaps_.clear();
        last_advanced_ = false;
        if (t_ % cfg_.test_every == 0) run_test();
    }

    ModCBStepResult step(const RoundSample& sample, Rng& rng) {
        ModCBStepResult result;
        result.action = act(sample.features, rng);
        result.explored = last_explored_;
        update(sample.features, result.action, sample.loss[result.action]);
        result.class_index = m_hat_;
        result.advanced = last_advanced_;
        result.gaps = last_gaps_;
        return result;
    }

    bool explored_last() const override { return last_explored_; }
    int active_class() const override { return m_hat_; }

    long round() const { return t_; }
    int num_classes() const { return static_cast<int>(cfg_.dims.size()); }
    const ModCBConfig& config() const { return cfg_; }
    const std::vector<long>& explore_set() const { return explore_rounds_; }
    const std::vector<GapEstimate>& last_gaps() const { return last_gaps_; }
    const Exp4IX& base() const { return *base_; }

    // Normalized second moment of class k accumulated so far.
    SymMatrix second_moment(int k) const {
        if (t_ == 0) throw std::logic_error("ModCB: no rounds yet");
        return SymMatrix(symmetric_block(cfg_.dims[k]) / static_cast<double>(t_));
    }

    // Exploration buffer restricted to class k's coordinates.
    std::vector<LabeledSample> explore_buffer(int k) const {
        std::vector<LabeledSample> out;
        out.reserve(buffer_.size());
        for (const auto& s : buffer_) out.push_back({s.x.head(cfg_.dims[k]).eval(), s.y});
        return out;
    }

    // From-scratch gap estimate for a destination class, on the same
    // statistics the fast path uses.
    double reference_gap_estimate(int klass) const {
        return estimate_residual(explore_buffer(klass), second_moment(m_hat_),
                                 second_moment(klass));
    }

    nlohmann::json snapshot() const {
        nlohmann::json j;
        j["dims"] = cfg_.dims;
        j["params"] = {{"tau", cfg_.params.tau},       {"gamma", cfg_.params.gamma},
                       {"delta", cfg_.params.delta},   {"kappa", cfg_.params.kappa},
                       {"C1", cfg_.params.c1},         {"C2", cfg_.params.c2},
                       {"K", cfg_.params.num_actions}, {"M", cfg_.params.num_classes},
                       {"T", cfg_.params.horizon}};
        j["policy_budget"] = cfg_.policy_budget;
        j["test_every"] = cfg_.test_every;
        j["witness_scale"] = cfg_.witness_scale;
        j["t"] = t_;
        j["m_hat"] = m_hat_;
        j["explore_rounds"] = explore_rounds_;
        j["ctx_sum"] = matrix_to_json(Eigen::MatrixXd(ctx_sum_.selfadjointView<Eigen::Lower>()));
        j["xy_sum"] = std::vector<double>(xy_sum_.data(), xy_sum_.data() + xy_sum_.size());
        j["g_sum"] = matrix_to_json(g_sum_);
        nlohmann::json buf = nlohmann::json::array();
        for (const auto& s : buffer_) {
            buf.push_back({{"x", std::vector<double>(s.x.data(), s.x.data() + s.x.size())},
                           {"y", s.y}});
        }
        j["buffer"] = buf;
        nlohmann::json caches = nlohmann::json::array();
        for (const auto& c : caches_) {
            nlohmann::json cj;
            cj["active"] = c.active;
            cj["updates"] = c.updates_since_refresh;
            if (c.active) cj["inv"] = matrix_to_json(c.inv);
            caches.push_back(cj);
        }
        j["caches"] = caches;
        j["base"] = base_->snapshot();
        j["last_explored"] = last_explored_;
        return j;
    }

    static ModCB from_snapshot(const nlohmann::json& j) {
        ModCBConfig cfg;
        cfg.dims = j.at("dims").get<std::vector<int>>();
        const auto& p = j.at("params");
        cfg.params.tau = p.at("tau").get<double>();
        cfg.params.gamma = p.at("gamma").get<double>();
        cfg.params.delta = p.at("delta").get<double>();
        cfg.params.kappa = p.at("kappa").get<double>();
        cfg.params.c1 = p.at("C1").get<double>();
        cfg.params.c2 = p.at("C2").get<double>();
        cfg.params.num_actions = p.at("K").get<int>();
        cfg.params.num_classes = p.at("M").get<int>();
        cfg.params.horizon = p.at("T").get<long>();
        cfg.policy_budget = j.at("policy_budget").get<int>();
        cfg.test_every = j.at("test_every").get<long>();
        cfg.witness_scale = j.at("witness_scale").get<double>();

        ModCB out(cfg);
        out.t_ = j.at("t").get<long>();
        out.m_hat_ = j.at("m_hat").get<int>();
        out.explore_rounds_ = j.at("explore_rounds").get<std::vector<long>>();
        out.ctx_sum_ = matrix_from_json(j.at("ctx_sum"));
        const auto xy = j.at("xy_sum").get<std::vector<double>>();
        out.xy_sum_ = Eigen::Map<const Eigen::VectorXd>(xy.data(), xy.size());
        out.g_sum_ = matrix_from_json(j.at("g_sum"));
        out.buffer_.clear();
        for (const auto& s : j.at("buffer")) {
            const auto xs = s.at("x").get<std::vector<double>>();
            out.buffer_.push_back(
                {Eigen::Map<const Eigen::VectorXd>(xs.data(), xs.size()), s.at("y").get<double>()});
        }
        out.caches_.clear();
        for (const auto& cj : j.at("caches")) {
            InverseCache c;
            c.active = cj.at("active").get<bool>();
            c.updates_since_refresh = cj.at("updates").get<long>();
            if (c.active) c.inv = matrix_from_json(cj.at("inv"));
            out.caches_.push_back(std::move(c));
        }
        out.base_ = std::make_unique<Exp4IX>(Exp4IX::from_snapshot(j.at("base")));
        out.last_explored_ = j.at("last_explored").get<bool>();
        return out;
    }

private:
    struct InverseCache {
        bool active = false;
        Eigen::MatrixXd inv;  // inverse of the unnormalized class block
        long updates_since_refresh = 0;
    };

    static constexpr long kRefreshInterval = 256;

    int ambient_dim() const { return cfg_.dims.back(); }

    Exp4Config base_config(int klass) const {
        Exp4Config ec;
        ec.dim = cfg_.dims[klass];
        ec.num_actions = cfg_.params.num_actions;
        ec.horizon = cfg_.params.horizon;
        ec.delta = cfg_.params.delta0();
        ec.tau = cfg_.params.tau;
        ec.gamma = cfg_.params.gamma;
        ec.policy_budget = cfg_.policy_budget;
        ec.witness_scale = cfg_.witness_scale;
        return ec;
    }

    void copy_state(const ModCB& other) {
        t_ = other.t_;
        m_hat_ = other.m_hat_;
        explore_rounds_ = other.explore_rounds_;
        ctx_sum_ = other.ctx_sum_;
        xy_sum_ = other.xy_sum_;
        g_sum_ = other.g_sum_;
        buffer_ = other.buffer_;
        caches_ = other.caches_;
        base_ = std::make_unique<Exp4IX>(*other.base_);
        last_explored_ = other.last_explored_;
        last_action_ = other.last_action_;
        last_advanced_ = other.last_advanced_;
        last_gaps_ = other.last_gaps_;
    }

    void ingest_contexts(const ActionFeatures& features) {
        const int d = ambient_dim();
        const double w = 1.0 / static_cast<double>(cfg_.params.num_actions);
        for (int a = 0; a < cfg_.params.num_actions; ++a) {
            const Eigen::VectorXd v = features[a].head(d).eval();
            ctx_sum_.selfadjointView<Eigen::Lower>().rankUpdate(v, w);
            for (std::size_t k = 0; k < caches_.size(); ++k) {
                if (!caches_[k].active) continue;
                sherman_morrison_add(caches_[k], v.head(cfg_.dims[k]), w);
            }
        }
        for (auto& c : caches_) {
            if (c.active) ++c.updates_since_refresh;
        }
    }

    static void sherman_morrison_add(InverseCache& cache, const Eigen::VectorXd& v, double w) {
        const Eigen::VectorXd u = cache.inv * v;
        const double denom = 1.0 + w * v.dot(u);
        if (denom <= 1e-12) {
            cache.active = false;  // force a refresh on next use
            return;
        }
        cache.inv.noalias() -= (w / denom) * u * u.transpose();
    }

    Eigen::MatrixXd symmetric_block(int d) const {
        return Eigen::MatrixXd(ctx_sum_.selfadjointView<Eigen::Lower>()).topLeftCorner(d, d);
    }

    // (Re)builds the inverse of class k's unnormalized second-moment block.
    // Leaves the cache inactive when the block is not positive definite.
    void ensure_cache(int k) {
        InverseCache& c = caches_[k];
        if (c.active && c.updates_since_refresh < kRefreshInterval) return;
        const int d = cfg_.dims[k];
        const Eigen::MatrixXd block = symmetric_block(d);
        Eigen::LDLT<Eigen::MatrixXd> ldlt(block);
        c.active = false;
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return;
        const Eigen::VectorXd diag = ldlt.vectorD();
        if (diag.minCoeff() <= 1e-12 * diag.maxCoeff()) return;
        c.inv = ldlt.solve(Eigen::MatrixXd::Identity(d, d));
        c.updates_since_refresh = 0;
        c.active = true;
    }

    // Gap estimate via the nested-case identity: with the smaller block equal
    // to the leading block of the larger positive-definite one,
    // R Sigma R = Sigma^{-1} - D^+, so the pairwise statistic reduces to
    // quadratic forms in the running sums. Equals estimate_residual on the
    // same inputs up to conditioning-level roundoff.
    double fast_gap(int klass) {
        ensure_cache(m_hat_);
        ensure_cache(klass);
        if (!caches_[m_hat_].active || !caches_[klass].active) {
            return reference_gap_estimate(klass);
        }
        const int di = cfg_.dims[klass];
        const int d1 = cfg_.dims[m_hat_];
        const Eigen::MatrixXd& ui = caches_[klass].inv;
        const Eigen::MatrixXd& u1 = caches_[m_hat_].inv;
        const Eigen::VectorXd wi = xy_sum_.head(di);
        const Eigen::VectorXd w1 = xy_sum_.head(d1);
        const double t = static_cast<double>(t_);
        const double quad = t * (wi.dot(ui * wi) - w1.dot(u1 * w1));
        const double trace = t * (ui.cwiseProduct(g_sum_.topLeftCorner(di, di)).sum() -
                                  u1.cwiseProduct(g_sum_.topLeftCorner(d1, d1)).sum());
        const double n = static_cast<double>(buffer_.size());
        return (quad - trace) / (n * (n - 1.0));
    }

    void run_test() {
        if (buffer_.size() < 2) return;  // not enough exploration data yet
        const int m = num_classes();
        for (int i = m_hat_ + 1; i < m; ++i) {
            if (t_ < t_min(cfg_.params, cfg_.dims[i])) continue;
            GapEstimate g;
            g.class_index = i;
            g.threshold = alpha_threshold(cfg_.params, cfg_.dims[i], t_);
            g.t_min_reached = true;
            g.value = fast_gap(i);
            last_gaps_.push_back(g);
        }
        for (const GapEstimate& g : last_gaps_) {
            if (g.value >= 2.0 * g.threshold) {
                m_hat_ = g.class_index;  // smallest qualifying destination
                base_ = std::make_unique<Exp4IX>(base_config(m_hat_));
                last_advanced_ = true;
                break;
            }
        }
    }

    static nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (int i = 0; i < m.rows(); ++i) {
            rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
        }
        return rows;
    }

    static Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows) {
        const int n = static_cast<int>(rows.size());
        const int c = static_cast<int>(rows.at(0).size());
        Eigen::MatrixXd m(n, c);
        for (int i = 0; i < n; ++i) {
            const auto row = rows.at(i).get<std::vector<double>>();
            m.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), c);
        }
        return m;
    }

    ModCBConfig cfg_;
    long t_ = 0;
    int m_hat_ = 0;
    std::vector<long> explore_rounds_;
    Eigen::MatrixXd ctx_sum_;  // lower triangle holds (1/K) sum_a sum_s phi phi^T
    Eigen::VectorXd xy_sum_;   // sum over exploration rounds of x * y
    Eigen::MatrixXd g_sum_;    // sum over exploration rounds of y^2 x x^T
    std::vector<LabeledSample> buffer_;
    std::vector<InverseCache> caches_;
    std::unique_ptr<Exp4IX> base_;
    bool last_explored_ = false;
    int last_action_ = 0;
    bool last_advanced_ = false;
    std::vector<GapEstimate> last_gaps_;
};

struct MapSelection {
    std::vector<int> indices;  // positions within the input list
    std::vector<int> dims;
};

// Thins a feature-map stack to at most ceil(log T) maps: for each scale e^i,
// keep the largest map of dimension at most e^i, then drop duplicates.
inline MapSelection preprocess_maps(const std::vector<int>& dims, long horizon) {
    if (horizon < 1) throw std::invalid_argument("preprocess_maps: horizon must be >= 1");
    int prev = 0;
    for (int d : dims) {
        if (d <= prev) throw std::invalid_argument("preprocess_maps: dims must be strictly increasing");
        prev = d;
    }
    const int levels = static_cast<int>(std::ceil(std::log(static_cast<double>(horizon))));
    MapSelection out;
    int last_kept = -1;
    for (int i = 1; i <= levels; ++i) {
        const double cap = std::exp(static_cast<double>(i));
        int pick = -1;
        for (int m = 0; m < static_cast<int>(dims.size()); ++m) {
            if (dims[m] <= cap) pick = m;
        }
        if (pick < 0 || pick == last_kept) continue;
        out.indices.push_back(pick);
        out.dims.push_back(dims[pick]);
        last_kept = pick;
    }
    return out;
}

// Turns non-nested maps (non-decreasing dims) into a nested stack by
// concatenating every earlier map onto each one; dimension m becomes the
// prefix sum of the first m+1 input dimensions.
inline std::vector<int> concat_non_nested(const std::vector<int>& dims) {
    int prev = 0;
    for (int d : dims) {
        if (d < prev || d < 1) {
            throw std::invalid_argument("concat_non_nested: dims must be positive and non-decreasing");
        }
        prev = d;
    }
    std::vector<int> out;
    out.reserve(dims.size());
    int total = 0;
    for (int d : dims) {
        total += d;
        out.push_back(total);
    }
    return out;
}

}  // namespace modsel
