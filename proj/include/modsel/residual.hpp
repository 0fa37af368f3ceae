#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "modsel/matrix.hpp"

namespace modsel {

struct LabeledSample {
    Eigen::VectorXd x;
    double y = 0.0;
};

// Running action-averaged second moment: (1/K) sum_a sum_s phi phi^T over the
// rounds fed in, truncated to this accumulator's dimension. normalized()
// divides by the round count so the result estimates the population moment.
class SecondMomentAccumulator {
public:
    explicit SecondMomentAccumulator(int dim)
        : dim_(dim), sum_(Eigen::MatrixXd::Zero(dim, dim)) {
        if (dim < 1) throw std::invalid_argument("SecondMomentAccumulator: dim must be >= 1");
    }

    void add_round(const std::vector<Eigen::VectorXd>& action_features) {
        const double w = 1.0 / static_cast<double>(action_features.size());
        for (const auto& phi : action_features) {
            if (phi.size() < dim_) {
                throw std::invalid_argument("SecondMomentAccumulator: feature vector shorter than dim");
            }
            sum_.selfadjointView<Eigen::Lower>().rankUpdate(phi.head(dim_), w);
        }
        ++rounds_;
    }

    long rounds() const { return rounds_; }
    int dim() const { return dim_; }

    Eigen::MatrixXd sum() const { return sum_.selfadjointView<Eigen::Lower>(); }

    SymMatrix normalized() const {
        if (rounds_ == 0) throw std::logic_error("SecondMomentAccumulator: no rounds accumulated");
        return SymMatrix(sum() / static_cast<double>(rounds_));
    }

private:
    int dim_;
    Eigen::MatrixXd sum_;
    long rounds_ = 0;
};

// Pairwise U-statistic estimate of the square-loss gap between the full linear
// class on x and the restricted class on the first d1 coordinates.
//
// Builds D = blockdiag(sigma_hat_1, 0), R = D^+ - sigma_hat^+, Q = sigma_hat^{1/2} R,
// z_s = Q x_s y_s, and evaluates the mean of <z_s, z_t> over unordered pairs
// through the identity (|sum z|^2 - sum |z|^2) / (n (n-1)). The value is an
// unbiased estimate when the moment inputs are exact, and it may be negative.
inline double estimate_residual(const std::vector<LabeledSample>& samples,
                                const SymMatrix& sigma_hat_1, const SymMatrix& sigma_hat) {
    const long n = static_cast<long>(samples.size());
    if (n < 2) throw std::invalid_argument("estimate_residual: needs at least 2 labeled samples");
    const int d = sigma_hat.dim();
    const int d1 = sigma_hat_1.dim();
    if (d1 >= d) throw std::invalid_argument("estimate_residual: requires d1 < d");
    for (const auto& s : samples) {
        if (s.x.size() != d) throw std::invalid_argument("estimate_residual: sample dimension mismatch");
        if (!s.x.allFinite() || !std::isfinite(s.y)) {
            throw std::invalid_argument("estimate_residual: non-finite sample");
        }
    }

    const SymDecomposition full(sigma_hat);
    Eigen::MatrixXd r = -full.pseudo_inverse();
    r.topLeftCorner(d1, d1) += pseudo_inverse(sigma_hat_1).data();
    const Eigen::MatrixXd q = full.psd_sqrt() * r;

    Eigen::VectorXd total = Eigen::VectorXd::Zero(d);
    double sum_sq = 0.0;
    for (const auto& s : samples) {
        const Eigen::VectorXd z = q * (s.x * s.y);
        total += z;
        sum_sq += z.squaredNorm();
    }
    return (total.squaredNorm() - sum_sq) / (static_cast<double>(n) * (n - 1));
}

// Plug-in baseline: least-squares fits on both classes, then the empirical
// square-loss gap of the fitted predictors under sigma_hat. Converges at the
// d/n rate rather than the U-statistic's sqrt(d)/n rate.
inline double plug_in_residual(const std::vector<LabeledSample>& samples,
                               const SymMatrix& sigma_hat_1, const SymMatrix& sigma_hat) {
    const long n = static_cast<long>(samples.size());
    if (n < 2) throw std::invalid_argument("plug_in_residual: needs at least 2 labeled samples");
    const int d = sigma_hat.dim();
    const int d1 = sigma_hat_1.dim();
    if (d1 >= d) throw std::invalid_argument("plug_in_residual: requires d1 < d");

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd xy = Eigen::VectorXd::Zero(d);
    for (const auto& s : samples) {
        if (s.x.size() != d) throw std::invalid_argument("plug_in_residual: sample dimension mismatch");
        gram.selfadjointView<Eigen::Lower>().rankUpdate(s.x, 1.0);
        xy += s.x * s.y;
    }
    const Eigen::MatrixXd gram_full = gram.selfadjointView<Eigen::Lower>();
    const Eigen::VectorXd beta_full = pseudo_inverse(SymMatrix(gram_full)).data() * xy;
    const Eigen::VectorXd beta_restricted =
        pseudo_inverse(SymMatrix(gram_full.topLeftCorner(d1, d1))).data() * xy.head(d1);

    Eigen::VectorXd diff = beta_full;
    diff.head(d1) -= beta_restricted;
    return diff.dot(sigma_hat.data() * diff);
}

// Population value of the same gap: || sigma^{1/2} (D^+ - sigma^{-1}) mu ||^2
// with mu = E[x y]. sigma must be invertible.
inline double population_residual(const SymMatrix& sigma, const SymMatrix& sigma_1,
                                  const Eigen::VectorXd& mu) {
    const int d = sigma.dim();
    const int d1 = sigma_1.dim();
    if (d1 >= d) throw std::invalid_argument("population_residual: requires d1 < d");
    if (mu.size() != d) throw std::invalid_argument("population_residual: mu dimension mismatch");
    const SymDecomposition full(sigma);
    if (full.min_eigenvalue() <= kPinvRelTol * std::abs(full.max_eigenvalue())) {
        throw std::domain_error("population_residual: sigma is not invertible");
    }
    Eigen::VectorXd v = -(full.pseudo_inverse() * mu);
    v.head(d1) += pseudo_inverse(sigma_1).data() * mu.head(d1);
    return (full.psd_sqrt() * v).squaredNorm();
}

// Parameters shared by the class-selection schedules. delta0 is the working
// confidence level after the union bound over classes and rounds.
struct AlgorithmParams {
    double tau = 1.0;
    double gamma = 1.0;
    double delta = 0.05;  // in (0, 1)
    double kappa = 1.0 / 3.0;  // exploration exponent, in (0, 1)
    double c1 = 1.0;
    double c2 = 1.0;
    int num_actions = 2;  // K
    int num_classes = 1;  // M
    long horizon = 1;     // T

    double delta0() const {
        return delta / (10.0 * static_cast<double>(num_classes) * num_classes *
                        static_cast<double>(horizon) * horizon);
    }

    void validate() const {
        if (tau <= 0.0 || gamma <= 0.0) throw std::invalid_argument("AlgorithmParams: tau, gamma must be positive");
        if (delta <= 0.0 || delta >= 1.0) throw std::invalid_argument("AlgorithmParams: delta must lie in (0, 1)");
        if (kappa <= 0.0 || kappa >= 1.0) throw std::invalid_argument("AlgorithmParams: kappa must lie in (0, 1)");
        if (c1 <= 0.0 || c2 <= 0.0) throw std::invalid_argument("AlgorithmParams: C1, C2 must be positive");
        if (num_actions < 1 || num_classes < 1 || horizon < 1) {
            throw std::invalid_argument("AlgorithmParams: K, M, T must be positive");
        }
        if (delta0() <= 0.0 || delta0() >= 1.0) throw std::invalid_argument("AlgorithmParams: derived delta0 invalid");
    }
};

// Confidence radius for the gap estimate of a d_m-dimensional class at round t.
inline double alpha_threshold(const AlgorithmParams& p, int d_m, long t) {
    if (t < 1) throw std::invalid_argument("alpha_threshold: t must be >= 1");
    const double d0 = p.delta0();
    const double tau4 = std::pow(p.tau, 4);
    const double gamma4 = std::pow(p.gamma, 4);
    const double term1 = (tau4 * p.tau * p.tau / gamma4) * std::sqrt(static_cast<double>(d_m)) *
                         std::pow(std::log(2.0 * d_m / d0), 2) /
                         (std::pow(static_cast<double>(p.num_actions), p.kappa) *
                          std::pow(static_cast<double>(t), 1.0 - p.kappa));
    const double term2 = (tau4 * tau4 * p.tau * p.tau / (gamma4 * gamma4)) * d_m *
                         std::log(2.0 / d0) / static_cast<double>(t);
    return p.c1 * (term1 + term2);
}

// Earliest round at which the gap test for a d_m-dimensional class may fire.
inline long t_min(const AlgorithmParams& p, int d_m) {
    const double log_term = std::log(2.0 / p.delta0());
    const double value =
        p.c2 * (std::pow(p.tau, 4) / (p.gamma * p.gamma) * d_m * log_term +
                std::pow(log_term, 1.0 / (1.0 - p.kappa)) + p.num_actions);
    return static_cast<long>(std::ceil(value)) + 1;
}

// Uniform-exploration probability schedule, (K/t)^kappa capped at one.
inline double exploration_probability(const AlgorithmParams& p, long t) {
    if (t < 1) throw std::invalid_argument("exploration_probability: t must be >= 1");
    return std::min(std::pow(static_cast<double>(p.num_actions) / static_cast<double>(t), p.kappa),
                    1.0);
}

// Expected number of exploration rounds through round t under the schedule.
inline double expected_exploration_count(const AlgorithmParams& p, long t) {
    double total = 0.0;
    for (long s = 1; s <= t; ++s) total += exploration_probability(p, s);
    return total;
}

struct GapEstimate {
    int class_index = 0;  // 0-based destination class
    double value = 0.0;   // estimated square-loss gap (may be negative)
    double threshold = 0.0;
    bool t_min_reached = false;
};

}  // namespace modsel
