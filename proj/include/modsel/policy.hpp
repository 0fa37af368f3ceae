#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <vector>

#include "modsel/environment.hpp"
#include "modsel/rng.hpp"

namespace modsel {

// Linear argmin policy over the first beta.size() feature coordinates.
struct LinearPolicy {
    Eigen::VectorXd beta;

    // Ties break to the lowest action index.
    int action(const ActionFeatures& features) const {
        const int d = static_cast<int>(beta.size());
        int best = 0;
        double best_score = beta.dot(features[0].head(d));
        for (int a = 1; a < static_cast<int>(features.size()); ++a) {
            const double s = beta.dot(features[a].head(d));
            if (s < best_score) {
                best = a;
                best_score = s;
            }
        }
        return best;
    }
};

// Uniform draw from the solid ball of the given radius.
inline Eigen::VectorXd sample_in_ball(int dim, double radius, Rng& rng) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = rng.normal();
    const double norm = v.norm();
    if (norm == 0.0) return Eigen::VectorXd::Zero(dim);
    const double r = radius * std::pow(rng.uniform01(), 1.0 / dim);
    return v * (r / norm);
}

inline std::vector<LinearPolicy> sample_policies(int dim, int count, double radius, Rng& rng) {
    std::vector<LinearPolicy> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back({sample_in_ball(dim, radius, rng)});
    return out;
}

// Samples n_pol coefficient vectors on the ball of radius tau/gamma and keeps
// one representative per distinct action pattern on the witnessed contexts
// (first sampled wins). The representatives stand in for the equivalence
// classes of the infinite policy class on those contexts.
inline std::vector<LinearPolicy> build_policy_set(const std::vector<ActionFeatures>& witnessed,
                                                  int dim, int n_pol, double tau, double gamma,
                                                  Rng& rng) {
    if (witnessed.empty()) throw std::invalid_argument("build_policy_set: needs at least one context");
    if (n_pol < 1) throw std::invalid_argument("build_policy_set: n_pol must be positive");

    std::vector<LinearPolicy> representatives;
    std::map<std::vector<int>, int> seen;
    for (int i = 0; i < n_pol; ++i) {
        LinearPolicy candidate{sample_in_ball(dim, tau / gamma, rng)};
        std::vector<int> pattern;
        pattern.reserve(witnessed.size());
        for (const auto& ctx : witnessed) pattern.push_back(candidate.action(ctx));
        if (seen.emplace(std::move(pattern), static_cast<int>(representatives.size())).second) {
            representatives.push_back(std::move(candidate));
        }
    }
    return representatives;
}

}  // namespace modsel
