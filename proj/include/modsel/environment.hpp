#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "modsel/matrix.hpp"
#include "modsel/rng.hpp"

namespace modsel {

using ActionFeatures = std::vector<Eigen::VectorXd>;

// Subgaussian moment constant of a standard normal coordinate:
// sup_{p>=1} p^{-1/2} (E|z|^p)^{1/p} = E|z| = sqrt(2/pi), attained at p = 1.
inline constexpr double kStandardNormalTau = 0.7978845608028654;

enum class DesignKind { IsotropicGaussian, CorrelatedGaussian };

struct Design {
    DesignKind kind = DesignKind::IsotropicGaussian;
    double condition_number = 1.0;  // CorrelatedGaussian only
};

// Nested feature-map stack: class m uses the first dims[m] coordinates of the
// ambient feature vector, so smaller classes are exact prefixes of larger ones.
struct NestedFeatureSpec {
    int num_classes = 1;    // M
    std::vector<int> dims;  // strictly increasing, one entry per class
    int num_actions = 2;    // K
    Design design;

    int ambient_dim() const { return dims.back(); }

    void validate() const {
        if (num_classes < 1) throw std::invalid_argument("NestedFeatureSpec: num_classes must be >= 1");
        if (static_cast<int>(dims.size()) != num_classes) {
            throw std::invalid_argument("NestedFeatureSpec: dims must have one entry per class");
        }
        int prev = 0;
        for (int d : dims) {
            if (d <= prev) throw std::invalid_argument("NestedFeatureSpec: dims must be strictly increasing");
            prev = d;
        }
        if (num_actions < 2) throw std::invalid_argument("NestedFeatureSpec: num_actions must be >= 2");
        if (design.kind == DesignKind::CorrelatedGaussian && design.condition_number < 1.0) {
            throw std::invalid_argument("NestedFeatureSpec: condition_number must be >= 1");
        }
    }
};

// Per-coordinate variances of the ambient feature distribution. Isotropic is
// all ones; the correlated design interpolates geometrically from 1 down to
// 1/condition_number across the ambient coordinates, so every class's second
// moment is the leading diagonal block of the ambient one.
inline Eigen::VectorXd design_spectrum(const NestedFeatureSpec& features) {
    const int d = features.ambient_dim();
    Eigen::VectorXd spec = Eigen::VectorXd::Ones(d);
    if (features.design.kind == DesignKind::CorrelatedGaussian && d > 1) {
        const double cond = features.design.condition_number;
        for (int i = 0; i < d; ++i) {
            spec[i] = std::pow(cond, -static_cast<double>(i) / (d - 1));
        }
    }
    return spec;
}

inline double default_tau(const NestedFeatureSpec& features) {
    return kStandardNormalTau * std::sqrt(design_spectrum(features).maxCoeff());
}

inline double default_gamma(const NestedFeatureSpec& features) {
    return std::sqrt(design_spectrum(features).minCoeff());
}

// Ground-truth environment description: which class realizes the conditional
// mean loss, with what coefficients, and how noisy the observed losses are.
struct EnvironmentSpec {
    NestedFeatureSpec features;
    int m_star = 0;             // 0-based index of the smallest realizing class
    Eigen::VectorXd beta_star;  // length features.dims[m_star], norm <= 1
    double noise_sigma = 0.0;
    double tau = kStandardNormalTau;
    double gamma = 1.0;

    void validate() const {
        features.validate();
        if (m_star < 0 || m_star >= features.num_classes) {
            throw std::invalid_argument("EnvironmentSpec: m_star out of range");
        }
        if (beta_star.size() != features.dims[m_star]) {
            throw std::invalid_argument("EnvironmentSpec: beta_star length must equal dims[m_star]");
        }
        if (!beta_star.allFinite()) throw std::invalid_argument("EnvironmentSpec: beta_star has non-finite entries");
        if (beta_star.norm() > 1.0 + 1e-12) {
            throw std::invalid_argument("EnvironmentSpec: beta_star norm must be <= 1");
        }
        if (noise_sigma < 0.0) throw std::invalid_argument("EnvironmentSpec: noise_sigma must be >= 0");
        if (tau <= 0.0 || gamma <= 0.0) throw std::invalid_argument("EnvironmentSpec: tau and gamma must be positive");
        if (noise_sigma > tau + 1e-12) {
            throw std::invalid_argument("EnvironmentSpec: noise_sigma must not exceed tau");
        }
        if (m_star > 0) {
            const int lo = features.dims[m_star - 1];
            if (beta_star.tail(beta_star.size() - lo).norm() == 0.0) {
                throw std::invalid_argument(
                    "EnvironmentSpec: beta_star must have mass beyond dims[m_star-1], otherwise a "
                    "smaller class already realizes the mean loss");
            }
        }
    }
};

// Convenience constructor that fills tau/gamma from the design.
inline EnvironmentSpec make_environment(NestedFeatureSpec features, int m_star,
                                        Eigen::VectorXd beta_star, double noise_sigma) {
    EnvironmentSpec spec;
    spec.features = std::move(features);
    spec.m_star = m_star;
    spec.beta_star = std::move(beta_star);
    spec.noise_sigma = noise_sigma;
    spec.tau = default_tau(spec.features);
    spec.gamma = default_gamma(spec.features);
    spec.validate();
    return spec;
}

// One interaction round: ambient feature vectors per action plus the realized
// loss vector. Class-m features are the first dims[m] coordinates.
struct RoundSample {
    ActionFeatures features;  // K vectors of length ambient_dim
    Eigen::VectorXd loss;     // length K
};

inline ActionFeatures sample_features(const EnvironmentSpec& spec, Rng& rng) {
    const int d = spec.features.ambient_dim();
    const Eigen::VectorXd scale = design_spectrum(spec.features).cwiseSqrt();
    ActionFeatures out(spec.features.num_actions);
    for (auto& phi : out) {
        phi.resize(d);
        for (int i = 0; i < d; ++i) phi[i] = scale[i] * rng.normal();
    }
    return out;
}

inline Eigen::VectorXd sample_losses(const EnvironmentSpec& spec, const ActionFeatures& features,
                                     Rng& rng) {
    const int k = spec.features.num_actions;
    const int dm = spec.features.dims[spec.m_star];
    Eigen::VectorXd loss(k);
    for (int a = 0; a < k; ++a) {
        loss[a] = spec.beta_star.dot(features[a].head(dm));
        if (spec.noise_sigma > 0.0) loss[a] += spec.noise_sigma * rng.normal();
    }
    return loss;
}

inline RoundSample sample_round(const EnvironmentSpec& spec, Rng& rng) {
    RoundSample sample;
    sample.features = sample_features(spec, rng);
    sample.loss = sample_losses(spec, sample.features, rng);
    return sample;
}

// Conditional mean loss of an action given the sampled context.
inline double true_expected_loss(const EnvironmentSpec& spec, const RoundSample& sample, int a) {
    if (a < 0 || a >= spec.features.num_actions) {
        throw std::out_of_range("true_expected_loss: action index out of range");
    }
    const int dm = spec.features.dims[spec.m_star];
    return spec.beta_star.dot(sample.features[a].head(dm));
}

// Argmin of the conditional mean loss; ties break to the lowest action index.
inline int optimal_action(const EnvironmentSpec& spec, const RoundSample& sample) {
    int best = 0;
    double best_value = true_expected_loss(spec, sample, 0);
    for (int a = 1; a < spec.features.num_actions; ++a) {
        const double v = true_expected_loss(spec, sample, a);
        if (v < best_value) {
            best = a;
            best_value = v;
        }
    }
    return best;
}

inline SymMatrix population_second_moment(const EnvironmentSpec& spec, int m) {
    if (m < 0 || m >= spec.features.num_classes) {
        throw std::out_of_range("population_second_moment: class index out of range");
    }
    return SymMatrix::diagonal(design_spectrum(spec.features).head(spec.features.dims[m]));
}

// Zero-pads a class-m coefficient vector to the ambient dimension.
inline Eigen::VectorXd pad_to_ambient(const EnvironmentSpec& spec, const Eigen::VectorXd& beta) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(spec.features.ambient_dim());
    out.head(beta.size()) = beta;
    return out;
}

// Population square-loss minimizer for class m. For m >= m_star the minimizer
// is the zero-padded true coefficient vector; below m_star it solves
// Sigma_m beta = cross-moment, where the cross-moment is the leading block of
// Sigma_ambient applied to the padded true coefficients.
inline Eigen::VectorXd population_beta(const EnvironmentSpec& spec, int m) {
    if (m < 0 || m >= spec.features.num_classes) {
        throw std::out_of_range("population_beta: class index out of range");
    }
    const int dm = spec.features.dims[m];
    if (m >= spec.m_star) {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(dm);
        out.head(spec.beta_star.size()) = spec.beta_star;
        return out;
    }
    const Eigen::VectorXd spectrum = design_spectrum(spec.features);
    const Eigen::VectorXd padded = pad_to_ambient(spec, spec.beta_star);
    const Eigen::VectorXd cross = (spectrum.asDiagonal() * padded).head(dm);
    return population_second_moment(spec, m).data().ldlt().solve(cross);
}

// Square-loss gap between the class-i and class-j population predictors:
// the quadratic form of their (padded) coefficient difference under the larger
// class's second moment.
inline double population_gap(const EnvironmentSpec& spec, int i, int j) {
    const int big = std::max(i, j);
    const int d = spec.features.dims[big];
    Eigen::VectorXd bi = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd bj = Eigen::VectorXd::Zero(d);
    bi.head(spec.features.dims[i]) = population_beta(spec, i);
    bj.head(spec.features.dims[j]) = population_beta(spec, j);
    const Eigen::VectorXd diff = bi - bj;
    return diff.dot(population_second_moment(spec, big).data() * diff);
}

struct MonteCarloGap {
    double estimate = 0.0;
    double std_error = 0.0;
};

// Monte-Carlo estimate of the policy gap L(pi_i) - L(pi_j) between the argmin
// policies induced by the two population predictors. Uses conditional mean
// losses: the expectation is unchanged and the variance is far smaller than
// with realized losses.
inline MonteCarloGap policy_gap_monte_carlo(const EnvironmentSpec& spec, int i, int j,
                                            long n_samples, Rng& rng) {
    if (n_samples < 100) throw std::invalid_argument("policy_gap_monte_carlo: n_samples must be >= 100");
    if (i == j) return {0.0, 0.0};
    const Eigen::VectorXd beta_i = population_beta(spec, i);
    const Eigen::VectorXd beta_j = population_beta(spec, j);
    const int di = spec.features.dims[i];
    const int dj = spec.features.dims[j];
    const int dm = spec.features.dims[spec.m_star];
    const int k = spec.features.num_actions;

    auto argmin_action = [&](const ActionFeatures& phi, const Eigen::VectorXd& beta, int d) {
        int best = 0;
        double best_score = beta.dot(phi[0].head(d));
        for (int a = 1; a < k; ++a) {
            const double s = beta.dot(phi[a].head(d));
            if (s < best_score) {
                best = a;
                best_score = s;
            }
        }
        return best;
    };

    double sum = 0.0, sumsq = 0.0;
    for (long s = 0; s < n_samples; ++s) {
        const ActionFeatures phi = sample_features(spec, rng);
        const int ai = argmin_action(phi, beta_i, di);
        const int aj = argmin_action(phi, beta_j, dj);
        const double diff =
            spec.beta_star.dot(phi[ai].head(dm)) - spec.beta_star.dot(phi[aj].head(dm));
        sum += diff;
        sumsq += diff * diff;
    }
    const double n = static_cast<double>(n_samples);
    const double mean = sum / n;
    const double var = std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0));
    return {mean, std::sqrt(var / n)};
}

// --- JSON serialization -----------------------------------------------------
//
// Field names follow the on-disk schema: num_classes, dims, num_actions,
// design, m_star, beta_star, noise_sigma, tau, gamma. m_star is 1-based in
// JSON documents and 0-based in memory.

inline nlohmann::json to_json(const Design& design) {
    if (design.kind == DesignKind::IsotropicGaussian) {
        return nlohmann::json{{"type", "IsotropicGaussian"}};
    }
    return nlohmann::json{{"type", "CorrelatedGaussian"},
                          {"condition_number", design.condition_number}};
}

inline Design design_from_json(const nlohmann::json& j) {
    Design design;
    std::string type;
    if (j.is_string()) {
        type = j.get<std::string>();
    } else {
        type = j.at("type").get<std::string>();
    }
    if (type == "IsotropicGaussian") {
        design.kind = DesignKind::IsotropicGaussian;
    } else if (type == "CorrelatedGaussian") {
        design.kind = DesignKind::CorrelatedGaussian;
        design.condition_number = j.at("condition_number").get<double>();
    } else {
        throw std::invalid_argument("design_from_json: unknown design type '" + type + "'");
    }
    return design;
}

inline nlohmann::json to_json(const EnvironmentSpec& spec) {
    nlohmann::json j;
    j["num_classes"] = spec.features.num_classes;
    j["dims"] = spec.features.dims;
    j["num_actions"] = spec.features.num_actions;
    j["design"] = to_json(spec.features.design);
    j["m_star"] = spec.m_star + 1;
    j["beta_star"] = std::vector<double>(spec.beta_star.data(),
                                         spec.beta_star.data() + spec.beta_star.size());
    j["noise_sigma"] = spec.noise_sigma;
    j["tau"] = spec.tau;
    j["gamma"] = spec.gamma;
    return j;
}

inline EnvironmentSpec environment_from_json(const nlohmann::json& j) {
    EnvironmentSpec spec;
    spec.features.num_classes = j.at("num_classes").get<int>();
    spec.features.dims = j.at("dims").get<std::vector<int>>();
    spec.features.num_actions = j.at("num_actions").get<int>();
    spec.features.design = design_from_json(j.at("design"));
    spec.m_star = j.at("m_star").get<int>() - 1;
    const auto beta = j.at("beta_star").get<std::vector<double>>();
    spec.beta_star = Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    spec.tau = j.contains("tau") ? j.at("tau").get<double>() : default_tau(spec.features);
    spec.gamma = j.contains("gamma") ? j.at("gamma").get<double>() : default_gamma(spec.features);
    spec.validate();
    return spec;
}

}  // namespace modsel
