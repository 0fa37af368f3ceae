#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "modsel/environment.hpp"

using namespace modsel;

namespace {

EnvironmentSpec two_class_spec() {
    NestedFeatureSpec features;
    features.num_classes = 2;
    features.dims = {1, 2};
    features.num_actions = 2;
    Eigen::VectorXd beta(2);
    beta << 0.5, 1.0 / std::sqrt(2.0);
    EnvironmentSpec spec = make_environment(features, 1, beta, 0.1);
    return spec;
}

}  // namespace

TEST_CASE("standard normal moment constant") {
    // sup over p of p^{-1/2} (E|z|^p)^{1/p}; scan a grid and confirm p = 1 wins.
    auto moment = [](double p) {
        // E|z|^p = 2^{p/2} Gamma((p+1)/2) / sqrt(pi)
        const double log_m =
            0.5 * p * std::log(2.0) + std::lgamma(0.5 * (p + 1.0)) - 0.5 * std::log(M_PI);
        return std::exp(log_m / p) / std::sqrt(p);
    };
    double best = 0.0;
    for (double p = 1.0; p <= 60.0; p += 0.25) best = std::max(best, moment(p));
    CHECK(best == Catch::Approx(kStandardNormalTau).epsilon(1e-9));
    CHECK(moment(1.0) == Catch::Approx(std::sqrt(2.0 / M_PI)).epsilon(1e-12));
}

TEST_CASE("noiseless losses equal the linear mean exactly") {
    NestedFeatureSpec features;
    features.num_classes = 1;
    features.dims = {1};
    features.num_actions = 3;
    Eigen::VectorXd beta(1);
    beta << 1.0;
    EnvironmentSpec spec = make_environment(features, 0, beta, 0.0);

    Rng rng(1);
    for (int round = 0; round < 50; ++round) {
        const RoundSample sample = sample_round(spec, rng);
        for (int a = 0; a < 3; ++a) {
            CHECK(sample.loss[a] == sample.features[a][0]);
            CHECK(sample.loss[a] == true_expected_loss(spec, sample, a));
        }
    }
}

TEST_CASE("loss noise is centered on the conditional mean") {
    EnvironmentSpec spec = two_class_spec();
    Rng rng(2);
    const ActionFeatures features = sample_features(spec, rng);
    const long n = 100000;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
    for (long i = 0; i < n; ++i) mean += sample_losses(spec, features, rng);
    mean /= static_cast<double>(n);
    const double tol = 3.0 * spec.noise_sigma / std::sqrt(static_cast<double>(n));
    for (int a = 0; a < 2; ++a) {
        const double target = spec.beta_star.dot(features[a].head(2));
        CHECK(std::abs(mean[a] - target) < tol);
    }
}

TEST_CASE("empirical second moment matches the isotropic design") {
    NestedFeatureSpec features;
    features.num_classes = 1;
    features.dims = {5};
    features.num_actions = 2;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(5);
    beta[0] = 0.5;
    EnvironmentSpec spec = make_environment(features, 0, beta, 0.0);

    Rng rng(3);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(5, 5);
    const long n = 100000;
    for (long i = 0; i < n; ++i) {
        const ActionFeatures phi = sample_features(spec, rng);
        for (const auto& v : phi) sum += v * v.transpose() / 2.0;
    }
    sum /= static_cast<double>(n);
    const Eigen::MatrixXd err = sum - Eigen::MatrixXd::Identity(5, 5);
    CHECK(err.operatorNorm() < 0.05);
}

TEST_CASE("true_expected_loss evaluates the inner product") {
    EnvironmentSpec spec = two_class_spec();
    RoundSample sample;
    sample.features = {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
    sample.features[0] << 2.0, 0.0;
    sample.features[1] << 0.0, 1.0;
    sample.loss = Eigen::VectorXd::Zero(2);

    CHECK(true_expected_loss(spec, sample, 0) == Catch::Approx(1.0));
    CHECK(true_expected_loss(spec, sample, 1) == Catch::Approx(1.0 / std::sqrt(2.0)));
    CHECK_THROWS_AS(true_expected_loss(spec, sample, 2), std::out_of_range);

    // Orthogonal direction contributes nothing.
    NestedFeatureSpec f1;
    f1.num_classes = 1;
    f1.dims = {2};
    f1.num_actions = 2;
    Eigen::VectorXd e1(2);
    e1 << 1.0, 0.0;
    EnvironmentSpec ortho = make_environment(f1, 0, e1, 0.0);
    RoundSample s2;
    s2.features = {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
    s2.features[0] << 0.0, 1.0;
    CHECK(true_expected_loss(ortho, s2, 0) == 0.0);
}

TEST_CASE("optimal_action takes the argmin with lowest-index ties") {
    NestedFeatureSpec features;
    features.num_classes = 1;
    features.dims = {1};
    features.num_actions = 4;
    Eigen::VectorXd beta(1);
    beta << 1.0;
    EnvironmentSpec spec = make_environment(features, 0, beta, 0.0);

    auto sample_with_means = [](std::initializer_list<double> means) {
        RoundSample s;
        for (double m : means) {
            Eigen::VectorXd v(1);
            v << m;
            s.features.push_back(v);
        }
        return s;
    };

    {
        NestedFeatureSpec f2 = features;
        f2.num_actions = 2;
        EnvironmentSpec spec2 = make_environment(f2, 0, beta, 0.0);
        CHECK(optimal_action(spec2, sample_with_means({0.2, -0.1})) == 1);
    }
    CHECK(optimal_action(spec, sample_with_means({0.7, 0.7, 0.7, 0.7})) == 0);
    CHECK(optimal_action(spec, sample_with_means({1.0, 0.0, -3.0, 5.0})) == 2);
}

TEST_CASE("population second moments follow the declared spectrum") {
    EnvironmentSpec spec = two_class_spec();
    CHECK(population_second_moment(spec, 1).data().isApprox(Eigen::MatrixXd::Identity(2, 2)));

    NestedFeatureSpec corr;
    corr.num_classes = 2;
    corr.dims = {1, 2};
    corr.num_actions = 2;
    corr.design = {DesignKind::CorrelatedGaussian, 4.0};
    Eigen::VectorXd beta(1);
    beta << 0.5;
    EnvironmentSpec cspec = make_environment(corr, 0, beta, 0.0);
    const SymMatrix sigma = population_second_moment(cspec, 1);
    CHECK(sigma(0, 0) == Catch::Approx(1.0));
    CHECK(sigma(1, 1) == Catch::Approx(0.25));
    CHECK(sigma(0, 1) == 0.0);
    CHECK(cspec.gamma == Catch::Approx(0.5));

    // Nested truncation: the smaller moment is the top-left block of the larger.
    const SymMatrix small = population_second_moment(cspec, 0);
    CHECK(small.data().isApprox(sigma.data().topLeftCorner(1, 1)));
}

TEST_CASE("population_beta equals the zero-padded truth at and above m_star") {
    NestedFeatureSpec features;
    features.num_classes = 3;
    features.dims = {1, 2, 4};
    features.num_actions = 2;
    Eigen::VectorXd beta(2);
    beta << 0.5, 0.6;
    EnvironmentSpec spec = make_environment(features, 1, beta, 0.1);

    const Eigen::VectorXd b2 = population_beta(spec, 2);
    REQUIRE(b2.size() == 4);
    CHECK(b2[0] == 0.5);
    CHECK(b2[1] == 0.6);
    CHECK(b2[2] == 0.0);
    CHECK(b2[3] == 0.0);
}

TEST_CASE("population_beta below m_star is the coordinate truncation for diagonal designs") {
    NestedFeatureSpec features;
    features.num_classes = 2;
    features.dims = {1, 2};
    features.num_actions = 2;
    Eigen::VectorXd beta(2);
    beta << 0.5, 0.6;
    for (Design design : {Design{DesignKind::IsotropicGaussian, 1.0},
                          Design{DesignKind::CorrelatedGaussian, 9.0}}) {
        features.design = design;
        EnvironmentSpec spec = make_environment(features, 1, beta, 0.1);
        const Eigen::VectorXd b1 = population_beta(spec, 0);
        REQUIRE(b1.size() == 1);
        CHECK(b1[0] == Catch::Approx(0.5).margin(1e-12));
    }
}

TEST_CASE("population_beta agrees with a brute-force regression") {
    NestedFeatureSpec features;
    features.num_classes = 2;
    features.dims = {2, 4};
    features.num_actions = 3;
    Eigen::VectorXd beta(4);
    beta << 0.4, -0.3, 0.5, 0.2;
    EnvironmentSpec spec = make_environment(features, 1, beta, 0.2);

    Rng rng(9);
    const long n = 100000;
    for (int m = 0; m < 2; ++m) {
        const int d = spec.features.dims[m];
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
        Eigen::VectorXd xy = Eigen::VectorXd::Zero(d);
        for (long i = 0; i < n; ++i) {
            const RoundSample sample = sample_round(spec, rng);
            const int a = rng.uniform_int(3);
            const Eigen::VectorXd x = sample.features[a].head(d);
            gram += x * x.transpose();
            xy += x * sample.loss[a];
        }
        const Eigen::VectorXd fitted = gram.ldlt().solve(xy);
        CHECK((fitted - population_beta(spec, m)).norm() < 0.02);
    }
}

TEST_CASE("population_gap closed form") {
    NestedFeatureSpec features;
    features.num_classes = 2;
    features.dims = {1, 2};
    features.num_actions = 2;
    Eigen::VectorXd beta(2);
    beta << 0.5, 1.0 / std::sqrt(2.0);
    EnvironmentSpec spec = make_environment(features, 1, beta, 0.0);

    // Gap between the classes is the truncated signal mass.
    CHECK(population_gap(spec, 0, 1) == Catch::Approx(0.5));
    CHECK(population_gap(spec, 1, 0) == Catch::Approx(0.5));
    CHECK(population_gap(spec, 1, 1) == 0.0);
    CHECK(population_gap(spec, 0, 0) == 0.0);
}

TEST_CASE("population_gap vanishes at and above m_star and ignores the larger index") {
    NestedFeatureSpec features;
    features.num_classes = 3;
    features.dims = {2, 3, 6};
    features.num_actions = 2;
    Eigen::VectorXd beta(3);
    beta << 0.3, 0.2, 0.7;
    EnvironmentSpec spec = make_environment(features, 1, beta, 0.1);

    CHECK(population_gap(spec, 1, 2) == 0.0);
    CHECK(population_gap(spec, 2, 1) == 0.0);
    CHECK(population_gap(spec, 0, 1) == Catch::Approx(population_gap(spec, 0, 2)));
    CHECK(population_gap(spec, 0, 1) >= 0.0);
}

TEST_CASE("policy gap Monte Carlo") {
    NestedFeatureSpec features;
    features.num_classes = 3;
    features.dims = {1, 3, 5};
    features.num_actions = 2;
    Eigen::VectorXd beta(3);
    beta << 0.4, 0.5, -0.3;
    EnvironmentSpec spec = make_environment(features, 1, beta, 0.1);
    Rng rng(17);

    const MonteCarloGap same = policy_gap_monte_carlo(spec, 1, 1, 1000, rng);
    CHECK(same.estimate == 0.0);
    CHECK(same.std_error == 0.0);

    const MonteCarloGap above = policy_gap_monte_carlo(spec, 2, 1, 20000, rng);
    CHECK(std::abs(above.estimate) <= 3.0 * above.std_error + 1e-12);

    const MonteCarloGap gap = policy_gap_monte_carlo(spec, 0, 1, 20000, rng);
    const double bound = std::sqrt(4.0 * 2 * population_gap(spec, 0, 1));
    CHECK(gap.estimate <= bound + 3.0 * gap.std_error);

    CHECK_THROWS_AS(policy_gap_monte_carlo(spec, 0, 1, 10, rng), std::invalid_argument);
}

TEST_CASE("nested truncation reproduces class predictions") {
    NestedFeatureSpec features;
    features.num_classes = 3;
    features.dims = {2, 4, 7};
    features.num_actions = 2;
    Eigen::VectorXd beta(4);
    beta << 0.1, 0.2, 0.3, 0.4;
    EnvironmentSpec spec = make_environment(features, 1, beta, 0.0);

    Rng rng(23);
    const RoundSample sample = sample_round(spec, rng);
    for (int m = 0; m < 3; ++m) {
        const Eigen::VectorXd bm = population_beta(spec, m);
        const Eigen::VectorXd padded = pad_to_ambient(spec, bm);
        for (int a = 0; a < 2; ++a) {
            const double direct = bm.dot(sample.features[a].head(bm.size()));
            const double via_padding = padded.dot(sample.features[a]);
            CHECK(direct == Catch::Approx(via_padding).margin(1e-12));
        }
    }
}

TEST_CASE("identical seeds give identical streams") {
    EnvironmentSpec spec = two_class_spec();
    Rng a(99), b(99);
    for (int i = 0; i < 200; ++i) {
        const RoundSample sa = sample_round(spec, a);
        const RoundSample sb = sample_round(spec, b);
        REQUIRE(sa.loss == sb.loss);
        for (int act = 0; act < 2; ++act) REQUIRE(sa.features[act] == sb.features[act]);
    }
}

TEST_CASE("environment JSON round-trip") {
    EnvironmentSpec spec = two_class_spec();
    const nlohmann::json j = to_json(spec);
    CHECK(j.at("m_star") == 2);  // 1-based on disk
    const EnvironmentSpec back = environment_from_json(j);
    CHECK(back.m_star == spec.m_star);
    CHECK(back.features.dims == spec.features.dims);
    CHECK(back.beta_star == spec.beta_star);
    CHECK(back.noise_sigma == spec.noise_sigma);
    CHECK(back.tau == spec.tau);
    CHECK(back.gamma == spec.gamma);

    Rng r1(5), r2(5);
    const RoundSample s1 = sample_round(spec, r1);
    const RoundSample s2 = sample_round(back, r2);
    CHECK(s1.loss == s2.loss);
}

TEST_CASE("environment validation catches bad specs") {
    NestedFeatureSpec features;
    features.num_classes = 2;
    features.dims = {2, 2};  // not strictly increasing
    features.num_actions = 2;
    Eigen::VectorXd beta(2);
    beta << 0.5, 0.5;
    CHECK_THROWS_AS(make_environment(features, 0, beta, 0.0), std::invalid_argument);

    features.dims = {1, 2};
    Eigen::VectorXd big(2);
    big << 2.0, 2.0;  // norm > 1
    CHECK_THROWS_AS(make_environment(features, 1, big, 0.0), std::invalid_argument);

    Eigen::VectorXd no_tail(2);
    no_tail << 0.7, 0.0;  // m_star = 1 but no mass beyond dims[0]
    CHECK_THROWS_AS(make_environment(features, 1, no_tail, 0.0), std::invalid_argument);

    Eigen::VectorXd ok(2);
    ok << 0.5, 0.5;
    CHECK_THROWS_AS(make_environment(features, 1, ok, 5.0), std::invalid_argument);  // sigma > tau
}
