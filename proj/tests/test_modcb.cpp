#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "modsel/environment.hpp"
#include "modsel/modcb.hpp"

using namespace modsel;

namespace {

// Deterministic two-class stream with unit square-loss gap: every action
// shares the same features, the signal lives entirely in coordinate 2.
RoundSample scripted_sample(long t, int num_actions, int ambient) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(ambient);
    x[0] = 1.0;
    x[1] = (t % 2 == 1) ? 1.0 : -1.0;
    if (ambient >= 3) {
        static const double third[4] = {1.0, -1.0, -1.0, 1.0};
        x[2] = third[(t - 1) % 4];
    }
    RoundSample sample;
    sample.features.assign(num_actions, x);
    sample.loss = Eigen::VectorXd::Constant(num_actions, x[1]);
    return sample;
}

ModCBConfig scripted_config(int num_actions, long horizon, std::vector<int> dims, double c1,
                            double c2) {
    ModCBConfig cfg;
    cfg.dims = std::move(dims);
    cfg.params.tau = 1.0;
    cfg.params.gamma = 1.0;
    cfg.params.delta = 0.9;
    cfg.params.kappa = 1.0 / 3.0;
    cfg.params.c1 = c1;
    cfg.params.c2 = c2;
    cfg.params.num_actions = num_actions;
    cfg.params.num_classes = static_cast<int>(cfg.dims.size());
    cfg.params.horizon = horizon;
    cfg.policy_budget = 8;
    return cfg;
}

EnvironmentSpec small_env(int num_actions = 2) {
    NestedFeatureSpec features;
    features.num_classes = 2;
    features.dims = {2, 4};
    features.num_actions = num_actions;
    Eigen::VectorXd beta(4);
    beta << 0.3, 0.2, 0.6, 0.4;
    return make_environment(features, 1, beta, 0.2);
}

ModCBConfig env_config(const EnvironmentSpec& spec, long horizon, double c1, double c2) {
    ModCBConfig cfg;
    cfg.dims = spec.features.dims;
    cfg.params.tau = spec.tau;
    cfg.params.gamma = spec.gamma;
    cfg.params.delta = 0.1;
    cfg.params.kappa = 1.0 / 3.0;
    cfg.params.c1 = c1;
    cfg.params.c2 = c2;
    cfg.params.num_actions = spec.features.num_actions;
    cfg.params.num_classes = spec.features.num_classes;
    cfg.params.horizon = horizon;
    cfg.policy_budget = 16;
    return cfg;
}

}  // namespace

TEST_CASE("single class degenerates to the base learner plus exploration") {
    ModCBConfig cfg = scripted_config(2, 64, {3}, 1.0, 1.0);
    ModCB modcb(cfg);
    Rng rng(1);
    EnvironmentSpec spec;
    {
        NestedFeatureSpec features;
        features.num_classes = 1;
        features.dims = {3};
        features.num_actions = 2;
        Eigen::VectorXd beta(3);
        beta << 0.4, 0.3, 0.2;
        spec = make_environment(features, 0, beta, 0.1);
    }
    Rng env_rng(2);
    for (long t = 1; t <= 64; ++t) {
        const RoundSample sample = sample_round(spec, env_rng);
        const ModCBStepResult r = modcb.step(sample, rng);
        CHECK(r.class_index == 0);
        CHECK(r.gaps.empty());
        if (t == 1) CHECK(r.explored);  // mu_1 caps at one
    }
    CHECK(modcb.base().round() > 1);
}

TEST_CASE("round one always explores") {
    ModCBConfig cfg = scripted_config(3, 10, {1, 2}, 1.0, 1.0);
    for (unsigned seed = 0; seed < 20; ++seed) {
        ModCB modcb(cfg);
        Rng rng(seed);
        const ModCBStepResult r = modcb.step(scripted_sample(1, 3, 2), rng);
        CHECK(r.explored);
    }
}

TEST_CASE("scripted stream advances at the first eligible round") {
    // All rounds explore (K >= T), the stream carries unit gap, C1 is tiny, and
    // C2 places t_min at 6.
    const int k = 16;
    const long horizon = 16;
    ModCBConfig cfg = scripted_config(k, horizon, {1, 2}, 1e-6, 0.07);
    const long eligible = t_min(cfg.params, 2);
    REQUIRE(eligible == 6);

    ModCB modcb(cfg);
    Rng rng(7);
    for (long t = 1; t <= horizon; ++t) {
        const ModCBStepResult r = modcb.step(scripted_sample(t, k, 2), rng);
        REQUIRE(r.explored);  // mu_t = (K/t)^kappa >= 1 throughout
        if (t < eligible) {
            CHECK(r.class_index == 0);
            CHECK(r.gaps.empty());  // below t_min the test is silent
        }
        if (t == eligible) {
            REQUIRE(r.gaps.size() == 1);
            CHECK(r.gaps[0].value == Catch::Approx(1.0).epsilon(1e-9));
            CHECK(r.advanced);
            CHECK(r.class_index == 1);
            // Fresh base learner for the new class.
            CHECK(modcb.base().round() == 1);
            CHECK(modcb.base().config().dim == 2);
        }
    }
    // Exploration data is retained across the advance.
    CHECK(modcb.explore_set().size() == static_cast<std::size_t>(horizon));
    CHECK(modcb.explore_buffer(1).size() == static_cast<std::size_t>(horizon));
}

TEST_CASE("an enormous C1 blocks every advance") {
    const int k = 16;
    ModCBConfig cfg = scripted_config(k, 16, {1, 2}, 1e9, 0.07);
    ModCB modcb(cfg);
    Rng rng(8);
    for (long t = 1; t <= 16; ++t) {
        const ModCBStepResult r = modcb.step(scripted_sample(t, k, 2), rng);
        CHECK(r.class_index == 0);
        CHECK_FALSE(r.advanced);
    }
}

TEST_CASE("simultaneous qualifiers pick the smallest class") {
    // Three classes, gap visible from both larger ones; the stride delays the
    // first test until both are past t_min, and the advance lands on class 2.
    const int k = 15;
    ModCBConfig cfg = scripted_config(k, 15, {1, 2, 3}, 1e-6, 0.04);
    cfg.test_every = 5;
    REQUIRE(t_min(cfg.params, 2) <= 5);
    REQUIRE(t_min(cfg.params, 3) <= 5);

    ModCB modcb(cfg);
    Rng rng(9);
    for (long t = 1; t <= 15; ++t) {
        const ModCBStepResult r = modcb.step(scripted_sample(t, k, 3), rng);
        if (t < 5) {
            CHECK(r.gaps.empty());  // stride suppresses the test entirely
            CHECK(r.class_index == 0);
        }
        if (t == 5) {
            REQUIRE(r.gaps.size() == 2);
            CHECK(r.gaps[0].value >= 2.0 * r.gaps[0].threshold);
            CHECK(r.gaps[1].value >= 2.0 * r.gaps[1].threshold);
            CHECK(r.class_index == 1);  // smallest qualifying class wins
        }
    }
}

TEST_CASE("fast gap estimate matches the from-scratch estimator") {
    EnvironmentSpec spec = small_env();
    ModCBConfig cfg = env_config(spec, 400, 1e6, 0.001);  // C1 huge: never advance
    ModCB modcb(cfg);
    REQUIRE(t_min(cfg.params, 4) < 40);

    Rng rng(10), env_rng(11);
    int compared = 0;
    for (long t = 1; t <= 400; ++t) {
        const ModCBStepResult r = modcb.step(sample_round(spec, env_rng), rng);
        if (t % 25 == 0 && !r.gaps.empty()) {
            for (const GapEstimate& g : r.gaps) {
                const double reference = modcb.reference_gap_estimate(g.class_index);
                const double scale = std::max({std::abs(reference), std::abs(g.value), 1e-6});
                CHECK(std::abs(g.value - reference) / scale < 1e-6);
                ++compared;
            }
        }
    }
    CHECK(compared >= 10);
}

TEST_CASE("accumulators match a from-scratch recomputation") {
    EnvironmentSpec spec = small_env();
    ModCBConfig cfg = env_config(spec, 200, 1e6, 1.0);
    ModCB modcb(cfg);

    Rng rng(12), env_rng(13);
    Eigen::MatrixXd scratch = Eigen::MatrixXd::Zero(4, 4);
    std::vector<LabeledSample> scratch_buffer;
    for (long t = 1; t <= 200; ++t) {
        const RoundSample sample = sample_round(spec, env_rng);
        const ModCBStepResult r = modcb.step(sample, rng);
        for (int a = 0; a < 2; ++a) {
            scratch += 0.5 * sample.features[a] * sample.features[a].transpose();
        }
        if (r.explored) scratch_buffer.push_back({sample.features[r.action], sample.loss[r.action]});
    }
    CHECK(modcb.second_moment(1).data().isApprox(scratch / 200.0, 1e-12));
    const auto buffer = modcb.explore_buffer(1);
    REQUIRE(buffer.size() == scratch_buffer.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        CHECK(buffer[i].x == scratch_buffer[i].x);
        CHECK(buffer[i].y == scratch_buffer[i].y);
    }
}

TEST_CASE("expected exploration count formula and concentration") {
    ModCBConfig cfg = scripted_config(4, 2000, {1, 2}, 1e9, 1.0);
    const AlgorithmParams& p = cfg.params;

    double expected = 0.0;
    for (long s = 1; s <= 2000; ++s) {
        expected += std::min(std::pow(4.0 / s, p.kappa), 1.0);
    }
    CHECK(expected_exploration_count(p, 2000) == Catch::Approx(expected));

    double variance = 0.0;
    for (long s = 1; s <= 2000; ++s) {
        const double mu = exploration_probability(p, s);
        variance += mu * (1.0 - mu);
    }
    const double sd = std::sqrt(variance);

    EnvironmentSpec spec = small_env(4);
    for (unsigned seed = 0; seed < 12; ++seed) {
        ModCB modcb(cfg);
        Rng rng(seed), env_rng(seed + 100);
        for (long t = 1; t <= 2000; ++t) modcb.step(sample_round(spec, env_rng), rng);
        const double count = static_cast<double>(modcb.explore_set().size());
        CHECK(std::abs(count - expected) <= 4.0 * sd);
    }
}

TEST_CASE("snapshot round-trips at round zero") {
    ModCBConfig cfg = scripted_config(2, 32, {1, 2}, 1.0, 1.0);
    ModCB modcb(cfg);
    const nlohmann::json snap = modcb.snapshot();
    ModCB restored = ModCB::from_snapshot(snap);
    CHECK(restored.snapshot() == snap);
}

TEST_CASE("snapshot restore replays identically mid-run") {
    EnvironmentSpec spec = small_env();
    ModCBConfig cfg = env_config(spec, 300, 2.0, 0.001);
    ModCB modcb(cfg);

    Rng rng(21), env_rng(22);
    for (long t = 1; t <= 150; ++t) modcb.step(sample_round(spec, env_rng), rng);

    ModCB restored = ModCB::from_snapshot(modcb.snapshot());
    const std::string rng_state = rng.save_state();
    Rng rng_a(0), rng_b(0);
    rng_a.restore_state(rng_state);
    rng_b.restore_state(rng_state);
    Rng env_a(33), env_b(33);

    for (long t = 151; t <= 300; ++t) {
        const RoundSample sa = sample_round(spec, env_a);
        const RoundSample sb = sample_round(spec, env_b);
        const ModCBStepResult ra = modcb.step(sa, rng_a);
        const ModCBStepResult rb = restored.step(sb, rng_b);
        REQUIRE(ra.action == rb.action);
        REQUIRE(ra.explored == rb.explored);
        REQUIRE(ra.class_index == rb.class_index);
        REQUIRE(ra.gaps.size() == rb.gaps.size());
        for (std::size_t i = 0; i < ra.gaps.size(); ++i) {
            REQUIRE(ra.gaps[i].value == rb.gaps[i].value);
        }
    }
}

TEST_CASE("preprocess_maps keeps the largest map per scale") {
    const MapSelection sel = preprocess_maps({2, 5, 9, 20}, 1000);
    CHECK(sel.dims == std::vector<int>{2, 5, 20});
    CHECK(sel.indices == std::vector<int>{0, 1, 3});

    const MapSelection single = preprocess_maps({7}, 1000);
    CHECK(single.dims == std::vector<int>{7});

    // Output length is at most ceil(log T) and ends at the largest admissible dim.
    const MapSelection wide = preprocess_maps({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, 50);
    CHECK(wide.dims.size() <= static_cast<std::size_t>(std::ceil(std::log(50.0))));
    CHECK(wide.dims.back() <= std::exp(std::ceil(std::log(50.0))));
    CHECK(wide.dims.back() == 12);
}

TEST_CASE("concat_non_nested produces prefix sums") {
    CHECK(concat_non_nested({5}) == std::vector<int>{5});
    CHECK(concat_non_nested({2, 3}) == std::vector<int>{2, 5});

    // Dimension of the class containing map m is at most d_m * m.
    const std::vector<int> dims = {3, 3, 4, 7};
    const std::vector<int> nested = concat_non_nested(dims);
    for (std::size_t m = 0; m < dims.size(); ++m) {
        CHECK(nested[m] <= dims[m] * static_cast<int>(m + 1));
    }
    int prev = 0;
    for (int d : nested) {
        CHECK(d > prev);
        prev = d;
    }

    CHECK_THROWS_AS(concat_non_nested({3, 2}), std::invalid_argument);
}
