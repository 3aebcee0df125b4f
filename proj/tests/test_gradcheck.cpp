#include <catch_amalgamated.hpp>

#include <sstream>

#include "tpnet/experiment.hpp"
#include "tpnet/gradcheck.hpp"

using namespace tpnet;

TEST_CASE("default gradient check stays below 1e-5") {
    const auto r = run_gradient_check({});
    CHECK(r.cases.size() == 6);
    CHECK(r.trials == 120);
    for (const auto& c : r.cases) {
        CHECK(c.trials == 20);
        CHECK(c.max_rel_error < 1e-5);
    }
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("random instances respect the small-dimension limits") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto inst = random_gradcheck_instance(Architecture::bottleneck, StageMode::soft_ce, rng);
        CHECK(inst.params.state_dim <= 5);
        CHECK(inst.params.depth() <= 3);
        CHECK(inst.features.cols() <= 8);
        CHECK(inst.params.state_dim >= inst.smoothing.num_classes());
        CHECK(inst.smoothing.p_d() > 1.0 / inst.smoothing.num_classes());
    }
}

TEST_CASE("relu kink distance") {
    auto p = make_network(Architecture::plain, 1, 2, 0, Activation::relu, Activation::identity);
    p.layers[0].first = Matrix::Identity(2, 2);
    Matrix x(2, 1);
    x << 0.3, -2e-7;
    CHECK(min_relu_preactivation(p, x) == Catch::Approx(2e-7));
    auto t = make_network(Architecture::plain, 1, 2, 0, Activation::tanh, Activation::identity);
    CHECK(std::isinf(min_relu_preactivation(t, x)));
}

TEST_CASE("instances near relu kinks are resampled and counted") {
    GradCheckOptions o;
    o.trials = 5;
    o.kink_tolerance = 0.05;
    const auto r = run_gradient_check(o);
    CHECK(r.resampled > 0);
    CHECK(r.max_rel_error < 1e-5);

    // Resampling gives up eventually instead of looping forever.
    o.kink_tolerance = 100.0;
    o.max_resamples = 0;
    o.trials = 30;
    CHECK_THROWS_AS(run_gradient_check(o), NumericalError);
}

TEST_CASE("gradient check driver: pass, vacuous pass and failure") {
    std::ostringstream log;
    GradCheckOptions o;
    o.trials = 2;
    CHECK(run_gradcheck(o, log));
    CHECK(log.str().find("PASS") != std::string::npos);

    std::ostringstream empty;
    o.trials = 0;
    CHECK(run_gradcheck(o, empty));
    CHECK(empty.str().find("warning") != std::string::npos);

    // A huge finite-difference step makes the comparison fail.
    std::ostringstream bad;
    o.trials = 3;
    o.step = 0.5;
    CHECK_FALSE(run_gradcheck(o, bad));
    CHECK(bad.str().find("FAIL") != std::string::npos);

    o.trials = -1;
    CHECK_THROWS_AS(run_gradient_check(o), ValidationError);
}
