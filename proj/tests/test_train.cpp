#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "tpnet/data.hpp"
#include "tpnet/train.hpp"

using namespace tpnet;

namespace {

NetworkParams random_network(Architecture arch, int depth, int n, int h, std::uint64_t seed,
                             double scale = 0.5) {
    auto p = make_network(arch, depth, n, h, Activation::tanh, Activation::identity);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    for (auto& l : p.layers) {
        l.zip(l, [&](auto& a, auto&) { a = a.unaryExpr([&](double) { return normal(rng); }); });
    }
    return p;
}

Dataset random_dataset(int n, int samples, int classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset ds;
    ds.num_classes = classes;
    ds.features = Matrix::NullaryExpr(n, samples, [&]() { return normal(rng); });
    for (int i = 0; i < samples; ++i) ds.labels.push_back(i % classes);
    return ds;
}

// Straight-line objective: plain per-sample loops over the trajectory with the
// per-sample loss definitions written out again here.
double oracle_objective(const NetworkParams& p, const Dataset& ds, const ObjectiveSpec& spec,
                        const SmoothingSpec& s) {
    const int c = s.num_classes();
    auto soft = [&](const Vector& x, int y) {
        const Vector t = soft_targets(y, s);
        const double m = x.head(c).maxCoeff();
        const double lse = m + std::log((x.head(c).array() - m).exp().sum());
        double v = 0.0;
        for (int i = 0; i < c; ++i) v += t[i] * (std::log(t[i]) - (x[i] - lse));
        return v;
    };
    auto hard = [&](const Vector& x, int y) {
        const double m = x.head(c).maxCoeff();
        return m + std::log((x.head(c).array() - m).exp().sum()) - x[y];
    };
    const auto traj = forward_ensemble(p, ds.features);
    const double d = static_cast<double>(ds.size());
    double value = 0.0;
    for (int k = 0; k < p.depth(); ++k) {
        double stage = 0.0;
        for (Eigen::Index i = 0; i < ds.size(); ++i) {
            const Vector x = traj.states[k].col(i);
            const int y = ds.labels[static_cast<std::size_t>(i)];
            if (spec.stage_mode == StageMode::soft_ce) stage += soft(x, y);
            if (spec.stage_mode == StageMode::hard_ce) stage += hard(x, y);
        }
        value += stage / d + spec.objective_penalty() * p.layers[k].squared_norm();
    }
    double terminal = 0.0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const Vector x = traj.states.back().col(i);
        const int y = ds.labels[static_cast<std::size_t>(i)];
        terminal += spec.hard_terminal() ? hard(x, y) : soft(x, y);
    }
    return value + spec.gamma * terminal / d;
}

} // namespace

TEST_CASE("objective vanishes at minimizer lines with zero parameters") {
    const SmoothingSpec s(3, 0.8);
    const auto p = make_network(Architecture::plain, 4, 3, 0, Activation::tanh, Activation::identity);
    Dataset ds;
    ds.num_classes = 3;
    ds.features.resize(3, 3);
    for (int y = 0; y < 3; ++y) {
        ds.features.col(y) = minimizer_line(y, s).base_point + Vector::Constant(3, 0.7 * y);
        ds.labels.push_back(y);
    }
    ObjectiveSpec spec;
    spec.gamma = 1.0;
    spec.stage_mode = StageMode::none;
    const auto ev = objective(p, ds.features, ds.labels, spec, s);
    CHECK(std::abs(ev.value) < 1e-14);
    spec.stage_mode = StageMode::soft_ce;
    CHECK(std::abs(objective(p, ds.features, ds.labels, spec, s).value) < 1e-13);
}

TEST_CASE("pure penalty objective equals the squared parameter norm") {
    const SmoothingSpec s(2, 0.95);
    const auto p = random_network(Architecture::bottleneck, 3, 2, 4, 1);
    const auto ds = random_dataset(2, 5, 2, 2);
    ObjectiveSpec spec;
    spec.gamma = 0.0;
    spec.reg_r = 1.0;
    spec.stage_mode = StageMode::none;
    const auto ev = objective(p, ds.features, ds.labels, spec, s);
    double expected = 0.0;
    for (const auto& l : p.layers) expected += l.squared_norm();
    CHECK(ev.value == expected);
}

TEST_CASE("objective matches a straight-line re-evaluation") {
    for (StageMode mode : {StageMode::none, StageMode::soft_ce, StageMode::hard_ce}) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const SmoothingSpec s(3, 0.7);
            const auto p = random_network(seed % 2 ? Architecture::plain : Architecture::bottleneck,
                                          3, 4, 3, seed);
            const auto ds = random_dataset(4, 7, 3, seed + 100);
            ObjectiveSpec spec;
            spec.gamma = 2.5;
            spec.reg_r = 0.01;
            spec.stage_mode = mode;
            const double v = objective(p, ds.features, ds.labels, spec, s).value;
            const double oracle = oracle_objective(p, ds, spec, s);
            CHECK(std::abs(v - oracle) <= 1e-12 * std::max(1.0, std::abs(oracle)));
            // Chunked accumulation agrees for every chunk size.
            for (Eigen::Index chunk : {1, 3, 7, 256}) {
                const auto sum = objective_chunked(p, ds.features, ds.labels, spec, s, nullptr, chunk);
                CHECK(std::abs(sum.value - oracle) <= 1e-12 * std::max(1.0, std::abs(oracle)));
            }
        }
    }
}

TEST_CASE("terminal loss family follows the stage mode unless set explicitly") {
    ObjectiveSpec spec;
    spec.stage_mode = StageMode::none;
    CHECK_FALSE(spec.hard_terminal());
    spec.stage_mode = StageMode::soft_ce;
    CHECK_FALSE(spec.hard_terminal());
    spec.stage_mode = StageMode::hard_ce;
    CHECK(spec.hard_terminal());
    spec.terminal = TerminalLoss::soft_ce;
    CHECK_FALSE(spec.hard_terminal());
    spec.stage_mode = StageMode::none;
    spec.terminal = TerminalLoss::hard_ce;
    CHECK(spec.hard_terminal());
    for (TerminalLoss t : {TerminalLoss::automatic, TerminalLoss::soft_ce, TerminalLoss::hard_ce}) {
        CHECK(parse_terminal_loss(to_string(t)) == t);
    }
    for (StageMode m : {StageMode::none, StageMode::soft_ce, StageMode::hard_ce}) {
        CHECK(parse_stage_mode(to_string(m)) == m);
    }
    for (PenaltyMode m : {PenaltyMode::objective_term, PenaltyMode::optimizer_decay}) {
        CHECK(parse_penalty_mode(to_string(m)) == m);
    }
}

TEST_CASE("objective gradient matches finite differences in every stage mode") {
    for (StageMode mode : {StageMode::none, StageMode::soft_ce, StageMode::hard_ce}) {
        for (Architecture arch : {Architecture::plain, Architecture::bottleneck}) {
            const SmoothingSpec s(2, 0.9);
            const auto p = random_network(arch, 3, 3, 2, 7);
            const auto ds = random_dataset(3, 4, 2, 8);
            ObjectiveSpec spec;
            spec.gamma = 3.0;
            spec.reg_r = 0.05;
            spec.stage_mode = mode;
            const auto ev = objective(p, ds.features, ds.labels, spec, s);
            const Vector analytic = flatten(objective_gradient(p, ev));

            ParamGradient chunked;
            objective_chunked(p, ds.features, ds.labels, spec, s, &chunked, 3);
            CHECK((flatten(chunked) - analytic).norm() <= 1e-12 * analytic.norm());

            Vector theta = flatten(p);
            Vector fd(theta.size());
            NetworkParams q = p;
            const double h = 1e-6;
            for (Eigen::Index i = 0; i < theta.size(); ++i) {
                const double saved = theta[i];
                theta[i] = saved + h;
                unflatten(theta, q);
                const double up = objective(q, ds.features, ds.labels, spec, s).value;
                theta[i] = saved - h;
                unflatten(theta, q);
                const double down = objective(q, ds.features, ds.labels, spec, s).value;
                theta[i] = saved;
                fd[i] = (up - down) / (2 * h);
            }
            CHECK((analytic - fd).norm() / analytic.norm() < 1e-5);
        }
    }
}

TEST_CASE("objective rejects invalid input with the offending term") {
    const SmoothingSpec s(2, 0.95);
    auto p = make_network(Architecture::plain, 2, 2, 0, Activation::identity, Activation::identity);
    const auto ds = random_dataset(2, 3, 2, 1);
    ObjectiveSpec spec;
    spec.gamma = -1.0;
    CHECK_THROWS_AS(objective(p, ds.features, ds.labels, spec, s), ValidationError);
    spec.gamma = 1.0;
    CHECK_THROWS_AS(objective(p, ds.features, {0, 1, 2}, spec, s), ValidationError);
    spec.reg_r = 1e300;
    p.layers[1].first_bias.setConstant(1e200);
    try {
        (void)objective(p, ds.features, ds.labels, spec, s);
        FAIL("expected a throw");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("penalty at layer 1") != std::string::npos);
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    auto p = random_network(Architecture::plain, 2, 2, 0, 3);
    const Vector before = flatten(p);
    OptimizerState opt(p, {0.1});
    adam_step(opt, p, p.zeros_like());
    adam_step(opt, p, p.zeros_like());
    CHECK((flatten(p).array() == before.array()).all());
    CHECK(opt.step == 2);
}

TEST_CASE("adam: first step with unit gradient moves by about lr") {
    auto p = make_network(Architecture::plain, 1, 1, 0, Activation::identity, Activation::identity);
    p.layers[0].first(0, 0) = 0.5;
    auto g = p.zeros_like();
    g.layers[0].first(0, 0) = 1.0;
    OptimizerState opt(p, {0.1});
    adam_step(opt, p, g);
    // m_hat = 1, v_hat = 1: the step is lr / (1 + eps).
    CHECK(p.layers[0].first(0, 0) == Catch::Approx(0.5 - 0.1 / (1.0 + 1e-8)).margin(1e-15));
    CHECK(p.layers[0].first_bias(0) == 0.0);
}

TEST_CASE("adam: two steps follow the moment recurrences") {
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = -0.3, x0 = 1.2;
    auto p = make_network(Architecture::plain, 1, 1, 0, Activation::identity, Activation::identity);
    p.layers[0].first(0, 0) = x0;
    auto grad = p.zeros_like();
    grad.layers[0].first(0, 0) = g;
    OptimizerState opt(p, {lr});
    adam_step(opt, p, grad);
    adam_step(opt, p, grad);

    double x = x0, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    CHECK(std::abs(p.layers[0].first(0, 0) - x) < 1e-12);
    CHECK(std::abs(opt.first_moment.layers[0].first(0, 0) - m) < 1e-15);
    CHECK(std::abs(opt.second_moment.layers[0].first(0, 0) - v) < 1e-15);
}

TEST_CASE("adam: decoupled decay shrinks after the update") {
    auto p = make_network(Architecture::plain, 1, 1, 0, Activation::identity, Activation::identity);
    p.layers[0].first(0, 0) = 2.0;
    p.layers[0].first_bias(0) = 1.0;
    OptimizerState opt(p, {0.1});
    adam_step(opt, p, p.zeros_like(), 0.5, false);
    CHECK(p.layers[0].first(0, 0) == Catch::Approx(2.0 * 0.95).margin(1e-15));
    CHECK(p.layers[0].first_bias(0) == 1.0);
    adam_step(opt, p, p.zeros_like(), 0.5, true);
    CHECK(p.layers[0].first_bias(0) == Catch::Approx(0.95).margin(1e-15));
}

TEST_CASE("accuracy examples") {
    const SmoothingSpec s(3, 0.8);
    const auto p = make_network(Architecture::plain, 0, 3, 0, Activation::tanh, Activation::identity);
    Dataset ds;
    ds.num_classes = 3;
    ds.features.resize(3, 3);
    for (int y = 0; y < 3; ++y) {
        ds.features.col(y) = minimizer_line(y, s).base_point;
        ds.labels.push_back(y);
    }
    CHECK(accuracy(p, ds) == 1.0);

    Dataset tie;
    tie.num_classes = 3;
    tie.features = Matrix::Constant(3, 1, 0.25);
    tie.labels = {0};
    CHECK(accuracy(p, tie) == 1.0);
    tie.labels = {1};
    CHECK(accuracy(p, tie) == 0.0);
}

TEST_CASE("accuracy is per-sample: permuting samples and labels together leaves it unchanged") {
    const auto p = random_network(Architecture::bottleneck, 2, 4, 3, 9);
    auto ds = random_dataset(4, 40, 3, 10);
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> label(0, 2);
    for (auto& y : ds.labels) y = label(rng);
    const Matrix terminal = forward_terminal(p, ds.features);
    int correct = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        Eigen::Index arg;
        terminal.col(i).head(3).maxCoeff(&arg);
        correct += arg == ds.labels[static_cast<std::size_t>(i)];
    }
    const double a = accuracy(p, ds, 7);
    CHECK(a == correct / 40.0);

    std::vector<int> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Dataset shuffled = ds;
    for (int i = 0; i < 40; ++i) {
        shuffled.features.col(i) = ds.features.col(perm[i]);
        shuffled.labels[i] = ds.labels[perm[i]];
    }
    CHECK(accuracy(p, shuffled) == a);
}

TEST_CASE("fit: zero epochs returns the input parameters") {
    const SmoothingSpec s(2, 0.95);
    const auto p = random_network(Architecture::bottleneck, 2, 2, 3, 12);
    const auto ds = random_dataset(2, 10, 2, 13);
    TrainOptions o;
    const auto r = fit(p, ds, s, o);
    CHECK(r.history.empty());
    CHECK((flatten(r.params).array() == flatten(p).array()).all());
}

TEST_CASE("fit: deterministic per seed, history matches epochs") {
    const SmoothingSpec s(2, 0.95);
    auto p = make_network(Architecture::bottleneck, 4, 2, 4, Activation::tanh, Activation::identity);
    initialize_uniform(p, 3);
    SpiralOptions so;
    so.n_per_class = 20;
    const auto ds = two_spirals(so);
    TrainOptions o;
    o.objective = {3.0, 0.005, StageMode::soft_ce};
    o.adam.learning_rate = 0.01;
    o.epochs = 15;
    o.batch_size = 8;
    o.seed = 4;
    const auto a = fit(p, ds, s, o);
    const auto b = fit(p, ds, s, o);
    REQUIRE(a.history.size() == 15);
    std::ostringstream ha, hb;
    write_history_csv(ha, a.history);
    write_history_csv(hb, b.history);
    CHECK(ha.str() == hb.str());
    CHECK(ha.str().rfind("epoch,objective,terminal_loss,mean_stage_cost,accuracy\n1,", 0) == 0);
    o.seed = 5;
    const auto c = fit(p, ds, s, o);
    CHECK_FALSE((flatten(c.params).array() == flatten(a.params).array()).all());
    // Training reduces the objective on this easy instance.
    CHECK(a.history.back().objective < a.history.front().objective);
}

TEST_CASE("fit: per-layer dissipation along the trajectory in soft_ce mode") {
    const SmoothingSpec s(2, 0.95);
    const auto alpha = lower_bound_alpha(s);
    auto p = make_network(Architecture::bottleneck, 5, 2, 4, Activation::tanh, Activation::identity);
    initialize_uniform(p, 8);
    SpiralOptions so;
    so.n_per_class = 15;
    const auto ds = two_spirals(so);
    TrainOptions o;
    o.objective = {3.0, 0.005, StageMode::soft_ce};
    o.adam.learning_rate = 0.02;
    o.epochs = 30;
    int checked = 0;
    fit(p, ds, s, o, [&](const EpochRecord&, const NetworkParams& q) {
        const auto sum = objective_chunked(q, ds.features, ds.labels, o.objective, s);
        const auto traj = forward_ensemble(q, ds.features);
        for (int k = 0; k < q.depth(); ++k) {
            double mean_alpha = 0.0;
            for (Eigen::Index i = 0; i < ds.size(); ++i) {
                mean_alpha += alpha(dist_to_minimizers(traj.states[k].col(i),
                                                       ds.labels[static_cast<std::size_t>(i)], s));
            }
            mean_alpha /= static_cast<double>(ds.size());
            CHECK(sum.stage_costs[k] + sum.penalties[k] >= mean_alpha - 1e-9);
            ++checked;
        }
    });
    CHECK(checked == 150);
}

TEST_CASE("fit: divergence returns the last completed epoch") {
    const SmoothingSpec s(2, 0.95);
    auto p = make_network(Architecture::plain, 3, 2, 0, Activation::identity, Activation::identity);
    initialize_uniform(p, 1);
    Dataset ds;
    ds.num_classes = 2;
    ds.features = Matrix(2, 2);
    ds.features << 1e150, -1e150, 0, 0;
    ds.labels = {0, 1};
    TrainOptions o;
    o.objective = {1.0, 1e10, StageMode::soft_ce};
    o.adam.learning_rate = 1e100;
    o.epochs = 50;
    const auto r = fit(p, ds, s, o);
    CHECK(r.diverged);
    CHECK(r.history.size() < 50);
    CHECK(flatten(r.params).allFinite());
    CHECK_FALSE(r.failure.empty());
}

TEST_CASE("fit rejects mismatched inputs") {
    const SmoothingSpec s(3, 0.8);
    const auto p = make_network(Architecture::plain, 1, 2, 0, Activation::tanh, Activation::identity);
    const auto ds = two_spirals({});
    TrainOptions o;
    CHECK_THROWS_AS(fit(p, ds, s, o), ValidationError);
    o.epochs = -1;
    CHECK_THROWS_AS(fit(p, ds, SmoothingSpec(2, 0.95), o), ValidationError);
}

TEST_CASE("without a stage cost, hard labels push terminal states outward") {
    Dataset ds;
    ds.num_classes = 2;
    ds.features = Matrix(2, 2);
    ds.features << 1.0, -1.0, 0.0, 0.0;
    ds.labels = {0, 1};
    const SmoothingSpec s(2, 0.95);
    auto net = make_network(Architecture::plain, 3, 2, 0, Activation::identity, Activation::identity);
    initialize_uniform(net, 7);
    TrainOptions o;
    o.objective = {1.0, 0.0, StageMode::none};
    o.objective.terminal = TerminalLoss::hard_ce;
    o.adam.learning_rate = 0.001;
    o.epochs = 5000;
    std::vector<double> norms;
    fit(net, ds, s, o, [&](const EpochRecord& rec, const NetworkParams& p) {
        if (rec.epoch % 500 == 0) {
            norms.push_back(objective_chunked(p, ds.features, ds.labels, o.objective, s).max_terminal_norm);
        }
    });
    REQUIRE(norms.size() == 10);
    CHECK(norms.back() >= 2.0 * norms.front());
    CHECK(std::is_sorted(norms.begin(), norms.end()));

    // The soft terminal loss has finite minimizers: the same run stays bounded.
    o.objective.terminal = TerminalLoss::soft_ce;
    std::vector<double> soft;
    fit(net, ds, s, o, [&](const EpochRecord& rec, const NetworkParams& p) {
        if (rec.epoch % 500 == 0) {
            soft.push_back(objective_chunked(p, ds.features, ds.labels, o.objective, s).max_terminal_norm);
        }
    });
    CHECK(soft.back() < norms.back());
    CHECK(soft.back() < 1.5 * soft.front());
}
