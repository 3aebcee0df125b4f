// Acceptance checks A1-A9. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Pass criterion ids (e.g. "A1 A7") to run a subset.
//
// Artifacts go to ./acceptance_out; MNIST is read from
// $TPNET_SOURCE_DIR/data/mnist.

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tpnet/tpnet.hpp"

using namespace tpnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

const std::vector<std::pair<int, double>> kSpecs = {{2, 0.95}, {10, 0.91}};

Vector random_vector(std::mt19937_64& rng, int n, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    return Vector::NullaryExpr(n, [&]() { return normal(rng); });
}

// A random point with norm <= max_norm; radii are spread over several decades
// so that both the small-distance and far regions are exercised.
Vector random_ball_point(std::mt19937_64& rng, int n, double max_norm) {
    Vector d = random_vector(rng, n, 1.0);
    d.normalize();
    std::uniform_real_distribution<double> u(-6.0, 0.0);
    return d * max_norm * std::pow(10.0, u(rng));
}

Outcome a1_geometry() {
    std::mt19937_64 rng(101);
    double worst_line = 0.0, worst_eig = 0.0, worst_null = 0.0, worst_inv = 0.0;
    for (const auto& [c, pd] : kSpecs) {
        const SmoothingSpec s(c, pd);
        std::uniform_real_distribution<double> shift(-100.0, 100.0);
        std::uniform_int_distribution<int> label(0, c - 1);
        for (int y = 0; y < c; ++y) {
            const auto line = minimizer_line(y, s);
            for (int i = 0; i < 100; ++i) {
                const Vector x = line.base_point + Vector::Constant(c, shift(rng));
                worst_line = std::max(worst_line, std::abs(soft_ce(x, y, s)));
            }
        }
        for (int i = 0; i < 1000; ++i) {
            const Vector x = random_vector(rng, c, 5.0);
            const Matrix h = soft_ce_hessian(x, c);
            Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
            worst_eig = std::min(worst_eig, eig.eigenvalues().minCoeff());
            worst_null = std::max(worst_null, (h * Vector::Ones(c)).cwiseAbs().maxCoeff());

            const int y = label(rng);
            const double v = soft_ce(x, y, s);
            const double t = shift(rng);
            worst_inv = std::max(worst_inv, std::abs(soft_ce(x + Vector::Constant(c, t), y, s) - v));
            worst_inv = std::max(worst_inv, std::abs(dist_to_minimizers(x + Vector::Constant(c, t), y, s) -
                                                     dist_to_minimizers(x, y, s)));
            std::vector<int> perm(static_cast<std::size_t>(c));
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            Vector px(c);
            for (int j = 0; j < c; ++j) px[perm[static_cast<std::size_t>(j)]] = x[j];
            worst_inv = std::max(worst_inv, std::abs(soft_ce(px, perm[static_cast<std::size_t>(y)], s) - v));
        }
    }
    const bool ok = worst_line <= 1e-9 && worst_eig >= -1e-10 && worst_null <= 1e-12 && worst_inv <= 1e-9;
    return {ok, "max line value " + fmt(worst_line) + ", min eigenvalue " + fmt(worst_eig) +
                    ", max |H1| " + fmt(worst_null) + ", max invariance gap " + fmt(worst_inv)};
}

Outcome a2_lower_bound() {
    std::mt19937_64 rng(202);
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& [c, pd] : kSpecs) {
        const SmoothingSpec s(c, pd);
        const ClassKBound alpha = lower_bound_alpha(s);
        std::uniform_int_distribution<int> label(0, c - 1);
        for (int i = 0; i < 10000; ++i) {
            const int y = label(rng);
            Vector x = random_ball_point(rng, c, 50.0);
            // Every other sample sits near the minimizer line of its label.
            if (i % 2 == 1) {
                x = minimizer_line(y, s).base_point + random_ball_point(rng, c, 50.0 - 10.0);
            }
            worst = std::min(worst, soft_ce(x, y, s) - alpha(dist_to_minimizers(x, y, s)));
        }
    }
    return {worst >= -1e-9, "min soft_ce - alpha(dist) " + fmt(worst) + " over 2 x 10^4 points"};
}

Outcome a3_gradients() {
    std::mt19937_64 rng(303);
    double worst = 0.0;
    for (const auto& [c, pd] : kSpecs) {
        const SmoothingSpec s(c, pd);
        std::uniform_int_distribution<int> label(0, c - 1);
        for (int i = 0; i < 500; ++i) {
            const Vector x = random_vector(rng, c, 3.0);
            const int y = label(rng);
            const Vector g = soft_ce_gradient(x, y, s);
            Vector fd(c);
            const double h = 1e-5;
            for (int j = 0; j < c; ++j) {
                Vector up = x, down = x;
                up[j] += h;
                down[j] -= h;
                fd[j] = (soft_ce(up, y, s) - soft_ce(down, y, s)) / (2 * h);
            }
            worst = std::max(worst, (g - fd).norm() / std::max(1.0, g.norm()));
        }
    }
    const GradCheckResult r = run_gradient_check({});
    const bool ok = worst < 1e-6 && r.max_rel_error < 1e-5 && r.trials == 120;
    return {ok, "soft-CE gradient rel err " + fmt(worst) + " (10^3 points); objective backward rel err " +
                    fmt(r.max_rel_error) + " over " + std::to_string(r.trials) + " instances"};
}

Outcome a4_equilibria() {
    std::mt19937_64 rng(404);
    bool ok = true;
    int networks = 0;
    for (Architecture arch : {Architecture::plain, Architecture::bottleneck}) {
        for (Activation a1 : {Activation::identity, Activation::tanh, Activation::relu}) {
            for (Activation a2 : {Activation::identity, Activation::tanh, Activation::relu}) {
                const auto p = make_network(arch, 10, 6, 4, a1, a2);
                std::normal_distribution<double> normal(0.0, 100.0);
                const Matrix x = Matrix::NullaryExpr(6, 1000, [&]() { return normal(rng); });
                const auto traj = forward_ensemble(p, x);
                for (const auto& st : traj.states) {
                    ok = ok && (st.array() == x.array()).all();
                }
                ++networks;
            }
        }
    }
    return {ok, std::to_string(networks) + " zero networks, 10^3 states each, bitwise identity: " +
                    (ok ? "yes" : "no")};
}

struct SpiralsRun {
    bool ran = false;
    std::string error;
    TrainSummary train;
    CropSummary crop;
    fs::path dir;
};

SpiralsRun& spirals_run(const fs::path& root) {
    static SpiralsRun run;
    if (run.ran) {
        return run;
    }
    run.ran = true;
    run.dir = root / "two-spirals";
    fs::remove_all(run.dir);
    auto cfg = recipe("two-spirals");
    cfg.output_dir = run.dir.string();
    try {
        std::ostringstream log;
        run.train = run_train(cfg, log);
        auto crop_cfg = cfg;
        crop_cfg.output_dir = (run.dir / "crop").string();
        run.crop = run_crop(crop_cfg, (run.dir / "checkpoint.txt").string(), log);
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    return run;
}

Outcome a5_spirals(const fs::path& root) {
    const auto& run = spirals_run(root);
    if (!run.error.empty()) {
        return {false, "two-spirals run failed: " + run.error};
    }
    const double change = std::abs(run.crop.cropped_accuracy - run.crop.full_accuracy);
    const bool ok = run.train.accuracy >= 0.99 && run.train.entry_layer <= 15 && run.crop.cropped &&
                    change <= 0.01;
    return {ok, "accuracy " + fmt(run.train.accuracy) + ", entry layer " +
                    std::to_string(run.train.entry_layer) + "/" + std::to_string(run.train.depth) +
                    ", cropped depth " + std::to_string(run.crop.cropped_depth) + " accuracy " +
                    fmt(run.crop.cropped_accuracy) + " (change " + fmt(change) + ")"};
}

Outcome a6_dissipation(const fs::path& root) {
    const auto& run = spirals_run(root);
    if (!run.error.empty()) {
        return {false, "two-spirals run failed: " + run.error};
    }
    const auto& r = run.train.diagnostics.report;
    // Recompute the per-layer check from the profile as well.
    const auto& p = run.train.diagnostics.profile;
    bool layers_ok = true;
    for (int k = 0; k < p.depth(); ++k) {
        layers_ok = layers_ok && p.stage_cost[k] + p.penalty[k] >= p.mean_alpha[k] - 1e-9;
    }
    const bool ok = layers_ok && r.all_dissipative() && r.cardinality_ok &&
                    r.complement_alpha <= r.alpha_distance_sum;
    return {ok, "min dissipation margin " + fmt(r.min_dissipation_margin) + " over " +
                    std::to_string(p.depth()) + " layers; #complement*alpha(eps) " +
                    fmt(r.complement_alpha) + " <= sum alpha(dist) " + fmt(r.alpha_distance_sum)};
}

Outcome a7_drift() {
    Dataset ds;
    ds.num_classes = 2;
    ds.features = Matrix(2, 2);
    ds.features << 1.0, -1.0, 0.0, 0.0;
    ds.labels = {0, 1};
    const SmoothingSpec smoothing(2, 0.95);
    auto net = make_network(Architecture::plain, 3, 2, 0, Activation::identity, Activation::identity);
    initialize_uniform(net, 7);
    TrainOptions o;
    o.objective.gamma = 1.0;
    o.objective.reg_r = 0.0;
    o.objective.stage_mode = StageMode::none;
    o.objective.terminal = TerminalLoss::hard_ce;
    o.adam.learning_rate = 0.001;
    o.epochs = 5000;
    double at500 = 0.0, at5000 = 0.0;
    const auto result = fit(net, ds, smoothing, o, [&](const EpochRecord& rec, const NetworkParams& p) {
        if (rec.epoch == 500 || rec.epoch == 5000) {
            const double norm =
                objective_chunked(p, ds.features, ds.labels, o.objective, smoothing).max_terminal_norm;
            (rec.epoch == 500 ? at500 : at5000) = norm;
        }
    });
    const bool ok = !result.diverged && at500 > 0.0 && at5000 >= 2.0 * at500;
    return {ok, "max terminal norm " + fmt(at500) + " after 500 epochs, " + fmt(at5000) +
                    " after 5000 (ratio " + fmt(at5000 / at500) + ")"};
}

Outcome a8_mnist(const fs::path& root) {
    const char* src = std::getenv("TPNET_SOURCE_DIR");
    const fs::path mnist = fs::path(src ? src : ".") / "data" / "mnist";
    auto cfg = recipe("mnist-subset");
    cfg.dataset.images = (mnist / "train-images-idx3-ubyte").string();
    cfg.dataset.labels = (mnist / "train-labels-idx1-ubyte").string();
    cfg.output_dir = (root / "mnist-subset").string();
    if (!fs::exists(cfg.dataset.images)) {
        return {false, "MNIST files not found under " + mnist.string()};
    }
    try {
        const auto start = std::chrono::steady_clock::now();
        std::ostringstream log;
        const auto s = run_train(cfg, log);
        const double minutes =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
        const auto& stage = s.diagnostics.profile.stage_cost;
        double worst = 0.0;
        for (std::size_t k = 20; k < stage.size(); ++k) {
            worst = std::max(worst, stage[k] / stage[0]);
        }
        const bool ok = s.depth == 40 && worst <= 0.2 && s.accuracy >= 0.95;
        return {ok, "max stage cost ratio over layers >= 20: " + fmt(worst) + ", accuracy " +
                        fmt(s.accuracy) + ", " + fmt(minutes) + " min"};
    } catch (const std::exception& e) {
        return {false, std::string("mnist-subset run failed: ") + e.what()};
    }
}

Outcome a9_determinism(const fs::path& root) {
    const auto& run = spirals_run(root);
    if (!run.error.empty()) {
        return {false, "two-spirals run failed: " + run.error};
    }
    auto cfg = load_config((run.dir / "config.ini").string());
    const fs::path again = root / "two-spirals-rerun";
    fs::remove_all(again);
    cfg.output_dir = again.string();
    std::ostringstream log;
    run_train(cfg, log);

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    };
    int compared = 0;
    bool ok = true;
    for (const auto& e : fs::directory_iterator(run.dir)) {
        const auto name = e.path().filename();
        const auto ext = name.extension();
        if (!e.is_regular_file() || name == "config.ini" || (ext != ".csv" && ext != ".txt")) {
            continue;
        }
        ok = ok && fs::exists(again / name) && slurp(e.path()) == slurp(again / name);
        ++compared;
    }
    ok = ok && compared >= 4;
    return {ok, std::to_string(compared) + " artifacts compared bitwise after re-running from config.ini"};
}

} // namespace

int main(int argc, char** argv) {
    const fs::path root = fs::current_path() / "acceptance_out";
    fs::create_directories(root);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"A1", a1_geometry},
        {"A2", a2_lower_bound},
        {"A3", a3_gradients},
        {"A4", a4_equilibria},
        {"A5", [&] { return a5_spirals(root); }},
        {"A6", [&] { return a6_dissipation(root); }},
        {"A7", a7_drift},
        {"A8", [&] { return a8_mnist(root); }},
        {"A9", [&] { return a9_determinism(root); }},
    };
    std::set<std::string> selected(argv + 1, argv + argc);

    int failed = 0;
    for (const auto& [id, check] : criteria) {
        if (!selected.empty() && !selected.count(id)) {
            continue;
        }
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << id << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
