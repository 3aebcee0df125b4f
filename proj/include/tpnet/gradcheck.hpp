#pragma once

// Central finite-difference check of the full objective gradient on small
// random instances, covering both architectures and every stage mode.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "tpnet/resnet.hpp"
#include "tpnet/softce.hpp"
#include "tpnet/train.hpp"

namespace tpnet {

struct GradCheckOptions {
    int trials = 20;           // per (architecture, stage mode) pair
    std::uint64_t seed = 1;
    double step = 1e-7;        // central difference step
    double kink_tolerance = 1e-6;
    int max_resamples = 1000;  // per trial
};

struct GradCheckInstance {
    NetworkParams params;
    Matrix features;
    std::vector<int> labels;
    ObjectiveSpec spec;
    SmoothingSpec smoothing{2, 0.9};
};

struct GradCheckCase {
    Architecture arch = Architecture::plain;
    StageMode stage_mode = StageMode::soft_ce;
    int trials = 0;
    int resampled = 0;
    double max_rel_error = 0.0;
};

struct GradCheckResult {
    std::vector<GradCheckCase> cases;
    double max_rel_error = 0.0;
    int resampled = 0;
    int trials = 0;
};

/// Smallest |pre-activation| feeding a relu anywhere along the trajectory, or
/// +inf when no relu is involved.
inline double min_relu_preactivation(const NetworkParams& params, const Matrix& features) {
    double best = std::numeric_limits<double>::infinity();
    const bool relu1 = params.sigma1 == Activation::relu;
    const bool relu2 = params.arch == Architecture::bottleneck && params.sigma2 == Activation::relu;
    if (!relu1 && !relu2) {
        return best;
    }
    Matrix x = features;
    for (int k = 0; k < params.depth(); ++k) {
        const LayerParams& l = params.layers[k];
        Matrix z1 = l.first * x;
        z1.colwise() += l.first_bias;
        if (relu1) {
            best = std::min(best, z1.cwiseAbs().minCoeff());
        }
        if (relu2) {
            Matrix z2 = l.second * activate(params.sigma1, z1);
            z2.colwise() += l.second_bias;
            best = std::min(best, z2.cwiseAbs().minCoeff());
        }
        x = layer_forward(x, l, params, k);
    }
    return best;
}

/// Random instance with n <= 5, N <= 3 and D <= 8.
template <typename Rng>
GradCheckInstance random_gradcheck_instance(Architecture arch, StageMode mode, Rng& rng) {
    std::uniform_int_distribution<int> classes(2, 3);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    constexpr std::array<Activation, 3> acts{Activation::identity, Activation::tanh,
                                             Activation::relu};
    std::uniform_int_distribution<int> pick_act(0, 2);

    GradCheckInstance inst;
    const int c = classes(rng);
    const int n = std::uniform_int_distribution<int>(c, 5)(rng);
    const int depth = std::uniform_int_distribution<int>(1, 3)(rng);
    const int samples = std::uniform_int_distribution<int>(1, 8)(rng);
    const int hidden = std::uniform_int_distribution<int>(1, 4)(rng);
    const Activation s1 = acts[static_cast<std::size_t>(pick_act(rng))];
    const Activation s2 = acts[static_cast<std::size_t>(pick_act(rng))];
    inst.smoothing = SmoothingSpec(c, 1.0 / c + (1.0 - 1.0 / c) * (0.1 + 0.8 * (unit(rng) + 1) / 2));
    inst.params = make_network(arch, depth, n, hidden, s1, s2);
    for (auto& l : inst.params.layers) {
        l.zip(l, [&](auto& a, auto&) { a = a.unaryExpr([&](double) { return unit(rng); }); });
    }
    inst.features = Matrix::NullaryExpr(n, samples, [&]() { return normal(rng); });
    std::uniform_int_distribution<int> label(0, c - 1);
    for (int i = 0; i < samples; ++i) {
        inst.labels.push_back(label(rng));
    }
    inst.spec.gamma = 0.5 + 2.5 * (unit(rng) + 1) / 2;
    inst.spec.reg_r = 0.1 * (unit(rng) + 1) / 2;
    inst.spec.stage_mode = mode;
    inst.spec.penalty_mode = PenaltyMode::objective_term;
    return inst;
}

/// ||analytic - fd|| / max(||analytic||, ||fd||), or the absolute error when both vanish.
inline double gradient_relative_error(const GradCheckInstance& inst, double step) {
    const ObjectiveEvaluation ev =
        objective(inst.params, inst.features, inst.labels, inst.spec, inst.smoothing);
    const Vector analytic = flatten(objective_gradient(inst.params, ev));
    Vector theta = flatten(inst.params);
    Vector fd(theta.size());
    NetworkParams probe = inst.params;
    auto value_at = [&](const Vector& t) {
        unflatten(t, probe);
        return objective(probe, inst.features, inst.labels, inst.spec, inst.smoothing).value;
    };
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + step;
        const double up = value_at(theta);
        theta[i] = saved - step;
        const double down = value_at(theta);
        theta[i] = saved;
        fd[i] = (up - down) / (2.0 * step);
    }
    const double scale = std::max(analytic.norm(), fd.norm());
    const double diff = (analytic - fd).norm();
    return scale > 1e-12 ? diff / scale : diff;
}

inline GradCheckResult run_gradient_check(const GradCheckOptions& opts) {
    if (opts.trials < 0) {
        throw ValidationError("grad-check: trials must be >= 0");
    }
    GradCheckResult result;
    std::mt19937_64 rng(opts.seed);
    for (Architecture arch : {Architecture::plain, Architecture::bottleneck}) {
        for (StageMode mode : {StageMode::none, StageMode::soft_ce, StageMode::hard_ce}) {
            GradCheckCase cs{arch, mode, 0, 0, 0.0};
            for (int t = 0; t < opts.trials; ++t) {
                GradCheckInstance inst = random_gradcheck_instance(arch, mode, rng);
                int attempts = 0;
                while (min_relu_preactivation(inst.params, inst.features) < opts.kink_tolerance) {
                    if (++attempts > opts.max_resamples) {
                        throw NumericalError("grad-check: could not draw an instance away from relu kinks");
                    }
                    ++cs.resampled;
                    inst = random_gradcheck_instance(arch, mode, rng);
                }
                cs.max_rel_error = std::max(cs.max_rel_error, gradient_relative_error(inst, opts.step));
                ++cs.trials;
            }
            result.max_rel_error = std::max(result.max_rel_error, cs.max_rel_error);
            result.resampled += cs.resampled;
            result.trials += cs.trials;
            result.cases.push_back(cs);
        }
    }
    return result;
}

} // namespace tpnet
