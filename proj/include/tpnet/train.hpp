#pragma once

// The training problem
//
//   min_u  sum_{k=0}^{N-1} [ stage(x_k) + r ||u_k||^2 ] + gamma * loss(x_N)
//
// with dataset-mean losses, optimized by Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tpnet/data.hpp"
#include "tpnet/error.hpp"
#include "tpnet/format.hpp"
#include "tpnet/resnet.hpp"
#include "tpnet/softce.hpp"

namespace tpnet {

enum class StageMode { none, soft_ce, hard_ce };
enum class PenaltyMode { objective_term, optimizer_decay };
// `automatic` follows the stage family: hard-CE with a hard-CE stage cost,
// soft-CE otherwise.
enum class TerminalLoss { automatic, soft_ce, hard_ce };

inline std::string_view to_string(StageMode m) {
    switch (m) {
    case StageMode::none: return "none";
    case StageMode::soft_ce: return "soft_ce";
    case StageMode::hard_ce: return "hard_ce";
    }
    return "?";
}

inline std::string_view to_string(PenaltyMode m) {
    return m == PenaltyMode::objective_term ? "objective_term" : "optimizer_decay";
}

inline std::string_view to_string(TerminalLoss t) {
    switch (t) {
    case TerminalLoss::automatic: return "auto";
    case TerminalLoss::soft_ce: return "soft_ce";
    case TerminalLoss::hard_ce: return "hard_ce";
    }
    return "?";
}

inline std::optional<TerminalLoss> parse_terminal_loss(std::string_view s) {
    if (s == "auto") return TerminalLoss::automatic;
    if (s == "soft_ce") return TerminalLoss::soft_ce;
    if (s == "hard_ce") return TerminalLoss::hard_ce;
    return std::nullopt;
}

inline std::optional<StageMode> parse_stage_mode(std::string_view s) {
    if (s == "none") return StageMode::none;
    if (s == "soft_ce") return StageMode::soft_ce;
    if (s == "hard_ce") return StageMode::hard_ce;
    return std::nullopt;
}

inline std::optional<PenaltyMode> parse_penalty_mode(std::string_view s) {
    if (s == "objective_term") return PenaltyMode::objective_term;
    if (s == "optimizer_decay") return PenaltyMode::optimizer_decay;
    return std::nullopt;
}

struct ObjectiveSpec {
    double gamma = 1.0;
    double reg_r = 0.0;
    StageMode stage_mode = StageMode::soft_ce;
    PenaltyMode penalty_mode = PenaltyMode::objective_term;
    bool decay_biases = true; // optimizer_decay mode only
    TerminalLoss terminal = TerminalLoss::automatic;

    bool hard_terminal() const noexcept {
        if (terminal == TerminalLoss::automatic) {
            return stage_mode == StageMode::hard_ce;
        }
        return terminal == TerminalLoss::hard_ce;
    }

    /// Coefficient of ||u_k||^2 inside the objective.
    double objective_penalty() const noexcept {
        return penalty_mode == PenaltyMode::objective_term ? reg_r : 0.0;
    }

    void validate() const {
        if (!std::isfinite(gamma) || gamma < 0.0) {
            throw ValidationError("objective: gamma must be finite and >= 0");
        }
        if (!std::isfinite(reg_r) || reg_r < 0.0) {
            throw ValidationError("objective: reg_r must be finite and >= 0");
        }
    }
};

namespace detail {

struct BatchLoss {
    double sum = 0.0; // sum of per-sample losses
    Matrix grad;      // d(sum * scale)/dX, empty unless requested
};

// Per-sample losses of the columns of `x`. The gradient, when requested, is
// scaled by `scale`.
inline BatchLoss batch_loss(const Matrix& x, const std::vector<int>& labels, bool hard,
                            const SmoothingSpec& smoothing, bool with_grad, double scale) {
    BatchLoss out;
    const int c = smoothing.num_classes();
    if (with_grad) {
        out.grad = Matrix::Zero(x.rows(), x.cols());
    }
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const auto col = x.col(i);
        if (hard) {
            out.sum += hard_ce(col, y, c);
            if (with_grad) {
                out.grad.col(i) = scale * hard_ce_gradient(col, y, c);
            }
        } else {
            out.sum += soft_ce(col, y, smoothing);
            if (with_grad) {
                out.grad.col(i) = scale * soft_ce_gradient(col, y, smoothing);
            }
        }
    }
    return out;
}

inline void check_term(double v, const std::string& term) {
    if (!std::isfinite(v)) {
        throw NumericalError("objective diverged: non-finite " + term);
    }
}

} // namespace detail

/// Objective value with every term broken out, plus the state sensitivities
/// that `backward` turns into a parameter gradient.
struct ObjectiveEvaluation {
    double value = 0.0;
    double terminal_loss = 0.0;      // dataset mean, before gamma
    std::vector<double> stage_costs; // dataset mean per layer 0..N-1 (0 in mode none)
    std::vector<double> penalties;   // r ||u_k||^2 per layer (0 in optimizer_decay mode)
    EnsembleTrajectory trajectory;
    std::vector<Matrix> stage_grads; // empty in mode none
    Matrix terminal_grad;
    ParamGradient penalty_grads;

    double mean_stage_cost() const {
        if (stage_costs.empty()) {
            return 0.0;
        }
        return std::accumulate(stage_costs.begin(), stage_costs.end(), 0.0) /
               static_cast<double>(stage_costs.size());
    }
};

inline void check_labels(const std::vector<int>& labels, Eigen::Index samples, int num_classes) {
    if (static_cast<Eigen::Index>(labels.size()) != samples) {
        throw ValidationError("objective: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(samples) + " samples");
    }
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw ValidationError("objective: label " + std::to_string(y) + " out of range");
        }
    }
}

namespace detail {

// Loss terms and state sensitivities of one batch. Means are taken over
// `mean_over` samples so that batches can be accumulated.
inline ObjectiveEvaluation evaluate_batch(const NetworkParams& params, const Matrix& features,
                                          const std::vector<int>& labels,
                                          const ObjectiveSpec& spec,
                                          const SmoothingSpec& smoothing, double mean_over,
                                          bool with_grads) {
    ObjectiveEvaluation ev;
    ev.trajectory = forward_ensemble(params, features);
    const int depth = params.depth();

    ev.stage_costs.assign(static_cast<std::size_t>(depth), 0.0);
    if (spec.stage_mode != StageMode::none) {
        const bool hard = spec.stage_mode == StageMode::hard_ce;
        for (int k = 0; k < depth; ++k) {
            BatchLoss l = batch_loss(ev.trajectory.states[k], labels, hard, smoothing, with_grads,
                                     1.0 / mean_over);
            ev.stage_costs[k] = l.sum / mean_over;
            if (with_grads) {
                ev.stage_grads.push_back(std::move(l.grad));
            }
        }
    }
    BatchLoss t = batch_loss(ev.trajectory.states.back(), labels, spec.hard_terminal(), smoothing,
                             with_grads, spec.gamma / mean_over);
    ev.terminal_loss = t.sum / mean_over;
    if (with_grads) {
        ev.terminal_grad = std::move(t.grad);
    }
    return ev;
}

inline void add_penalty(ObjectiveEvaluation& ev, const NetworkParams& params,
                        const ObjectiveSpec& spec, bool with_grads) {
    const double r = spec.objective_penalty();
    ev.penalties.assign(static_cast<std::size_t>(params.depth()), 0.0);
    for (int k = 0; k < params.depth(); ++k) {
        ev.penalties[k] = r * params.layers[k].squared_norm();
    }
    if (with_grads) {
        ev.penalty_grads = params;
        for (auto& l : ev.penalty_grads.layers) {
            l.zip(l, [&](auto& a, auto&) { a *= 2.0 * r; });
        }
    }
}

inline void assemble_value(ObjectiveEvaluation& ev, const ObjectiveSpec& spec) {
    double value = 0.0;
    for (std::size_t k = 0; k < ev.stage_costs.size(); ++k) {
        check_term(ev.stage_costs[k], "stage cost at layer " + std::to_string(k));
        check_term(ev.penalties[k], "input penalty at layer " + std::to_string(k));
        value += ev.stage_costs[k] + ev.penalties[k];
    }
    check_term(ev.terminal_loss, "terminal loss");
    value += spec.gamma * ev.terminal_loss;
    check_term(value, "objective value");
    ev.value = value;
}

} // namespace detail

/// Evaluates the objective on the whole batch `features` (one column per
/// sample) and returns the per-layer state sensitivities alongside it.
inline ObjectiveEvaluation objective(const NetworkParams& params, const Matrix& features,
                                     const std::vector<int>& labels, const ObjectiveSpec& spec,
                                     const SmoothingSpec& smoothing) {
    spec.validate();
    check_labels(labels, features.cols(), smoothing.num_classes());
    if (features.cols() < 1) {
        throw ValidationError("objective: empty batch");
    }
    if (params.state_dim < smoothing.num_classes()) {
        throw ValidationError("objective: state_dim smaller than the class count");
    }
    auto ev = detail::evaluate_batch(params, features, labels, spec, smoothing,
                                     static_cast<double>(features.cols()), true);
    detail::add_penalty(ev, params, spec, true);
    detail::assemble_value(ev, spec);
    return ev;
}

/// Full gradient of `objective` through the adjoint recursion.
inline ParamGradient objective_gradient(const NetworkParams& params, const ObjectiveEvaluation& ev) {
    return backward(params, ev.trajectory, ev.terminal_grad, ev.stage_grads, &ev.penalty_grads);
}

/// Summary of the objective over a dataset, accumulated in fixed-size sample chunks.
struct ObjectiveSummary {
    double value = 0.0;
    double terminal_loss = 0.0;
    std::vector<double> stage_costs;
    std::vector<double> penalties;
    double accuracy = 0.0;
    double max_terminal_norm = 0.0; // largest class-slice norm among terminal states

    double mean_stage_cost() const {
        if (stage_costs.empty()) {
            return 0.0;
        }
        return std::accumulate(stage_costs.begin(), stage_costs.end(), 0.0) /
               static_cast<double>(stage_costs.size());
    }
};

inline constexpr Eigen::Index kDefaultChunk = 256;

inline int predict(const VectorCRef& x, int num_classes) {
    int best = 0;
    for (int i = 1; i < num_classes; ++i) {
        if (x[i] > x[best]) {
            best = i;
        }
    }
    return best;
}

/// Value (and optionally gradient) of the objective over many samples,
/// processed chunk by chunk in ascending sample order. `grad_out` receives the
/// full gradient, identical in exact arithmetic to the single-batch one.
inline ObjectiveSummary objective_chunked(const NetworkParams& params, const Matrix& features,
                                          const std::vector<int>& labels,
                                          const ObjectiveSpec& spec, const SmoothingSpec& smoothing,
                                          ParamGradient* grad_out = nullptr,
                                          Eigen::Index chunk = kDefaultChunk) {
    spec.validate();
    check_labels(labels, features.cols(), smoothing.num_classes());
    const Eigen::Index total = features.cols();
    if (total < 1) {
        throw ValidationError("objective: empty batch");
    }
    const double mean_over = static_cast<double>(total);
    const bool with_grads = grad_out != nullptr;

    ObjectiveSummary sum;
    sum.stage_costs.assign(static_cast<std::size_t>(params.depth()), 0.0);
    if (with_grads) {
        *grad_out = params.zeros_like();
    }
    std::size_t correct = 0;
    for (Eigen::Index begin = 0; begin < total; begin += chunk) {
        const Eigen::Index count = std::min(chunk, total - begin);
        const std::vector<int> chunk_labels(labels.begin() + begin, labels.begin() + begin + count);
        auto ev = detail::evaluate_batch(params, features.middleCols(begin, count), chunk_labels,
                                         spec, smoothing, mean_over, with_grads);
        for (std::size_t k = 0; k < sum.stage_costs.size(); ++k) {
            sum.stage_costs[k] += ev.stage_costs[k];
        }
        sum.terminal_loss += ev.terminal_loss;
        const Matrix& terminal = ev.trajectory.states.back();
        for (Eigen::Index i = 0; i < count; ++i) {
            const auto col = terminal.col(i);
            correct += predict(col, smoothing.num_classes()) == chunk_labels[static_cast<std::size_t>(i)];
            sum.max_terminal_norm =
                std::max(sum.max_terminal_norm, col.head(smoothing.num_classes()).norm());
        }
        if (with_grads) {
            ParamGradient g = backward(params, ev.trajectory, ev.terminal_grad, ev.stage_grads);
            for (int k = 0; k < params.depth(); ++k) {
                grad_out->layers[k].zip(g.layers[k], [](auto& a, const auto& b) { a += b; });
            }
        }
    }
    ObjectiveEvaluation penalty;
    detail::add_penalty(penalty, params, spec, with_grads);
    sum.penalties = penalty.penalties;
    if (with_grads) {
        for (int k = 0; k < params.depth(); ++k) {
            grad_out->layers[k].zip(penalty.penalty_grads.layers[k],
                                    [](auto& a, const auto& b) { a += b; });
        }
    }
    double value = 0.0;
    for (std::size_t k = 0; k < sum.stage_costs.size(); ++k) {
        detail::check_term(sum.stage_costs[k], "stage cost at layer " + std::to_string(k));
        value += sum.stage_costs[k] + sum.penalties[k];
    }
    detail::check_term(sum.terminal_loss, "terminal loss");
    value += spec.gamma * sum.terminal_loss;
    detail::check_term(value, "objective value");
    sum.value = value;
    sum.accuracy = static_cast<double>(correct) / mean_over;
    return sum;
}

/// Fraction of samples whose largest class-slice component of the terminal
/// state is the label; ties go to the lowest class index.
inline double accuracy(const NetworkParams& params, const Dataset& ds,
                       Eigen::Index chunk = kDefaultChunk) {
    ds.validate();
    std::size_t correct = 0;
    for (Eigen::Index begin = 0; begin < ds.size(); begin += chunk) {
        const Eigen::Index count = std::min(chunk, ds.size() - begin);
        const Matrix terminal = forward_terminal(params, ds.features.middleCols(begin, count));
        for (Eigen::Index i = 0; i < count; ++i) {
            correct += predict(terminal.col(i), ds.num_classes) ==
                       ds.labels[static_cast<std::size_t>(begin + i)];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamOptions options;
    long step = 0;
    NetworkParams first_moment;
    NetworkParams second_moment;

    OptimizerState(const NetworkParams& params, AdamOptions opts)
        : options(opts), first_moment(params.zeros_like()), second_moment(params.zeros_like()) {}
};

/// One bias-corrected Adam update. With `decay_r > 0` the parameters are then
/// shrunk by (1 - lr * decay_r); biases only if `decay_biases`.
inline void adam_step(OptimizerState& opt, NetworkParams& params, const ParamGradient& grads,
                      double decay_r = 0.0, bool decay_biases = true) {
    if (grads.depth() != params.depth() || opt.first_moment.depth() != params.depth()) {
        throw ValidationError("adam: gradient/optimizer shape does not match parameters");
    }
    const AdamOptions& o = opt.options;
    ++opt.step;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(opt.step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(opt.step));
    const double shrink_w = 1.0 - o.learning_rate * decay_r;
    const double shrink_b = decay_biases ? shrink_w : 1.0;

    for (int k = 0; k < params.depth(); ++k) {
        LayerParams& p = params.layers[k];
        const LayerParams& g = grads.layers[k];
        LayerParams& m = opt.first_moment.layers[k];
        LayerParams& v = opt.second_moment.layers[k];
        auto update = [&](auto& param, const auto& grad, auto& mom1, auto& mom2, double shrink) {
            if (param.size() != grad.size()) {
                throw ValidationError("adam: gradient shape mismatch at layer " + std::to_string(k));
            }
            mom1 = o.beta1 * mom1 + (1.0 - o.beta1) * grad;
            mom2 = o.beta2 * mom2 + (1.0 - o.beta2) * grad.cwiseProduct(grad);
            param.array() -= o.learning_rate * (mom1.array() / c1) /
                             ((mom2.array() / c2).sqrt() + o.epsilon);
            if (decay_r != 0.0) {
                param *= shrink;
            }
        };
        update(p.first, g.first, m.first, v.first, shrink_w);
        update(p.first_bias, g.first_bias, m.first_bias, v.first_bias, shrink_b);
        update(p.second, g.second, m.second, v.second, shrink_w);
        update(p.second_bias, g.second_bias, m.second_bias, v.second_bias, shrink_b);
    }
}

struct TrainOptions {
    ObjectiveSpec objective;
    AdamOptions adam;
    int epochs = 0;
    int batch_size = 0; // 0 = full batch
    std::uint64_t seed = 0;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double objective = 0.0;
    double terminal_loss = 0.0;
    double mean_stage_cost = 0.0;
    double accuracy = 0.0;
};

struct FitResult {
    NetworkParams params;
    std::vector<EpochRecord> history;
    bool diverged = false;
    std::string failure;
};

using EpochCallback = std::function<void(const EpochRecord&, const NetworkParams&)>;

/// Runs `epochs` passes of (mini-)batch Adam. Batches come from a seeded
/// shuffle of the sample indices (no shuffle for full batches). After each
/// epoch the objective, terminal loss, mean stage cost and accuracy are
/// evaluated on the whole dataset with the updated parameters. On divergence
/// the parameters of the last completed epoch are returned.
inline FitResult fit(NetworkParams params, const Dataset& ds, const SmoothingSpec& smoothing,
                     const TrainOptions& opts, const EpochCallback& on_epoch = {}) {
    ds.validate();
    opts.objective.validate();
    if (opts.epochs < 0 || opts.batch_size < 0) {
        throw ValidationError("fit: epochs and batch_size must be >= 0");
    }
    if (ds.num_classes != smoothing.num_classes()) {
        throw ValidationError("fit: dataset has " + std::to_string(ds.num_classes) +
                              " classes, smoothing expects " +
                              std::to_string(smoothing.num_classes()));
    }
    if (ds.dim() != params.state_dim) {
        throw ValidationError("fit: feature dimension " + std::to_string(ds.dim()) +
                              " does not match state_dim " + std::to_string(params.state_dim));
    }
    params.validate();

    const ObjectiveSpec& spec = opts.objective;
    const double decay = spec.penalty_mode == PenaltyMode::optimizer_decay ? spec.reg_r : 0.0;
    const Eigen::Index samples = ds.size();
    const Eigen::Index batch =
        opts.batch_size == 0 ? samples : std::min<Eigen::Index>(opts.batch_size, samples);

    FitResult result;
    OptimizerState opt(params, opts.adam);
    std::mt19937_64 rng(opts.seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(samples));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        NetworkParams last_good = params;
        try {
            if (batch < samples) {
                std::shuffle(order.begin(), order.end(), rng);
            }
            for (Eigen::Index begin = 0; begin < samples; begin += batch) {
                const Eigen::Index count = std::min(batch, samples - begin);
                Matrix x(ds.dim(), count);
                std::vector<int> y(static_cast<std::size_t>(count));
                for (Eigen::Index i = 0; i < count; ++i) {
                    const Eigen::Index src = order[static_cast<std::size_t>(begin + i)];
                    x.col(i) = ds.features.col(src);
                    y[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(src)];
                }
                ParamGradient grad;
                objective_chunked(params, x, y, spec, smoothing, &grad);
                adam_step(opt, params, grad, decay, spec.decay_biases);
            }
            const ObjectiveSummary s =
                objective_chunked(params, ds.features, ds.labels, spec, smoothing);
            EpochRecord rec{epoch, s.value, s.terminal_loss, s.mean_stage_cost(), s.accuracy};
            result.history.push_back(rec);
            if (on_epoch) {
                on_epoch(rec, params);
            }
        } catch (const NumericalError& e) {
            result.diverged = true;
            result.failure = "epoch " + std::to_string(epoch) + ": " + e.what();
            result.params = std::move(last_good);
            return result;
        }
    }
    result.params = std::move(params);
    return result;
}

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,objective,terminal_loss,mean_stage_cost,accuracy\n";
    for (const auto& r : history) {
        out << r.epoch << ',' << format_double(r.objective) << ',' << format_double(r.terminal_loss)
            << ',' << format_double(r.mean_stage_cost) << ',' << format_double(r.accuracy) << '\n';
    }
}

} // namespace tpnet
