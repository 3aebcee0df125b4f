#pragma once

// Post-training diagnostics: how far each layer's states are from the soft
// cross-entropy minimizers, which layers sit near that set, whether the
// dissipation inequality holds along the trajectory, and depth cropping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "tpnet/data.hpp"
#include "tpnet/error.hpp"
#include "tpnet/format.hpp"
#include "tpnet/resnet.hpp"
#include "tpnet/softce.hpp"
#include "tpnet/train.hpp"

namespace tpnet {

/// Per-layer statistics over the dataset. Layer vectors have depth + 1 entries,
/// parameter vectors have depth entries.
struct LayerProfile {
    std::vector<double> mean_dist;    // mean over samples of dist(x_k^i, M_{y^i})
    std::vector<double> max_dist;
    std::vector<double> stacked_dist; // distance of the stacked state, sqrt(sum_i dist_i^2)
    std::vector<double> mean_state_input_dist; // mean_i sqrt(dist_i^2 + ||u_k||^2); state only at N
    std::vector<double> stage_cost;   // dataset-mean soft cross-entropy
    std::vector<double> mean_alpha;   // dataset-mean alpha(dist_i)
    std::vector<double> param_norm;   // ||u_k||
    std::vector<double> penalty;      // r ||u_k||^2

    int depth() const noexcept { return static_cast<int>(param_norm.size()); }
};

/// Runs the network once over the dataset (in sample chunks) and collects the
/// per-layer profile. The stage cost is always the soft cross-entropy, whatever
/// loss was used for training; `reg_r` weighs the input penalty.
inline LayerProfile profile(const NetworkParams& params, const Dataset& ds,
                            const SmoothingSpec& smoothing, double reg_r, const ClassKBound& alpha,
                            Eigen::Index chunk = kDefaultChunk) {
    ds.validate();
    if (ds.num_classes != smoothing.num_classes()) {
        throw ValidationError("profile: dataset/smoothing class counts differ");
    }
    if (ds.dim() != params.state_dim) {
        throw ValidationError("profile: feature dimension " + std::to_string(ds.dim()) +
                              " does not match state_dim " + std::to_string(params.state_dim));
    }
    const int depth = params.depth();
    const auto layers = static_cast<std::size_t>(depth) + 1;
    LayerProfile p;
    p.mean_dist.assign(layers, 0.0);
    p.max_dist.assign(layers, 0.0);
    p.stacked_dist.assign(layers, 0.0);
    p.mean_state_input_dist.assign(layers, 0.0);
    p.stage_cost.assign(layers, 0.0);
    p.mean_alpha.assign(layers, 0.0);
    for (const auto& l : params.layers) {
        const double sq = l.squared_norm();
        p.param_norm.push_back(std::sqrt(sq));
        p.penalty.push_back(reg_r * sq);
    }

    for (Eigen::Index begin = 0; begin < ds.size(); begin += chunk) {
        const Eigen::Index count = std::min(chunk, ds.size() - begin);
        const EnsembleTrajectory traj = forward_ensemble(params, ds.features.middleCols(begin, count));
        for (std::size_t k = 0; k < layers; ++k) {
            const double u_sq = k < static_cast<std::size_t>(depth)
                                    ? p.param_norm[k] * p.param_norm[k]
                                    : 0.0;
            for (Eigen::Index i = 0; i < count; ++i) {
                const auto x = traj.states[k].col(i);
                const int y = ds.labels[static_cast<std::size_t>(begin + i)];
                const double d = dist_to_minimizers(x, y, smoothing);
                p.mean_dist[k] += d;
                p.max_dist[k] = std::max(p.max_dist[k], d);
                p.stacked_dist[k] += d * d;
                p.mean_state_input_dist[k] += std::sqrt(d * d + u_sq);
                p.stage_cost[k] += soft_ce(x, y, smoothing);
                p.mean_alpha[k] += alpha(d);
            }
        }
    }
    const double n = static_cast<double>(ds.size());
    for (std::size_t k = 0; k < layers; ++k) {
        p.mean_dist[k] /= n;
        p.stacked_dist[k] = std::sqrt(p.stacked_dist[k]);
        p.mean_state_input_dist[k] /= n;
        p.stage_cost[k] /= n;
        p.mean_alpha[k] /= n;
    }
    return p;
}

enum class DistanceKind { state, state_input };

inline std::string_view to_string(DistanceKind k) {
    return k == DistanceKind::state ? "state" : "state_input";
}

struct TurnpikeReport {
    double epsilon = 0.0;
    DistanceKind distance = DistanceKind::state;
    int depth = 0;
    std::vector<int> q_eps;  // layers in [0, N-1] with distance <= epsilon
    int complement_count = 0;
    int entry_layer = 0;     // smallest k with every k' in [k, N-1] in q_eps; N if none
    double alpha_epsilon = 0.0;
    double complement_alpha = 0.0;   // #complement * alpha(epsilon)
    double alpha_distance_sum = 0.0; // sum_{k<N} alpha(distance_k)
    double cardinality_bound = 0.0;  // alpha_distance_sum / alpha(epsilon)
    double stage_cost_sum = 0.0;     // sum_{k<N} stage_k + r ||u_k||^2
    bool cardinality_ok = false;     // complement_alpha <= alpha_distance_sum
    bool chain_ok = false;           // alpha_distance_sum <= stage_cost_sum
    std::vector<bool> dissipation_ok; // per layer k < N
    double min_dissipation_margin = 0.0; // min_k stage_k + pen_k - mean_i alpha(dist_i)

    bool all_dissipative() const {
        return std::all_of(dissipation_ok.begin(), dissipation_ok.end(), [](bool b) { return b; });
    }
};

inline constexpr double kDissipationTolerance = 1e-9;

inline TurnpikeReport turnpike_report(const LayerProfile& prof, double epsilon,
                                      const ClassKBound& alpha,
                                      DistanceKind kind = DistanceKind::state) {
    if (!(epsilon > 0.0)) {
        throw ValidationError("turnpike report: epsilon must be > 0");
    }
    const int depth = prof.depth();
    const auto& dist = kind == DistanceKind::state ? prof.mean_dist : prof.mean_state_input_dist;
    if (static_cast<int>(dist.size()) != depth + 1 ||
        static_cast<int>(prof.stage_cost.size()) != depth + 1 ||
        static_cast<int>(prof.mean_alpha.size()) != depth + 1 ||
        static_cast<int>(prof.penalty.size()) != depth) {
        throw ValidationError("turnpike report: inconsistent profile lengths");
    }

    TurnpikeReport r;
    r.epsilon = epsilon;
    r.distance = kind;
    r.depth = depth;
    for (int k = 0; k < depth; ++k) {
        if (dist[k] <= epsilon) {
            r.q_eps.push_back(k);
        }
    }
    r.complement_count = depth - static_cast<int>(r.q_eps.size());
    r.entry_layer = depth;
    while (r.entry_layer > 0 && dist[r.entry_layer - 1] <= epsilon) {
        --r.entry_layer;
    }

    r.alpha_epsilon = alpha(epsilon);
    r.complement_alpha = r.complement_count * r.alpha_epsilon;
    r.min_dissipation_margin = depth > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    for (int k = 0; k < depth; ++k) {
        r.alpha_distance_sum += alpha(dist[k]);
        const double stage = prof.stage_cost[k] + prof.penalty[k];
        r.stage_cost_sum += stage;
        const double margin = stage - prof.mean_alpha[k];
        r.min_dissipation_margin = std::min(r.min_dissipation_margin, margin);
        r.dissipation_ok.push_back(margin >= -kDissipationTolerance);
    }
    r.cardinality_bound = r.alpha_epsilon > 0.0 ? r.alpha_distance_sum / r.alpha_epsilon : 0.0;
    r.cardinality_ok = r.complement_alpha <= r.alpha_distance_sum;
    r.chain_ok = r.alpha_distance_sum <= r.stage_cost_sum + kDissipationTolerance;
    return r;
}

/// 0.1 |delta|: a tenth of the logit gap on the minimizer lines.
inline double default_epsilon(const SmoothingSpec& smoothing) {
    return 0.1 * std::abs(smoothing.delta());
}

/// Ten log-spaced thresholds from 0.01 |delta| to |delta|.
inline std::vector<double> epsilon_sweep(const SmoothingSpec& smoothing) {
    const double hi = std::abs(smoothing.delta());
    const double lo = 0.01 * hi;
    std::vector<double> eps;
    for (int i = 0; i < 10; ++i) {
        eps.push_back(lo * std::pow(hi / lo, i / 9.0));
    }
    return eps;
}

/// Keeps layers 0 .. entry_layer + margin - 1.
inline NetworkParams crop(const NetworkParams& params, int entry_layer, int margin) {
    const int depth = entry_layer + margin;
    if (entry_layer < 0 || margin < 0 || depth > params.depth()) {
        throw ValidationError("crop: depth " + std::to_string(depth) + " outside [0, " +
                              std::to_string(params.depth()) + "]");
    }
    NetworkParams out = params;
    out.layers.resize(static_cast<std::size_t>(depth));
    return out;
}

inline void write_profile_csv(std::ostream& out, const LayerProfile& p) {
    out << "layer,mean_dist,max_dist,stacked_dist,stage_cost,param_norm\n";
    for (std::size_t k = 0; k < p.mean_dist.size(); ++k) {
        out << k << ',' << format_double(p.mean_dist[k]) << ',' << format_double(p.max_dist[k])
            << ',' << format_double(p.stacked_dist[k]) << ',' << format_double(p.stage_cost[k])
            << ',';
        if (k < p.param_norm.size()) {
            out << format_double(p.param_norm[k]);
        }
        out << '\n';
    }
}

inline void write_report(std::ostream& out, const TurnpikeReport& r) {
    auto join = [](const auto& xs) {
        std::string s;
        for (const auto& x : xs) {
            if (!s.empty()) {
                s += ' ';
            }
            s += std::to_string(static_cast<int>(x));
        }
        return s;
    };
    out << "epsilon = " << format_double(r.epsilon) << '\n'
        << "distance = " << to_string(r.distance) << '\n'
        << "depth = " << r.depth << '\n'
        << "q_eps = " << join(r.q_eps) << '\n'
        << "q_eps_count = " << r.q_eps.size() << '\n'
        << "q_eps_complement_count = " << r.complement_count << '\n'
        << "entry_layer = " << r.entry_layer << '\n'
        << "alpha_epsilon = " << format_double(r.alpha_epsilon) << '\n'
        << "complement_alpha_epsilon = " << format_double(r.complement_alpha) << '\n'
        << "alpha_distance_sum = " << format_double(r.alpha_distance_sum) << '\n'
        << "cardinality_bound = " << format_double(r.cardinality_bound) << '\n'
        << "cardinality_ok = " << (r.cardinality_ok ? "true" : "false") << '\n'
        << "stage_cost_sum = " << format_double(r.stage_cost_sum) << '\n'
        << "bound_chain_ok = " << (r.chain_ok ? "true" : "false") << '\n'
        << "dissipation_ok = " << (r.all_dissipative() ? "true" : "false") << '\n'
        << "dissipation_flags = " << join(r.dissipation_ok) << '\n'
        << "min_dissipation_margin = " << format_double(r.min_dissipation_margin) << '\n';
}

} // namespace tpnet
