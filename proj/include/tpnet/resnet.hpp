#pragma once

// Residual networks as controlled discrete-time systems.
//
//   plain:      x_{k+1} = x_k + s(A_k x_k + b_k)
//   bottleneck: x_{k+1} = x_k + s2(A_{k,2} s1(A_{k,1} x_k + b_{k,1}) + b_{k,2})
//
// States of a whole dataset are stored as an n x D matrix, one column per
// sample, and every sample is driven by the same per-layer parameters.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tpnet/error.hpp"

namespace tpnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation { identity, tanh, relu };
enum class Architecture { plain, bottleneck };

inline std::string_view to_string(Activation a) {
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    }
    return "?";
}

inline std::string_view to_string(Architecture a) {
    return a == Architecture::plain ? "plain" : "bottleneck";
}

inline std::optional<Activation> parse_activation(std::string_view s) {
    if (s == "identity") return Activation::identity;
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    return std::nullopt;
}

inline std::optional<Architecture> parse_architecture(std::string_view s) {
    if (s == "plain") return Architecture::plain;
    if (s == "bottleneck") return Architecture::bottleneck;
    return std::nullopt;
}

// Every supported activation satisfies s(0) = 0.
inline Matrix activate(Activation a, const Matrix& z) {
    switch (a) {
    case Activation::identity: return z;
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    }
    return z;
}

// Derivative evaluated at the pre-activation. relu'(0) is taken as 0.
inline Matrix activate_derivative(Activation a, const Matrix& z) {
    switch (a) {
    case Activation::identity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::tanh: return (1.0 - z.array().tanh().square()).matrix();
    case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
    }
    return z;
}

/// One residual layer. `second`/`second_bias` are empty for the plain architecture.
struct LayerParams {
    Matrix first;       // A (plain, n x n) or A_1 (bottleneck, h x n)
    Vector first_bias;  // b or b_1
    Matrix second;      // A_2 (n x h)
    Vector second_bias; // b_2 (n)

    /// Squared norm of the vectorized layer parameters (weights and biases).
    double squared_norm() const {
        return first.squaredNorm() + first_bias.squaredNorm() + second.squaredNorm() +
               second_bias.squaredNorm();
    }

    Eigen::Index size() const {
        return first.size() + first_bias.size() + second.size() + second_bias.size();
    }

    // Visits (this tensor, other tensor) pairs in vectorization order:
    // first weights, first bias, second weights, second bias.
    template <typename Other, typename Fn>
    void zip(Other&& other, Fn&& fn) {
        fn(first, other.first);
        fn(first_bias, other.first_bias);
        fn(second, other.second);
        fn(second_bias, other.second_bias);
    }
    template <typename Other, typename Fn>
    void zip(Other&& other, Fn&& fn) const {
        fn(first, other.first);
        fn(first_bias, other.first_bias);
        fn(second, other.second);
        fn(second_bias, other.second_bias);
    }
};

struct NetworkParams {
    Architecture arch = Architecture::bottleneck;
    int state_dim = 0;
    int hidden_dim = 0; // bottleneck only
    Activation sigma1 = Activation::tanh;
    Activation sigma2 = Activation::identity; // bottleneck only
    std::vector<LayerParams> layers;

    int depth() const noexcept { return static_cast<int>(layers.size()); }

    /// Layer with every weight and bias zero, shaped for this network.
    LayerParams zero_layer() const {
        LayerParams l;
        if (arch == Architecture::plain) {
            l.first = Matrix::Zero(state_dim, state_dim);
            l.first_bias = Vector::Zero(state_dim);
            l.second = Matrix(0, 0);
            l.second_bias = Vector(0);
        } else {
            l.first = Matrix::Zero(hidden_dim, state_dim);
            l.first_bias = Vector::Zero(hidden_dim);
            l.second = Matrix::Zero(state_dim, hidden_dim);
            l.second_bias = Vector::Zero(state_dim);
        }
        return l;
    }

    /// Same shape, all parameters zero.
    NetworkParams zeros_like() const {
        NetworkParams z = *this;
        for (auto& l : z.layers) {
            l = zero_layer();
        }
        return z;
    }

    bool layer_shape_ok(const LayerParams& l) const {
        const bool plain = arch == Architecture::plain;
        const Eigen::Index rows1 = plain ? state_dim : hidden_dim;
        const Eigen::Index second_rows = plain ? 0 : state_dim;
        const Eigen::Index second_cols = plain ? 0 : hidden_dim;
        return l.first.rows() == rows1 && l.first.cols() == state_dim &&
               l.first_bias.size() == rows1 && l.second.rows() == second_rows &&
               l.second.cols() == second_cols && l.second_bias.size() == second_rows;
    }

    Eigen::Index num_parameters() const {
        Eigen::Index total = 0;
        for (const auto& l : layers) {
            total += l.size();
        }
        return total;
    }

    void validate() const {
        if (state_dim < 1) {
            throw ValidationError("network: state_dim must be >= 1");
        }
        if (arch == Architecture::bottleneck && hidden_dim < 1) {
            throw ValidationError("network: bottleneck hidden_dim must be >= 1");
        }
        for (int k = 0; k < depth(); ++k) {
            const auto& l = layers[k];
            if (!layer_shape_ok(l)) {
                throw ValidationError("network: layer " + std::to_string(k) +
                                      " has parameter shapes inconsistent with the architecture");
            }
            bool finite = true;
            l.zip(l, [&](const auto& a, const auto&) { finite = finite && a.allFinite(); });
            if (!finite) {
                throw ValidationError("network: layer " + std::to_string(k) +
                                      " has non-finite parameters");
            }
        }
    }
};

/// Gradient of a scalar objective, shaped like NetworkParams.
using ParamGradient = NetworkParams;

inline NetworkParams make_network(Architecture arch, int depth, int state_dim, int hidden_dim,
                                  Activation sigma1, Activation sigma2) {
    NetworkParams p;
    p.arch = arch;
    p.state_dim = state_dim;
    p.hidden_dim = arch == Architecture::bottleneck ? hidden_dim : 0;
    p.sigma1 = sigma1;
    p.sigma2 = arch == Architecture::bottleneck ? sigma2 : Activation::identity;
    p.validate();
    p.layers.assign(static_cast<std::size_t>(depth), p.zero_layer());
    return p;
}

/// Weights i.i.d. uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline void initialize_uniform(NetworkParams& params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&](Matrix& w) {
        if (w.size() == 0) {
            return;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                w(i, j) = dist(rng);
            }
        }
    };
    for (auto& l : params.layers) {
        fill(l.first);
        l.first_bias.setZero();
        fill(l.second);
        l.second_bias.setZero();
    }
}

/// Applies one residual layer to a batch of states (one column per sample).
inline Matrix layer_forward(const Matrix& x, const LayerParams& layer, const NetworkParams& net,
                            int layer_index = 0) {
    if (x.rows() != net.state_dim || !net.layer_shape_ok(layer)) {
        throw ValidationError("layer " + std::to_string(layer_index) + ": shape mismatch");
    }
    Matrix z = layer.first * x;
    z.colwise() += layer.first_bias;
    if (net.arch == Architecture::plain) {
        return x + activate(net.sigma1, z);
    }
    Matrix z2 = layer.second * activate(net.sigma1, z);
    z2.colwise() += layer.second_bias;
    return x + activate(net.sigma2, z2);
}

/// Per-layer stacked states; states[0] holds the input features.
struct EnsembleTrajectory {
    std::vector<Matrix> states; // depth + 1 entries, each state_dim x num_samples

    int depth() const noexcept { return static_cast<int>(states.size()) - 1; }
    Eigen::Index num_samples() const { return states.empty() ? 0 : states.front().cols(); }
};

namespace detail {

inline void check_finite_states(const Matrix& x, int layer) {
    if (x.allFinite()) {
        return;
    }
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (!x.col(j).allFinite()) {
            throw NumericalError("forward pass diverged: non-finite state at layer " +
                                 std::to_string(layer) + ", sample " + std::to_string(j));
        }
    }
}

} // namespace detail

inline EnsembleTrajectory forward_ensemble(const NetworkParams& params, const Matrix& features) {
    if (features.rows() != params.state_dim) {
        throw ValidationError("forward: feature dimension " + std::to_string(features.rows()) +
                              " does not match state_dim " + std::to_string(params.state_dim));
    }
    EnsembleTrajectory traj;
    traj.states.reserve(static_cast<std::size_t>(params.depth()) + 1);
    traj.states.push_back(features);
    detail::check_finite_states(features, 0);
    for (int k = 0; k < params.depth(); ++k) {
        traj.states.push_back(layer_forward(traj.states.back(), params.layers[k], params, k));
        detail::check_finite_states(traj.states.back(), k + 1);
    }
    return traj;
}

/// Terminal states only; avoids keeping the whole trajectory.
inline Matrix forward_terminal(const NetworkParams& params, const Matrix& features) {
    if (features.rows() != params.state_dim) {
        throw ValidationError("forward: feature dimension " + std::to_string(features.rows()) +
                              " does not match state_dim " + std::to_string(params.state_dim));
    }
    Matrix x = features;
    for (int k = 0; k < params.depth(); ++k) {
        x = layer_forward(x, params.layers[k], params, k);
        detail::check_finite_states(x, k + 1);
    }
    return x;
}

/// Reverse-mode gradient of
///   J = sum_k s_k(x_k) + t(x_N) + sum_k p_k(u_k)
/// given dJ/dx_k for every layer (`stage_grads`, layers 0..N-1, may be empty for
/// "no stage term"), dJ/dx_N (`terminal_grad`) and the gradient of the
/// explicit parameter terms (`penalty_grads`, may be nullptr).
///
/// The adjoint runs from layer N down to 0:
///   lambda_N = dt/dx_N,  lambda_k = lambda_{k+1} + (df/dx_k)^T lambda_{k+1} + ds_k/dx_k.
inline ParamGradient backward(const NetworkParams& params, const EnsembleTrajectory& traj,
                              const Matrix& terminal_grad, const std::vector<Matrix>& stage_grads,
                              const ParamGradient* penalty_grads = nullptr) {
    const int depth = params.depth();
    if (traj.depth() != depth) {
        throw ValidationError("backward: trajectory depth " + std::to_string(traj.depth()) +
                              " does not match network depth " + std::to_string(depth));
    }
    const Eigen::Index samples = traj.num_samples();
    auto check_shape = [&](const Matrix& m, const std::string& what) {
        if (m.rows() != params.state_dim || m.cols() != samples) {
            throw ValidationError("backward: " + what + " has shape " + std::to_string(m.rows()) +
                                  "x" + std::to_string(m.cols()) + ", expected " +
                                  std::to_string(params.state_dim) + "x" + std::to_string(samples));
        }
    };
    check_shape(terminal_grad, "terminal gradient");
    if (!stage_grads.empty() && static_cast<int>(stage_grads.size()) != depth) {
        throw ValidationError("backward: expected " + std::to_string(depth) +
                              " stage gradients, got " + std::to_string(stage_grads.size()));
    }
    for (std::size_t k = 0; k < stage_grads.size(); ++k) {
        check_shape(stage_grads[k], "stage gradient " + std::to_string(k));
    }
    for (int k = 0; k <= depth; ++k) {
        check_shape(traj.states[k], "trajectory layer " + std::to_string(k));
    }

    ParamGradient grad = params.zeros_like();
    Matrix adjoint = terminal_grad;
    for (int k = depth - 1; k >= 0; --k) {
        const LayerParams& layer = params.layers[k];
        LayerParams& g = grad.layers[k];
        const Matrix& x = traj.states[k];

        Matrix z1 = layer.first * x;
        z1.colwise() += layer.first_bias;
        Matrix dz1;
        if (params.arch == Architecture::plain) {
            dz1 = adjoint.cwiseProduct(activate_derivative(params.sigma1, z1));
        } else {
            const Matrix h = activate(params.sigma1, z1);
            Matrix z2 = layer.second * h;
            z2.colwise() += layer.second_bias;
            const Matrix dz2 = adjoint.cwiseProduct(activate_derivative(params.sigma2, z2));
            g.second.noalias() = dz2 * h.transpose();
            g.second_bias = dz2.rowwise().sum();
            dz1 = (layer.second.transpose() * dz2)
                      .cwiseProduct(activate_derivative(params.sigma1, z1));
        }
        g.first.noalias() = dz1 * x.transpose();
        g.first_bias = dz1.rowwise().sum();
        adjoint.noalias() += layer.first.transpose() * dz1;
        if (!stage_grads.empty()) {
            adjoint += stage_grads[k];
        }
    }

    if (penalty_grads != nullptr) {
        for (int k = 0; k < depth; ++k) {
            grad.layers[k].zip(penalty_grads->layers[k],
                               [](auto& a, const auto& b) { a += b; });
        }
    }
    return grad;
}

/// Flattens parameters: per layer, row-major weights followed by the bias,
/// first block then second block.
inline Vector flatten(const NetworkParams& params) {
    Vector out(params.num_parameters());
    Eigen::Index pos = 0;
    for (const auto& l : params.layers) {
        l.zip(l, [&](const auto& a, const auto&) {
            using T = std::decay_t<decltype(a)>;
            if constexpr (T::ColsAtCompileTime == 1) {
                out.segment(pos, a.size()) = a;
            } else {
                for (Eigen::Index i = 0; i < a.rows(); ++i) {
                    out.segment(pos + i * a.cols(), a.cols()) = a.row(i).transpose();
                }
            }
            pos += a.size();
        });
    }
    return out;
}

inline void unflatten(const Vector& flat, NetworkParams& params) {
    if (flat.size() != params.num_parameters()) {
        throw ValidationError("unflatten: expected " + std::to_string(params.num_parameters()) +
                              " values, got " + std::to_string(flat.size()));
    }
    Eigen::Index pos = 0;
    for (auto& l : params.layers) {
        l.zip(l, [&](auto& a, auto&) {
            using T = std::decay_t<decltype(a)>;
            if constexpr (T::ColsAtCompileTime == 1) {
                a = flat.segment(pos, a.size());
            } else {
                for (Eigen::Index i = 0; i < a.rows(); ++i) {
                    a.row(i) = flat.segment(pos + i * a.cols(), a.cols()).transpose();
                }
            }
            pos += a.size();
        });
    }
}

} // namespace tpnet
