#pragma once

// Soft (label-smoothed) cross-entropy on the class slice of a state vector,
// together with the geometry of its minimizer set.
//
// Class labels are 0-based throughout the library. Only the first C components
// of a state (the class slice) enter the loss; any further components are
// ignored by the loss and the distance, and receive zero gradient.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpnet/error.hpp"

namespace tpnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorCRef = Eigen::Ref<const Eigen::VectorXd>;

/// Label smoothing: probability `p_d` on the labelled class, the rest spread
/// uniformly over the other `C - 1` classes.
class SmoothingSpec {
public:
    SmoothingSpec(int num_classes, double p_d) : num_classes_(num_classes), p_d_(p_d) {
        if (num_classes < 2) {
            throw ValidationError("smoothing: num_classes must be >= 2, got " +
                                  std::to_string(num_classes));
        }
        if (!(p_d > 1.0 / num_classes) || !(p_d < 1.0)) {
            throw ValidationError("smoothing: p_d must lie in (1/C, 1) = (" +
                                  std::to_string(1.0 / num_classes) + ", 1), got " +
                                  std::to_string(p_d));
        }
        off_target_ = (1.0 - p_d) / (num_classes - 1);
        log_p_d_ = std::log(p_d);
        log_off_target_ = std::log(off_target_);
        delta_ = -std::log((num_classes - 1) * p_d / (1.0 - p_d));
        // Entropy of the target distribution; identical for every label.
        offset_ = -(p_d * log_p_d_ + (1.0 - p_d) * log_off_target_);
        if (!(delta_ < 0.0)) {
            throw ValidationError("smoothing: derived delta is not negative");
        }
    }

    int num_classes() const noexcept { return num_classes_; }
    double p_d() const noexcept { return p_d_; }
    /// Probability assigned to each non-labelled class.
    double off_target() const noexcept { return off_target_; }
    /// Gap between the off-label components and the label component on a minimizer.
    double delta() const noexcept { return delta_; }
    /// Minimum of the un-offset cross-entropy; subtracted so the loss minimum is 0.
    double offset() const noexcept { return offset_; }
    double log_p_d() const noexcept { return log_p_d_; }
    double log_off_target() const noexcept { return log_off_target_; }

    void check_label(int label) const {
        if (label < 0 || label >= num_classes_) {
            throw ValidationError("label " + std::to_string(label) + " out of range [0, " +
                                  std::to_string(num_classes_) + ")");
        }
    }

private:
    int num_classes_;
    double p_d_;
    double off_target_;
    double log_p_d_;
    double log_off_target_;
    double delta_;
    double offset_;
};

namespace detail {

inline void check_class_slice(const VectorCRef& x, int num_classes) {
    if (x.size() < num_classes) {
        throw ValidationError("state has " + std::to_string(x.size()) +
                              " components, fewer than the " + std::to_string(num_classes) +
                              " classes");
    }
}

inline void check_finite(const VectorCRef& x, int count) {
    for (int i = 0; i < count; ++i) {
        if (!std::isfinite(x[i])) {
            throw ValidationError("non-finite state component at index " + std::to_string(i));
        }
    }
}

} // namespace detail

/// log p(i|x) for the first `num_classes` components, max-shifted for stability.
inline Vector log_softmax(const VectorCRef& x, int num_classes) {
    detail::check_class_slice(x, num_classes);
    detail::check_finite(x, num_classes);
    const auto slice = x.head(num_classes);
    const double shift = slice.maxCoeff();
    const double log_norm = std::log((slice.array() - shift).exp().sum());
    return (slice.array() - shift - log_norm).matrix();
}

inline Vector softmax(const VectorCRef& x, int num_classes) {
    return log_softmax(x, num_classes).array().exp().matrix();
}

inline Vector soft_targets(int label, const SmoothingSpec& spec) {
    spec.check_label(label);
    Vector q = Vector::Constant(spec.num_classes(), spec.off_target());
    q[label] = spec.p_d();
    return q;
}

/// Cross-entropy against the smoothed targets minus its minimum. Evaluated as
/// sum_i q_i (log q_i - log p_i), which is 0 exactly when p(x) equals the targets.
inline double soft_ce(const VectorCRef& x, int label, const SmoothingSpec& spec) {
    spec.check_label(label);
    const Vector logp = log_softmax(x, spec.num_classes());
    double value = 0.0;
    for (int i = 0; i < spec.num_classes(); ++i) {
        if (i == label) {
            value += spec.p_d() * (spec.log_p_d() - logp[i]);
        } else {
            value += spec.off_target() * (spec.log_off_target() - logp[i]);
        }
    }
    return value;
}

/// Gradient of soft_ce with respect to the full state; zero beyond the class slice.
inline Vector soft_ce_gradient(const VectorCRef& x, int label, const SmoothingSpec& spec) {
    spec.check_label(label);
    Vector grad = Vector::Zero(x.size());
    grad.head(spec.num_classes()) = softmax(x, spec.num_classes()) - soft_targets(label, spec);
    return grad;
}

/// Plain cross-entropy with one-hot targets, -log p(label|x).
inline double hard_ce(const VectorCRef& x, int label, int num_classes) {
    if (label < 0 || label >= num_classes) {
        throw ValidationError("label " + std::to_string(label) + " out of range");
    }
    return -log_softmax(x, num_classes)[label];
}

inline Vector hard_ce_gradient(const VectorCRef& x, int label, int num_classes) {
    if (label < 0 || label >= num_classes) {
        throw ValidationError("label " + std::to_string(label) + " out of range");
    }
    Vector grad = Vector::Zero(x.size());
    grad.head(num_classes) = softmax(x, num_classes);
    grad[label] -= 1.0;
    return grad;
}

/// diag(p) - p p^T on the class slice. Shared by the soft and the hard loss.
inline Matrix soft_ce_hessian(const VectorCRef& x, int num_classes) {
    const Vector p = softmax(x, num_classes);
    Matrix h = -p * p.transpose();
    h.diagonal() += p;
    return h;
}

/// (I - 11^T / C) v: removes the component mean. Applied to a class slice.
inline Vector invariance_transform(const VectorCRef& v) {
    return (v.array() - v.mean()).matrix();
}

/// The set of minimizers of soft_ce for one label: base_point + t * 1.
struct MinimizerLine {
    int label;
    Vector base_point; // unique point of the line with zero component sum

    bool contains(const VectorCRef& x, double tol) const {
        const int c = static_cast<int>(base_point.size());
        const double shift = x[label] - base_point[label];
        return ((x.head(c).array() - shift) - base_point.array()).abs().maxCoeff() <= tol;
    }
};

/// Base point: -(C-1)/C * delta at the label, delta/C elsewhere. This is the
/// projection of (0, delta, ..., delta) onto the zero-sum subspace.
inline MinimizerLine minimizer_line(int label, const SmoothingSpec& spec) {
    spec.check_label(label);
    const int c = spec.num_classes();
    const double delta = spec.delta();
    Vector base = Vector::Constant(c, delta / c);
    base[label] = -(c - 1) * delta / c;

    const double sum = base.sum();
    if (std::abs(sum) > 1e-12) {
        throw NumericalError("minimizer base point has component sum " + std::to_string(sum));
    }
    for (int i = 0; i < c; ++i) {
        if (i != label && std::abs(base[i] - (base[label] + delta)) > 1e-12) {
            throw NumericalError("minimizer base point is off its line");
        }
    }
    return {label, std::move(base)};
}

/// Euclidean distance from the class slice of x to the minimizer line of `label`.
inline double dist_to_minimizers(const VectorCRef& x, int label, const SmoothingSpec& spec) {
    spec.check_label(label);
    detail::check_class_slice(x, spec.num_classes());
    const int c = spec.num_classes();
    const double delta = spec.delta();
    const double mean = x.head(c).mean();
    double sq = 0.0;
    for (int i = 0; i < c; ++i) {
        const double base = (i == label) ? -(c - 1) * delta / c : delta / c;
        const double diff = (x[i] - mean) - base;
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

struct LowerBoundOptions {
    int num_directions = 256;
    int num_radii = 64;
    double min_radius = 1e-6;
    double max_radius = 50.0;
    int refine_seeds = 4;
    std::uint64_t seed = 0x5eed;
};

/// Numerically constructed class-K lower bound alpha with
/// soft_ce(x, y) >= alpha(dist(x, M_y)) for every x and y.
///
/// For each radius s_i of a geometric grid, the radial envelope g(s_i) is the
/// smallest loss over sampled unit directions d orthogonal to 1 (structured
/// coordinate and pairwise directions plus random ones), each best candidate
/// refined by descent along the sphere. The knots (s_{i+1}, g_min(s_i)) are
/// lagged by one cell, so between grid points the bound never exceeds the
/// envelope at a smaller radius. The result is the lower convex hull of those
/// knots and the origin. The loss is convex along rays from the base point
/// with minimum 0, so beyond the grid it grows at least like the chord
/// a_L * s / s_L through the last knot; the hull is cut where its slope exceeds
/// that chord slope and continued linearly with it.
///
/// Convexity makes alpha(mean distance) <= mean alpha(distance).
/// Labels are symmetric, so the envelope is built for label 0 only.
class ClassKBound {
public:
    ClassKBound() = default;

    double operator()(double s) const {
        if (!(s > 0.0) || knots_s_.empty()) {
            return 0.0;
        }
        if (s >= knots_s_.back()) {
            return knots_a_.back() + tail_slope_ * (s - knots_s_.back());
        }
        const auto it = std::upper_bound(knots_s_.begin(), knots_s_.end(), s);
        const auto hi = static_cast<std::size_t>(it - knots_s_.begin());
        const std::size_t lo = hi - 1;
        const double t = (s - knots_s_[lo]) / (knots_s_[hi] - knots_s_[lo]);
        return knots_a_[lo] + t * (knots_a_[hi] - knots_a_[lo]);
    }

    const std::vector<double>& radii() const noexcept { return radii_; }
    /// Monotone envelope value at each grid radius.
    const std::vector<double>& envelope() const noexcept { return envelope_; }
    const std::vector<double>& knot_radii() const noexcept { return knots_s_; }
    const std::vector<double>& knot_values() const noexcept { return knots_a_; }

private:
    friend ClassKBound lower_bound_alpha(const SmoothingSpec&, const LowerBoundOptions&);

    std::vector<double> radii_;
    std::vector<double> envelope_;
    std::vector<double> knots_s_;
    std::vector<double> knots_a_;
    double tail_slope_ = 0.0;
};

namespace detail {

// Smallest loss on the sphere of radius s around the base point, starting
// from direction d. Moves along great circles inside the zero-sum subspace.
inline double refine_direction(Vector d, double s, const Vector& base, const SmoothingSpec& spec) {
    auto loss = [&](const Vector& dir) { return soft_ce(base + s * dir, 0, spec); };
    double best = loss(d);
    double angle = 0.5;
    for (int iter = 0; iter < 200 && angle > 1e-12; ++iter) {
        Vector g = softmax(base + s * d, spec.num_classes()) - soft_targets(0, spec);
        g.array() -= g.mean();
        g -= g.dot(d) * d;
        const double norm = g.norm();
        if (norm < 1e-300) {
            break;
        }
        g /= norm;
        bool improved = false;
        while (angle > 1e-12) {
            Vector trial = std::cos(angle) * d - std::sin(angle) * g;
            trial.array() -= trial.mean();
            trial.normalize();
            const double value = loss(trial);
            if (value < best) {
                best = value;
                d = std::move(trial);
                improved = true;
                angle = std::min(2.0 * angle, 1.0);
                break;
            }
            angle *= 0.5;
        }
        if (!improved) {
            break;
        }
    }
    return best;
}

inline std::vector<Vector> bound_directions(int c, const LowerBoundOptions& opts) {
    std::vector<Vector> dirs;
    auto push = [&](Vector v) {
        v.array() -= v.mean();
        const double n = v.norm();
        if (n > 1e-12) {
            dirs.push_back(v / n);
        }
    };
    for (int i = 0; i < c; ++i) {
        push(Vector::Unit(c, i));
        push(-Vector::Unit(c, i));
    }
    for (int a = 0; a < c; ++a) {
        for (int b = 0; b < c; ++b) {
            if (a != b) {
                push(Vector::Unit(c, a) - Vector::Unit(c, b));
            }
        }
    }
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    while (static_cast<int>(dirs.size()) < opts.num_directions) {
        Vector v(c);
        for (int i = 0; i < c; ++i) {
            v[i] = normal(rng);
        }
        push(std::move(v));
    }
    return dirs;
}

} // namespace detail

inline ClassKBound lower_bound_alpha(const SmoothingSpec& spec,
                                     const LowerBoundOptions& opts = LowerBoundOptions{}) {
    if (opts.num_radii < 2 || !(opts.min_radius > 0.0) || !(opts.max_radius > opts.min_radius)) {
        throw ValidationError("lower bound: invalid radius grid");
    }
    const Vector base = minimizer_line(0, spec).base_point;
    const std::vector<Vector> dirs = detail::bound_directions(spec.num_classes(), opts);

    ClassKBound bound;
    const int m = opts.num_radii;
    const double ratio = std::pow(opts.max_radius / opts.min_radius, 1.0 / (m - 1));
    std::vector<double> raw(m);
    for (int i = 0; i < m; ++i) {
        const double s = (i == m - 1) ? opts.max_radius : opts.min_radius * std::pow(ratio, i);
        bound.radii_.push_back(s);

        std::vector<std::pair<double, int>> values;
        values.reserve(dirs.size());
        for (int k = 0; k < static_cast<int>(dirs.size()); ++k) {
            values.emplace_back(soft_ce(base + s * dirs[k], 0, spec), k);
        }
        const int seeds = std::min<int>(opts.refine_seeds, static_cast<int>(values.size()));
        std::partial_sort(values.begin(), values.begin() + seeds, values.end());
        double best = values.front().first;
        for (int k = 0; k < seeds; ++k) {
            best = std::min(best, detail::refine_direction(dirs[values[k].second], s, base, spec));
        }
        raw[i] = best;
    }

    // Running minimum from the right makes the envelope non-decreasing.
    bound.envelope_ = raw;
    for (int i = m - 2; i >= 0; --i) {
        bound.envelope_[i] = std::min(bound.envelope_[i], bound.envelope_[i + 1]);
    }

    std::vector<std::array<double, 2>> knots{{0.0, 0.0}};
    for (int i = 0; i + 1 < m; ++i) {
        knots.push_back({bound.radii_[i + 1], bound.envelope_[i]});
    }
    // Lower convex hull; knots are sorted by radius.
    std::vector<std::array<double, 2>> hull;
    for (const auto& k : knots) {
        while (hull.size() >= 2) {
            const auto& a = hull[hull.size() - 2];
            const auto& b = hull[hull.size() - 1];
            const double cross = (b[0] - a[0]) * (k[1] - a[1]) - (b[1] - a[1]) * (k[0] - a[0]);
            if (cross <= 0.0) {
                hull.pop_back();
            } else {
                break;
            }
        }
        hull.push_back(k);
    }
    // Past the grid only the ray bound a_L * s / s_L is known. Cap the hull
    // slope at that chord slope: the bound stays convex and never exceeds the
    // ray bound, since it lies below the chord from the origin everywhere.
    const double chord = hull.back()[1] / hull.back()[0];
    bound.tail_slope_ = chord;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        bound.knots_s_.push_back(hull[i][0]);
        bound.knots_a_.push_back(hull[i][1]);
        if (i + 1 < hull.size() &&
            (hull[i + 1][1] - hull[i][1]) / (hull[i + 1][0] - hull[i][0]) > chord) {
            break;
        }
    }
    return bound;
}

} // namespace tpnet
