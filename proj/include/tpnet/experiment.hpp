#pragma once

// Experiment drivers behind the command-line subcommands. Every artifact is
// written below the configured output directory:
//
//   config.ini       effective configuration (re-runnable)
//   dataset.csv      gen-data only
//   checkpoint.txt   trained parameters
//   history.csv      one row per epoch
//   profile.csv      per-layer distances and stage costs
//   report.txt       turnpike report at the configured epsilon
//   sweep/eps_XX.txt turnpike reports over the epsilon sweep (diagnostics.sweep)
//   cropped.txt      crop only: the cropped checkpoint
//   crop.txt         crop only: full vs cropped comparison

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include "tpnet/checkpoint.hpp"
#include "tpnet/config.hpp"
#include "tpnet/data.hpp"
#include "tpnet/error.hpp"
#include "tpnet/gradcheck.hpp"
#include "tpnet/resnet.hpp"
#include "tpnet/softce.hpp"
#include "tpnet/train.hpp"
#include "tpnet/turnpike.hpp"

namespace tpnet {

namespace detail {

inline std::filesystem::path prepare_output(const ExperimentConfig& cfg) {
    const std::filesystem::path dir(cfg.output_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw ValidationError(cfg.output_dir + ": cannot create output directory: " + ec.message());
    }
    return dir;
}

template <typename Fn>
void write_file(const std::filesystem::path& path, Fn&& body) {
    std::ofstream out(path);
    if (!out) {
        throw ValidationError(path.string() + ": cannot open for writing");
    }
    body(out);
    if (!out) {
        throw ValidationError(path.string() + ": write failed");
    }
}

inline void check_compatible(const NetworkParams& params, int num_classes, const Dataset& ds) {
    if (params.state_dim != ds.dim()) {
        throw ValidationError("checkpoint state_dim " + std::to_string(params.state_dim) +
                              " does not match dataset feature dimension " +
                              std::to_string(ds.dim()));
    }
    if (num_classes != ds.num_classes) {
        throw ValidationError("checkpoint num_classes " + std::to_string(num_classes) +
                              " does not match dataset class count " +
                              std::to_string(ds.num_classes));
    }
}

} // namespace detail

struct Diagnostics {
    LayerProfile profile;
    TurnpikeReport report;
    std::vector<TurnpikeReport> sweep;
};

/// Profile, report and optional sweep for a network over a dataset; writes
/// profile.csv, report.txt and sweep/ below `dir`.
inline Diagnostics diagnose_network(const NetworkParams& params, const Dataset& ds,
                                    const SmoothingSpec& smoothing, const ExperimentConfig& cfg,
                                    const std::filesystem::path& dir) {
    const ClassKBound alpha = lower_bound_alpha(smoothing);
    Diagnostics d;
    d.profile = profile(params, ds, smoothing, cfg.objective.objective_penalty(), alpha);
    const double eps = cfg.diagnostics.epsilon ? *cfg.diagnostics.epsilon
                                               : default_epsilon(smoothing);
    d.report = turnpike_report(d.profile, eps, alpha, cfg.diagnostics.distance);
    detail::write_file(dir / "profile.csv", [&](std::ostream& o) { write_profile_csv(o, d.profile); });
    detail::write_file(dir / "report.txt", [&](std::ostream& o) { write_report(o, d.report); });
    if (cfg.diagnostics.sweep) {
        std::filesystem::create_directories(dir / "sweep");
        const auto eps_values = epsilon_sweep(smoothing);
        for (std::size_t i = 0; i < eps_values.size(); ++i) {
            d.sweep.push_back(turnpike_report(d.profile, eps_values[i], alpha, cfg.diagnostics.distance));
            std::ostringstream name;
            name << "eps_" << std::setw(2) << std::setfill('0') << i << ".txt";
            detail::write_file(dir / "sweep" / name.str(),
                               [&](std::ostream& o) { write_report(o, d.sweep.back()); });
        }
    }
    return d;
}

struct TrainSummary {
    double accuracy = 0.0;
    double objective = 0.0;
    int entry_layer = 0;
    int depth = 0;
    bool dissipative = false;
    NetworkParams params;
    Diagnostics diagnostics;
};

/// Writes the effective configuration and the generated or loaded dataset.
inline Dataset run_gen_data(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const Dataset ds = make_dataset(cfg);
    const auto dir = detail::prepare_output(cfg);
    detail::write_file(dir / "config.ini", [&](std::ostream& o) { write_config(o, cfg); });
    detail::write_file(dir / "dataset.csv", [&](std::ostream& o) { write_dataset_csv(o, ds); });
    log << "wrote " << ds.size() << " samples (" << ds.dim() << " features, " << ds.num_classes
        << " classes) to " << (dir / "dataset.csv").string() << '\n';
    return ds;
}

/// Trains per the configuration and writes every artifact. Divergence writes
/// the history and last good checkpoint, then raises a NumericalError.
inline TrainSummary run_train(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const SmoothingSpec smoothing = cfg.smoothing();
    const Dataset ds = make_dataset(cfg);
    if (ds.dim() != cfg.network.state_dim) {
        throw ValidationError("dataset feature dimension " + std::to_string(ds.dim()) +
                              " does not match network.state_dim " +
                              std::to_string(cfg.network.state_dim));
    }
    const auto dir = detail::prepare_output(cfg);
    detail::write_file(dir / "config.ini", [&](std::ostream& o) { write_config(o, cfg); });

    NetworkParams net = make_network(cfg.network.arch, cfg.network.depth, cfg.network.state_dim,
                                     cfg.network.hidden_dim, cfg.network.activation1,
                                     cfg.network.activation2);
    initialize_uniform(net, cfg.network.seed);
    FitResult fitted = fit(std::move(net), ds, smoothing, cfg.train_options());

    detail::write_file(dir / "history.csv",
                       [&](std::ostream& o) { write_history_csv(o, fitted.history); });
    save_checkpoint((dir / "checkpoint.txt").string(),
                    Checkpoint{fitted.params, smoothing.num_classes(), smoothing.p_d()});
    if (fitted.diverged) {
        throw NumericalError("training diverged at " + fitted.failure);
    }

    TrainSummary s;
    s.diagnostics = diagnose_network(fitted.params, ds, smoothing, cfg, dir);
    s.accuracy = accuracy(fitted.params, ds);
    s.objective = fitted.history.empty()
                      ? objective_chunked(fitted.params, ds.features, ds.labels, cfg.objective,
                                          smoothing)
                            .value
                      : fitted.history.back().objective;
    s.entry_layer = s.diagnostics.report.entry_layer;
    s.depth = fitted.params.depth();
    s.dissipative = s.diagnostics.report.all_dissipative();
    s.params = std::move(fitted.params);
    log << "accuracy " << format_double(s.accuracy) << ", entry layer " << s.entry_layer << "/"
        << s.depth << ", objective " << format_double(s.objective) << '\n';
    return s;
}

/// Profile and turnpike report for a saved checkpoint, without retraining.
inline Diagnostics run_diagnose(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                                std::ostream& log) {
    cfg.validate();
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Dataset ds = make_dataset(cfg);
    detail::check_compatible(ck.params, ck.num_classes, ds);
    const auto dir = detail::prepare_output(cfg);
    detail::write_file(dir / "config.ini", [&](std::ostream& o) { write_config(o, cfg); });
    Diagnostics d = diagnose_network(ck.params, ds, ck.smoothing(), cfg, dir);
    log << "entry layer " << d.report.entry_layer << "/" << d.report.depth << ", |Q_eps| "
        << d.report.q_eps.size() << ", dissipation "
        << (d.report.all_dissipative() ? "ok" : "VIOLATED") << '\n';
    return d;
}

struct CropSummary {
    bool cropped = false;
    int full_depth = 0;
    int entry_layer = 0;
    int margin = 0;
    int cropped_depth = 0;
    double full_accuracy = 0.0;
    double cropped_accuracy = 0.0;
};

/// Crops a checkpoint at its turnpike entry plus `margin` layers.
inline CropSummary run_crop(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                            std::ostream& log) {
    cfg.validate();
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Dataset ds = make_dataset(cfg);
    detail::check_compatible(ck.params, ck.num_classes, ds);
    const auto dir = detail::prepare_output(cfg);
    detail::write_file(dir / "config.ini", [&](std::ostream& o) { write_config(o, cfg); });

    const SmoothingSpec smoothing = ck.smoothing();
    const ClassKBound alpha = lower_bound_alpha(smoothing);
    const LayerProfile prof = profile(ck.params, ds, smoothing, cfg.objective.objective_penalty(), alpha);
    const double eps = cfg.diagnostics.epsilon ? *cfg.diagnostics.epsilon
                                               : default_epsilon(smoothing);
    const TurnpikeReport rep = turnpike_report(prof, eps, alpha, cfg.diagnostics.distance);

    CropSummary s;
    s.full_depth = ck.params.depth();
    s.entry_layer = rep.entry_layer;
    s.full_accuracy = accuracy(ck.params, ds);
    if (rep.entry_layer == s.full_depth) {
        log << "warning: no turnpike found at epsilon " << format_double(eps)
            << " (entry layer = depth " << s.full_depth << "); no crop written\n";
        s.cropped_depth = s.full_depth;
        s.cropped_accuracy = s.full_accuracy;
    } else {
        s.margin = cfg.diagnostics.margin;
        if (s.entry_layer + s.margin > s.full_depth) {
            log << "note: margin " << s.margin << " clamped to " << s.full_depth - s.entry_layer
                << " (network depth " << s.full_depth << ")\n";
            s.margin = s.full_depth - s.entry_layer;
        }
        const NetworkParams cut = crop(ck.params, s.entry_layer, s.margin);
        s.cropped = true;
        s.cropped_depth = cut.depth();
        s.cropped_accuracy = accuracy(cut, ds);
        save_checkpoint((dir / "cropped.txt").string(), Checkpoint{cut, ck.num_classes, ck.p_d});
    }
    detail::write_file(dir / "crop.txt", [&](std::ostream& o) {
        o << "epsilon = " << format_double(eps) << '\n'
          << "full_depth = " << s.full_depth << '\n'
          << "entry_layer = " << s.entry_layer << '\n'
          << "cropped = " << (s.cropped ? "true" : "false") << '\n'
          << "margin = " << s.margin << '\n'
          << "cropped_depth = " << s.cropped_depth << '\n'
          << "full_accuracy = " << format_double(s.full_accuracy) << '\n'
          << "cropped_accuracy = " << format_double(s.cropped_accuracy) << '\n'
          << "accuracy_change = " << format_double(s.cropped_accuracy - s.full_accuracy) << '\n';
    });
    log << "depth " << s.full_depth << " -> " << s.cropped_depth << ", accuracy "
        << format_double(s.full_accuracy) << " -> " << format_double(s.cropped_accuracy) << '\n';
    return s;
}

inline constexpr double kGradCheckFailThreshold = 1e-4;

/// Finite-difference gradient check; returns true when every case is below
/// the failure threshold.
inline bool run_gradcheck(const GradCheckOptions& opts, std::ostream& log) {
    if (opts.trials == 0) {
        log << "warning: 0 trials requested; gradient check passes vacuously\n";
        return true;
    }
    const GradCheckResult r = run_gradient_check(opts);
    for (const auto& c : r.cases) {
        log << std::left << std::setw(11) << to_string(c.arch) << std::setw(8)
            << to_string(c.stage_mode) << " trials " << c.trials << "  max rel err "
            << format_double(c.max_rel_error);
        if (c.resampled > 0) {
            log << "  (" << c.resampled << " resampled near relu kinks)";
        }
        log << '\n';
    }
    const bool ok = r.max_rel_error < kGradCheckFailThreshold;
    log << (ok ? "PASS" : "FAIL") << ": max relative error " << format_double(r.max_rel_error)
        << " over " << r.trials << " instances";
    if (r.resampled > 0) {
        log << ", " << r.resampled << " resampled";
    }
    log << '\n';
    return ok;
}

} // namespace tpnet
