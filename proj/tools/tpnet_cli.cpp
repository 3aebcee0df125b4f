// tpnet: train residual networks with a soft cross-entropy stage cost and
// inspect the turnpike structure of the result.
//
//   tpnet gen-data   --recipe two-spirals --out out/data
//   tpnet train      --recipe two-spirals --out out/spirals
//   tpnet diagnose   --config out/spirals/config.ini --checkpoint out/spirals/checkpoint.txt --sweep
//   tpnet crop       --config out/spirals/config.ini --checkpoint out/spirals/checkpoint.txt --margin 2
//   tpnet grad-check --trials 20
//
// Exit status: 0 success, 1 validation or parse error, 2 numerical failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tpnet/tpnet.hpp"

namespace {

struct ConfigFlags {
    std::string config;
    std::string recipe;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string epsilon;
    std::optional<int> margin;
    std::optional<int> epochs;
    std::optional<long long> limit;
    bool sweep = false;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "INI configuration file");
        cmd->add_option("--recipe", recipe, "built-in recipe used as the base: two-spirals, mnist-subset");
        cmd->add_option("--out", out, "output directory (output.dir)");
        cmd->add_option("--seed", seed, "seed for initialization and batch order (network.seed, optimizer.seed)");
        cmd->add_option("--epsilon", epsilon, "turnpike threshold, or 'auto' for 0.1 |delta|");
        cmd->add_option("--margin", margin, "layers kept after the turnpike entry when cropping");
        cmd->add_option("--epochs", epochs, "training epochs (optimizer.epochs)");
        cmd->add_option("--limit", limit, "number of MNIST samples to load, 0 for all (dataset.limit)");
        cmd->add_flag("--sweep", sweep, "also write reports over 10 log-spaced epsilons");
        cmd->add_option("--set", overrides, "override any key: section.key=value (repeatable)");
    }

    tpnet::ExperimentConfig resolve() const {
        tpnet::ExperimentConfig cfg = recipe.empty() ? tpnet::ExperimentConfig{} : tpnet::recipe(recipe);
        if (!config.empty()) {
            cfg = tpnet::load_config(config, cfg);
        }
        for (const auto& o : overrides) {
            tpnet::apply_override(cfg, o);
        }
        if (!out.empty()) cfg.output_dir = out;
        if (seed) {
            cfg.network.seed = *seed;
            cfg.optimizer.seed = *seed;
        }
        if (!epsilon.empty()) tpnet::set_config_value(cfg, "diagnostics.epsilon", epsilon);
        if (margin) cfg.diagnostics.margin = *margin;
        if (epochs) cfg.optimizer.epochs = *epochs;
        if (limit) cfg.dataset.limit = *limit;
        if (sweep) cfg.diagnostics.sweep = true;
        cfg.validate();
        return cfg;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Residual network training with a dissipative soft cross-entropy objective"};
    app.require_subcommand(1);

    ConfigFlags gen_flags, train_flags, diag_flags, crop_flags;
    auto* gen = app.add_subcommand("gen-data", "write the configured dataset as CSV");
    gen_flags.attach(gen);

    auto* train = app.add_subcommand("train", "train, then write checkpoint, history, profile and report");
    train_flags.attach(train);

    std::string diag_ckpt, crop_ckpt;
    auto* diag = app.add_subcommand("diagnose", "profile and turnpike report for a checkpoint");
    diag_flags.attach(diag);
    diag->add_option("--checkpoint", diag_ckpt, "checkpoint file")->required();

    auto* cropc = app.add_subcommand("crop", "crop a checkpoint at its turnpike entry plus a margin");
    crop_flags.attach(cropc);
    cropc->add_option("--checkpoint", crop_ckpt, "checkpoint file")->required();

    tpnet::GradCheckOptions gc;
    auto* grad = app.add_subcommand("grad-check", "compare backward against finite differences");
    grad->add_option("--trials", gc.trials, "instances per architecture and stage mode")
        ->check(CLI::NonNegativeNumber);
    grad->add_option("--seed", gc.seed, "instance seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            tpnet::run_gen_data(gen_flags.resolve(), std::cout);
        } else if (train->parsed()) {
            const auto s = tpnet::run_train(train_flags.resolve(), std::cout);
            if (!s.dissipative) {
                std::cerr << "warning: dissipation check failed on some layer\n";
            }
        } else if (diag->parsed()) {
            tpnet::run_diagnose(diag_flags.resolve(), diag_ckpt, std::cout);
        } else if (cropc->parsed()) {
            tpnet::run_crop(crop_flags.resolve(), crop_ckpt, std::cout);
        } else if (grad->parsed()) {
            return tpnet::run_gradcheck(gc, std::cout) ? 0 : 2;
        }
    } catch (const tpnet::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
