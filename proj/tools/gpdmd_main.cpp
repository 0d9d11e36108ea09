#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "experiment.hpp"
#include "gpdmd/errors.hpp"
#include "gpdmd/io.hpp"
#include "gpdmd/parallel.hpp"

namespace {

using gpdmd::cli::ExperimentConfig;

Eigen::VectorXd parse_point(const std::string& text, const std::string& what) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            size_t used = 0;
            values.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
            throw gpdmd::ConfigError(what + " must be comma-separated numbers, got \"" + text +
                                     "\"");
        }
    }
    if (values.empty()) throw gpdmd::ConfigError(what + " must not be empty");
    return Eigen::VectorXd::Map(values.data(), static_cast<Eigen::Index>(values.size()));
}

void emit_error(const char* type, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"]["type"] = type;
    j["error"]["message"] = message;
    std::cerr << gpdmd::dump_json(j, -1) << "\n";
}

int kind_exit_code(gpdmd::ErrorKind kind) {
    switch (kind) {
    case gpdmd::ErrorKind::config: return 2;
    case gpdmd::ErrorKind::numerical: return 3;
    case gpdmd::ErrorKind::io: return 4;
    }
    return 3;
}

const char* kind_name(gpdmd::ErrorKind kind) {
    switch (kind) {
    case gpdmd::ErrorKind::config: return "config";
    case gpdmd::ErrorKind::numerical: return "numerical";
    case gpdmd::ErrorKind::io: return "io";
    }
    return "numerical";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gpdmd: sparse Bayesian Koopman estimation and forecasting"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    int threads = 0;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", config_path, "experiment JSON file");
        if (config_required) opt->required();
        sub->add_option("--out", out_override, "output directory (overrides the config)");
        sub->add_option("--seed", seed_override, "dataset seed override");
        sub->add_option("--threads", threads, "cap on worker threads (0 = hardware)");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "generate trajectories and snapshots");
    add_common(simulate, true);

    CLI::App* fit = app.add_subcommand("fit", "estimate a Koopman model from a dataset");
    add_common(fit, true);
    int validate_lifted = 0;
    fit->add_option("--validate-lifted", validate_lifted,
                    "tune the decoupled lifted regularizer by forecast error at this "
                    "horizon on the training trajectories instead of by evidence");

    CLI::App* forecast = app.add_subcommand("forecast", "multi-step forecast from a model");
    add_common(forecast, false);
    std::string model_path;
    std::vector<std::string> x0_texts;
    int horizon = 0;
    double reproject_tol = -1.0;
    int z = 2;
    bool eigenfunction_output = false;
    forecast->add_option("--model", model_path, "model JSON file")->required();
    forecast->add_option("--x0", x0_texts, "initial state as comma-separated numbers")
        ->required();
    forecast->add_option("--horizon", horizon, "number of steps")->required();
    forecast->add_option("--reproject-tol", reproject_tol,
                         "variance norm that triggers relifting; negative = dimension "
                         "default, 0 = every step, inf = never");
    forecast->add_option("--z", z, "interval half-width in posterior deviations (1 or 2)");
    forecast->add_flag("--eigenfunctions", eigenfunction_output,
                       "also write per-step eigenfunction values and deviations");

    CLI::App* benchmark = app.add_subcommand(
        "benchmark", "compare spectral, kernel DMD, and GP rollout forecasters");
    add_common(benchmark, true);
    bool decoupled_study = false;
    benchmark->add_flag("--decoupled", decoupled_study,
                        "also run the lifted-regularizer three-way comparison");

    CLI::App* grid = app.add_subcommand("eigenfunctions",
                                        "evaluate model eigenfunctions over a planar grid");
    add_common(grid, false);
    std::string grid_model_path, grid_lo_text, grid_hi_text, grid_n_text;
    grid->add_option("--model", grid_model_path, "model JSON file")->required();
    grid->add_option("--grid-min", grid_lo_text, "lower corner, e.g. -2,-2")->required();
    grid->add_option("--grid-max", grid_hi_text, "upper corner, e.g. 2,2")->required();
    grid->add_option("--grid-n", grid_n_text, "resolution per axis, e.g. 80,60")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        emit_error("config", e.what());
        return 2;
    }

    try {
        gpdmd::set_max_threads(threads);
        ExperimentConfig config;
        bool have_config = !config_path.empty();
        if (have_config) {
            config = gpdmd::cli::load_experiment(config_path);
            if (app.get_subcommands().front()->count("--seed") > 0)
                config.dataset.seed = seed_override;
        }
        const std::string out_dir =
            !out_override.empty() ? out_override : (have_config ? config.out_dir : "out");

        if (simulate->parsed()) {
            gpdmd::cli::cmd_simulate(config, out_dir);
        } else if (fit->parsed()) {
            if (validate_lifted < 0)
                throw gpdmd::ConfigError("--validate-lifted must be a positive horizon");
            config.model.validation_horizon = validate_lifted;
            gpdmd::cli::cmd_fit(config, out_dir);
        } else if (forecast->parsed()) {
            gpdmd::cli::ForecastOptions options;
            options.model_path = model_path;
            for (const std::string& text : x0_texts)
                options.initial_states.push_back(parse_point(text, "--x0"));
            options.horizon = horizon;
            options.reproject_tol = reproject_tol;
            options.z = z;
            options.eigenfunctions = eigenfunction_output;
            gpdmd::cli::cmd_forecast(options, out_dir);
        } else if (benchmark->parsed()) {
            gpdmd::cli::cmd_benchmark(config, out_dir, decoupled_study);
        } else if (grid->parsed()) {
            gpdmd::cli::GridOptions options;
            options.model_path = grid_model_path;
            options.lo = parse_point(grid_lo_text, "--grid-min");
            options.hi = parse_point(grid_hi_text, "--grid-max");
            const Eigen::VectorXd n = parse_point(grid_n_text, "--grid-n");
            if (n.size() != 2) throw gpdmd::ConfigError("--grid-n needs two entries");
            options.nx = static_cast<int>(n(0));
            options.ny = static_cast<int>(n(1));
            gpdmd::cli::cmd_eigenfunctions(options, out_dir);
        }
    } catch (const gpdmd::Error& e) {
        emit_error(kind_name(e.kind()), e.what());
        return kind_exit_code(e.kind());
    } catch (const std::exception& e) {
        emit_error("numerical", e.what());
        return 3;
    }
    return 0;
}
