#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gpdmd/dynamics.hpp"
#include "gpdmd/koopman.hpp"
#include "gpdmd/model_selection.hpp"

namespace gpdmd::cli {

struct SystemSpec {
    std::string kind;     // vdp | double_well | quadruple_well
    double alpha = 2.0;   // van der Pol nonlinearity
    double dt = 0.05;     // sampling interval
    int substeps = 10;    // internal integrator steps per sample
    double sigma_t = 0.7; // SDE diffusion magnitude
};

struct DatasetSpec {
    int n_trajectories = 0;
    int trajectory_length = 0; // states per trajectory, pairs = length - 1
    Eigen::MatrixXd bounds;    // D x 2 box for initial conditions
    double noise_std = 0.0;    // sigma_Y on standardized successors
    std::uint64_t seed = 1;
    int lhs_candidates = 100;
    bool standardize = true;
};

struct ModelSpec {
    double init_lengthscale = 1.0;
    double init_signal_variance = 1.0;
    double init_noise_variance = 1e-2;
    double inducing_jitter = 0.0;
    std::string lifted_noise = "coupled"; // coupled | decoupled | zero
    double truncation_tol = 1e-10;
    double reprojection_tol = 0.0; // <= 0 derives the dimension default
    // set from the command line, not the config: > 0 tunes the decoupled
    // regularizer by forecast error at this horizon on the training
    // trajectories instead of by evidence
    int validation_horizon = 0;
};

struct EvalSpec {
    std::vector<int> horizons;
    int n_test = 0;
    std::uint64_t test_seed = 1337;
};

struct ExperimentConfig {
    SystemSpec system;
    DatasetSpec dataset;
    SelectionConfig selection;
    ModelSpec model;
    EvalSpec eval;
    std::string out_dir = "out";
    bool has_system = false;
    bool has_dataset = false;
    bool has_eval = false;
    nlohmann::ordered_json raw; // exact parsed document, hashed into manifests
};

// Opens and parses the experiment file. Unknown keys anywhere in the document
// are rejected; malformed JSON reports the offending line and column.
ExperimentConfig load_experiment(const std::string& path);

struct ForecastOptions {
    std::string model_path;
    std::vector<Eigen::VectorXd> initial_states;
    int horizon = 0;
    double reproject_tol = -1.0; // < 0 default, 0 every step, inf never
    int z = 2;                   // interval half-width in posterior stddevs
    bool eigenfunctions = false;
};

struct GridOptions {
    std::string model_path;
    Eigen::VectorXd lo, hi; // box corners
    int nx = 0, ny = 0;
};

void cmd_simulate(const ExperimentConfig& config, const std::string& out_dir);
void cmd_fit(const ExperimentConfig& config, const std::string& out_dir);
void cmd_forecast(const ForecastOptions& options, const std::string& out_dir);
void cmd_benchmark(const ExperimentConfig& config, const std::string& out_dir,
                   bool decoupled_study);
void cmd_eigenfunctions(const GridOptions& options, const std::string& out_dir);

} // namespace gpdmd::cli
