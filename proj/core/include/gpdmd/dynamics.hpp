#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "gpdmd/koopman.hpp"

namespace gpdmd {

struct OdeSystem {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> drift;
    double dt_sample = 0.05;
    int substeps = 10;
};

enum class Potential {
    kDoubleWell,           // (x1^2 - 1)^2 + x2^2
    kQuadrupleWell,        // (x1^2 - 1)^2 + (x2^2 - 1)^2, four minima
    kQuadrupleWellLiteral, // (x1^2 - 1)^2 + (x2 - 1)^2, kept for comparison runs
};

struct SdeSystem {
    Potential potential = Potential::kDoubleWell;
    double sigma_T = 0.7;     // diffusion magnitude
    double dt_sample = 10.0;  // sampling interval
    int substeps = 1000;      // Euler-Maruyama internal steps per sample
    std::uint64_t seed = 0;
};

double potential_energy(Potential p, const Eigen::VectorXd& x);
Eigen::VectorXd potential_gradient(Potential p, const Eigen::VectorXd& x);

OdeSystem vdp_system(double alpha, double dt_sample = 0.05, int substeps = 10);

// Classic RK4 at fixed internal step; columns are samples, column 0 is x0.
Eigen::MatrixXd simulate_ode(const OdeSystem& system, const Eigen::VectorXd& x0,
                             int n_samples);

Eigen::MatrixXd simulate_vdp(const Eigen::VectorXd& x0, double alpha, double dt_sample,
                             int substeps, int n_samples);

// Euler-Maruyama for dx = -grad V dt + sigma_T dW. Draws are organized per
// (trajectory, sample) counter stream so ensembles are schedule independent.
Eigen::MatrixXd simulate_langevin(const SdeSystem& system, const Eigen::VectorXd& x0,
                                  int n_samples, std::uint64_t trajectory_index = 0);

// Maximin-optimized Latin hypercube: best minimum pairwise distance among
// `candidates` stratified draws. bounds is D x 2 (low, high per dimension).
// candidate_scores, when given, receives the min-distance of every draw.
PointSet latin_hypercube(int n, const Eigen::MatrixXd& bounds, std::uint64_t seed,
                         int candidates = 100,
                         std::vector<double>* candidate_scores = nullptr);

// Consecutive-sample pairs within each trajectory. The standardizer is fit on
// the noise-free X columns and applied to both sides; N(0, sigma_Y^2 I) noise
// is added to the standardized Y columns only.
SnapshotSet build_snapshots(const std::vector<Eigen::MatrixXd>& trajectories, double sigma_Y,
                            std::uint64_t seed, bool standardize = true);

} // namespace gpdmd
