#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "gpdmd/gp.hpp"
#include "gpdmd/koopman.hpp"

namespace gpdmd {

struct ForecastResult {
    Eigen::MatrixXd means;       // D x (horizon + 1), original units, column 0 is x0
    std::vector<Eigen::MatrixXd> lifted_covs; // M x M per step, index 0 is zero
    std::vector<Eigen::MatrixXd> state_covs;  // D x D per step, original units, index 0 zero
    std::vector<int> reprojection_steps;      // sorted step indices where relifting happened
    int horizon = 0;
    double dt = 0.0;     // sampling interval carried along as metadata
    int psd_clips = 0;   // eigenvalues below the tolerance floor that had to be clipped
};

struct StochasticRollout {
    std::vector<Eigen::MatrixXd> samples; // per member: M x (steps + 1) lifted trajectory
    std::vector<Eigen::MatrixXd> shocks;  // per member: M x steps standard normal draws
    std::uint64_t seed = 0;
};

// Spectral mean propagation, no relifting. Column 0 is x0 itself; columns
// 1..k are the forecasts, all in original units.
Eigen::MatrixXd predict_mean(const KoopmanModel& model, const Eigen::VectorXd& x0, int k);

// Xi^1(x) = kappa_pst(x, x) K_bc with the lifted noise level of the model.
Eigen::MatrixXd one_step_lifted_cov(const KoopmanModel& model, const Eigen::VectorXd& x);

// Hessian of x -> kappa_pst(x, x) at a point in original units, assembled from
// kernel derivatives (or central finite differences for validation).
Eigen::MatrixXd posterior_variance_hessian(const KoopmanModel& model, const Eigen::VectorXd& x,
                                           bool use_finite_differences = false);

// H = 1/2 Tr(hessian(x) K_state) K_bc, the second-order Taylor term that feeds
// the covariance recursion. K_state is in original units, D x D.
Eigen::MatrixXd curvature_correction(const KoopmanModel& model, const Eigen::VectorXd& x,
                                     const Eigen::MatrixXd& K_state);

// Runs the covariance recursion alongside the mean forecast (no reprojection).
ForecastResult propagate_covariance(const KoopmanModel& model, const Eigen::VectorXd& x0,
                                    int k, bool with_curvature = true);

struct EigenfunctionForecast {
    Eigen::MatrixXcd means;                    // M x (horizon + 1), phi(x_hat_k)
    std::vector<Eigen::MatrixXcd> covariances; // W^* Xi^k W, Hermitian
};

EigenfunctionForecast eigenfunction_forecast(const KoopmanModel& model,
                                             const Eigen::VectorXd& x0, int k);

// Reprojection tolerance on || diag(K^k) ||_2 in standardized units; half a
// standard deviation per dimension by default.
double default_reprojection_tol(Eigen::Index dim);

ForecastResult forecast_with_reprojection(const KoopmanModel& model, const Eigen::VectorXd& x0,
                                          int horizon, double tol,
                                          bool with_curvature = true);

// Iterated one-step posterior-mean composition through per-channel sparse GPs.
// Relifts at every step; the reference expensive baseline.
Eigen::MatrixXd gp_rollout_baseline(const std::vector<SparseGP>& channels,
                                    const Standardizer& standardizer,
                                    const Eigen::VectorXd& x0, int horizon);

// Simulates the lifted stochastic difference equation psi_k = U^T psi_{k-1} +
// L(x_hat_{k-1}) w_k with L scaled from the mean path, keeping every member.
StochasticRollout simulate_lifted_sde(const KoopmanModel& model, const Eigen::VectorXd& x0,
                                      int steps, int members, std::uint64_t seed);

// Streaming version for large ensembles: returns the empirical covariance of
// psi_k across members for each step 0..steps without storing trajectories.
std::vector<Eigen::MatrixXd> mc_lifted_covariance(const KoopmanModel& model,
                                                  const Eigen::VectorXd& x0, int steps,
                                                  int members, std::uint64_t seed);

} // namespace gpdmd
