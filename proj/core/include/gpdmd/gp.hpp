#pragma once

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include "gpdmd/kernels.hpp"

namespace gpdmd {

struct TrainSet {
    PointSet inputs;         // D x N
    Eigen::VectorXd targets; // one output channel, length N
};

struct ExactGP {
    PointSet inputs;
    Eigen::VectorXd weights;          // (K_XX + s2 I)^-1 y
    Eigen::MatrixXd chol_noisy_gram;  // lower L with L L^T = K_XX + s2 I
    KernelParams params;

    double mean(const Eigen::VectorXd& x) const;
    double covariance(const Eigen::VectorXd& x, const Eigen::VectorXd& x2) const;
    double variance(const Eigen::VectorXd& x) const { return covariance(x, x); }
};

struct SparseGP {
    PointSet inducing;          // Z, D x M
    Eigen::VectorXd weights;    // A = Ct^-1 K_ZX y with Ct = K_ZX K_ZX^T + s2 (K_ZZ + jitter I)
    Eigen::MatrixXd info_gain;  // Bt = (K_ZZ + jitter I)^-1 - s2 Ct^-1, symmetrized
    KernelParams params;
    double jitter_used = 0.0;   // sigma_Z^2 actually applied (fallback may raise it)

    double mean(const Eigen::VectorXd& x) const;
    double variance(const Eigen::VectorXd& x) const;
};

ExactGP fit_exact(const TrainSet& train, const KernelParams& params);

double log_marginal_likelihood(const TrainSet& train, const KernelParams& params);

SparseGP fit_vfe(const TrainSet& train, const PointSet& inducing, const KernelParams& params);

// kappa_pst(x, x2) = kappa_pr(x, x2) - k_Z(x)^T Bt k_Z(x2)
double posterior_kernel(const SparseGP& model, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& x2);

double elbo(const TrainSet& train, const PointSet& inducing, const KernelParams& params);

// Sum of per-channel ELBOs for channels sharing one kernel and inducing set.
// targets holds one channel per row (C x N).
double elbo_sum(const PointSet& inputs, const Eigen::MatrixXd& targets,
                const PointSet& inducing, const KernelParams& params);

struct ElboGradient {
    // d/d log l_1 .. log l_D, d/d log sigma_f^2, d/d log sigma_Y^2
    Eigen::VectorXd log_hypers;
    // d/d z_{d,m}, same layout as the inducing matrix (D x M)
    Eigen::MatrixXd inducing;
};

ElboGradient elbo_gradient(const TrainSet& train, const PointSet& inducing,
                           const KernelParams& params);
ElboGradient elbo_gradient_sum(const PointSet& inputs, const Eigen::MatrixXd& targets,
                               const PointSet& inducing, const KernelParams& params);

} // namespace gpdmd
