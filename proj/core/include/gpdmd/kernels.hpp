#pragma once

#include <Eigen/Core>

namespace gpdmd {

// Points are stored column-wise: a D x n matrix holds n states in R^D.
using PointSet = Eigen::MatrixXd;

struct KernelParams {
    // Diagonal of the ARD matrix T. Entries are SQUARED lengthscales:
    // r^2 = sum_d (x_d - x'_d)^2 / lengthscales[d], so lengthscales[d] = l_d^2.
    Eigen::VectorXd lengthscales;
    double signal_variance = 1.0;       // sigma_f^2
    double noise_variance = 1e-2;       // sigma_Y^2, state-space targets
    double lifted_noise_variance = 1e-2; // sigma_cal_Y^2, defaults equal to noise_variance
    double inducing_jitter = 0.0;       // sigma_Z^2, added to K_ZZ

    static KernelParams isotropic(int dim, double ell, double sf2, double s2,
                                  double jitter = 0.0);
    KernelParams with_lifted_noise(double s2_lifted) const;
};

// Throws ConfigError when params violate their invariants for dimension D.
void validate_params(const KernelParams& params, Eigen::Index dim);

// Matern-5/2 ARD kernel: sigma_f^2 (1 + sqrt5 r + 5/3 r^2) exp(-sqrt5 r).
double matern52(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                const KernelParams& params);

// |A| x |B| matrix of pairwise kernel values; rows are filled in parallel with
// no cross-row reductions, so the result is bitwise independent of threads.
Eigen::MatrixXd gram(const PointSet& A, const PointSet& B, const KernelParams& params);

// d kappa / d (log l_1 .. log l_D, log sigma_f^2), size D+1.
Eigen::VectorXd kernel_hyper_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                                      const KernelParams& params);

// d kappa / d x (first argument), size D. Smooth at x == x2.
Eigen::VectorXd kernel_state_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                                      const KernelParams& params);

// d^2 kappa / dx dx^T (first argument), D x D. Used by the curvature term of
// the covariance recursion.
Eigen::MatrixXd kernel_state_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                                     const KernelParams& params);

} // namespace gpdmd
