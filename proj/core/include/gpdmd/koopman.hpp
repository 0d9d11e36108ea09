#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "gpdmd/kernels.hpp"

namespace gpdmd {

struct Standardizer {
    Eigen::VectorXd mean;  // per dimension
    Eigen::VectorXd scale; // per dimension, strictly positive

    static Standardizer identity(Eigen::Index dim);
    static Standardizer fit(const Eigen::MatrixXd& columns); // population moments

    Eigen::MatrixXd apply(const Eigen::MatrixXd& points) const;
    Eigen::VectorXd apply(const Eigen::VectorXd& point) const;
    Eigen::MatrixXd invert(const Eigen::MatrixXd& points) const;
    Eigen::VectorXd invert(const Eigen::VectorXd& point) const;
};

struct SnapshotSet {
    Eigen::MatrixXd X; // D x N states
    Eigen::MatrixXd Y; // D x N successors (noisy), same frame as X
    Standardizer standardizer; // transform that produced X, Y from raw units
};

struct EigenDecomposition {
    Eigen::VectorXcd eigenvalues;  // |lambda| descending, conjugate pairs adjacent,
                                   // positive imaginary part first
    Eigen::MatrixXcd right;        // W, unit columns with deterministic phase
    Eigen::MatrixXcd left;         // V_kappa = W^-1
    std::vector<std::string> diagnostics;
};

struct KoopmanModel {
    // Everything lives in the preconditioned basis psi(x) = L_ZZ^-1 k_Z(x).
    Eigen::MatrixXd U;               // M x M
    Eigen::VectorXcd eigenvalues;    // Lambda
    Eigen::MatrixXcd right_eigvecs;  // W
    Eigen::MatrixXcd left_eigvecs;   // V_kappa = W^-1
    Eigen::MatrixXcd modes;          // V_f, M x D; dropped-mode rows are zero
    Eigen::MatrixXd K_bc;            // real symmetric, rank <= D
    PointSet inducing;               // Z, D x M
    Eigen::MatrixXd chol_LZZ;        // lower L with L L^T = K_ZZ + jitter I
    Eigen::MatrixXd info_gain_lifted; // Bt built with sigma_lifted_variance
    KernelParams params;
    double sigma_lifted_variance = 0.0; // sigma_cal_Y^2 used in U (0 for the EDMD baseline)
    double jitter_used = 0.0;
    Standardizer standardizer;
    Eigen::VectorXd canonical_correlations; // empty for the EDMD baseline
    std::vector<int> dropped_modes;
    std::vector<std::string> diagnostics;

    Eigen::Index dict_size() const { return U.rows(); }
    Eigen::Index state_dim() const { return inducing.rows(); }

    Eigen::VectorXd feature_vector(const Eigen::VectorXd& x_std) const; // k_Z(x)
    Eigen::VectorXd lift(const Eigen::VectorXd& x_std) const;           // psi(x)
    // kappa_pst(x, x) built with sigma_lifted_variance; may be slightly
    // negative through round-off, callers clamp where required
    double posterior_variance(const Eigen::VectorXd& x_std) const;
};

// Dense one-shot formula (K_ZX K_ZX^T + s2_lifted (K_ZZ + jitter I))^-1 K_ZX K_ZY^T,
// in the plain k_Z basis. Serves as the oracle for fit_tcca.
Eigen::MatrixXd koopman_direct(const SnapshotSet& data, const PointSet& inducing,
                               const KernelParams& params);

// Cholesky-preconditioned, SVD-whitened canonical correlation estimator.
KoopmanModel fit_tcca(const SnapshotSet& data, const PointSet& inducing,
                      const KernelParams& params, double truncation_tol = 1e-10);

// Kernel EDMD baseline: same pipeline with the Tikhonov term removed; the
// pseudo-inverse is regularized by SVD truncation only.
KoopmanModel fit_exact_edmd(const SnapshotSet& data, const PointSet& inducing,
                            const KernelParams& params, double truncation_tol = 1e-10);

EigenDecomposition eigendecompose(const Eigen::MatrixXd& U);

// V_f = Lambda^-1 V_kappa solve(G_XX + ridge I, Psi_ZX Y^T). Modes with
// |lambda| < 1e-12 are zeroed and reported through dropped/diagnostics.
// ridge == 0 switches the solve to an SVD-truncated pseudo-inverse.
Eigen::MatrixXcd projected_modes(const EigenDecomposition& eig, const Eigen::MatrixXd& PsiZX,
                                 const Eigen::MatrixXd& Y, double ridge,
                                 double truncation_tol, std::vector<int>& dropped,
                                 std::vector<std::string>& diagnostics);

// K_bc = V_kappa^* (V_f V_f^*)^dagger V_kappa, asserted real then symmetrized.
Eigen::MatrixXd consistency_matrix(const Eigen::MatrixXcd& V_kappa,
                                   const Eigen::MatrixXcd& V_f);

// Log-grid search for sigma_cal_Y^2 over [1e-4, 1e1]^2 * noise_variance,
// maximizing the summed evidence of the lifted targets (rows of Psi_ZY
// regressed on the features Psi_ZX).
double select_lifted_noise(const SnapshotSet& data, const PointSet& inducing,
                           const KernelParams& params);

// Validation override for the same grid: keeps the coupled value
// sigma_cal_Y^2 = sigma_Y^2 unless a candidate improves the mean multi-step
// forecast error on the given rollouts at the given horizon by more than one
// SMAPE point. Each rollout is a D x (>= horizon + 1) trajectory whose first
// column is the start.
double select_lifted_noise_validated(const SnapshotSet& data, const PointSet& inducing,
                                     const KernelParams& params,
                                     const std::vector<Eigen::MatrixXd>& rollouts,
                                     int horizon);

} // namespace gpdmd
