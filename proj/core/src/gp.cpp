#include "gpdmd/gp.hpp"

#include <cmath>
#include <iostream>
#include <string>

#include "gpdmd/errors.hpp"

namespace gpdmd {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_train(const TrainSet& train, const KernelParams& params) {
    validate_params(params, train.inputs.rows());
    if (train.inputs.cols() < 1) throw ConfigError("training set is empty");
    if (train.targets.size() != train.inputs.cols())
        throw ConfigError("targets length does not match number of inputs");
    if (!train.inputs.allFinite() || !train.targets.allFinite())
        throw NumericalError("training data contains non-finite values");
}

// Factorization shared by the sparse fit, the ELBO, and its gradient.
// J = K_ZZ + jitter I = L L^T, C = L^-1 K_ZX, Gt = C C^T + s2 I.
struct VfeFactorization {
    Eigen::MatrixXd KZZ, KZX, C, Gt;
    Eigen::LLT<Eigen::MatrixXd> lltJ, lltG;
    double jitter_used = 0.0;

    VfeFactorization(const PointSet& X, const PointSet& Z, const KernelParams& params) {
        if (Z.cols() < 1) throw ConfigError("inducing set is empty");
        if (Z.rows() != X.rows()) throw ConfigError("inducing points have wrong dimension");
        KZZ = gram(Z, Z, params);
        KZX = gram(Z, X, params);
        const Eigen::Index M = Z.cols();
        jitter_used = params.inducing_jitter;
        Eigen::MatrixXd J = KZZ + jitter_used * Eigen::MatrixXd::Identity(M, M);
        lltJ.compute(J);
        if (lltJ.info() != Eigen::Success && jitter_used == 0.0) {
            // documented fallback for degenerate inducing Gramians
            jitter_used = 1e-8 * params.signal_variance;
            std::cerr << "note: K_ZZ Cholesky failed at zero jitter; retrying with "
                         "inducing_jitter = "
                      << jitter_used << "\n";
            J = KZZ + jitter_used * Eigen::MatrixXd::Identity(M, M);
            lltJ.compute(J);
        }
        if (lltJ.info() != Eigen::Success)
            throw NumericalError(
                "Cholesky of K_ZZ failed; inducing points may be duplicated "
                "(raise inducing_jitter or drop near-duplicates)");
        C = lltJ.matrixL().solve(KZX);
        Gt = C * C.transpose();
        Gt.diagonal().array() += params.noise_variance;
        lltG.compute(Gt);
        if (lltG.info() != Eigen::Success)
            throw NumericalError("Cholesky of the regularized Gramian failed");
    }
};

// Accumulates the contraction of Omega (m x n) against the kernel derivatives
// for the point sets A (D x m), B (D x n):
//   g_log_ell[d] += sum_ij Omega_ij * dk/dlog l_d (a_i, b_j)
//   g_sf2       += sum_ij Omega_ij * k(a_i, b_j)
// and, when zgrad is non-null (A must then be the inducing set),
//   zgrad[d, i] += zweight * sum_j Omega_ij * dk/da_d (a_i, b_j).
void contract_kernel_derivatives(const PointSet& A, const PointSet& B,
                                 const Eigen::MatrixXd& Omega, const KernelParams& params,
                                 Eigen::VectorXd& g_log_ell, double& g_sf2,
                                 Eigen::MatrixXd* zgrad, double zweight) {
    constexpr double kSqrt5 = 2.2360679774997896964091736687747;
    const Eigen::Index D = A.rows();
    const Eigen::ArrayXd inv_T = params.lengthscales.array().inverse();
    const double sf2 = params.signal_variance;
    for (Eigen::Index i = 0; i < A.cols(); ++i) {
        for (Eigen::Index j = 0; j < B.cols(); ++j) {
            const double om = Omega(i, j);
            if (om == 0.0) continue;
            const Eigen::ArrayXd diff = (A.col(i) - B.col(j)).array();
            const Eigen::ArrayXd scaled = diff * inv_T;
            const double r2 = (diff * scaled).sum();
            const double r = std::sqrt(std::max(r2, 0.0));
            const double expf = std::exp(-kSqrt5 * r);
            const double w = (5.0 / 3.0) * sf2 * (1.0 + kSqrt5 * r) * expf;
            g_log_ell.array() += (om * w) * (diff * scaled);
            g_sf2 += om * sf2 * (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * expf;
            if (zgrad)
                for (Eigen::Index d = 0; d < D; ++d)
                    (*zgrad)(d, i) -= zweight * om * w * scaled(d);
        }
    }
}

struct ElboTerms {
    double value = 0.0;
    // per-channel accumulated pieces for the gradient
    Eigen::MatrixXd Omega_ZX, Omega_ZZ;
    double g_log_noise = 0.0;
    double g_sf2_extra = 0.0; // -(1/2s2) * n_channels * N * sf2
};

ElboTerms elbo_core(const PointSet& X, const Eigen::MatrixXd& targets, const PointSet& Z,
                    const KernelParams& params, bool want_gradient) {
    const Eigen::Index N = X.cols();
    const Eigen::Index M = Z.cols();
    const Eigen::Index n_chan = targets.rows();
    const double s2 = params.noise_variance;
    const double sf2 = params.signal_variance;
    VfeFactorization f(X, Z, params);

    const double logdet_Gt =
        2.0 * Eigen::MatrixXd(f.lltG.matrixL()).diagonal().array().log().sum();
    const double logdet_Rt = static_cast<double>(N - M) * std::log(s2) + logdet_Gt;
    const double trace_gap = static_cast<double>(N) * sf2 - f.C.squaredNorm();

    ElboTerms out;
    Eigen::MatrixXd Cy = f.C * targets.transpose();             // M x C
    Eigen::MatrixXd GiCy = f.lltG.solve(Cy);                    // Gt^-1 C y
    Eigen::MatrixXd V = (targets.transpose() - f.C.transpose() * GiCy) / s2; // N x C, Rt^-1 y
    for (Eigen::Index c = 0; c < n_chan; ++c) {
        const double quad = targets.row(c) * V.col(c);
        out.value += -0.5 * (static_cast<double>(N) * kLog2Pi + logdet_Rt + quad) -
                     trace_gap / (2.0 * s2);
    }

    if (want_gradient) {
        // M1 = J^-1 K_ZX; the remaining pieces follow the Omega contraction form
        Eigen::MatrixXd M1 = f.lltJ.matrixU().solve(f.C);
        Eigen::MatrixXd GiC = f.lltG.solve(f.C);
        Eigen::MatrixXd LtGiC = f.lltJ.matrixU().solve(GiC); // L^-T Gt^-1 C
        Eigen::MatrixXd Linv = f.lltJ.matrixU().solve(
            f.lltJ.matrixL().solve(Eigen::MatrixXd::Identity(M, M))); // J^-1
        Eigen::MatrixXd Bt = Linv - s2 * f.lltJ.matrixU().solve(
                                          f.lltG.solve(f.lltJ.matrixL().solve(
                                              Eigen::MatrixXd::Identity(M, M)))
                                              .eval());
        // Bt equals M1 G M1^T = L^-T (I - s2 Gt^-1) L^-1
        const double dn = static_cast<double>(n_chan);
        out.Omega_ZX = dn * (-LtGiC + M1 / s2);
        out.Omega_ZZ = dn * (0.5 * Bt - (0.5 / s2) * (M1 * M1.transpose()));
        const double trace_Rtinv =
            static_cast<double>(N - M) / s2 +
            f.lltG.solve(Eigen::MatrixXd::Identity(M, M)).trace();
        double vtv_sum = 0.0;
        Eigen::MatrixXd M1V = M1 * V; // M x C
        for (Eigen::Index c = 0; c < n_chan; ++c) {
            out.Omega_ZX += M1V.col(c) * V.col(c).transpose();
            out.Omega_ZZ -= 0.5 * (M1V.col(c) * M1V.col(c).transpose());
            vtv_sum += V.col(c).squaredNorm();
        }
        out.g_log_noise = s2 * (dn * (-0.5 * trace_Rtinv + trace_gap / (2.0 * s2 * s2)) +
                                0.5 * vtv_sum);
        out.g_sf2_extra = -dn * static_cast<double>(N) * sf2 / (2.0 * s2);
    }
    return out;
}

} // namespace

ExactGP fit_exact(const TrainSet& train, const KernelParams& params) {
    check_train(train, params);
    const Eigen::Index N = train.inputs.cols();
    Eigen::MatrixXd Kt = gram(train.inputs, train.inputs, params);
    Kt.diagonal().array() += params.noise_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(Kt);
    if (llt.info() != Eigen::Success)
        throw NumericalError("Cholesky of K_XX + s2 I failed; kernel matrix of " +
                             std::to_string(N) + " points is numerically indefinite");
    ExactGP gp;
    gp.inputs = train.inputs;
    gp.weights = llt.solve(train.targets);
    gp.chol_noisy_gram = llt.matrixL();
    gp.params = params;
    return gp;
}

double ExactGP::mean(const Eigen::VectorXd& x) const {
    const Eigen::Index N = inputs.cols();
    Eigen::VectorXd kx(N);
    for (Eigen::Index i = 0; i < N; ++i) kx(i) = matern52(inputs.col(i), x, params);
    return kx.dot(weights);
}

double ExactGP::covariance(const Eigen::VectorXd& x, const Eigen::VectorXd& x2) const {
    const Eigen::Index N = inputs.cols();
    Eigen::VectorXd kx(N), kx2(N);
    for (Eigen::Index i = 0; i < N; ++i) {
        kx(i) = matern52(inputs.col(i), x, params);
        kx2(i) = matern52(inputs.col(i), x2, params);
    }
    const auto L = chol_noisy_gram.triangularView<Eigen::Lower>();
    return matern52(x, x2, params) - L.solve(kx).dot(L.solve(kx2));
}

double log_marginal_likelihood(const TrainSet& train, const KernelParams& params) {
    check_train(train, params);
    const Eigen::Index N = train.inputs.cols();
    Eigen::MatrixXd Kt = gram(train.inputs, train.inputs, params);
    Kt.diagonal().array() += params.noise_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(Kt);
    if (llt.info() != Eigen::Success)
        throw NumericalError("Cholesky of K_XX + s2 I failed in the evidence computation");
    const double logdet =
        2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    const double quad = train.targets.dot(llt.solve(train.targets));
    return -0.5 * (static_cast<double>(N) * kLog2Pi + logdet + quad);
}

SparseGP fit_vfe(const TrainSet& train, const PointSet& inducing, const KernelParams& params) {
    check_train(train, params);
    VfeFactorization f(train.inputs, inducing, params);
    const Eigen::Index M = inducing.cols();
    SparseGP gp;
    gp.inducing = inducing;
    gp.params = params;
    gp.jitter_used = f.jitter_used;
    // A = Ct^-1 K_ZX y = L^-T Gt^-1 C y
    gp.weights = f.lltJ.matrixU().solve(f.lltG.solve(f.C * train.targets));
    // Bt = J^-1 - s2 Ct^-1 = L^-T (I - s2 Gt^-1) L^-1
    Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(M, M) -
                            params.noise_variance *
                                f.lltG.solve(Eigen::MatrixXd::Identity(M, M));
    Eigen::MatrixXd Bt =
        f.lltJ.matrixU().solve(f.lltJ.matrixU().solve(inner).transpose()).transpose();
    gp.info_gain = 0.5 * (Bt + Bt.transpose());
    return gp;
}

double SparseGP::mean(const Eigen::VectorXd& x) const {
    const Eigen::Index M = inducing.cols();
    Eigen::VectorXd kz(M);
    for (Eigen::Index i = 0; i < M; ++i) kz(i) = matern52(inducing.col(i), x, params);
    return kz.dot(weights);
}

double SparseGP::variance(const Eigen::VectorXd& x) const {
    return posterior_kernel(*this, x, x);
}

double posterior_kernel(const SparseGP& model, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& x2) {
    const Eigen::Index M = model.inducing.cols();
    Eigen::VectorXd kz(M), kz2(M);
    for (Eigen::Index i = 0; i < M; ++i) {
        kz(i) = matern52(model.inducing.col(i), x, model.params);
        kz2(i) = matern52(model.inducing.col(i), x2, model.params);
    }
    return matern52(x, x2, model.params) - kz.dot(model.info_gain * kz2);
}

double elbo(const TrainSet& train, const PointSet& inducing, const KernelParams& params) {
    check_train(train, params);
    return elbo_core(train.inputs, train.targets.transpose(), inducing, params, false).value;
}

double elbo_sum(const PointSet& inputs, const Eigen::MatrixXd& targets,
                const PointSet& inducing, const KernelParams& params) {
    validate_params(params, inputs.rows());
    if (targets.cols() != inputs.cols())
        throw ConfigError("targets shape does not match number of inputs");
    return elbo_core(inputs, targets, inducing, params, false).value;
}

namespace {

ElboGradient gradient_from_terms(const PointSet& X, const Eigen::MatrixXd& targets,
                                 const PointSet& Z, const KernelParams& params) {
    ElboTerms t = elbo_core(X, targets, Z, params, true);
    const Eigen::Index D = X.rows();
    ElboGradient g;
    g.log_hypers = Eigen::VectorXd::Zero(D + 2);
    g.inducing = Eigen::MatrixXd::Zero(D, Z.cols());
    Eigen::VectorXd g_ell = Eigen::VectorXd::Zero(D);
    double g_sf2 = t.g_sf2_extra;
    // K_ZX block: z-gradient weight 1 (each entry depends on one inducing point)
    contract_kernel_derivatives(Z, X, t.Omega_ZX, params, g_ell, g_sf2, &g.inducing, 1.0);
    // K_ZZ block: entry (i,j) moves with both z_i and z_j; contracting the
    // symmetrized Omega against the first-argument gradient covers both.
    Eigen::MatrixXd Omega_ZZ_sym = t.Omega_ZZ + t.Omega_ZZ.transpose();
    Eigen::VectorXd g_ell_zz = Eigen::VectorXd::Zero(D);
    double g_sf2_zz = 0.0;
    contract_kernel_derivatives(Z, Z, Omega_ZZ_sym, params, g_ell_zz, g_sf2_zz, &g.inducing,
                                1.0);
    // the hyper contractions over K_ZZ were doubled by the symmetrization
    g_ell += 0.5 * g_ell_zz;
    g_sf2 += 0.5 * g_sf2_zz;
    g.log_hypers.head(D) = g_ell;
    g.log_hypers(D) = g_sf2;
    g.log_hypers(D + 1) = t.g_log_noise;
    return g;
}

} // namespace

ElboGradient elbo_gradient(const TrainSet& train, const PointSet& inducing,
                           const KernelParams& params) {
    check_train(train, params);
    return gradient_from_terms(train.inputs, train.targets.transpose(), inducing, params);
}

ElboGradient elbo_gradient_sum(const PointSet& inputs, const Eigen::MatrixXd& targets,
                               const PointSet& inducing, const KernelParams& params) {
    validate_params(params, inputs.rows());
    if (targets.cols() != inputs.cols())
        throw ConfigError("targets shape does not match number of inputs");
    return gradient_from_terms(inputs, targets, inducing, params);
}

} // namespace gpdmd
