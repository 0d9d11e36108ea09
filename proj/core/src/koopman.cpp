#include "gpdmd/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gpdmd/errors.hpp"
#include "gpdmd/forecast.hpp"
#include "gpdmd/metrics.hpp"

namespace gpdmd {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kModeDropTol = 1e-12;

void check_snapshots(const SnapshotSet& data, const PointSet& inducing,
                     const KernelParams& params) {
    const Eigen::Index dim = inducing.rows();
    validate_params(params, dim);
    if (inducing.cols() < 1) {
        throw ConfigError("at least one inducing point is required");
    }
    if (data.X.rows() != dim || data.Y.rows() != dim) {
        throw ConfigError("snapshot dimension does not match the inducing points");
    }
    if (data.X.cols() != data.Y.cols()) {
        throw ConfigError("snapshot matrices X and Y must have the same number of columns");
    }
    if (data.X.cols() < 1) {
        throw ConfigError("at least one snapshot pair is required");
    }
    if (!data.X.allFinite() || !data.Y.allFinite() || !inducing.allFinite()) {
        throw NumericalError("snapshot data contains non-finite entries");
    }
}

// Cholesky of K_ZZ + jitter I with one retry at 1e-8 * signal variance. The
// retry is reported both on stderr and in the caller's diagnostics.
Eigen::MatrixXd chol_inducing(const Eigen::MatrixXd& KZZ, const KernelParams& params,
                              double& jitter_used, std::vector<std::string>* diagnostics) {
    double jitter = params.inducing_jitter;
    for (int attempt = 0; attempt < 2; ++attempt) {
        Eigen::MatrixXd regularized = KZZ;
        regularized.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(regularized);
        if (llt.info() == Eigen::Success) {
            jitter_used = jitter;
            return llt.matrixL();
        }
        const double fallback = 1e-8 * params.signal_variance;
        if (attempt == 0 && jitter < fallback) {
            jitter = fallback;
            std::ostringstream msg;
            msg << "inducing gram factorization fell back to jitter " << jitter;
            if (diagnostics != nullptr) diagnostics->push_back(msg.str());
            std::cerr << "gpdmd: " << msg.str() << "\n";
            continue;
        }
        break;
    }
    throw NumericalError("inducing point gram matrix is not positive definite even with jitter");
}

Eigen::Index truncated_rank(const Eigen::VectorXd& singular_values, double tol) {
    if (singular_values.size() == 0 || !(singular_values(0) > 0.0)) return 0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < singular_values.size(); ++i) {
        if (singular_values(i) >= tol * singular_values(0)) ++rank;
    }
    return rank;
}

// Bt = L^-T (I - s2 (G_XX + s2 I)^-1) L^-1, the quadratic-form matrix of the
// posterior covariance kappa_pst(x, x') = kappa(x, x') - k_Z(x)^T Bt k_Z(x').
Eigen::MatrixXd lifted_info_gain(const Eigen::MatrixXd& L, const Eigen::MatrixXd& GXX,
                                 double s2) {
    const Eigen::Index M = L.rows();
    Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(M, M);
    if (s2 > 0.0) {
        Eigen::MatrixXd Gt = GXX;
        Gt.diagonal().array() += s2;
        Eigen::LLT<Eigen::MatrixXd> llt(Gt);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("regularized feature gram matrix is not positive definite");
        }
        inner -= s2 * llt.solve(Eigen::MatrixXd::Identity(M, M));
    }
    Eigen::MatrixXd half = L.triangularView<Eigen::Lower>().transpose().solve(inner);
    Eigen::MatrixXd Bt = L.triangularView<Eigen::Lower>().transpose().solve(half.transpose());
    Bt = 0.5 * (Bt + Bt.transpose()).eval();
    return Bt;
}

void finish_model(KoopmanModel& model, const SnapshotSet& data, const Eigen::MatrixXd& PsiZX,
                  double truncation_tol) {
    EigenDecomposition eig = eigendecompose(model.U);
    model.eigenvalues = eig.eigenvalues;
    model.right_eigvecs = eig.right;
    model.left_eigvecs = eig.left;
    for (const auto& d : eig.diagnostics) model.diagnostics.push_back(d);
    model.modes = projected_modes(eig, PsiZX, data.Y, model.params.noise_variance,
                                  truncation_tol, model.dropped_modes, model.diagnostics);
    model.K_bc = consistency_matrix(eig.left, model.modes);
    model.standardizer = data.standardizer;
}

} // namespace

Standardizer Standardizer::identity(Eigen::Index dim) {
    Standardizer s;
    s.mean = Eigen::VectorXd::Zero(dim);
    s.scale = Eigen::VectorXd::Ones(dim);
    return s;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& columns) {
    if (columns.cols() < 1) {
        throw ConfigError("standardizer needs at least one sample");
    }
    Standardizer s;
    s.mean = columns.rowwise().mean();
    const Eigen::MatrixXd centered = columns.colwise() - s.mean;
    s.scale = centered.array().square().rowwise().mean().sqrt().matrix();
    for (Eigen::Index d = 0; d < s.scale.size(); ++d) {
        if (!(s.scale(d) > 1e-12)) s.scale(d) = 1.0; // degenerate dimension, leave unscaled
    }
    return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& points) const {
    return ((points.colwise() - mean).array().colwise() / scale.array()).matrix();
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& point) const {
    return ((point - mean).array() / scale.array()).matrix();
}

Eigen::MatrixXd Standardizer::invert(const Eigen::MatrixXd& points) const {
    Eigen::MatrixXd out = (points.array().colwise() * scale.array()).matrix();
    out.colwise() += mean;
    return out;
}

Eigen::VectorXd Standardizer::invert(const Eigen::VectorXd& point) const {
    return (point.array() * scale.array()).matrix() + mean;
}

Eigen::VectorXd KoopmanModel::feature_vector(const Eigen::VectorXd& x_std) const {
    const Eigen::Index M = inducing.cols();
    Eigen::VectorXd k(M);
    for (Eigen::Index m = 0; m < M; ++m) {
        k(m) = matern52(inducing.col(m), x_std, params);
    }
    return k;
}

Eigen::VectorXd KoopmanModel::lift(const Eigen::VectorXd& x_std) const {
    return chol_LZZ.triangularView<Eigen::Lower>().solve(feature_vector(x_std));
}

double KoopmanModel::posterior_variance(const Eigen::VectorXd& x_std) const {
    const Eigen::VectorXd k = feature_vector(x_std);
    return params.signal_variance - k.dot(info_gain_lifted * k);
}

Eigen::MatrixXd koopman_direct(const SnapshotSet& data, const PointSet& inducing,
                               const KernelParams& params) {
    check_snapshots(data, inducing, params);
    const Eigen::MatrixXd KZZ = gram(inducing, inducing, params);
    const Eigen::MatrixXd KZX = gram(inducing, data.X, params);
    const Eigen::MatrixXd KZY = gram(inducing, data.Y, params);
    Eigen::MatrixXd regularizer = KZZ;
    regularizer.diagonal().array() += params.inducing_jitter;
    const Eigen::Index M = inducing.cols();
    const Eigen::Index N = data.X.cols();
    const double s2l = params.lifted_noise_variance;

    Eigen::LLT<Eigen::MatrixXd> reg_llt(regularizer);
    if (reg_llt.info() != Eigen::Success) {
        throw NumericalError("jittered inducing gram is singular in the direct estimator");
    }
    // solve (KZX KZX^T + s2l (KZZ + jI)) U = KZX KZY^T through a QR of the
    // stacked square roots; forming the product squares the condition number
    Eigen::MatrixXd stacked(N + M, M);
    stacked.topRows(N) = KZX.transpose();
    stacked.bottomRows(M) =
        std::sqrt(s2l) * Eigen::MatrixXd(reg_llt.matrixL()).transpose();
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(stacked);
    const Eigen::MatrixXd R = qr.matrixQR().topRows(M).triangularView<Eigen::Upper>();
    const auto solve = [&](const Eigen::MatrixXd& B) {
        return Eigen::MatrixXd(R.triangularView<Eigen::Upper>().solve(
            R.transpose().triangularView<Eigen::Lower>().solve(B)));
    };
    const Eigen::MatrixXd B = KZX * KZY.transpose();
    Eigen::MatrixXd U = solve(B);
    // one round of iterative refinement mops up the triangular solve round-off;
    // the residual multiplies the factors directly so the product matrix and
    // its rounding never appear
    const Eigen::MatrixXd residual =
        B - (KZX * (KZX.transpose() * U) + s2l * (regularizer * U));
    U += solve(residual);
    return U;
}

KoopmanModel fit_tcca(const SnapshotSet& data, const PointSet& inducing,
                      const KernelParams& params, double truncation_tol) {
    check_snapshots(data, inducing, params);
    if (truncation_tol < 0.0) throw ConfigError("truncation tolerance must be nonnegative");

    KoopmanModel model;
    model.params = params;
    model.inducing = inducing;
    model.sigma_lifted_variance = params.lifted_noise_variance;

    const Eigen::MatrixXd KZZ = gram(inducing, inducing, params);
    model.chol_LZZ = chol_inducing(KZZ, params, model.jitter_used, &model.diagnostics);
    const auto L = model.chol_LZZ.triangularView<Eigen::Lower>();
    const Eigen::MatrixXd PsiZX = L.solve(gram(inducing, data.X, params));
    const Eigen::MatrixXd PsiZY = L.solve(gram(inducing, data.Y, params));

    Eigen::BDCSVD<Eigen::MatrixXd> svd_x(PsiZX, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::BDCSVD<Eigen::MatrixXd> svd_y(PsiZY, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::Index rx = truncated_rank(svd_x.singularValues(), truncation_tol);
    const Eigen::Index ry = truncated_rank(svd_y.singularValues(), truncation_tol);
    if (rx == 0 || ry == 0) {
        throw NumericalError("feature gram collapsed to rank zero; enlarge the dictionary "
                             "or shrink the lengthscales");
    }

    const double s2l = params.lifted_noise_variance;
    const Eigen::VectorXd sx = svd_x.singularValues().head(rx);
    const Eigen::VectorXd sy = svd_y.singularValues().head(ry);
    const Eigen::VectorXd stx = (sx.array().square() + s2l).sqrt().matrix();
    const Eigen::VectorXd sty = (sy.array().square() + s2l).sqrt().matrix();

    // Whitened cross-covariance; its SVD carries the canonical correlations.
    const Eigen::MatrixXd cross =
        svd_x.matrixV().leftCols(rx).transpose() * svd_y.matrixV().leftCols(ry);
    const Eigen::MatrixXd core = (sx.array() / stx.array()).matrix().asDiagonal() * cross *
                                 (sy.array() / sty.array()).matrix().asDiagonal();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd_core(core,
                                               Eigen::ComputeThinU | Eigen::ComputeThinV);
    model.canonical_correlations = svd_core.singularValues();

    model.U = svd_x.matrixU().leftCols(rx) * stx.cwiseInverse().asDiagonal() *
              svd_core.matrixU() * svd_core.singularValues().asDiagonal() *
              svd_core.matrixV().transpose() * sty.asDiagonal() *
              svd_y.matrixU().leftCols(ry).transpose();

    model.info_gain_lifted = lifted_info_gain(model.chol_LZZ, PsiZX * PsiZX.transpose(), s2l);
    finish_model(model, data, PsiZX, truncation_tol);
    return model;
}

KoopmanModel fit_exact_edmd(const SnapshotSet& data, const PointSet& inducing,
                            const KernelParams& params, double truncation_tol) {
    check_snapshots(data, inducing, params);
    if (truncation_tol < 0.0) throw ConfigError("truncation tolerance must be nonnegative");

    KoopmanModel model;
    model.params = params;
    model.inducing = inducing;
    model.sigma_lifted_variance = 0.0;

    const Eigen::MatrixXd KZZ = gram(inducing, inducing, params);
    model.chol_LZZ = chol_inducing(KZZ, params, model.jitter_used, &model.diagnostics);
    const auto L = model.chol_LZZ.triangularView<Eigen::Lower>();
    const Eigen::MatrixXd PsiZX = L.solve(gram(inducing, data.X, params));
    const Eigen::MatrixXd PsiZY = L.solve(gram(inducing, data.Y, params));

    // U = M_X Sigma_X^-1 H_X^T Psi_ZY^T: the least-squares solution restricted
    // to the retained left singular subspace of Psi_ZX.
    Eigen::BDCSVD<Eigen::MatrixXd> svd_x(PsiZX, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::Index rx = truncated_rank(svd_x.singularValues(), truncation_tol);
    if (rx == 0) {
        throw NumericalError("feature gram collapsed to rank zero; enlarge the dictionary "
                             "or shrink the lengthscales");
    }
    model.U = svd_x.matrixU().leftCols(rx) *
              svd_x.singularValues().head(rx).cwiseInverse().asDiagonal() *
              svd_x.matrixV().leftCols(rx).transpose() * PsiZY.transpose();

    model.info_gain_lifted = lifted_info_gain(model.chol_LZZ, PsiZX * PsiZX.transpose(), 0.0);
    finish_model(model, data, PsiZX, truncation_tol);
    return model;
}

EigenDecomposition eigendecompose(const Eigen::MatrixXd& U) {
    const Eigen::Index M = U.rows();
    if (M < 1 || U.cols() != M) {
        throw ConfigError("operator matrix must be square and nonempty");
    }
    if (!U.allFinite()) {
        throw NumericalError("operator matrix has non-finite entries");
    }
    Eigen::EigenSolver<Eigen::MatrixXd> solver(U);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition did not converge");
    }
    const Eigen::VectorXcd lam = solver.eigenvalues();
    const Eigen::MatrixXcd vecs = solver.eigenvectors();

    // Deterministic order: |lambda| descending, then real part, then imaginary
    // part. A stable sort keeps coincident eigenvalues in solver order.
    std::vector<int> idx(static_cast<size_t>(M));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        const double ma = std::abs(lam(a));
        const double mb = std::abs(lam(b));
        if (ma != mb) return ma > mb;
        if (lam(a).real() != lam(b).real()) return lam(a).real() > lam(b).real();
        return lam(a).imag() > lam(b).imag();
    });

    // Group conjugate pairs so each positive-imaginary eigenvalue is followed
    // by its partner, even when distinct pairs share |lambda| and real part.
    std::vector<char> used(static_cast<size_t>(M), 0);
    std::vector<int> order;
    order.reserve(static_cast<size_t>(M));
    std::vector<char> is_pair_head(static_cast<size_t>(M), 0);
    for (int pos = 0; pos < M; ++pos) {
        const int i = idx[static_cast<size_t>(pos)];
        if (used[static_cast<size_t>(i)]) continue;
        used[static_cast<size_t>(i)] = 1;
        if (lam(i).imag() == 0.0) {
            order.push_back(i);
            continue;
        }
        int partner = -1;
        double best_gap = std::numeric_limits<double>::infinity();
        for (int pos2 = 0; pos2 < M; ++pos2) {
            const int j = idx[static_cast<size_t>(pos2)];
            if (used[static_cast<size_t>(j)] || lam(j).imag() == 0.0) continue;
            const double gap = std::abs(lam(j) - std::conj(lam(i)));
            if (gap < best_gap) {
                best_gap = gap;
                partner = j;
            }
        }
        if (partner < 0 || best_gap > 1e-8 * std::max(1.0, std::abs(lam(i)))) {
            throw NumericalError("complex eigenvalue is missing its conjugate partner");
        }
        used[static_cast<size_t>(partner)] = 1;
        const int head = lam(i).imag() > 0.0 ? i : partner;
        const int tail = head == i ? partner : i;
        is_pair_head[order.size()] = 1;
        order.push_back(head);
        order.push_back(tail);
    }

    EigenDecomposition out;
    out.eigenvalues.resize(M);
    out.right.resize(M, M);
    for (Eigen::Index k = 0; k < M; ++k) {
        const int src = order[static_cast<size_t>(k)];
        Eigen::VectorXcd w = vecs.col(src);
        Eigen::Index peak = 0;
        w.cwiseAbs().maxCoeff(&peak);
        const std::complex<double> lead = w(peak);
        if (!(std::abs(lead) > 0.0)) {
            throw NumericalError("eigenvector is numerically zero");
        }
        w *= std::conj(lead) / std::abs(lead); // largest entry real and positive
        w /= w.norm();
        if (is_pair_head[static_cast<size_t>(k)]) {
            out.eigenvalues(k) = lam(src);
            out.right.col(k) = w;
            out.eigenvalues(k + 1) = std::conj(lam(src));
            out.right.col(k + 1) = w.conjugate();
            ++k;
        } else {
            out.eigenvalues(k) = std::complex<double>(lam(src).real(), 0.0);
            out.right.col(k) = w.real().cast<std::complex<double>>();
        }
    }

    Eigen::JacobiSVD<Eigen::MatrixXcd> svd_w(out.right);
    const double smin = svd_w.singularValues().minCoeff();
    const double smax = svd_w.singularValues().maxCoeff();
    if (!(smin > 0.0)) {
        throw NumericalError("eigenvector basis is singular; left eigenvectors undefined");
    }
    if (smax / smin > 1e10) {
        std::ostringstream msg;
        msg << "eigenvector basis is ill conditioned (condition number " << smax / smin
            << "); left eigenvectors and modes may be unreliable";
        out.diagnostics.push_back(msg.str());
        std::cerr << "gpdmd: " << msg.str() << "\n";
    }
    out.left = out.right.partialPivLu().solve(
        Eigen::MatrixXcd::Identity(M, M));
    return out;
}

Eigen::MatrixXcd projected_modes(const EigenDecomposition& eig, const Eigen::MatrixXd& PsiZX,
                                 const Eigen::MatrixXd& Y, double ridge,
                                 double truncation_tol, std::vector<int>& dropped,
                                 std::vector<std::string>& diagnostics) {
    const Eigen::Index M = PsiZX.rows();
    const Eigen::Index N = PsiZX.cols();
    if (Y.cols() != N) {
        throw ConfigError("target snapshots do not match the feature matrix");
    }
    if (eig.eigenvalues.size() != M) {
        throw ConfigError("eigendecomposition does not match the feature dimension");
    }
    if (ridge < 0.0) throw ConfigError("ridge variance must be nonnegative");

    Eigen::MatrixXd T; // solve(G_XX + ridge I, Psi_ZX Y^T)
    const Eigen::MatrixXd rhs = PsiZX * Y.transpose();
    if (ridge > 0.0) {
        Eigen::MatrixXd G = PsiZX * PsiZX.transpose();
        G.diagonal().array() += ridge;
        Eigen::LLT<Eigen::MatrixXd> llt(G);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("ridge-regularized feature gram is not positive definite");
        }
        T = llt.solve(rhs);
    } else {
        // Noise-free branch: pseudo-inverse through the truncated SVD of Psi_ZX.
        Eigen::BDCSVD<Eigen::MatrixXd> svd(PsiZX, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::Index r = truncated_rank(svd.singularValues(), truncation_tol);
        if (r == 0) {
            throw NumericalError("feature matrix is numerically zero in the mode projection");
        }
        const Eigen::VectorXd inv2 =
            svd.singularValues().head(r).array().square().inverse().matrix();
        T = svd.matrixU().leftCols(r) * inv2.asDiagonal() *
            (svd.matrixU().leftCols(r).transpose() * rhs);
    }

    Eigen::MatrixXcd modes = eig.left * T.cast<std::complex<double>>();
    for (Eigen::Index i = 0; i < M; ++i) {
        const double mag = std::abs(eig.eigenvalues(i));
        if (mag < kModeDropTol) {
            modes.row(i).setZero();
            dropped.push_back(static_cast<int>(i));
        } else {
            modes.row(i) /= eig.eigenvalues(i);
        }
    }
    if (!dropped.empty()) {
        std::ostringstream msg;
        msg << dropped.size() << " mode(s) dropped from the projection: |lambda| below "
            << kModeDropTol << " cannot be divided out";
        diagnostics.push_back(msg.str());
        std::cerr << "gpdmd: " << msg.str() << "\n";
    }
    return modes;
}

Eigen::MatrixXd consistency_matrix(const Eigen::MatrixXcd& V_kappa,
                                   const Eigen::MatrixXcd& V_f) {
    if (V_kappa.rows() != V_f.rows()) {
        throw ConfigError("left eigenvectors and modes must agree on the mode count");
    }
    const Eigen::MatrixXcd S = V_f * V_f.adjoint();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(S);
    if (es.info() != Eigen::Success) {
        throw NumericalError("mode covariance eigendecomposition did not converge");
    }
    const Eigen::VectorXd vals = es.eigenvalues();
    const double vmax = vals.maxCoeff();
    if (!(vmax > 0.0)) {
        throw NumericalError("projected modes are numerically zero; the consistency "
                             "matrix is undefined");
    }
    const double threshold = 1e-12 * vmax;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(vals.size());
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals(i) > threshold) inv(i) = 1.0 / vals(i);
    }
    const Eigen::MatrixXcd pinv =
        es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().adjoint();
    const Eigen::MatrixXcd Kc = V_kappa.adjoint() * pinv * V_kappa;

    const double re_max = Kc.real().cwiseAbs().maxCoeff();
    const double im_max = Kc.imag().cwiseAbs().maxCoeff();
    if (im_max > 1e-8 * std::max(1.0, re_max)) {
        std::ostringstream msg;
        msg << "consistency matrix has imaginary residue " << im_max
            << "; conjugate mode pairing is broken";
        throw NumericalError(msg.str());
    }
    Eigen::MatrixXd K = Kc.real();
    return 0.5 * (K + K.transpose()).eval();
}

double select_lifted_noise(const SnapshotSet& data, const PointSet& inducing,
                           const KernelParams& params) {
    check_snapshots(data, inducing, params);
    if (!(params.noise_variance > 0.0)) return 0.0;

    const Eigen::Index M = inducing.cols();
    const Eigen::Index N = data.X.cols();
    const Eigen::MatrixXd KZZ = gram(inducing, inducing, params);
    double jitter_used = 0.0;
    const Eigen::MatrixXd Lzz = chol_inducing(KZZ, params, jitter_used, nullptr);
    const auto L = Lzz.triangularView<Eigen::Lower>();
    const Eigen::MatrixXd PsiZX = L.solve(gram(inducing, data.X, params));
    const Eigen::MatrixXd PsiZY = L.solve(gram(inducing, data.Y, params));
    const Eigen::MatrixXd GXX = PsiZX * PsiZX.transpose();
    const Eigen::MatrixXd GXY = PsiZX * PsiZY.transpose();
    const double targets_sq = PsiZY.squaredNorm();

    // Evidence of the M lifted regressions row(Psi_ZY) ~ N(U^T row basis, s2 I),
    // evaluated on a fixed log grid of noise levels around the state noise.
    double best_s2 = params.noise_variance;
    double best_f = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 25; ++k) {
        const double sigma = std::sqrt(params.noise_variance) * std::pow(10.0, -4.0 + 0.2 * k);
        const double s2 = sigma * sigma;
        Eigen::MatrixXd Gt = GXX;
        Gt.diagonal().array() += s2;
        Eigen::LLT<Eigen::MatrixXd> llt(Gt);
        if (llt.info() != Eigen::Success) continue;
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < M; ++i) {
            logdet += 2.0 * std::log(Eigen::MatrixXd(llt.matrixL())(i, i));
        }
        const double explained = llt.matrixL().solve(GXY).squaredNorm();
        const double f = -0.5 * (static_cast<double>(M * N) * kLog2Pi +
                                 static_cast<double>(M * (N - M)) * std::log(s2) +
                                 static_cast<double>(M) * logdet +
                                 (targets_sq - explained) / s2);
        if (std::isfinite(f) && f > best_f) {
            best_f = f;
            best_s2 = s2;
        }
    }
    return best_s2;
}

double select_lifted_noise_validated(const SnapshotSet& data, const PointSet& inducing,
                                     const KernelParams& params,
                                     const std::vector<Eigen::MatrixXd>& rollouts,
                                     int horizon) {
    check_snapshots(data, inducing, params);
    if (!(params.noise_variance > 0.0)) return 0.0;
    if (horizon < 1) throw ConfigError("validation horizon must be at least 1");
    if (rollouts.empty()) throw ConfigError("validation needs at least one rollout");
    for (const Eigen::MatrixXd& r : rollouts) {
        if (r.rows() != data.X.rows() || r.cols() < horizon + 1) {
            throw ConfigError("validation rollouts must be D x (horizon + 1) or longer");
        }
    }

    const std::vector<int> horizons{horizon};
    const auto validation_smape = [&](double s2l) {
        KernelParams q = params;
        q.lifted_noise_variance = s2l;
        const KoopmanModel m = fit_tcca(data, inducing, q);
        const EvalReport r = multi_horizon_eval(
            [&](const Eigen::VectorXd& x0, int h) { return predict_mean(m, x0, h); },
            rollouts, horizons, "validation");
        return r.smape_per_horizon.at(horizon);
    };

    const double coupled = validation_smape(params.noise_variance);
    double cand_s2 = params.noise_variance;
    double cand_val = coupled;
    for (int k = 0; k <= 25; ++k) {
        const double sigma = std::sqrt(params.noise_variance) * std::pow(10.0, -4.0 + 0.2 * k);
        const double s2 = sigma * sigma;
        double val;
        try {
            val = validation_smape(s2);
        } catch (const NumericalError&) {
            continue; // degenerate regularizer; never a winning candidate
        }
        if (std::isfinite(val) && val < cand_val) {
            cand_val = val;
            cand_s2 = s2;
        }
    }
    // decoupling must earn its keep: stay coupled inside one SMAPE point
    return cand_val < coupled - 1.0 ? cand_s2 : params.noise_variance;
}

} // namespace gpdmd
