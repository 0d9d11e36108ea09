#include "gpdmd/forecast.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gpdmd/errors.hpp"
#include "gpdmd/rng.hpp"

namespace gpdmd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_forecast_inputs(const KoopmanModel& model, const Eigen::VectorXd& x0, int k) {
    if (model.U.rows() < 1) throw ConfigError("model is not fitted");
    if (x0.size() != model.state_dim()) {
        throw ConfigError("initial state dimension does not match the model");
    }
    if (k < 0) throw ConfigError("forecast horizon must be nonnegative");
    if (!x0.allFinite()) throw NumericalError("initial state has non-finite entries");
}

// Symmetrize and clip negative eigenvalues to zero. Eigenvalues below the
// -1e-8 * trace floor indicate genuine indefiniteness and are counted.
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& S, int& clip_count) {
    Eigen::MatrixXd sym = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) {
        throw NumericalError("covariance eigendecomposition did not converge");
    }
    const Eigen::VectorXd vals = es.eigenvalues();
    if (vals.minCoeff() >= 0.0) return sym;
    const double floor = -1e-8 * std::max(vals.sum(), 0.0);
    Eigen::VectorXd clipped = vals;
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals(i) < 0.0) {
            if (vals(i) < floor) ++clip_count;
            clipped(i) = 0.0;
        }
    }
    Eigen::MatrixXd out =
        es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose()).eval();
}

// Real spectral projector A0 = W V_f; conjugate pairing keeps it real.
Eigen::MatrixXd real_projector(const KoopmanModel& model) {
    const Eigen::MatrixXcd A0c = model.right_eigvecs * model.modes;
    const double im = A0c.imag().cwiseAbs().maxCoeff();
    const double re = A0c.real().cwiseAbs().maxCoeff();
    if (im > 1e-8 * std::max(1.0, re)) {
        throw NumericalError("spectral projector has an imaginary residue; conjugate "
                             "pairing is broken");
    }
    return A0c.real();
}

Eigen::MatrixXd variance_hessian_std(const KoopmanModel& model, const Eigen::VectorXd& x_std) {
    const Eigen::Index D = model.state_dim();
    const Eigen::Index M = model.dict_size();
    const Eigen::VectorXd kz = model.feature_vector(x_std);
    const Eigen::VectorXd bk = model.info_gain_lifted * kz;
    Eigen::MatrixXd J(D, M);
    Eigen::MatrixXd bent = Eigen::MatrixXd::Zero(D, D);
    for (Eigen::Index m = 0; m < M; ++m) {
        J.col(m) = kernel_state_gradient(x_std, model.inducing.col(m), model.params);
        bent += bk(m) * kernel_state_hessian(x_std, model.inducing.col(m), model.params);
    }
    Eigen::MatrixXd H = -2.0 * (J * model.info_gain_lifted * J.transpose() + bent);
    return 0.5 * (H + H.transpose()).eval();
}

Eigen::MatrixXd variance_hessian_fd(const KoopmanModel& model, const Eigen::VectorXd& x_std) {
    const Eigen::Index D = model.state_dim();
    const double h = 1e-4 * std::sqrt(model.params.lengthscales.minCoeff());
    auto v = [&](const Eigen::VectorXd& p) { return model.posterior_variance(p); };
    Eigen::MatrixXd H(D, D);
    const double v0 = v(x_std);
    for (Eigen::Index i = 0; i < D; ++i) {
        Eigen::VectorXd ei = Eigen::VectorXd::Zero(D);
        ei(i) = h;
        H(i, i) = (v(x_std + ei) - 2.0 * v0 + v(x_std - ei)) / (h * h);
        for (Eigen::Index j = i + 1; j < D; ++j) {
            Eigen::VectorXd ej = Eigen::VectorXd::Zero(D);
            ej(j) = h;
            const double hij = (v(x_std + ei + ej) - v(x_std + ei - ej) -
                                v(x_std - ei + ej) + v(x_std - ei - ej)) /
                               (4.0 * h * h);
            H(i, j) = hij;
            H(j, i) = hij;
        }
    }
    return H;
}

// Shared mean/covariance/reprojection driver. tol = inf disables reprojection;
// with_covariance = false restricts the work to the spectral mean path.
ForecastResult run_engine(const KoopmanModel& model, const Eigen::VectorXd& x0, int horizon,
                          double tol, bool with_curvature, bool with_covariance) {
    check_forecast_inputs(model, x0, horizon);
    if (!(tol > 0.0)) throw ConfigError("reprojection tolerance must be positive");
    const Eigen::Index D = model.state_dim();
    const Eigen::Index M = model.dict_size();
    const double s2 = model.params.noise_variance;
    const Eigen::VectorXd scale = model.standardizer.scale;

    ForecastResult out;
    out.horizon = horizon;
    out.means.resize(D, horizon + 1);
    out.means.col(0) = x0;
    if (with_covariance) {
        out.lifted_covs.assign(static_cast<size_t>(horizon) + 1, Eigen::MatrixXd::Zero(M, M));
        out.state_covs.assign(static_cast<size_t>(horizon) + 1, Eigen::MatrixXd::Zero(D, D));
    }

    const Eigen::MatrixXd A0 = with_covariance ? real_projector(model) : Eigen::MatrixXd();
    Eigen::VectorXd x_prev_std = model.standardizer.apply(x0);
    Eigen::VectorXcd phi = model.right_eigvecs.transpose() *
                           model.lift(x_prev_std).cast<std::complex<double>>();
    Eigen::VectorXcd lam_pow = Eigen::VectorXcd::Ones(M);
    Eigen::MatrixXd Xi = Eigen::MatrixXd::Zero(M, M);
    Eigen::MatrixXd K_std = Eigen::MatrixXd::Zero(D, D);

    for (int k = 1; k <= horizon; ++k) {
        lam_pow.array() *= model.eigenvalues.array();
        const Eigen::VectorXcd mean_c =
            model.modes.transpose() * (lam_pow.array() * phi.array()).matrix();
        const Eigen::VectorXd mean_std = mean_c.real();
        out.means.col(k) = model.standardizer.invert(mean_std);

        if (with_covariance) {
            const double v = model.posterior_variance(x_prev_std);
            Eigen::MatrixXd next_Xi = v * model.K_bc + model.U.transpose() * Xi * model.U;
            if (with_curvature && K_std.cwiseAbs().maxCoeff() > 0.0) {
                const Eigen::MatrixXd hess = variance_hessian_std(model, x_prev_std);
                next_Xi += 0.5 * (hess * K_std).trace() * model.K_bc;
            }
            next_Xi = project_psd(next_Xi, out.psd_clips);
            if (next_Xi.trace() > 1e12) {
                std::ostringstream msg;
                msg << "covariance trace exceeded 1e12 at step " << k;
                throw NumericalError(msg.str());
            }
            Eigen::MatrixXd K_next = A0.transpose() * (next_Xi + s2 * model.K_bc) * A0;
            K_next.diagonal().array() -= s2;
            K_next = project_psd(K_next, out.psd_clips);

            if (K_next.diagonal().norm() > tol) {
                out.reprojection_steps.push_back(k);
                phi = model.right_eigvecs.transpose() *
                      model.lift(mean_std).cast<std::complex<double>>();
                lam_pow.setOnes();
                next_Xi.setZero();
                K_next.setZero();
            }
            Xi = next_Xi;
            K_std = K_next;
            out.lifted_covs[static_cast<size_t>(k)] = Xi;
            out.state_covs[static_cast<size_t>(k)] =
                scale.asDiagonal() * K_std * scale.asDiagonal();
        }
        x_prev_std = mean_std;
    }
    return out;
}

} // namespace

Eigen::MatrixXd predict_mean(const KoopmanModel& model, const Eigen::VectorXd& x0, int k) {
    return run_engine(model, x0, k, kInf, false, false).means;
}

Eigen::MatrixXd one_step_lifted_cov(const KoopmanModel& model, const Eigen::VectorXd& x) {
    check_forecast_inputs(model, x, 0);
    return model.posterior_variance(model.standardizer.apply(x)) * model.K_bc;
}

Eigen::MatrixXd posterior_variance_hessian(const KoopmanModel& model, const Eigen::VectorXd& x,
                                           bool use_finite_differences) {
    check_forecast_inputs(model, x, 0);
    const Eigen::VectorXd x_std = model.standardizer.apply(x);
    const Eigen::MatrixXd H_std = use_finite_differences
                                      ? variance_hessian_fd(model, x_std)
                                      : variance_hessian_std(model, x_std);
    const Eigen::VectorXd inv_scale = model.standardizer.scale.cwiseInverse();
    return inv_scale.asDiagonal() * H_std * inv_scale.asDiagonal();
}

Eigen::MatrixXd curvature_correction(const KoopmanModel& model, const Eigen::VectorXd& x,
                                     const Eigen::MatrixXd& K_state) {
    check_forecast_inputs(model, x, 0);
    if (K_state.rows() != model.state_dim() || K_state.cols() != model.state_dim()) {
        throw ConfigError("state covariance dimension does not match the model");
    }
    const Eigen::MatrixXd H = posterior_variance_hessian(model, x, false);
    return 0.5 * (H * K_state).trace() * model.K_bc;
}

ForecastResult propagate_covariance(const KoopmanModel& model, const Eigen::VectorXd& x0,
                                    int k, bool with_curvature) {
    return run_engine(model, x0, k, kInf, with_curvature, true);
}

EigenfunctionForecast eigenfunction_forecast(const KoopmanModel& model,
                                             const Eigen::VectorXd& x0, int k) {
    ForecastResult base = run_engine(model, x0, k, kInf, true, true);
    EigenfunctionForecast out;
    const Eigen::Index M = model.dict_size();
    out.means.resize(M, k + 1);
    out.covariances.reserve(static_cast<size_t>(k) + 1);
    for (int j = 0; j <= k; ++j) {
        const Eigen::VectorXd x_std =
            model.standardizer.apply(Eigen::VectorXd(base.means.col(j)));
        out.means.col(j) =
            model.left_eigvecs * model.lift(x_std).cast<std::complex<double>>();
        Eigen::MatrixXcd cov = model.right_eigvecs.adjoint() *
                               base.lifted_covs[static_cast<size_t>(j)].cast<std::complex<double>>() *
                               model.right_eigvecs;
        out.covariances.push_back(0.5 * (cov + cov.adjoint()));
    }
    return out;
}

double default_reprojection_tol(Eigen::Index dim) {
    return 0.5 * std::sqrt(static_cast<double>(dim));
}

ForecastResult forecast_with_reprojection(const KoopmanModel& model, const Eigen::VectorXd& x0,
                                          int horizon, double tol, bool with_curvature) {
    return run_engine(model, x0, horizon, tol, with_curvature, true);
}

Eigen::MatrixXd gp_rollout_baseline(const std::vector<SparseGP>& channels,
                                    const Standardizer& standardizer,
                                    const Eigen::VectorXd& x0, int horizon) {
    const Eigen::Index D = x0.size();
    if (channels.size() != static_cast<size_t>(D)) {
        throw ConfigError("need one GP channel per state dimension");
    }
    if (horizon < 0) throw ConfigError("forecast horizon must be nonnegative");
    Eigen::MatrixXd out(D, horizon + 1);
    out.col(0) = x0;
    Eigen::VectorXd x_std = standardizer.apply(x0);
    for (int k = 1; k <= horizon; ++k) {
        Eigen::VectorXd next(D);
        for (Eigen::Index c = 0; c < D; ++c) {
            next(c) = channels[static_cast<size_t>(c)].mean(x_std);
        }
        out.col(k) = standardizer.invert(next);
        x_std = next;
    }
    return out;
}

namespace {

// Shock loading: K_bc = Q diag(c) Q^T gives L = Q diag(sqrt(max(c, 0))) with
// L L^T = K_bc, valid for the rank-deficient case.
Eigen::MatrixXd shock_loading(const Eigen::MatrixXd& K_bc) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K_bc);
    if (es.info() != Eigen::Success) {
        throw NumericalError("consistency matrix eigendecomposition did not converge");
    }
    return es.eigenvectors() *
           es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal().toDenseMatrix();
}

// Per-step shock scales sqrt(kappa_pst) along the deterministic mean path.
Eigen::VectorXd path_scales(const KoopmanModel& model, const Eigen::MatrixXd& means,
                            int steps) {
    Eigen::VectorXd scales(steps);
    for (int j = 0; j < steps; ++j) {
        const Eigen::VectorXd x_std = model.standardizer.apply(Eigen::VectorXd(means.col(j)));
        scales(j) = std::sqrt(std::max(model.posterior_variance(x_std), 0.0));
    }
    return scales;
}

} // namespace

StochasticRollout simulate_lifted_sde(const KoopmanModel& model, const Eigen::VectorXd& x0,
                                      int steps, int members, std::uint64_t seed) {
    check_forecast_inputs(model, x0, steps);
    if (members < 1) throw ConfigError("need at least one ensemble member");
    const Eigen::Index M = model.dict_size();
    const Eigen::MatrixXd L = shock_loading(model.K_bc);
    const Eigen::MatrixXd means = predict_mean(model, x0, steps);
    const Eigen::VectorXd scales = path_scales(model, means, steps);
    const Eigen::VectorXd psi0 = model.lift(model.standardizer.apply(x0));

    StochasticRollout out;
    out.seed = seed;
    out.samples.reserve(static_cast<size_t>(members));
    out.shocks.reserve(static_cast<size_t>(members));
    for (int m = 0; m < members; ++m) {
        CounterRng rng(seed, rng_streams::mc_member(static_cast<std::uint64_t>(m)));
        Eigen::MatrixXd traj(M, steps + 1);
        Eigen::MatrixXd noise(M, std::max(steps, 1));
        traj.col(0) = psi0;
        Eigen::VectorXd psi = psi0;
        for (int j = 1; j <= steps; ++j) {
            Eigen::VectorXd omega(M);
            for (Eigen::Index i = 0; i < M; ++i) omega(i) = rng.normal();
            psi = model.U.transpose() * psi + scales(j - 1) * (L * omega);
            noise.col(j - 1) = omega;
            traj.col(j) = psi;
        }
        out.samples.push_back(std::move(traj));
        out.shocks.push_back(noise.leftCols(steps));
    }
    return out;
}

std::vector<Eigen::MatrixXd> mc_lifted_covariance(const KoopmanModel& model,
                                                  const Eigen::VectorXd& x0, int steps,
                                                  int members, std::uint64_t seed) {
    check_forecast_inputs(model, x0, steps);
    if (members < 2) throw ConfigError("need at least two ensemble members");
    const Eigen::Index M = model.dict_size();
    const Eigen::MatrixXd L = shock_loading(model.K_bc);
    const Eigen::MatrixXd means = predict_mean(model, x0, steps);
    const Eigen::VectorXd scales = path_scales(model, means, steps);
    const Eigen::VectorXd psi0 = model.lift(model.standardizer.apply(x0));

    // accumulate deviations from member 0's path instead of raw moments; the
    // naive sum-of-squares form cancels catastrophically once the spread is
    // small against the mean
    std::vector<Eigen::VectorXd> reference(static_cast<size_t>(steps) + 1, psi0);
    {
        CounterRng rng(seed, rng_streams::mc_member(0));
        Eigen::VectorXd psi = psi0;
        for (int j = 1; j <= steps; ++j) {
            Eigen::VectorXd omega(M);
            for (Eigen::Index i = 0; i < M; ++i) omega(i) = rng.normal();
            psi = model.U.transpose() * psi + scales(j - 1) * (L * omega);
            reference[static_cast<size_t>(j)] = psi;
        }
    }

    std::vector<Eigen::VectorXd> sum(static_cast<size_t>(steps) + 1,
                                     Eigen::VectorXd::Zero(M));
    std::vector<Eigen::MatrixXd> sum_sq(static_cast<size_t>(steps) + 1,
                                        Eigen::MatrixXd::Zero(M, M));
    for (int m = 0; m < members; ++m) {
        CounterRng rng(seed, rng_streams::mc_member(static_cast<std::uint64_t>(m)));
        Eigen::VectorXd psi = psi0;
        for (int j = 0; j <= steps; ++j) {
            if (j > 0) {
                Eigen::VectorXd omega(M);
                for (Eigen::Index i = 0; i < M; ++i) omega(i) = rng.normal();
                psi = model.U.transpose() * psi + scales(j - 1) * (L * omega);
            }
            const Eigen::VectorXd dev = psi - reference[static_cast<size_t>(j)];
            sum[static_cast<size_t>(j)] += dev;
            sum_sq[static_cast<size_t>(j)] += dev * dev.transpose();
        }
    }
    std::vector<Eigen::MatrixXd> covs;
    covs.reserve(static_cast<size_t>(steps) + 1);
    const double n = static_cast<double>(members);
    for (int j = 0; j <= steps; ++j) {
        const Eigen::VectorXd mu = sum[static_cast<size_t>(j)] / n;
        Eigen::MatrixXd cov =
            (sum_sq[static_cast<size_t>(j)] - n * mu * mu.transpose()) / (n - 1.0);
        covs.push_back(0.5 * (cov + cov.transpose()));
    }
    return covs;
}

} // namespace gpdmd
