#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gpdmd/dynamics.hpp"
#include "gpdmd/errors.hpp"
#include "gpdmd/forecast.hpp"
#include "gpdmd/gp.hpp"
#include "gpdmd/io.hpp"
#include "gpdmd/koopman.hpp"
#include "gpdmd/metrics.hpp"
#include "gpdmd/model_selection.hpp"
#include "gpdmd/parallel.hpp"
#include "gpdmd/rng.hpp"
#include "helpers.hpp"

// Release gate: every criterion below must hold on a desk-scale run. Each one
// prints a single [PASS]/[FAIL] line; the exit status is the failure count.

using namespace gpdmd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Fails = std::vector<std::string>;

void expect(Fails& f, bool ok, const std::string& msg) {
    if (!ok) f.push_back(msg);
}

std::string num(double v) {
    std::ostringstream ss;
    ss.precision(8);
    ss << v;
    return ss.str();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Models fitted once and shared by several criteria.
struct DoubleWellFit {
    SnapshotSet data;
    KoopmanModel model;
};

struct VdpFit {
    SnapshotSet data;
    KernelParams params;
    PointSet inducing;
    KoopmanModel tcca;
    KoopmanModel edmd;
    std::vector<SparseGP> channels;
    std::vector<Eigen::MatrixXd> train_trajs; // noise-free training rollouts, 51 samples
    std::vector<Eigen::MatrixXd> truth;       // noise-free test rollouts, 51 samples each
};

struct Assets {
    std::string cli;
    std::filesystem::path work;
    std::optional<DoubleWellFit> dw;
    std::optional<VdpFit> vdp;
};

const DoubleWellFit& double_well_fit(Assets& a) {
    if (a.dw) return *a.dw;
    Eigen::MatrixXd bounds(2, 2);
    bounds << -1.7, 1.7, -1.4, 1.4;
    const PointSet starts = latin_hypercube(100, bounds, 21);
    SdeSystem sys; // metastable defaults: sigma 0.7, 10 s sampling, 1000 substeps
    sys.seed = 21;
    std::vector<Eigen::MatrixXd> trajs(100);
    parallel_for(trajs.size(), [&](std::size_t i) {
        trajs[i] = simulate_langevin(sys, starts.col(static_cast<Eigen::Index>(i)), 21,
                                     static_cast<std::uint64_t>(i));
    });
    DoubleWellFit fit;
    fit.data = build_snapshots(trajs, 0.0, 21); // 100 x 20 = 2000 pairs
    SelectionConfig sel;
    sel.batch_size = 15;
    sel.max_dictionary = 100;
    sel.optimizer.max_iterations = 40;
    const PipelineResult pr =
        pipeline(fit.data, KernelParams::isotropic(2, 1.0, 1.0, 0.1), sel);
    fit.model = fit_tcca(fit.data, pr.inducing, pr.params);
    a.dw = std::move(fit);
    return *a.dw;
}

const VdpFit& vdp_fit(Assets& a) {
    if (a.vdp) return *a.vdp;
    Eigen::MatrixXd bounds(2, 2);
    bounds << -2.5, 2.5, -2.5, 2.5;
    const PointSet starts = latin_hypercube(20, bounds, 42);
    std::vector<Eigen::MatrixXd> trajs(20);
    parallel_for(trajs.size(), [&](std::size_t i) {
        trajs[i] = simulate_vdp(starts.col(static_cast<Eigen::Index>(i)), 2.0, 0.05, 10, 51);
    });
    VdpFit fit;
    fit.train_trajs = trajs;
    fit.data = build_snapshots(trajs, 0.1, 42); // 1000 noisy standardized pairs
    SelectionConfig sel;
    sel.batch_size = 15;
    sel.max_dictionary = 150;
    sel.optimizer.max_iterations = 40;
    const PipelineResult pr =
        pipeline(fit.data, KernelParams::isotropic(2, 1.0, 1.0, 1e-2), sel);
    fit.params = pr.params;
    fit.inducing = pr.inducing;
    fit.tcca = fit_tcca(fit.data, pr.inducing, pr.params);
    fit.edmd = fit_exact_edmd(fit.data, pr.inducing, pr.params);
    for (Eigen::Index d = 0; d < 2; ++d)
        fit.channels.push_back(
            fit_vfe(TrainSet{fit.data.X, fit.data.Y.row(d).transpose()}, pr.inducing,
                    pr.params));
    const PointSet tst = latin_hypercube(500, bounds, 4242);
    fit.truth.resize(500);
    parallel_for(fit.truth.size(), [&](std::size_t i) {
        fit.truth[i] = simulate_vdp(tst.col(static_cast<Eigen::Index>(i)), 2.0, 0.05, 10, 51);
    });
    a.vdp = std::move(fit);
    return *a.vdp;
}

// Constant-variance toy: zero information gain freezes the shock coefficient,
// which makes the covariance recursion solvable in closed form.
KoopmanModel frozen_model(CounterRng& rng) {
    const int M = 4, D = 2;
    Eigen::MatrixXd R(M, M);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j) R(i, j) = rng.normal();
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(R).householderQ();
    Eigen::VectorXd spec(M);
    spec << 0.9, 0.55, 0.25, -0.15;
    KoopmanModel model;
    model.U = Q * spec.asDiagonal() * Q.transpose();
    const EigenDecomposition eig = eigendecompose(model.U);
    model.eigenvalues = eig.eigenvalues;
    model.right_eigvecs = eig.right;
    model.left_eigvecs = eig.left;
    Eigen::MatrixXd modes_real(M, D);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < D; ++j) modes_real(i, j) = 0.5 * rng.normal();
    model.modes = modes_real.cast<std::complex<double>>();
    model.K_bc = consistency_matrix(model.left_eigvecs, model.modes);
    model.inducing = testutil::random_points(D, M, rng);
    model.chol_LZZ = Eigen::MatrixXd::Identity(M, M);
    model.info_gain_lifted = Eigen::MatrixXd::Zero(M, M);
    model.params = KernelParams::isotropic(D, 1.2, 0.8, 0.05).with_lifted_noise(0.15);
    model.sigma_lifted_variance = 0.15;
    model.standardizer = Standardizer::identity(D);
    return model;
}

void criterion_smape_anchors(Assets&, Fails& f) {
    CounterRng rng(901, 1);
    const Eigen::MatrixXd Y = testutil::random_points(3, 40, rng, 0.5, 2.5);
    const double doubled = smape(Y, 2.0 * Y);
    expect(f, std::abs(doubled - 100.0) < 1e-10,
           "doubling every prediction must score 100, got " + num(doubled));
    const double same = smape(Y, Y);
    expect(f, same == 0.0, "a perfect prediction must score 0, got " + num(same));
}

void criterion_elbo_bound(Assets&, Fails& f) {
    int bound_checked = 0;
    for (int t = 0; t < 200; ++t) {
        CounterRng rng(910 + static_cast<std::uint64_t>(t), 1);
        const int D = 1 + static_cast<int>(rng.uniform() * 3);
        const int N = 5 + static_cast<int>(rng.uniform() * 56);
        const int m = 1 + static_cast<int>(rng.uniform() * N);
        const TrainSet train{testutil::random_points(D, N, rng),
                             testutil::random_vector(N, rng)};
        const KernelParams p = testutil::random_params(D, rng);
        const PointSet Z = testutil::random_points(D, m, rng);
        const double lo = elbo(train, Z, p);
        const double exact = log_marginal_likelihood(train, p);
        ++bound_checked;
        if (!(lo <= exact + 1e-8 * std::abs(exact))) {
            f.push_back("bound violated at instance " + std::to_string(t) + ": elbo " +
                        num(lo) + " > evidence " + num(exact));
            return;
        }
    }
    expect(f, bound_checked == 200, "expected 200 bound instances");

    for (int t = 0; t < 20; ++t) {
        CounterRng rng(950 + static_cast<std::uint64_t>(t), 1);
        const int D = 1 + static_cast<int>(rng.uniform() * 2);
        const int N = 8 + static_cast<int>(rng.uniform() * 28);
        const TrainSet train{testutil::random_points(D, N, rng),
                             testutil::random_vector(N, rng)};
        KernelParams p = testutil::random_params(D, rng);
        p.noise_variance = 0.05 + 0.2 * rng.uniform();
        const double lo = elbo(train, train.inputs, p);
        const double exact = log_marginal_likelihood(train, p);
        if (!(std::abs(lo - exact) <= 1e-8 * std::max(1.0, std::abs(exact)))) {
            f.push_back("inducing set = full set must be tight at instance " +
                        std::to_string(t) + ": elbo " + num(lo) + " vs " + num(exact));
            return;
        }
    }
}

void criterion_estimator_oracle(Assets&, Fails& f) {
    for (int t = 0; t < 50; ++t) {
        CounterRng rng(1300 + static_cast<std::uint64_t>(t), 1);
        const int D = 1 + static_cast<int>(rng.uniform() * 3);
        const int N = 20 + static_cast<int>(rng.uniform() * 181);
        const int M = 2 + static_cast<int>(rng.uniform() * 29);
        const SnapshotSet data = testutil::random_snapshots(D, N, rng, 0.02);
        const PointSet Z = data.X.leftCols(std::min(M, N));
        KernelParams p = testutil::random_params(D, rng);
        // the identity holds for any jitter; drawing it positive keeps every
        // instance's linear systems out of the round-off regime that a smooth
        // kernel on dozens of points otherwise reaches
        p.inducing_jitter =
            std::pow(10.0, -3.0 + 2.0 * rng.uniform()) * p.signal_variance;
        const KoopmanModel model = fit_tcca(data, Z, p, 0.0);
        p.inducing_jitter = model.jitter_used; // keep the oracle on the same gram
        const Eigen::MatrixXd plain = koopman_direct(data, Z, p);
        // change of basis from k_Z coordinates into the preconditioned ones
        const Eigen::MatrixXd lifted_left = model.chol_LZZ.transpose() * plain;
        const Eigen::MatrixXd want = model.chol_LZZ.triangularView<Eigen::Lower>()
                                         .solve(lifted_left.transpose())
                                         .transpose();
        const double err = testutil::rel_fro(model.U, want);
        if (!(err <= 1e-8)) {
            f.push_back("instance " + std::to_string(t) + " (N=" + std::to_string(N) +
                        ", M=" + std::to_string(Z.cols()) + ") relative error " + num(err));
            return;
        }
    }
}

void criterion_covariance_oracles(Assets&, Fails& f) {
    // closed form for the frozen-coefficient recursion
    CounterRng rng(1400, 1);
    const KoopmanModel frozen = frozen_model(rng);
    Eigen::VectorXd x0(2);
    x0 << 0.3, -0.2;
    const ForecastResult fc = propagate_covariance(frozen, x0, 10, true);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(4, 4);
    for (int k = 1; k <= 10; ++k) {
        S = frozen.params.signal_variance * frozen.K_bc + frozen.U.transpose() * S * frozen.U;
        const double err = testutil::rel_fro(fc.lifted_covs[static_cast<size_t>(k)], S);
        expect(f, err <= 1e-10,
               "closed form mismatch at step " + std::to_string(k) + ": " + num(err));
    }

    // a large ensemble of the lifted stochastic difference equation must land
    // within sampling error of the analytic recursion
    CounterRng rng2(1401, 1);
    SnapshotSet data = testutil::random_snapshots(2, 60, rng2, 0.03);
    const PointSet Z = data.X.leftCols(5);
    const KernelParams p = testutil::random_params(2, rng2);
    const KoopmanModel model = fit_tcca(data, Z, p.with_lifted_noise(0.05));
    const Eigen::VectorXd start = testutil::random_vector(2, rng2);
    const int steps = 10, members = 100000;
    const std::vector<Eigen::MatrixXd> mc =
        mc_lifted_covariance(model, start, steps, members, 2026);
    const ForecastResult want = propagate_covariance(model, start, steps, false);
    for (int k = 1; k <= steps; ++k) {
        const Eigen::MatrixXd& target = want.lifted_covs[static_cast<size_t>(k)];
        const Eigen::MatrixXd& got = mc[static_cast<size_t>(k)];
        for (Eigen::Index i = 0; i < target.rows(); ++i) {
            for (Eigen::Index j = i; j < target.cols(); ++j) {
                const double se =
                    std::sqrt((target(i, i) * target(j, j) + target(i, j) * target(i, j)) /
                              static_cast<double>(members));
                const double gap = std::abs(got(i, j) - target(i, j));
                if (gap > 3.0 * se + 1e-12) {
                    f.push_back("ensemble covariance off at step " + std::to_string(k) +
                                " entry (" + std::to_string(i) + "," + std::to_string(j) +
                                "): |" + num(got(i, j)) + " - " + num(target(i, j)) +
                                "| > 3 standard errors (" + num(3.0 * se) + ")");
                    return;
                }
            }
        }
    }
}

void criterion_gradients(Assets&, Fails& f) {
    const double h = 1e-5;
    for (int t = 0; t < 50; ++t) {
        CounterRng rng(1500 + static_cast<std::uint64_t>(t), 1);
        const int D = 1 + static_cast<int>(rng.uniform() * 2);
        const int N = 10 + static_cast<int>(rng.uniform() * 31);
        const int m = 2 + static_cast<int>(rng.uniform() * 7);
        const TrainSet train{testutil::random_points(D, N, rng),
                             testutil::random_vector(N, rng)};
        const KernelParams p = testutil::random_params(D, rng);
        const PointSet Z = testutil::random_points(D, m, rng);
        const ElboGradient g = elbo_gradient(train, Z, p);
        const auto eval = [&](const KernelParams& q, const PointSet& zz) {
            return elbo(train, zz, q);
        };

        // the stored lengthscales are squared, so one log-lengthscale unit is
        // two units of the stored log value
        for (int d = 0; d < D + 2; ++d) {
            KernelParams up = p, dn = p;
            if (d < D) {
                up.lengthscales(d) *= std::exp(2 * h);
                dn.lengthscales(d) *= std::exp(-2 * h);
            } else if (d == D) {
                up.signal_variance *= std::exp(h);
                dn.signal_variance *= std::exp(-h);
            } else {
                up.noise_variance *= std::exp(h);
                dn.noise_variance *= std::exp(-h);
            }
            const double fd = (eval(up, Z) - eval(dn, Z)) / (2 * h);
            const double got = g.log_hypers(d);
            if (std::abs(got - fd) > 1e-4 * std::max({1.0, std::abs(got), std::abs(fd)})) {
                f.push_back("hyper gradient " + std::to_string(d) + " off at instance " +
                            std::to_string(t) + ": " + num(got) + " vs fd " + num(fd));
                return;
            }
        }
        for (int probe = 0; probe < 3; ++probe) {
            const int d = static_cast<int>(rng.uniform() * D);
            const int c = static_cast<int>(rng.uniform() * m);
            PointSet up = Z, dn = Z;
            up(d, c) += h;
            dn(d, c) -= h;
            const double fd = (eval(p, up) - eval(p, dn)) / (2 * h);
            const double got = g.inducing(d, c);
            if (std::abs(got - fd) > 1e-4 * std::max({1.0, std::abs(got), std::abs(fd)})) {
                f.push_back("inducing gradient (" + std::to_string(d) + "," +
                            std::to_string(c) + ") off at instance " + std::to_string(t) +
                            ": " + num(got) + " vs fd " + num(fd));
                return;
            }
        }
    }

    for (int t = 0; t < 50; ++t) {
        CounterRng rng(1550 + static_cast<std::uint64_t>(t), 1);
        const int D = 1 + static_cast<int>(rng.uniform() * 3);
        const KernelParams p = testutil::random_params(D, rng);
        const Eigen::VectorXd x = testutil::random_vector(D, rng);
        const Eigen::VectorXd z = testutil::random_vector(D, rng);

        const Eigen::VectorXd grad = kernel_state_gradient(x, z, p);
        Eigen::VectorXd grad_fd(D);
        Eigen::MatrixXd hess_fd(D, D);
        for (int d = 0; d < D; ++d) {
            Eigen::VectorXd up = x, dn = x;
            up(d) += h;
            dn(d) -= h;
            grad_fd(d) = (matern52(up, z, p) - matern52(dn, z, p)) / (2 * h);
            hess_fd.col(d) =
                (kernel_state_gradient(up, z, p) - kernel_state_gradient(dn, z, p)) / (2 * h);
        }
        const double gerr = (grad - grad_fd).norm() / std::max(1.0, grad_fd.norm());
        if (gerr > 1e-3) {
            f.push_back("state gradient off at instance " + std::to_string(t) + ": " +
                        num(gerr));
            return;
        }
        const Eigen::MatrixXd hess = kernel_state_hessian(x, z, p);
        const double herr = (hess - hess_fd).norm() / std::max(1.0, hess_fd.norm());
        if (herr > 1e-3) {
            f.push_back("state hessian off at instance " + std::to_string(t) + ": " +
                        num(herr));
            return;
        }
    }
}

void criterion_invariant_mode(Assets& a, Fails& f) {
    const DoubleWellFit& fit = double_well_fit(a);
    const KoopmanModel& m = fit.model;
    expect(f, m.dict_size() >= 4, "dictionary ended up smaller than 4");
    if (m.dict_size() < 4) return;

    const std::complex<double> lam1 = m.eigenvalues(0);
    expect(f, std::abs(lam1 - std::complex<double>(1.0, 0.0)) < 1e-2,
           "leading eigenvalue " + num(lam1.real()) + "+" + num(lam1.imag()) +
               "i is not within 1e-2 of 1");
    for (int i = 0; i < 4; ++i)
        expect(f, std::abs(m.eigenvalues(i).imag()) < 1e-2,
               "eigenvalue " + std::to_string(i + 1) + " has imaginary part " +
                   num(m.eigenvalues(i).imag()));

    // the eigenfunction paired with the unit eigenvalue is flat over the data
    const Eigen::Index probes = std::min<Eigen::Index>(500, fit.data.X.cols());
    Eigen::VectorXcd phi1(probes);
    for (Eigen::Index j = 0; j < probes; ++j)
        phi1(j) = (m.left_eigvecs.row(0) *
                   m.lift(Eigen::VectorXd(fit.data.X.col(j))).cast<std::complex<double>>())(0);
    const std::complex<double> center = phi1.mean();
    const double spread =
        std::sqrt((phi1.array() - center).abs2().mean()) / std::max(1e-12, std::abs(center));
    expect(f, spread < 0.25,
           "relative spread of the invariant eigenfunction is " + num(spread));
}

void criterion_well_separation(Assets& a, Fails& f) {
    const DoubleWellFit& fit = double_well_fit(a);
    const KoopmanModel& m = fit.model;
    if (m.dict_size() < 2) {
        f.push_back("dictionary too small to hold a second eigenfunction");
        return;
    }
    const Eigen::MatrixXd original = fit.data.standardizer.invert(fit.data.X);
    std::vector<double> left, right;
    for (Eigen::Index j = 0; j < fit.data.X.cols(); ++j) {
        const double re2 =
            (m.left_eigvecs.row(1) *
             m.lift(Eigen::VectorXd(fit.data.X.col(j))).cast<std::complex<double>>())(0)
                .real();
        if (original(0, j) < -0.5) left.push_back(re2);
        if (original(0, j) > 0.5) right.push_back(re2);
    }
    expect(f, left.size() >= 50 && right.size() >= 50,
           "well neighborhoods too thin: " + std::to_string(left.size()) + " / " +
               std::to_string(right.size()) + " samples");
    if (left.size() < 2 || right.size() < 2) return;

    const auto median = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    const double med_left = median(left), med_right = median(right);
    expect(f, med_left * med_right < 0.0,
           "medians do not separate: " + num(med_left) + " vs " + num(med_right));

    const auto agreement = [](const std::vector<double>& v, double med) {
        int agree = 0;
        for (double x : v) agree += (x * med > 0.0) ? 1 : 0;
        return static_cast<double>(agree) / static_cast<double>(v.size());
    };
    const double agree_left = agreement(left, med_left);
    const double agree_right = agreement(right, med_right);
    expect(f, agree_left >= 0.85,
           "left well sign agreement only " + num(agree_left));
    expect(f, agree_right >= 0.85,
           "right well sign agreement only " + num(agree_right));
}

void criterion_noise_robustness(Assets& a, Fails& f) {
    const VdpFit& v = vdp_fit(a);
    const std::vector<int> horizons{1};
    const EvalReport r_tcca = multi_horizon_eval(
        [&](const Eigen::VectorXd& x0, int h) { return predict_mean(v.tcca, x0, h); },
        v.truth, horizons, "gp_tcca");
    const EvalReport r_edmd = multi_horizon_eval(
        [&](const Eigen::VectorXd& x0, int h) { return predict_mean(v.edmd, x0, h); },
        v.truth, horizons, "exact_edmd");
    const EvalReport r_gp = multi_horizon_eval(
        [&](const Eigen::VectorXd& x0, int h) {
            return gp_rollout_baseline(v.channels, v.data.standardizer, x0, h);
        },
        v.truth, horizons, "sparse_gp");
    const double s_tcca = r_tcca.smape_per_horizon.at(1);
    const double s_edmd = r_edmd.smape_per_horizon.at(1);
    const double s_gp = r_gp.smape_per_horizon.at(1);
    expect(f, s_tcca <= s_edmd + 1e-9,
           "one-step smape: regularized estimator " + num(s_tcca) +
               " should not exceed the truncation-only baseline " + num(s_edmd));
    // the one-step spectral mean and the one-step GP mean coincide
    // analytically, so lowest is asserted up to a tie epsilon
    expect(f, s_gp <= s_tcca + 1e-6 && s_gp <= s_edmd + 1e-6,
           "gp rollout one-step smape " + num(s_gp) + " is not the lowest (vs " +
               num(s_tcca) + ", " + num(s_edmd) + ")");
}

void criterion_decoupled_regularizer(Assets& a, Fails& f) {
    const VdpFit& v = vdp_fit(a);
    KernelParams dec = v.params;
    dec.lifted_noise_variance =
        select_lifted_noise_validated(v.data, v.inducing, v.params, v.train_trajs, 50);
    const KoopmanModel decoupled = fit_tcca(v.data, v.inducing, dec);
    const std::vector<int> horizons{50};
    const EvalReport r_coupled = multi_horizon_eval(
        [&](const Eigen::VectorXd& x0, int h) { return predict_mean(v.tcca, x0, h); },
        v.truth, horizons, "coupled");
    const EvalReport r_dec = multi_horizon_eval(
        [&](const Eigen::VectorXd& x0, int h) { return predict_mean(decoupled, x0, h); },
        v.truth, horizons, "decoupled");
    const double coupled50 = r_coupled.smape_per_horizon.at(50);
    const double dec50 = r_dec.smape_per_horizon.at(50);
    expect(f, dec50 <= coupled50 + 2.0,
           "horizon-50 smape: separately tuned " + num(dec50) +
               " exceeds coupled " + num(coupled50) + " by more than 2 points");
}

void criterion_reprojection(Assets& a, Fails& f) {
    const VdpFit& v = vdp_fit(a);

    for (int i : {0, 100, 200}) {
        const Eigen::VectorXd x0 = v.truth[static_cast<size_t>(i)].col(0);
        const ForecastResult spectral = forecast_with_reprojection(v.tcca, x0, 30, kInf);
        expect(f, spectral.reprojection_steps.empty(),
               "infinite tolerance still relifted at start " + std::to_string(i));
        const Eigen::MatrixXd pure = predict_mean(v.tcca, x0, 30);
        expect(f, (spectral.means - pure).norm() <= 1e-12 * std::max(1.0, pure.norm()),
               "infinite tolerance diverged from the spectral mean at start " +
                   std::to_string(i));

        const ForecastResult every = forecast_with_reprojection(v.tcca, x0, 25, 1e-12);
        const Eigen::MatrixXd rolled =
            gp_rollout_baseline(v.channels, v.data.standardizer, x0, 25);
        const double gap = (every.means - rolled).norm() / std::max(1.0, rolled.norm());
        expect(f, gap <= 1e-8,
               "vanishing tolerance is not the gp rollout at start " + std::to_string(i) +
                   ": relative gap " + num(gap));
    }

    // cadence at the dimension default: the average spacing between relifts
    // should sit in a narrow band around a handful of steps
    const double tol = default_reprojection_tol(2);
    double gap_sum = 0.0;
    int gap_count = 0;
    for (int i = 0; i < 400; i += 20) {
        const Eigen::VectorXd x0 = v.truth[static_cast<size_t>(i)].col(0);
        const ForecastResult fc = forecast_with_reprojection(v.tcca, x0, 100, tol);
        int prev = 0;
        for (int step : fc.reprojection_steps) {
            gap_sum += step - prev;
            prev = step;
            ++gap_count;
        }
    }
    expect(f, gap_count >= 10, "too few relifts to measure a cadence");
    if (gap_count > 0) {
        const double mean_gap = gap_sum / gap_count;
        expect(f, mean_gap >= 2.0 && mean_gap <= 15.0,
               "mean relift spacing " + num(mean_gap) + " outside [2, 15]");
    }
}

void criterion_simulators(Assets&, Fails& f) {
    Eigen::VectorXd x0(2);
    x0 << 1.5, 0.0;
    const Eigen::VectorXd ref = simulate_vdp(x0, 2.0, 2.0, 4096, 2).col(1);
    std::vector<double> errs;
    for (int substeps : {32, 64, 128}) {
        const Eigen::VectorXd got = simulate_vdp(x0, 2.0, 2.0, substeps, 2).col(1);
        errs.push_back((got - ref).norm());
    }
    for (size_t i = 1; i < errs.size(); ++i) {
        const double order = std::log2(errs[i - 1] / errs[i]);
        expect(f, order >= 3.5,
               "observed integrator order " + num(order) + " between " +
                   std::to_string(32 << (i - 1)) + " and " + std::to_string(32 << i) +
                   " substeps");
    }

    // the double-well dynamics are symmetric in the first coordinate, so long
    // ensembles must occupy both half planes almost equally
    Eigen::MatrixXd bounds(2, 2);
    bounds << -1.6, 1.6, -1.2, 1.2;
    const PointSet starts = latin_hypercube(200, bounds, 77);
    SdeSystem sys;
    sys.seed = 77;
    std::vector<Eigen::MatrixXd> trajs(200);
    parallel_for(trajs.size(), [&](std::size_t i) {
        trajs[i] = simulate_langevin(sys, starts.col(static_cast<Eigen::Index>(i)), 500,
                                     static_cast<std::uint64_t>(i));
    });
    long left = 0, right = 0;
    for (const Eigen::MatrixXd& traj : trajs)
        for (Eigen::Index s = 0; s < traj.cols(); ++s)
            (traj(0, s) < 0.0 ? left : right) += 1;
    const double ratio = static_cast<double>(std::min(left, right)) /
                         static_cast<double>(std::max(left, right));
    expect(f, left + right == 100000, "expected exactly 1e5 samples");
    expect(f, ratio >= 0.9,
           "half-plane occupancy " + std::to_string(left) + " vs " + std::to_string(right) +
               " breaks 10% symmetry");
}

int run_cli(const Assets& a, const std::string& args, std::string* err_text) {
    const std::string err_file = (a.work / "cli_stderr.txt").string();
    const std::string cmd =
        "\"" + a.cli + "\" " + args + " >/dev/null 2>\"" + err_file + "\"";
    const int status = std::system(cmd.c_str());
    if (err_text) *err_text = slurp(err_file);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_cli_determinism(Assets& a, Fails& f) {
    if (a.cli.empty()) {
        f.push_back("no --cli path supplied");
        return;
    }
    const auto wp = [&](const std::string& name) { return (a.work / name).string(); };
    for (const char* d : {"det_a", "det_b", "fc_a", "fc_b", "grid_a", "grid_b"})
        std::filesystem::remove_all(a.work / d);

    nlohmann::ordered_json cfg;
    cfg["system"] = {{"kind", "vdp"}, {"alpha", 2.0}, {"dt", 0.05}, {"substeps", 15}};
    cfg["dataset"]["n_trajectories"] = 6;
    cfg["dataset"]["trajectory_length"] = 12;
    cfg["dataset"]["bounds"] = nlohmann::ordered_json::array({{-2.5, 2.5}, {-2.5, 2.5}});
    cfg["dataset"]["noise_std"] = 0.05;
    cfg["dataset"]["seed"] = 3;
    cfg["selection"]["batch_size"] = 8;
    cfg["selection"]["max_dictionary"] = 25;
    cfg["selection"]["optimizer"]["max_iterations"] = 25;
    cfg["eval"]["horizons"] = {1, 3};
    cfg["eval"]["n_test"] = 4;
    cfg["eval"]["test_seed"] = 11;
    cfg["output"]["directory"] = wp("det_a");
    save_json(wp("det_cfg.json"), cfg);

    const auto check_run = [&](const std::string& args) {
        std::string err;
        const int code = run_cli(a, args, &err);
        if (code != 0) f.push_back("command failed (" + args + "): " + err);
        return code == 0;
    };
    const auto check_same = [&](const std::string& x, const std::string& y) {
        if (slurp(x) != slurp(y)) f.push_back("files differ: " + x + " vs " + y);
    };

    const std::string cfg_arg = " --config \"" + wp("det_cfg.json") + "\"";
    if (!check_run("simulate" + cfg_arg)) return;
    if (!check_run("simulate" + cfg_arg + " --out \"" + wp("det_b") + "\"")) return;
    check_same(wp("det_a") + "/snapshots.csv", wp("det_b") + "/snapshots.csv");
    check_same(wp("det_a") + "/dataset_manifest.json", wp("det_b") + "/dataset_manifest.json");
    check_same(wp("det_a") + "/trajectory_0005.csv", wp("det_b") + "/trajectory_0005.csv");

    if (!check_run("fit" + cfg_arg)) return;
    if (!check_run("fit" + cfg_arg + " --out \"" + wp("det_b") + "\"")) return;
    check_same(wp("det_a") + "/model.json", wp("det_b") + "/model.json");
    check_same(wp("det_a") + "/fit_log.json", wp("det_b") + "/fit_log.json");

    const std::string model_arg = " --model \"" + wp("det_a") + "/model.json\"";
    const std::string fc_args =
        "forecast" + model_arg + " --x0 0.6,-0.4 --horizon 6 --eigenfunctions --out \"";
    if (!check_run(fc_args + wp("fc_a") + "\"")) return;
    if (!check_run(fc_args + wp("fc_b") + "\"")) return;
    check_same(wp("fc_a") + "/forecast_0000.csv", wp("fc_b") + "/forecast_0000.csv");
    check_same(wp("fc_a") + "/forecast_eigenfunctions_0000.csv",
               wp("fc_b") + "/forecast_eigenfunctions_0000.csv");

    const std::string grid_args = "eigenfunctions" + model_arg +
                                  " --grid-min -2,-2 --grid-max 2,2 --grid-n 12,9 --out \"";
    if (!check_run(grid_args + wp("grid_a") + "\"")) return;
    if (!check_run(grid_args + wp("grid_b") + "\"")) return;
    check_same(wp("grid_a") + "/eigenfunctions.csv", wp("grid_b") + "/eigenfunctions.csv");

    if (!check_run("benchmark" + cfg_arg)) return;
    const auto opts = std::filesystem::copy_options::overwrite_existing;
    std::filesystem::copy_file(wp("det_a") + "/benchmark.csv", wp("benchmark_first.csv"), opts);
    std::filesystem::copy_file(wp("det_a") + "/manifest_vfe_gp_tcca.json",
                               wp("manifest_first.json"), opts);
    if (!check_run("benchmark" + cfg_arg)) return;
    check_same(wp("benchmark_first.csv"), wp("det_a") + "/benchmark.csv");
    check_same(wp("manifest_first.json"), wp("det_a") + "/manifest_vfe_gp_tcca.json");
}

struct Criterion {
    const char* label;
    std::function<void(Assets&, Fails&)> body;
};

} // namespace

int main(int argc, char** argv) {
    std::string cli;
    std::string work = "acceptance_work";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--cli" && i + 1 < argc) {
            cli = argv[++i];
        } else if (arg == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else {
            std::fprintf(stderr, "usage: %s [--cli PATH] [--work DIR]\n", argv[0]);
            return 64;
        }
    }
    Assets assets;
    assets.cli = cli;
    assets.work = work;
    std::filesystem::create_directories(assets.work);

    const std::vector<Criterion> criteria = {
        {"error metric anchors at the exact reference points", criterion_smape_anchors},
        {"variational bound never exceeds the exact evidence", criterion_elbo_bound},
        {"correlation estimator matches the dense one-shot formula", criterion_estimator_oracle},
        {"covariance recursion agrees with closed form and a large ensemble",
         criterion_covariance_oracles},
        {"analytic gradients match central finite differences", criterion_gradients},
        {"double-well model recovers the invariant mode", criterion_invariant_mode},
        {"second eigenfunction separates the two wells", criterion_well_separation},
        {"regularized spectral forecaster beats truncation on noisy data",
         criterion_noise_robustness},
        {"separately tuned regularizer holds up at long horizons",
         criterion_decoupled_regularizer},
        {"reprojection spans pure spectral to full rollout with sane cadence",
         criterion_reprojection},
        {"integrator convergence order and ensemble symmetry", criterion_simulators},
        {"command line runs are byte-for-byte deterministic", criterion_cli_determinism},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        Fails fails;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[i].body(assets, fails);
        } catch (const std::exception& e) {
            fails.push_back(std::string("exception: ") + e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %02zu %s (%.1f s)\n", fails.empty() ? "PASS" : "FAIL", i + 1,
                    criteria[i].label, secs);
        for (const std::string& msg : fails) std::printf("       - %s\n", msg.c_str());
        std::fflush(stdout);
        if (!fails.empty()) ++failures;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
                criteria.size());
    return failures;
}
