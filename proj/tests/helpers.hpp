#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "gpdmd/dynamics.hpp"
#include "gpdmd/kernels.hpp"
#include "gpdmd/koopman.hpp"
#include "gpdmd/rng.hpp"

// Deterministic builders shared across the test binaries. Everything is
// seeded through the counter generator so failures replay exactly.
namespace testutil {

inline Eigen::MatrixXd random_points(int dim, int n, gpdmd::CounterRng& rng, double lo = -2.0,
                                     double hi = 2.0) {
    Eigen::MatrixXd pts(dim, n);
    for (int j = 0; j < n; ++j)
        for (int d = 0; d < dim; ++d) pts(d, j) = lo + (hi - lo) * rng.uniform();
    return pts;
}

inline Eigen::VectorXd random_vector(int n, gpdmd::CounterRng& rng) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

inline gpdmd::KernelParams random_params(int dim, gpdmd::CounterRng& rng) {
    gpdmd::KernelParams p;
    p.lengthscales.resize(dim);
    for (int d = 0; d < dim; ++d) {
        const double ell = 0.4 + 1.6 * rng.uniform();
        p.lengthscales(d) = ell * ell;
    }
    p.signal_variance = 0.5 + 2.0 * rng.uniform();
    p.noise_variance = 0.01 + 0.2 * rng.uniform();
    p.lifted_noise_variance = p.noise_variance;
    return p;
}

// Mildly contracting random linear map with additive nonlinearity; gives
// snapshot sets whose Koopman models are well conditioned.
inline gpdmd::SnapshotSet random_snapshots(int dim, int n, gpdmd::CounterRng& rng,
                                           double noise = 0.0, double spin = 0.3) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(dim, dim);
    if (dim >= 2) {
        A(0, 0) = 0.9 * std::cos(spin);
        A(0, 1) = -0.9 * std::sin(spin);
        A(1, 0) = 0.9 * std::sin(spin);
        A(1, 1) = 0.9 * std::cos(spin);
    } else {
        A(0, 0) = 0.85;
    }
    gpdmd::SnapshotSet data;
    data.X = random_points(dim, n, rng);
    data.Y = A * data.X;
    for (int j = 0; j < n; ++j) {
        for (int d = 0; d < dim; ++d) {
            data.Y(d, j) += 0.1 * std::tanh(data.X(d, j)) + noise * rng.normal();
        }
    }
    data.standardizer = gpdmd::Standardizer::identity(dim);
    return data;
}

// Small Van der Pol training set in standardized units, built through the
// production simulators; cheap enough for unit tests.
inline gpdmd::SnapshotSet vdp_snapshots(int n_traj, int length, double noise_std,
                                        std::uint64_t seed) {
    Eigen::MatrixXd bounds(2, 2);
    bounds << -2.0, 2.0, -2.0, 2.0;
    const gpdmd::PointSet starts = gpdmd::latin_hypercube(n_traj, bounds, seed);
    std::vector<Eigen::MatrixXd> trajs;
    trajs.reserve(static_cast<size_t>(n_traj));
    for (int i = 0; i < n_traj; ++i)
        trajs.push_back(gpdmd::simulate_vdp(starts.col(i), 2.0, 0.05, 10, length));
    return gpdmd::build_snapshots(trajs, noise_std, seed);
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double rel_fro(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
    return (got - want).norm() / std::max(1e-300, want.norm());
}

inline double rel_fro(const Eigen::MatrixXcd& got, const Eigen::MatrixXcd& want) {
    return (got - want).norm() / std::max(1e-300, want.norm());
}

} // namespace testutil
