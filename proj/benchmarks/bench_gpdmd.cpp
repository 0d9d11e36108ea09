#include <benchmark/benchmark.h>

#include <Eigen/Core>

#include "gpdmd/dynamics.hpp"
#include "gpdmd/forecast.hpp"
#include "gpdmd/gp.hpp"
#include "gpdmd/koopman.hpp"
#include "gpdmd/model_selection.hpp"
#include "gpdmd/rng.hpp"
#include "helpers.hpp"

// Wall-clock tracking for the hot paths: kernel algebra, the sparse fit, the
// correlation estimator, and the forecasting loops. Shared inputs are built
// once so iterations time the operation, not the setup.

namespace {

using namespace gpdmd;

const SnapshotSet& snapshots() {
    static const SnapshotSet data = [] {
        CounterRng rng(4242, 1);
        return testutil::random_snapshots(2, 500, rng, 0.05);
    }();
    return data;
}

const KernelParams& params() {
    static const KernelParams p = KernelParams::isotropic(2, 0.8, 1.0, 1e-2);
    return p;
}

const KoopmanModel& model() {
    static const KoopmanModel m =
        fit_tcca(snapshots(), snapshots().X.leftCols(40), params());
    return m;
}

void bm_gram(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    const PointSet X = snapshots().X.leftCols(n);
    for (auto _ : state) {
        const Eigen::MatrixXd G = gram(X, X, params());
        benchmark::DoNotOptimize(G.sum());
    }
}
BENCHMARK(bm_gram)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void bm_fit_vfe(benchmark::State& state) {
    const TrainSet train{snapshots().X, snapshots().Y.row(0).transpose()};
    const PointSet Z = snapshots().X.leftCols(state.range(0));
    for (auto _ : state) {
        const SparseGP gp = fit_vfe(train, Z, params());
        benchmark::DoNotOptimize(gp.weights.sum());
    }
}
BENCHMARK(bm_fit_vfe)->Arg(20)->Arg(60)->Unit(benchmark::kMillisecond);

void bm_elbo_gradient(benchmark::State& state) {
    const TrainSet train{snapshots().X, snapshots().Y.row(0).transpose()};
    const PointSet Z = snapshots().X.leftCols(40);
    for (auto _ : state) {
        const ElboGradient g = elbo_gradient(train, Z, params());
        benchmark::DoNotOptimize(g.log_hypers.sum());
    }
}
BENCHMARK(bm_elbo_gradient)->Unit(benchmark::kMillisecond);

void bm_fit_tcca(benchmark::State& state) {
    SnapshotSet data = snapshots();
    data.X = data.X.leftCols(state.range(0)).eval();
    data.Y = data.Y.leftCols(state.range(0)).eval();
    const PointSet Z = data.X.leftCols(40);
    for (auto _ : state) {
        const KoopmanModel m = fit_tcca(data, Z, params());
        benchmark::DoNotOptimize(m.U.sum());
    }
}
BENCHMARK(bm_fit_tcca)->Arg(250)->Arg(500)->Unit(benchmark::kMillisecond);

void bm_eigendecompose(benchmark::State& state) {
    const Eigen::MatrixXd& U = model().U;
    for (auto _ : state) {
        const EigenDecomposition eig = eigendecompose(U);
        benchmark::DoNotOptimize(eig.eigenvalues.sum());
    }
}
BENCHMARK(bm_eigendecompose)->Unit(benchmark::kMillisecond);

void bm_predict_mean(benchmark::State& state) {
    Eigen::VectorXd x0(2);
    x0 << 0.4, -0.7;
    for (auto _ : state) {
        const Eigen::MatrixXd means = predict_mean(model(), x0, 50);
        benchmark::DoNotOptimize(means.sum());
    }
}
BENCHMARK(bm_predict_mean)->Unit(benchmark::kMillisecond);

void bm_propagate_covariance(benchmark::State& state) {
    Eigen::VectorXd x0(2);
    x0 << 0.4, -0.7;
    for (auto _ : state) {
        const ForecastResult fc = propagate_covariance(model(), x0, 20);
        benchmark::DoNotOptimize(fc.lifted_covs.back().sum());
    }
}
BENCHMARK(bm_propagate_covariance)->Unit(benchmark::kMillisecond);

void bm_forecast_with_reprojection(benchmark::State& state) {
    Eigen::VectorXd x0(2);
    x0 << 0.4, -0.7;
    const double tol = default_reprojection_tol(2);
    for (auto _ : state) {
        const ForecastResult fc = forecast_with_reprojection(model(), x0, 50, tol);
        benchmark::DoNotOptimize(fc.means.sum());
    }
}
BENCHMARK(bm_forecast_with_reprojection)->Unit(benchmark::kMillisecond);

void bm_mc_lifted_covariance(benchmark::State& state) {
    Eigen::VectorXd x0(2);
    x0 << 0.4, -0.7;
    for (auto _ : state) {
        const auto covs = mc_lifted_covariance(model(), x0, 5, state.range(0), 9);
        benchmark::DoNotOptimize(covs.back().sum());
    }
}
BENCHMARK(bm_mc_lifted_covariance)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void bm_ald_screen(benchmark::State& state) {
    for (auto _ : state) {
        const auto kept = ald_screen(snapshots().X, params(), 1e-3);
        benchmark::DoNotOptimize(kept.size());
    }
}
BENCHMARK(bm_ald_screen)->Unit(benchmark::kMillisecond);

void bm_latin_hypercube(benchmark::State& state) {
    Eigen::MatrixXd bounds(2, 2);
    bounds << -2.0, 2.0, -2.0, 2.0;
    for (auto _ : state) {
        const PointSet starts = latin_hypercube(100, bounds, 5, 100);
        benchmark::DoNotOptimize(starts.sum());
    }
}
BENCHMARK(bm_latin_hypercube)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
