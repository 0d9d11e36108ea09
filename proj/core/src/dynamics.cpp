#include "gpdmd/dynamics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "gpdmd/errors.hpp"
#include "gpdmd/parallel.hpp"
#include "gpdmd/rng.hpp"

namespace gpdmd {

namespace {

constexpr double kDivergenceRadius = 1e8;
constexpr double kMaxEulerStep = 1e-2;

void check_sample(const Eigen::VectorXd& x, int step) {
    if (!x.allFinite() || x.norm() > kDivergenceRadius) {
        std::ostringstream msg;
        msg << "trajectory diverged at sample " << step;
        throw NumericalError(msg.str());
    }
}

void check_potential_dim(const Eigen::VectorXd& x) {
    if (x.size() != 2) {
        throw ConfigError("well potentials are defined on two-dimensional states");
    }
}

} // namespace

double potential_energy(Potential p, const Eigen::VectorXd& x) {
    check_potential_dim(x);
    const double a = x(0) * x(0) - 1.0;
    switch (p) {
    case Potential::kDoubleWell:
        return a * a + x(1) * x(1);
    case Potential::kQuadrupleWell: {
        const double b = x(1) * x(1) - 1.0;
        return a * a + b * b;
    }
    case Potential::kQuadrupleWellLiteral: {
        const double b = x(1) - 1.0;
        return a * a + b * b;
    }
    }
    throw ConfigError("unknown potential");
}

Eigen::VectorXd potential_gradient(Potential p, const Eigen::VectorXd& x) {
    check_potential_dim(x);
    Eigen::VectorXd g(2);
    g(0) = 4.0 * x(0) * (x(0) * x(0) - 1.0);
    switch (p) {
    case Potential::kDoubleWell:
        g(1) = 2.0 * x(1);
        return g;
    case Potential::kQuadrupleWell:
        g(1) = 4.0 * x(1) * (x(1) * x(1) - 1.0);
        return g;
    case Potential::kQuadrupleWellLiteral:
        g(1) = 2.0 * (x(1) - 1.0);
        return g;
    }
    throw ConfigError("unknown potential");
}

OdeSystem vdp_system(double alpha, double dt_sample, int substeps) {
    if (!(alpha > 0.0)) throw ConfigError("Van der Pol damping must be positive");
    OdeSystem sys;
    sys.drift = [alpha](const Eigen::VectorXd& x) {
        Eigen::VectorXd dx(2);
        dx(0) = x(1);
        dx(1) = alpha * (1.0 - x(0) * x(0)) * x(1) - x(0);
        return dx;
    };
    sys.dt_sample = dt_sample;
    sys.substeps = substeps;
    return sys;
}

Eigen::MatrixXd simulate_ode(const OdeSystem& system, const Eigen::VectorXd& x0,
                             int n_samples) {
    if (!system.drift) throw ConfigError("ODE system has no drift function");
    if (!(system.dt_sample > 0.0)) throw ConfigError("sampling interval must be positive");
    if (system.substeps < 1) throw ConfigError("at least one internal step per sample");
    if (n_samples < 1) throw ConfigError("at least one sample is required");

    const double h = system.dt_sample / system.substeps;
    Eigen::MatrixXd traj(x0.size(), n_samples);
    traj.col(0) = x0;
    Eigen::VectorXd x = x0;
    check_sample(x, 0);
    for (int s = 1; s < n_samples; ++s) {
        for (int sub = 0; sub < system.substeps; ++sub) {
            const Eigen::VectorXd k1 = system.drift(x);
            const Eigen::VectorXd k2 = system.drift(x + 0.5 * h * k1);
            const Eigen::VectorXd k3 = system.drift(x + 0.5 * h * k2);
            const Eigen::VectorXd k4 = system.drift(x + h * k3);
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        check_sample(x, s);
        traj.col(s) = x;
    }
    return traj;
}

Eigen::MatrixXd simulate_vdp(const Eigen::VectorXd& x0, double alpha, double dt_sample,
                             int substeps, int n_samples) {
    if (x0.size() != 2) throw ConfigError("Van der Pol state is two-dimensional");
    return simulate_ode(vdp_system(alpha, dt_sample, substeps), x0, n_samples);
}

Eigen::MatrixXd simulate_langevin(const SdeSystem& system, const Eigen::VectorXd& x0,
                                  int n_samples, std::uint64_t trajectory_index) {
    if (x0.size() != 2) throw ConfigError("well potentials are two-dimensional");
    if (!(system.dt_sample > 0.0)) throw ConfigError("sampling interval must be positive");
    if (system.substeps < 1) throw ConfigError("at least one internal step per sample");
    if (system.sigma_T < 0.0) throw ConfigError("diffusion magnitude must be nonnegative");
    if (n_samples < 1) throw ConfigError("at least one sample is required");
    const double h = system.dt_sample / system.substeps;
    if (h > kMaxEulerStep * (1.0 + 1e-9)) {
        throw ConfigError("Euler-Maruyama internal step must be at most 1e-2; "
                          "raise substeps");
    }

    const double shock = system.sigma_T * std::sqrt(h);
    Eigen::MatrixXd traj(2, n_samples);
    traj.col(0) = x0;
    Eigen::VectorXd x = x0;
    check_sample(x, 0);
    for (int s = 1; s < n_samples; ++s) {
        CounterRng rng(system.seed,
                       rng_streams::trajectory(trajectory_index, static_cast<std::uint64_t>(s)));
        for (int sub = 0; sub < system.substeps; ++sub) {
            const Eigen::VectorXd grad = potential_gradient(system.potential, x);
            x(0) += -grad(0) * h + shock * rng.normal();
            x(1) += -grad(1) * h + shock * rng.normal();
        }
        check_sample(x, s);
        traj.col(s) = x;
    }
    return traj;
}

PointSet latin_hypercube(int n, const Eigen::MatrixXd& bounds, std::uint64_t seed,
                         int candidates, std::vector<double>* candidate_scores) {
    if (n < 1) throw ConfigError("need at least one design point");
    if (bounds.cols() != 2 || bounds.rows() < 1) {
        throw ConfigError("bounds must be a D x 2 matrix of (low, high) rows");
    }
    for (Eigen::Index d = 0; d < bounds.rows(); ++d) {
        if (!(bounds(d, 0) < bounds(d, 1))) {
            throw ConfigError("every bounds row needs low < high");
        }
    }
    if (candidates < 1) throw ConfigError("need at least one candidate design");

    const Eigen::Index D = bounds.rows();
    if (candidate_scores != nullptr) candidate_scores->clear();
    Eigen::MatrixXd best;
    double best_score = -1.0;
    for (int c = 0; c < candidates; ++c) {
        CounterRng rng(seed, rng_streams::lhs_candidate(static_cast<std::uint64_t>(c)));
        Eigen::MatrixXd design(D, n);
        std::vector<int> strata(static_cast<size_t>(n));
        for (Eigen::Index d = 0; d < D; ++d) {
            for (int i = 0; i < n; ++i) strata[static_cast<size_t>(i)] = i;
            for (int i = n - 1; i > 0; --i) { // Fisher-Yates
                const int j = static_cast<int>(rng.uniform() * (i + 1));
                std::swap(strata[static_cast<size_t>(i)], strata[static_cast<size_t>(j)]);
            }
            const double width = (bounds(d, 1) - bounds(d, 0)) / n;
            for (int i = 0; i < n; ++i) {
                design(d, i) =
                    bounds(d, 0) + (strata[static_cast<size_t>(i)] + rng.uniform()) * width;
            }
        }
        double min_dist = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                min_dist = std::min(min_dist, (design.col(i) - design.col(j)).norm());
            }
        }
        if (n == 1) min_dist = 0.0;
        if (candidate_scores != nullptr) candidate_scores->push_back(min_dist);
        if (min_dist > best_score || best.size() == 0) {
            best_score = min_dist;
            best = design;
        }
    }
    return best;
}

SnapshotSet build_snapshots(const std::vector<Eigen::MatrixXd>& trajectories, double sigma_Y,
                            std::uint64_t seed, bool standardize) {
    if (trajectories.empty()) throw ConfigError("need at least one trajectory");
    if (sigma_Y < 0.0) throw ConfigError("target noise level must be nonnegative");
    const Eigen::Index D = trajectories.front().rows();
    Eigen::Index n_pairs = 0;
    for (const auto& traj : trajectories) {
        if (traj.rows() != D) throw ConfigError("trajectories disagree on state dimension");
        if (traj.cols() < 2) throw ConfigError("trajectories need at least two samples");
        n_pairs += traj.cols() - 1;
    }

    SnapshotSet out;
    out.X.resize(D, n_pairs);
    out.Y.resize(D, n_pairs);
    Eigen::Index col = 0;
    for (const auto& traj : trajectories) { // pairs never cross trajectory boundaries
        const Eigen::Index len = traj.cols();
        out.X.middleCols(col, len - 1) = traj.leftCols(len - 1);
        out.Y.middleCols(col, len - 1) = traj.rightCols(len - 1);
        col += len - 1;
    }

    out.standardizer = standardize ? Standardizer::fit(out.X) : Standardizer::identity(D);
    out.X = out.standardizer.apply(out.X);
    out.Y = out.standardizer.apply(out.Y);
    if (sigma_Y > 0.0) {
        for (Eigen::Index p = 0; p < n_pairs; ++p) {
            CounterRng rng(seed, rng_streams::snapshot_noise(static_cast<std::uint64_t>(p)));
            for (Eigen::Index d = 0; d < D; ++d) {
                out.Y(d, p) += sigma_Y * rng.normal();
            }
        }
    }
    return out;
}

} // namespace gpdmd
