#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "gpdmd/dynamics.hpp"
#include "gpdmd/errors.hpp"
#include "helpers.hpp"

using namespace gpdmd;

namespace {

double min_pairwise_distance(const PointSet& P) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < P.cols(); ++i)
        for (Eigen::Index j = i + 1; j < P.cols(); ++j)
            best = std::min(best, (P.col(i) - P.col(j)).norm());
    return best;
}

} // namespace

TEST_CASE("van der pol drift and input validation") {
    const OdeSystem sys = vdp_system(2.0);
    Eigen::VectorXd x(2);
    x << 0.5, -1.25;
    const Eigen::VectorXd dx = sys.drift(x);
    CHECK(dx(0) == doctest::Approx(-1.25).epsilon(1e-15));
    CHECK(dx(1) == doctest::Approx(2.0 * (1.0 - 0.25) * -1.25 - 0.5).epsilon(1e-15));

    CHECK_THROWS_AS(vdp_system(0.0), ConfigError);
    CHECK_THROWS_AS(simulate_vdp(Eigen::VectorXd::Zero(3), 2.0, 0.05, 10, 5), ConfigError);
    CHECK_THROWS_AS(simulate_vdp(Eigen::VectorXd::Zero(2), 2.0, 0.05, 0, 5), ConfigError);
    CHECK_THROWS_AS(simulate_vdp(Eigen::VectorXd::Zero(2), 2.0, -0.05, 10, 5), ConfigError);
    CHECK_THROWS_AS(simulate_vdp(Eigen::VectorXd::Zero(2), 2.0, 0.05, 10, 0), ConfigError);
}

TEST_CASE("origin is a fixed point of the oscillator") {
    const Eigen::MatrixXd traj = simulate_vdp(Eigen::VectorXd::Zero(2), 2.0, 0.05, 10, 50);
    REQUIRE(traj.cols() == 50);
    CHECK(traj.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trajectories start at the initial state and are deterministic") {
    Eigen::VectorXd x0(2);
    x0 << 0.3, -0.8;
    const Eigen::MatrixXd a = simulate_vdp(x0, 2.0, 0.05, 10, 40);
    const Eigen::MatrixXd b = simulate_vdp(x0, 2.0, 0.05, 10, 40);
    CHECK((a.col(0) - x0).norm() == 0.0);
    CHECK((a - b).norm() == 0.0);
}

TEST_CASE("the limit cycle amplitude settles near two") {
    Eigen::VectorXd x0(2);
    x0 << 0.1, 0.0;
    const Eigen::MatrixXd traj = simulate_vdp(x0, 2.0, 0.05, 10, 2000);
    const double amp = traj.row(0).tail(500).cwiseAbs().maxCoeff();
    CHECK(amp > 1.9);
    CHECK(amp < 2.1);
}

TEST_CASE("doubling the internal steps moves the endpoint below 1e-6") {
    Eigen::VectorXd x0(2);
    x0 << 1.0, 0.5;
    const Eigen::MatrixXd coarse = simulate_vdp(x0, 2.0, 0.05, 10, 100);
    const Eigen::MatrixXd fine = simulate_vdp(x0, 2.0, 0.05, 20, 100);
    CHECK((coarse.col(99) - fine.col(99)).norm() < 1e-6);
}

TEST_CASE("integrator converges at fourth order") {
    Eigen::VectorXd x0(2);
    x0 << 1.0, 0.5;
    auto endpoint = [&](int substeps) {
        return Eigen::VectorXd(simulate_vdp(x0, 2.0, 5.0, substeps, 2).col(1));
    };
    const Eigen::VectorXd ref = endpoint(3200);
    const double e1 = (endpoint(100) - ref).norm();
    const double e2 = (endpoint(200) - ref).norm();
    const double order = std::log2(e1 / e2);
    CHECK(order >= 3.5);
}

TEST_CASE("a blown-up state reports the sample where it diverged") {
    Eigen::VectorXd x0(2);
    x0 << 1e8, 1e8;
    try {
        simulate_vdp(x0, 2.0, 0.05, 1, 10);
        FAIL("expected a divergence error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("diverged at sample") != std::string::npos);
    }
}

TEST_CASE("potential wells have the advertised minima") {
    Eigen::VectorXd m(2);
    m << 1.0, 0.0;
    CHECK(potential_energy(Potential::kDoubleWell, m) == doctest::Approx(0.0));
    CHECK(potential_gradient(Potential::kDoubleWell, m).norm() == doctest::Approx(0.0));
    m << -1.0, 1.0;
    CHECK(potential_energy(Potential::kQuadrupleWell, m) == doctest::Approx(0.0));
    CHECK(potential_gradient(Potential::kQuadrupleWell, m).norm() == doctest::Approx(0.0));
    m << 1.0, 1.0;
    CHECK(potential_energy(Potential::kQuadrupleWellLiteral, m) == doctest::Approx(0.0));
    CHECK(potential_gradient(Potential::kQuadrupleWellLiteral, m).norm() ==
          doctest::Approx(0.0));

    // the literal variant has a single valley in x2, the corrected one has two
    Eigen::VectorXd probe(2);
    probe << 1.0, -1.0;
    CHECK(potential_energy(Potential::kQuadrupleWell, probe) == doctest::Approx(0.0));
    CHECK(potential_energy(Potential::kQuadrupleWellLiteral, probe) ==
          doctest::Approx(4.0));
}

TEST_CASE("potential gradients match finite differences") {
    CounterRng rng(100, 1);
    const double h = 1e-6;
    for (Potential pot : {Potential::kDoubleWell, Potential::kQuadrupleWell,
                          Potential::kQuadrupleWellLiteral}) {
        for (int t = 0; t < 5; ++t) {
            const Eigen::VectorXd x = testutil::random_vector(2, rng);
            const Eigen::VectorXd g = potential_gradient(pot, x);
            for (int d = 0; d < 2; ++d) {
                Eigen::VectorXd hi = x, lo = x;
                hi(d) += h;
                lo(d) -= h;
                const double fd =
                    (potential_energy(pot, hi) - potential_energy(pot, lo)) / (2.0 * h);
                CHECK(g(d) == doctest::Approx(fd).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("noise-free langevin descends to the nearest minimum and stays") {
    SdeSystem sys;
    sys.sigma_T = 0.0;
    Eigen::VectorXd minimum(2);
    minimum << 1.0, 0.0;
    const Eigen::MatrixXd pinned = simulate_langevin(sys, minimum, 5);
    for (int j = 0; j < 5; ++j) CHECK((pinned.col(j) - minimum).norm() < 1e-12);

    Eigen::VectorXd x0(2);
    x0 << 0.5, 0.0;
    const Eigen::MatrixXd flow = simulate_langevin(sys, x0, 3);
    CHECK((flow.col(2) - minimum).norm() < 1e-3);
}

TEST_CASE("langevin validation and the internal step ceiling") {
    SdeSystem sys;
    Eigen::VectorXd x0(2);
    x0 << 0.0, 0.0;
    CHECK_THROWS_AS(simulate_langevin(sys, Eigen::VectorXd::Zero(3), 5), ConfigError);
    SdeSystem coarse = sys;
    coarse.substeps = 500; // internal step 0.02 breaks the ceiling
    CHECK_THROWS_AS(simulate_langevin(coarse, x0, 5), ConfigError);
    SdeSystem negative = sys;
    negative.sigma_T = -0.1;
    CHECK_THROWS_AS(simulate_langevin(negative, x0, 5), ConfigError);
}

TEST_CASE("langevin draws replay from the seed and split by trajectory") {
    SdeSystem sys;
    sys.seed = 11;
    Eigen::VectorXd x0(2);
    x0 << 1.0, 0.0;
    const Eigen::MatrixXd a = simulate_langevin(sys, x0, 8, 3);
    const Eigen::MatrixXd b = simulate_langevin(sys, x0, 8, 3);
    CHECK((a - b).norm() == 0.0);
    const Eigen::MatrixXd other_traj = simulate_langevin(sys, x0, 8, 4);
    CHECK((a - other_traj).norm() > 0.0);
    SdeSystem reseeded = sys;
    reseeded.seed = 12;
    const Eigen::MatrixXd c = simulate_langevin(reseeded, x0, 8, 3);
    CHECK((a - c).norm() > 0.0);
    CHECK((a.col(0) - x0).norm() == 0.0);
}

TEST_CASE("the double well is visited on both sides") {
    SdeSystem sys;
    sys.seed = 21;
    Eigen::VectorXd x0(2);
    x0 << 1.0, 0.0;
    const Eigen::MatrixXd traj = simulate_langevin(sys, x0, 2000);
    int left = 0, right = 0;
    for (Eigen::Index j = 0; j < traj.cols(); ++j) {
        (traj(0, j) < 0.0 ? left : right) += 1;
    }
    CHECK(left > 500);
    CHECK(right > 500);
}

TEST_CASE("the corrected quadruple well reaches all four quadrants") {
    SdeSystem sys;
    sys.potential = Potential::kQuadrupleWell;
    sys.seed = 22;
    Eigen::VectorXd x0(2);
    x0 << 1.0, 1.0;
    const Eigen::MatrixXd traj = simulate_langevin(sys, x0, 600);
    bool pp = false, pm = false, mp = false, mm = false;
    for (Eigen::Index j = 0; j < traj.cols(); ++j) {
        const bool px = traj(0, j) > 0.0, py = traj(1, j) > 0.0;
        if (px && py) pp = true;
        if (px && !py) pm = true;
        if (!px && py) mp = true;
        if (!px && !py) mm = true;
    }
    CHECK(pp);
    CHECK(pm);
    CHECK(mp);
    CHECK(mm);
}

TEST_CASE("halving the internal step barely moves the stationary second moment") {
    auto second_moment = [](int substeps) {
        SdeSystem sys;
        sys.substeps = substeps;
        sys.seed = 31;
        Eigen::VectorXd x0(2);
        x0 << 1.0, 0.0;
        double acc = 0.0;
        int count = 0;
        for (int t = 0; t < 200; ++t) {
            const Eigen::MatrixXd traj =
                simulate_langevin(sys, x0, 30, static_cast<std::uint64_t>(t));
            for (Eigen::Index j = 5; j < traj.cols(); ++j) {
                acc += traj(0, j) * traj(0, j);
                ++count;
            }
        }
        return acc / count;
    };
    const double coarse = second_moment(1000);
    const double fine = second_moment(2000);
    CHECK(std::abs(coarse - fine) / std::abs(fine) < 0.02);
}

TEST_CASE("latin hypercube design validation and the single point case") {
    Eigen::MatrixXd bounds(2, 2);
    bounds << -2.0, 3.0, 0.0, 10.0;
    CHECK_THROWS_AS(latin_hypercube(0, bounds, 1), ConfigError);
    CHECK_THROWS_AS(latin_hypercube(4, Eigen::MatrixXd::Zero(2, 3), 1), ConfigError);
    Eigen::MatrixXd flipped(1, 2);
    flipped << 2.0, -2.0;
    CHECK_THROWS_AS(latin_hypercube(4, flipped, 1), ConfigError);
    CHECK_THROWS_AS(latin_hypercube(4, bounds, 1, 0), ConfigError);

    const PointSet one = latin_hypercube(1, bounds, 7);
    REQUIRE(one.cols() == 1);
    CHECK(one(0, 0) >= -2.0);
    CHECK(one(0, 0) <= 3.0);
    CHECK(one(1, 0) >= 0.0);
    CHECK(one(1, 0) <= 10.0);
}

TEST_CASE("every axis slab holds exactly one design point") {
    Eigen::MatrixXd bounds(2, 2);
    bounds << -2.0, 3.0, 0.0, 10.0;
    const int n = 9;
    const PointSet P = latin_hypercube(n, bounds, 42);
    REQUIRE(P.cols() == n);
    for (int d = 0; d < 2; ++d) {
        const double lo = bounds(d, 0), width = (bounds(d, 1) - bounds(d, 0)) / n;
        std::vector<int> bin_count(n, 0);
        for (int j = 0; j < n; ++j) {
            const int bin = std::min(
                n - 1, static_cast<int>(std::floor((P(d, j) - lo) / width)));
            REQUIRE(bin >= 0);
            bin_count[static_cast<size_t>(bin)] += 1;
        }
        for (int b = 0; b < n; ++b) CHECK(bin_count[static_cast<size_t>(b)] == 1);
    }
}

TEST_CASE("the optimized design beats the median candidate separation") {
    Eigen::MatrixXd bounds(2, 2);
    bounds << -1.0, 1.0, -1.0, 1.0;
    std::vector<double> scores;
    const PointSet P = latin_hypercube(12, bounds, 5, 100, &scores);
    REQUIRE(scores.size() == 100);
    const double achieved = min_pairwise_distance(P);
    CHECK(achieved == doctest::Approx(*std::max_element(scores.begin(), scores.end()))
                          .epsilon(1e-12));
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    CHECK(achieved >= sorted[sorted.size() / 2]);

    const PointSet again = latin_hypercube(12, bounds, 5, 100);
    CHECK((P - again).norm() == 0.0);
    const PointSet reseeded = latin_hypercube(12, bounds, 6, 100);
    CHECK((P - reseeded).norm() > 0.0);
}

TEST_CASE("snapshot pairs shift by one sample and respect boundaries") {
    Eigen::MatrixXd traj_a(2, 20), traj_b(2, 5);
    for (int j = 0; j < 20; ++j) traj_a.col(j) = Eigen::Vector2d(j, -j);
    for (int j = 0; j < 5; ++j) traj_b.col(j) = Eigen::Vector2d(100 + j, 200 + j);

    const SnapshotSet data = build_snapshots({traj_a, traj_b}, 0.0, 9, false);
    REQUIRE(data.X.cols() == 19 + 4);
    CHECK((data.X.leftCols(19) - traj_a.leftCols(19)).norm() == 0.0);
    CHECK((data.Y.leftCols(19) - traj_a.rightCols(19)).norm() == 0.0);
    CHECK((data.X.rightCols(4) - traj_b.leftCols(4)).norm() == 0.0);
    CHECK((data.Y.rightCols(4) - traj_b.rightCols(4)).norm() == 0.0);
    // nothing maps the end of trajectory A onto the start of B
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) {
        CHECK((data.Y.col(j) - data.X.col(j)).norm() <= std::sqrt(2.0) + 1e-12);
    }
    CHECK((data.standardizer.mean.array() == 0.0).all());
    CHECK((data.standardizer.scale.array() == 1.0).all());

    CHECK_THROWS_AS(build_snapshots({}, 0.0, 9, false), ConfigError);
    CHECK_THROWS_AS(build_snapshots({traj_a.leftCols(1)}, 0.0, 9, false), ConfigError);
    CHECK_THROWS_AS(build_snapshots({traj_a}, -0.1, 9, false), ConfigError);
}

TEST_CASE("standardization is fit on the noise-free predecessors") {
    Eigen::MatrixXd traj(2, 40);
    for (int j = 0; j < 40; ++j)
        traj.col(j) = Eigen::Vector2d(3.0 + std::sin(0.3 * j), -5.0 + 2.0 * std::cos(0.2 * j));
    const SnapshotSet data = build_snapshots({traj}, 2.5, 13, true);

    const Eigen::MatrixXd raw_X = traj.leftCols(39);
    const Eigen::VectorXd mean = raw_X.rowwise().mean();
    CHECK((data.standardizer.mean - mean).norm() < 1e-12);
    for (int d = 0; d < 2; ++d) {
        const double var =
            (raw_X.row(d).array() - mean(d)).square().sum() / raw_X.cols();
        CHECK(data.standardizer.scale(d) ==
              doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    }
    // X columns carry no noise: inverting recovers the raw trajectory exactly
    CHECK((data.standardizer.invert(data.X) - raw_X).norm() < 1e-10);
}

TEST_CASE("target noise has the requested variance") {
    const Eigen::MatrixXd traj = Eigen::MatrixXd::Zero(2, 10001);
    const double sigma = 0.3;
    const SnapshotSet data = build_snapshots({traj}, sigma, 17, false);
    REQUIRE(data.X.cols() == 10000);
    CHECK(data.X.cwiseAbs().maxCoeff() == 0.0); // inputs stay noise-free
    const double var = data.Y.array().square().sum() / (2.0 * 10000.0);
    CHECK(std::abs(var - sigma * sigma) < 0.05 * sigma * sigma);
    CHECK(std::abs(data.Y.array().mean()) < 0.01);

    // a different seed redraws the corruption
    const SnapshotSet other = build_snapshots({traj}, sigma, 18, false);
    CHECK((data.Y - other.Y).norm() > 0.0);
    const SnapshotSet same = build_snapshots({traj}, sigma, 17, false);
    CHECK((data.Y - same.Y).norm() == 0.0);
}
