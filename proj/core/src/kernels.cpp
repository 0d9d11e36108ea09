#include "gpdmd/kernels.hpp"

#include <cmath>
#include <string>

#include "gpdmd/errors.hpp"
#include "gpdmd/parallel.hpp"

namespace gpdmd {

namespace {
constexpr double kSqrt5 = 2.2360679774997896964091736687747;

void check_pair(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                const KernelParams& params) {
    if (x.size() != x2.size() || x.size() != params.lengthscales.size())
        throw ConfigError("kernel input dimension mismatch: " + std::to_string(x.size()) +
                          " vs " + std::to_string(x2.size()) + " with " +
                          std::to_string(params.lengthscales.size()) + " lengthscales");
    if (!x.allFinite() || !x2.allFinite())
        throw NumericalError("kernel input contains non-finite values");
}
} // namespace

KernelParams KernelParams::isotropic(int dim, double ell, double sf2, double s2,
                                     double jitter) {
    KernelParams p;
    p.lengthscales = Eigen::VectorXd::Constant(dim, ell * ell);
    p.signal_variance = sf2;
    p.noise_variance = s2;
    p.lifted_noise_variance = s2;
    p.inducing_jitter = jitter;
    return p;
}

KernelParams KernelParams::with_lifted_noise(double s2_lifted) const {
    KernelParams p = *this;
    p.lifted_noise_variance = s2_lifted;
    return p;
}

void validate_params(const KernelParams& params, Eigen::Index dim) {
    if (params.lengthscales.size() != dim)
        throw ConfigError("lengthscales has " + std::to_string(params.lengthscales.size()) +
                          " entries, expected " + std::to_string(dim));
    if ((params.lengthscales.array() <= 0.0).any())
        throw ConfigError("lengthscales must be strictly positive");
    if (!(params.signal_variance > 0.0))
        throw ConfigError("signal_variance must be strictly positive");
    if (!(params.noise_variance > 0.0))
        throw ConfigError("noise_variance must be strictly positive");
    if (!(params.lifted_noise_variance >= 0.0))
        throw ConfigError("lifted_noise_variance must be nonnegative");
    if (!(params.inducing_jitter >= 0.0))
        throw ConfigError("inducing_jitter must be nonnegative");
}

double matern52(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                const KernelParams& params) {
    check_pair(x, x2, params);
    const double r2 = ((x - x2).array().square() / params.lengthscales.array()).sum();
    const double r = std::sqrt(std::max(r2, 0.0));
    const double s5r = kSqrt5 * r;
    return params.signal_variance * (1.0 + s5r + (5.0 / 3.0) * r2) * std::exp(-s5r);
}

Eigen::MatrixXd gram(const PointSet& A, const PointSet& B, const KernelParams& params) {
    if (A.rows() != B.rows() || A.rows() != params.lengthscales.size())
        throw ConfigError("gram: point dimension mismatch");
    const Eigen::Index n = A.cols(), m = B.cols();
    Eigen::MatrixXd K(n, m);
    const Eigen::ArrayXd inv_T = params.lengthscales.array().inverse();
    const double sf2 = params.signal_variance;
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            const double r2 = ((A.col(static_cast<Eigen::Index>(i)) - B.col(j)).array().square() * inv_T).sum();
            const double r = std::sqrt(std::max(r2, 0.0));
            const double s5r = kSqrt5 * r;
            K(static_cast<Eigen::Index>(i), j) = sf2 * (1.0 + s5r + (5.0 / 3.0) * r2) * std::exp(-s5r);
        }
    });
    return K;
}

Eigen::VectorXd kernel_hyper_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                                      const KernelParams& params) {
    check_pair(x, x2, params);
    const Eigen::Index dim = x.size();
    const Eigen::ArrayXd diff = (x - x2).array();
    const Eigen::ArrayXd scaled2 = diff.square() / params.lengthscales.array();
    const double r2 = scaled2.sum();
    const double r = std::sqrt(std::max(r2, 0.0));
    const double s5r = kSqrt5 * r;
    const double expf = std::exp(-s5r);
    Eigen::VectorXd g(dim + 1);
    // d/d log l_d = (5/3) sf2 (1 + sqrt5 r) e^{-sqrt5 r} * diff_d^2 / T_d
    g.head(dim) = ((5.0 / 3.0) * params.signal_variance * (1.0 + s5r) * expf) * scaled2.matrix();
    // d/d log sf2 = kappa itself
    g(dim) = params.signal_variance * (1.0 + s5r + (5.0 / 3.0) * r2) * expf;
    return g;
}

Eigen::VectorXd kernel_state_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                                      const KernelParams& params) {
    check_pair(x, x2, params);
    const Eigen::ArrayXd diff = (x - x2).array();
    const double r2 = (diff.square() / params.lengthscales.array()).sum();
    const double r = std::sqrt(std::max(r2, 0.0));
    const double s5r = kSqrt5 * r;
    const double w = -(5.0 / 3.0) * params.signal_variance * (1.0 + s5r) * std::exp(-s5r);
    return (w * diff / params.lengthscales.array()).matrix();
}

Eigen::MatrixXd kernel_state_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                                     const KernelParams& params) {
    check_pair(x, x2, params);
    const Eigen::ArrayXd diff = (x - x2).array();
    const Eigen::ArrayXd inv_T = params.lengthscales.array().inverse();
    const double r2 = (diff.square() * inv_T).sum();
    const double r = std::sqrt(std::max(r2, 0.0));
    const double s5r = kSqrt5 * r;
    const double expf = std::exp(-s5r);
    const double diag_w = -(5.0 / 3.0) * params.signal_variance * (1.0 + s5r) * expf;
    const Eigen::VectorXd u = (diff * inv_T).matrix();
    Eigen::MatrixXd H = ((25.0 / 3.0) * params.signal_variance * expf) * (u * u.transpose());
    H.diagonal() += (diag_w * inv_T).matrix();
    return H;
}

} // namespace gpdmd
