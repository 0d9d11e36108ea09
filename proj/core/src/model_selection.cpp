#include "gpdmd/model_selection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gpdmd/errors.hpp"

namespace gpdmd {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct ScalarObjective {
    std::function<double(const Eigen::VectorXd&)> value;        // to maximize
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad; // ascent gradient
};

// BFGS ascent with backtracking Armijo line search. Non-finite trial values
// reject the step; the search direction resets to steepest ascent whenever
// the curvature approximation loses positivity.
Eigen::VectorXd maximize_bfgs(const ScalarObjective& obj, Eigen::VectorXd theta,
                              const OptimizerConfig& cfg) {
    constexpr double kArmijo = 1e-4;
    const Eigen::Index n = theta.size();
    double f = obj.value(theta);
    if (!std::isfinite(f)) {
        throw NumericalError("objective is not finite at the initial hyperparameters");
    }
    Eigen::VectorXd g = obj.grad(theta);
    // Unit first step: with B = I/|g| the opening trial move has length one in
    // log space, so a steep initial gradient does not burn the line search.
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n) / std::max(1.0, g.norm());
    bool reported_rejection = false;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        if (g.lpNorm<Eigen::Infinity>() < cfg.gradient_tolerance) break;
        Eigen::VectorXd d = B * g;
        double slope = g.dot(d);
        if (!(slope > 0.0)) {
            B.setIdentity();
            d = g;
            slope = g.squaredNorm();
        }
        double alpha = 1.0;
        double f_new = kNegInf;
        Eigen::VectorXd theta_new;
        bool accepted = false;
        for (int ls = 0; ls < cfg.max_line_search; ++ls) {
            theta_new = theta + alpha * d;
            const double cand = obj.value(theta_new);
            if (std::isfinite(cand) && cand >= f + kArmijo * alpha * slope) {
                accepted = true;
                f_new = cand;
                break;
            }
            if (!std::isfinite(cand) && !reported_rejection) {
                std::cerr << "gpdmd: rejected a non-finite objective value during the "
                             "line search\n";
                reported_rejection = true;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
        const Eigen::VectorXd g_new = obj.grad(theta_new);
        const Eigen::VectorXd s = theta_new - theta;
        const Eigen::VectorXd y = g - g_new; // curvature pair in minimization form
        theta = theta_new;
        f = f_new;
        g = g_new;
        const double sy = s.dot(y);
        if (sy > 1e-10 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
            B = (I - rho * s * y.transpose()) * B * (I - rho * y * s.transpose()) +
                rho * s * s.transpose();
        }
    }
    return theta;
}

KernelParams unpack_hypers(const KernelParams& base, const Eigen::VectorXd& theta) {
    const Eigen::Index D = theta.size() - 2;
    KernelParams p = base;
    p.lengthscales = (2.0 * theta.head(D)).array().exp();
    p.signal_variance = std::exp(theta(D));
    p.noise_variance = std::exp(theta(D + 1));
    p.lifted_noise_variance = p.noise_variance;
    return p;
}

Eigen::VectorXd pack_hypers(const KernelParams& params) {
    const Eigen::Index D = params.lengthscales.size();
    Eigen::VectorXd theta(D + 2);
    theta.head(D) = 0.5 * params.lengthscales.array().log();
    theta(D) = std::log(params.signal_variance);
    theta(D + 1) = std::log(params.noise_variance);
    return theta;
}

// Continuous refinement of the inducing coordinates by backtracking gradient
// ascent on the summed evidence bound.
void refine_inducing(const SnapshotSet& data, PointSet& Z, const KernelParams& params,
                     const OptimizerConfig& cfg) {
    double f = elbo_sum(data.X, data.Y, Z, params);
    for (int it = 0; it < 20; ++it) {
        const ElboGradient eg = elbo_gradient_sum(data.X, data.Y, Z, params);
        const double gmax = eg.inducing.cwiseAbs().maxCoeff();
        if (gmax < cfg.gradient_tolerance) break;
        double alpha = std::sqrt(params.lengthscales.minCoeff()) / gmax;
        bool accepted = false;
        for (int ls = 0; ls < cfg.max_line_search; ++ls) {
            const PointSet trial = Z + alpha * eg.inducing;
            double cand;
            try {
                cand = elbo_sum(data.X, data.Y, trial, params);
            } catch (const Error&) {
                cand = kNegInf;
            }
            if (std::isfinite(cand) && cand > f) {
                Z = trial;
                f = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
    }
}

double objective_value(const SnapshotSet& data, const PointSet& Z, const KernelParams& params,
                       const SelectionConfig& config) {
    if (config.objective == SelectionObjective::kVfe) {
        return elbo_sum(data.X, data.Y, Z, params);
    }
    return vamp2_score(fit_tcca(data, Z, params));
}

} // namespace

std::vector<Eigen::Index> ald_screen(const PointSet& X, const KernelParams& params,
                                     double threshold) {
    validate_params(params, X.rows());
    if (X.cols() < 1) throw ConfigError("need at least one candidate point");
    if (!(threshold > 0.0)) throw ConfigError("ALD threshold must be positive");

    const Eigen::Index N = X.cols();
    std::vector<Eigen::Index> admitted;
    admitted.push_back(0); // the first point seeds the dictionary
    Eigen::MatrixXd L(1, 1);
    L(0, 0) = std::sqrt(matern52(X.col(0), X.col(0), params));

    for (Eigen::Index i = 1; i < N; ++i) {
        const Eigen::Index m = static_cast<Eigen::Index>(admitted.size());
        Eigen::VectorXd k(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            k(j) = matern52(X.col(admitted[static_cast<size_t>(j)]), X.col(i), params);
        }
        const Eigen::VectorXd w =
            L.topLeftCorner(m, m).triangularView<Eigen::Lower>().solve(k);
        const double delta = matern52(X.col(i), X.col(i), params) - w.squaredNorm();
        if (delta > threshold) {
            L.conservativeResize(m + 1, m + 1);
            L.row(m).head(m) = w.transpose();
            L.col(m).head(m).setZero();
            L(m, m) = std::sqrt(delta);
            admitted.push_back(i);
        }
    }
    return admitted;
}

PointSet alc_refine(const PointSet& X, const Eigen::MatrixXd& targets, const PointSet& Z,
                    const KernelParams& params, const SelectionConfig& config,
                    const std::vector<Eigen::Index>& candidates,
                    std::vector<Eigen::Index>* picked) {
    validate_params(params, X.rows());
    if (Z.rows() != X.rows()) throw ConfigError("inducing points and data disagree on dimension");
    if (targets.cols() != X.cols()) throw ConfigError("targets do not match the inputs");
    if (candidates.empty()) throw ConfigError("no candidates remaining for refinement");
    for (Eigen::Index c : candidates) {
        if (c < 0 || c >= X.cols()) throw ConfigError("candidate index out of range");
    }
    if (config.batch_size < 1) throw ConfigError("batch size must be at least one");

    const PointSet& grid = config.alc_grid.size() == 0 ? X : config.alc_grid;
    const double s2 = params.noise_variance;
    const double skip_tol = 1e-12 * params.signal_variance;
    PointSet current = Z;
    std::vector<Eigen::Index> live(candidates.begin(), candidates.end());
    if (picked != nullptr) picked->clear();

    for (int round = 0; round < config.batch_size; ++round) {
        if (current.cols() >= config.max_dictionary || live.empty()) break;
        const Eigen::Index M = current.cols();

        Eigen::MatrixXd J = gram(current, current, params);
        J.diagonal().array() += params.inducing_jitter;
        Eigen::LLT<Eigen::MatrixXd> lltJ(J);
        if (lltJ.info() != Eigen::Success) {
            throw NumericalError("inducing gram matrix is not positive definite during "
                                 "refinement");
        }
        const Eigen::MatrixXd KZX = gram(current, X, params);
        // Ct = KZX KZX^T + s2 J, factored through a QR of the stacked square
        // roots; forming the product squares the condition number and its
        // Cholesky breaks down first once optimization stretches lengthscales
        Eigen::MatrixXd stacked(X.cols() + M, M);
        stacked.topRows(X.cols()) = KZX.transpose();
        stacked.bottomRows(M) =
            std::sqrt(s2) * Eigen::MatrixXd(lltJ.matrixL()).transpose();
        const Eigen::HouseholderQR<Eigen::MatrixXd> qr(stacked);
        const Eigen::MatrixXd Rc =
            qr.matrixQR().topRows(M).triangularView<Eigen::Upper>();
        const auto solve_Ct = [&](const Eigen::MatrixXd& B) {
            return Eigen::MatrixXd(Rc.triangularView<Eigen::Upper>().solve(
                Rc.transpose().triangularView<Eigen::Lower>().solve(B)));
        };
        const Eigen::MatrixXd V = gram(current, grid, params); // M x G
        const Eigen::MatrixXd JiV = lltJ.solve(V);
        const Eigen::MatrixXd CiV = solve_Ct(V);

        double best_score = kNegInf;
        size_t best_pos = 0;
        for (size_t pos = 0; pos < live.size(); ++pos) {
            const Eigen::VectorXd zc = X.col(live[pos]);
            Eigen::VectorXd u(M);
            for (Eigen::Index j = 0; j < M; ++j) {
                u(j) = matern52(current.col(j), zc, params);
            }
            const double kzz =
                matern52(zc, zc, params) + params.inducing_jitter;
            const Eigen::MatrixXd kzX = gram(zc, X, params); // 1 x N
            const Eigen::VectorXd c_vec = KZX * kzX.transpose() + s2 * u;
            const double gamma = kzX.squaredNorm() + s2 * kzz;
            const double sJ = kzz - u.dot(lltJ.solve(u));
            if (!(sJ > skip_tol)) continue; // numerically dependent on current Z
            const Eigen::VectorXd wc =
                Rc.transpose().triangularView<Eigen::Lower>().solve(c_vec);
            const double sC = gamma - wc.squaredNorm();
            if (!(sC > 0.0)) continue;
            const Eigen::MatrixXd kzg = gram(zc, grid, params); // 1 x G
            const Eigen::MatrixXd r1 = kzg - u.transpose() * JiV;
            const Eigen::MatrixXd r2 = kzg - c_vec.transpose() * CiV;
            const double score = r1.squaredNorm() / sJ - s2 * r2.squaredNorm() / sC;
            if (score > best_score) {
                best_score = score;
                best_pos = pos;
            }
        }
        if (best_score == kNegInf) break; // nothing addable without degeneracy

        const Eigen::Index chosen = live[best_pos];
        current.conservativeResize(Eigen::NoChange, M + 1);
        current.col(M) = X.col(chosen);
        if (picked != nullptr) picked->push_back(chosen);
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(best_pos));
    }
    return current;
}

KernelParams optimize_hyperparameters(const SnapshotSet& data, const PointSet& inducing,
                                      const KernelParams& init, const SelectionConfig& config) {
    validate_params(init, data.X.rows());
    if (!(init.noise_variance > 0.0)) {
        throw ConfigError("hyperparameter optimization requires a positive noise variance");
    }
    if (data.X.cols() != data.Y.cols()) {
        throw ConfigError("snapshot matrices X and Y must have the same number of columns");
    }

    ScalarObjective obj;
    const KernelParams base = init;
    if (config.objective == SelectionObjective::kVfe) {
        obj.value = [&data, &inducing, base](const Eigen::VectorXd& theta) {
            if (theta.cwiseAbs().maxCoeff() > 40.0) return kNegInf;
            try {
                return elbo_sum(data.X, data.Y, inducing, unpack_hypers(base, theta));
            } catch (const Error&) {
                return kNegInf;
            }
        };
        obj.grad = [&data, &inducing, base](const Eigen::VectorXd& theta) {
            return elbo_gradient_sum(data.X, data.Y, inducing, unpack_hypers(base, theta))
                .log_hypers;
        };
    } else {
        obj.value = [&data, &inducing, base](const Eigen::VectorXd& theta) {
            if (theta.cwiseAbs().maxCoeff() > 40.0) return kNegInf;
            try {
                return vamp2_score(fit_tcca(data, inducing, unpack_hypers(base, theta)));
            } catch (const Error&) {
                return kNegInf;
            }
        };
        obj.grad = [&obj](const Eigen::VectorXd& theta) {
            const double h = 1e-5;
            Eigen::VectorXd g(theta.size());
            for (Eigen::Index i = 0; i < theta.size(); ++i) {
                Eigen::VectorXd p = theta;
                p(i) = theta(i) + h;
                const double fp = obj.value(p);
                p(i) = theta(i) - h;
                const double fm = obj.value(p);
                g(i) = (std::isfinite(fp) && std::isfinite(fm)) ? (fp - fm) / (2.0 * h) : 0.0;
            }
            return g;
        };
    }

    const Eigen::VectorXd theta = maximize_bfgs(obj, pack_hypers(init), config.optimizer);
    return unpack_hypers(init, theta);
}

double vamp2_score(const KoopmanModel& model) {
    if (model.canonical_correlations.size() == 0) {
        throw ConfigError("VAMP-2 score requires canonical correlations; fit with the "
                          "correlation estimator");
    }
    return model.canonical_correlations.squaredNorm();
}

PipelineResult pipeline(const SnapshotSet& data, const KernelParams& init,
                        SelectionConfig config) {
    validate_params(init, data.X.rows());
    if (config.max_dictionary < 1) throw ConfigError("max_dictionary must be at least one");
    if (config.batch_size < 1 || config.batch_size > config.max_dictionary) {
        throw ConfigError("batch_size must lie in [1, max_dictionary]");
    }
    if (config.ald_threshold <= 0.0) {
        config.ald_threshold = 1e-3 * init.signal_variance;
    }
    if (config.alc_grid.size() == 0) config.alc_grid = data.X;

    KernelParams params = init;
    std::vector<Eigen::Index> survivors = ald_screen(data.X, params, config.ald_threshold);
    std::vector<char> chosen(static_cast<size_t>(data.X.cols()), 0);
    chosen[static_cast<size_t>(survivors.front())] = 1;
    PointSet Z = data.X.col(survivors.front());

    PipelineResult result;
    // Greedy rounds: rescreen, batch-add, then re-optimize with a warm start.
    // Hyperparameters are only tuned once a batch is in place; a one-point
    // dictionary cannot support a fit and drags the kernel into the
    // explain-everything-as-noise basin.
    for (;;) {
        bool grew = false;
        if (Z.cols() < config.max_dictionary) {
            survivors = ald_screen(data.X, params, config.ald_threshold);
            std::vector<Eigen::Index> candidates;
            for (Eigen::Index idx : survivors) {
                if (!chosen[static_cast<size_t>(idx)]) candidates.push_back(idx);
            }
            if (!candidates.empty()) {
                std::vector<Eigen::Index> picked;
                Z = alc_refine(data.X, data.Y, Z, params, config, candidates, &picked);
                for (Eigen::Index idx : picked) chosen[static_cast<size_t>(idx)] = 1;
                grew = !picked.empty();
            }
        }

        params = optimize_hyperparameters(data, Z, params, config);
        if (config.optimize_inducing) refine_inducing(data, Z, params, config.optimizer);
        result.objective_trace.push_back(objective_value(data, Z, params, config));
        if (!grew) break;
    }

    params.lifted_noise_variance = params.noise_variance; // coupled by default
    result.params = params;
    result.inducing = Z;
    result.model = fit_tcca(data, Z, params);
    return result;
}

} // namespace gpdmd
