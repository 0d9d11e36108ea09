#include "gpdmd/metrics.hpp"

#include <algorithm>

#include "gpdmd/errors.hpp"

namespace gpdmd {

double smape(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& predicted) {
    if (truth.rows() != predicted.rows() || truth.cols() != predicted.cols()) {
        throw ConfigError("SMAPE inputs must have identical shapes");
    }
    const Eigen::Index n = truth.cols();
    if (n < 1) throw ConfigError("SMAPE needs at least one column");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double denom = truth.col(i).norm() + predicted.col(i).norm();
        if (denom > 0.0) {
            sum += (truth.col(i) - predicted.col(i)).norm() / denom;
        }
    }
    return 100.0 * 3.0 * sum / static_cast<double>(n);
}

EvalReport multi_horizon_eval(const Forecaster& forecaster,
                              const std::vector<Eigen::MatrixXd>& truth,
                              const std::vector<int>& horizons,
                              const std::string& model_id,
                              const std::string& config_hash) {
    if (!forecaster) throw ConfigError("no forecaster given");
    if (truth.empty()) throw ConfigError("need at least one test rollout");
    if (horizons.empty()) throw ConfigError("need at least one evaluation horizon");
    const int max_h = *std::max_element(horizons.begin(), horizons.end());
    if (*std::min_element(horizons.begin(), horizons.end()) < 1) {
        throw ConfigError("evaluation horizons must be at least 1");
    }
    const Eigen::Index D = truth.front().rows();
    for (const auto& roll : truth) {
        if (roll.rows() != D || roll.cols() < max_h + 1) {
            throw ConfigError("every test rollout must cover the largest horizon");
        }
    }

    const Eigen::Index n = static_cast<Eigen::Index>(truth.size());
    std::vector<Eigen::MatrixXd> predictions;
    predictions.reserve(truth.size());
    for (const auto& roll : truth) {
        predictions.push_back(forecaster(roll.col(0), max_h));
        const auto& pred = predictions.back();
        if (pred.rows() != D || pred.cols() < max_h + 1) {
            throw NumericalError("forecaster returned a rollout that is too short");
        }
    }

    EvalReport report;
    report.model_id = model_id;
    report.config_hash = config_hash;
    report.n_test = static_cast<int>(n);
    for (int h : horizons) {
        Eigen::MatrixXd t(D, n);
        Eigen::MatrixXd p(D, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            t.col(i) = truth[static_cast<size_t>(i)].col(h);
            p.col(i) = predictions[static_cast<size_t>(i)].col(h);
        }
        report.smape_per_horizon[h] = smape(t, p);
    }
    return report;
}

} // namespace gpdmd
