#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gpdmd {

struct EvalReport {
    std::map<int, double> smape_per_horizon; // step -> percentage in [0, 300]
    std::string model_id;
    int n_test = 0;
    std::string config_hash;
};

// 100 * (3/n) * sum_i ||y_i - yhat_i|| / (||y_i|| + ||yhat_i||); pairs with
// both norms zero contribute nothing.
double smape(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& predicted);

// forecaster(x0, horizon) must return a D x (horizon + 1) matrix whose column
// k is the k-step prediction (column 0 echoes x0). truth holds one noise-free
// rollout per test point with the same layout.
using Forecaster = std::function<Eigen::MatrixXd(const Eigen::VectorXd&, int)>;

EvalReport multi_horizon_eval(const Forecaster& forecaster,
                              const std::vector<Eigen::MatrixXd>& truth,
                              const std::vector<int>& horizons,
                              const std::string& model_id,
                              const std::string& config_hash = "");

} // namespace gpdmd
