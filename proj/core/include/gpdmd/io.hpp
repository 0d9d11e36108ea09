#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gpdmd/forecast.hpp"
#include "gpdmd/koopman.hpp"
#include "gpdmd/metrics.hpp"

namespace gpdmd {

// Serializes with insertion-ordered keys and every floating-point number
// printed at 17 significant digits, so emission is byte-stable and parsing
// recovers the exact bits.
std::string dump_json(const nlohmann::ordered_json& j, int indent = 2);

void save_json(const std::string& path, const nlohmann::ordered_json& j);
nlohmann::ordered_json load_json(const std::string& path);

nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& m);      // rows of numbers
nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXcd& m);     // rows of [re, im]
nlohmann::ordered_json vector_to_json(const Eigen::VectorXd& v);
Eigen::MatrixXd matrix_from_json(const nlohmann::ordered_json& j);
Eigen::MatrixXcd complex_matrix_from_json(const nlohmann::ordered_json& j);
Eigen::VectorXd vector_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json params_to_json(const KernelParams& params);
KernelParams params_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json model_to_json(const KoopmanModel& model);
KoopmanModel model_from_json(const nlohmann::ordered_json& j);
void save_model(const std::string& path, const KoopmanModel& model);
KoopmanModel load_model(const std::string& path);

// Short stable fingerprint (FNV-1a over the canonical serialization); used to
// assert that benchmark models share hyperparameters.
std::string json_hash(const nlohmann::ordered_json& j);
std::string params_hash(const KernelParams& params);

// CSV with a header row; every cell printed at 17 significant digits.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Eigen::MatrixXd& rows);
Eigen::MatrixXd read_csv(const std::string& path,
                         std::vector<std::string>* header = nullptr);

void write_trajectory_csv(const std::string& path, const Eigen::MatrixXd& traj, double dt);
void write_snapshots_csv(const std::string& path, const SnapshotSet& data);
void read_snapshots_csv(const std::string& path, Eigen::MatrixXd& X, Eigen::MatrixXd& Y);

// step, mean_1..D, var_1..D, lo_1..D, hi_1..D at the z-sigma level, reprojected
void write_forecast_csv(const std::string& path, const ForecastResult& fc, double z);

nlohmann::ordered_json eval_to_json(const EvalReport& report);
// long format: model, horizon, smape
void write_eval_csv(const std::string& path, const std::vector<EvalReport>& reports);

} // namespace gpdmd
