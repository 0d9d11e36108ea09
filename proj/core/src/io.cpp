#include "gpdmd/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gpdmd/errors.hpp"

namespace gpdmd {

namespace {

std::string format_number(double v) {
    if (!std::isfinite(v)) {
        throw NumericalError("cannot serialize a non-finite number");
    }
    // "%.17g" prints a bare "-0", which JSON parsers read back as the integer
    // zero and the sign bit is lost
    if (v == 0.0 && std::signbit(v)) return "-0.0";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void dump_value(const nlohmann::ordered_json& j, std::string& out, int indent, int depth) {
    const std::string pad(indent > 0 ? static_cast<size_t>(indent * (depth + 1)) : 0, ' ');
    const std::string close_pad(indent > 0 ? static_cast<size_t>(indent * depth) : 0, ' ');
    const char* nl = indent > 0 ? "\n" : "";
    switch (j.type()) {
    case nlohmann::ordered_json::value_t::null:
        out += "null";
        return;
    case nlohmann::ordered_json::value_t::boolean:
        out += j.get<bool>() ? "true" : "false";
        return;
    case nlohmann::ordered_json::value_t::number_integer:
        out += std::to_string(j.get<std::int64_t>());
        return;
    case nlohmann::ordered_json::value_t::number_unsigned:
        out += std::to_string(j.get<std::uint64_t>());
        return;
    case nlohmann::ordered_json::value_t::number_float:
        out += format_number(j.get<double>());
        return;
    case nlohmann::ordered_json::value_t::string:
        out += nlohmann::json(j.get<std::string>()).dump(); // library escaping
        return;
    case nlohmann::ordered_json::value_t::array: {
        if (j.empty()) {
            out += "[]";
            return;
        }
        out += "[";
        bool first = true;
        for (const auto& item : j) {
            if (!first) out += ",";
            first = false;
            out += nl;
            out += pad;
            dump_value(item, out, indent, depth + 1);
        }
        out += nl;
        out += close_pad;
        out += "]";
        return;
    }
    case nlohmann::ordered_json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) out += ",";
            first = false;
            out += nl;
            out += pad;
            out += nlohmann::json(it.key()).dump();
            out += indent > 0 ? ": " : ":";
            dump_value(it.value(), out, indent, depth + 1);
        }
        out += nl;
        out += close_pad;
        out += "}";
        return;
    }
    default:
        throw IoError("unsupported JSON value type in serialization");
    }
}

void require_fields(const nlohmann::ordered_json& j, const char* what) {
    if (!j.is_object()) {
        throw IoError(std::string(what) + ": expected a JSON object");
    }
}

const nlohmann::ordered_json& field(const nlohmann::ordered_json& j, const char* key,
                                    const char* what) {
    require_fields(j, what);
    auto it = j.find(key);
    if (it == j.end()) {
        throw IoError(std::string(what) + ": missing field '" + key + "'");
    }
    return *it;
}

} // namespace

std::string dump_json(const nlohmann::ordered_json& j, int indent) {
    std::string out;
    dump_value(j, out, indent, 0);
    return out;
}

void save_json(const std::string& path, const nlohmann::ordered_json& j) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open for writing: " + path);
    const std::string text = dump_json(j) + "\n";
    file.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!file) throw IoError("write failed: " + path);
}

nlohmann::ordered_json load_json(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open: " + path);
    try {
        return nlohmann::ordered_json::parse(file);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("JSON parse error in " + path + ": " + e.what());
    }
}

nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXcd& m) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            row.push_back(nlohmann::ordered_json::array({m(i, k).real(), m(i, k).imag()}));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::ordered_json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_array()) throw IoError("expected an array of matrix rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return Eigen::MatrixXd(0, 0);
    const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j.at(static_cast<size_t>(i));
        if (static_cast<Eigen::Index>(row.size()) != cols) {
            throw IoError("ragged matrix rows in JSON");
        }
        for (Eigen::Index k = 0; k < cols; ++k) {
            m(i, k) = row.at(static_cast<size_t>(k)).get<double>();
        }
    }
    return m;
}

Eigen::MatrixXcd complex_matrix_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_array()) throw IoError("expected an array of matrix rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return Eigen::MatrixXcd(0, 0);
    const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXcd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j.at(static_cast<size_t>(i));
        if (static_cast<Eigen::Index>(row.size()) != cols) {
            throw IoError("ragged matrix rows in JSON");
        }
        for (Eigen::Index k = 0; k < cols; ++k) {
            const auto& pair = row.at(static_cast<size_t>(k));
            if (!pair.is_array() || pair.size() != 2) {
                throw IoError("complex entries must be [re, im] pairs");
            }
            m(i, k) = std::complex<double>(pair.at(0).get<double>(),
                                           pair.at(1).get<double>());
        }
    }
    return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_array()) throw IoError("expected a numeric array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = j.at(static_cast<size_t>(i)).get<double>();
    }
    return v;
}

nlohmann::ordered_json params_to_json(const KernelParams& params) {
    nlohmann::ordered_json j;
    j["lengthscales"] = vector_to_json(params.lengthscales);
    j["signal_variance"] = params.signal_variance;
    j["noise_variance"] = params.noise_variance;
    j["lifted_noise_variance"] = params.lifted_noise_variance;
    j["inducing_jitter"] = params.inducing_jitter;
    return j;
}

KernelParams params_from_json(const nlohmann::ordered_json& j) {
    KernelParams p;
    p.lengthscales = vector_from_json(field(j, "lengthscales", "kernel params"));
    p.signal_variance = field(j, "signal_variance", "kernel params").get<double>();
    p.noise_variance = field(j, "noise_variance", "kernel params").get<double>();
    p.lifted_noise_variance = field(j, "lifted_noise_variance", "kernel params").get<double>();
    p.inducing_jitter = field(j, "inducing_jitter", "kernel params").get<double>();
    return p;
}

nlohmann::ordered_json model_to_json(const KoopmanModel& model) {
    nlohmann::ordered_json j;
    j["format"] = "gpdmd-model";
    j["version"] = 1;
    j["state_dim"] = static_cast<std::int64_t>(model.state_dim());
    j["dict_size"] = static_cast<std::int64_t>(model.dict_size());
    j["params"] = params_to_json(model.params);
    j["sigma_lifted_variance"] = model.sigma_lifted_variance;
    j["jitter_used"] = model.jitter_used;
    nlohmann::ordered_json std_j;
    std_j["mean"] = vector_to_json(model.standardizer.mean);
    std_j["scale"] = vector_to_json(model.standardizer.scale);
    j["standardizer"] = std::move(std_j);
    j["U"] = matrix_to_json(model.U);
    nlohmann::ordered_json eig = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < model.eigenvalues.size(); ++i) {
        eig.push_back(nlohmann::ordered_json::array(
            {model.eigenvalues(i).real(), model.eigenvalues(i).imag()}));
    }
    j["eigenvalues"] = std::move(eig);
    j["right_eigvecs"] = matrix_to_json(model.right_eigvecs);
    j["left_eigvecs"] = matrix_to_json(model.left_eigvecs);
    j["modes"] = matrix_to_json(model.modes);
    j["K_bc"] = matrix_to_json(model.K_bc);
    j["inducing"] = matrix_to_json(model.inducing);
    j["chol_LZZ"] = matrix_to_json(model.chol_LZZ);
    j["info_gain_lifted"] = matrix_to_json(model.info_gain_lifted);
    j["canonical_correlations"] = vector_to_json(model.canonical_correlations);
    nlohmann::ordered_json dropped = nlohmann::ordered_json::array();
    for (int d : model.dropped_modes) dropped.push_back(d);
    j["dropped_modes"] = std::move(dropped);
    nlohmann::ordered_json diags = nlohmann::ordered_json::array();
    for (const auto& d : model.diagnostics) diags.push_back(d);
    j["diagnostics"] = std::move(diags);
    return j;
}

KoopmanModel model_from_json(const nlohmann::ordered_json& j) {
    if (field(j, "format", "model file").get<std::string>() != "gpdmd-model") {
        throw IoError("not a model file");
    }
    if (field(j, "version", "model file").get<int>() != 1) {
        throw IoError("unsupported model file version");
    }
    KoopmanModel m;
    m.params = params_from_json(field(j, "params", "model file"));
    m.sigma_lifted_variance = field(j, "sigma_lifted_variance", "model file").get<double>();
    m.jitter_used = field(j, "jitter_used", "model file").get<double>();
    const auto& std_j = field(j, "standardizer", "model file");
    m.standardizer.mean = vector_from_json(field(std_j, "mean", "standardizer"));
    m.standardizer.scale = vector_from_json(field(std_j, "scale", "standardizer"));
    m.U = matrix_from_json(field(j, "U", "model file"));
    const auto& eig = field(j, "eigenvalues", "model file");
    m.eigenvalues.resize(static_cast<Eigen::Index>(eig.size()));
    for (Eigen::Index i = 0; i < m.eigenvalues.size(); ++i) {
        const auto& pair = eig.at(static_cast<size_t>(i));
        m.eigenvalues(i) =
            std::complex<double>(pair.at(0).get<double>(), pair.at(1).get<double>());
    }
    m.right_eigvecs = complex_matrix_from_json(field(j, "right_eigvecs", "model file"));
    m.left_eigvecs = complex_matrix_from_json(field(j, "left_eigvecs", "model file"));
    m.modes = complex_matrix_from_json(field(j, "modes", "model file"));
    m.K_bc = matrix_from_json(field(j, "K_bc", "model file"));
    m.inducing = matrix_from_json(field(j, "inducing", "model file"));
    m.chol_LZZ = matrix_from_json(field(j, "chol_LZZ", "model file"));
    m.info_gain_lifted = matrix_from_json(field(j, "info_gain_lifted", "model file"));
    m.canonical_correlations =
        vector_from_json(field(j, "canonical_correlations", "model file"));
    for (const auto& d : field(j, "dropped_modes", "model file")) {
        m.dropped_modes.push_back(d.get<int>());
    }
    for (const auto& d : field(j, "diagnostics", "model file")) {
        m.diagnostics.push_back(d.get<std::string>());
    }
    const Eigen::Index D = field(j, "state_dim", "model file").get<Eigen::Index>();
    const Eigen::Index M = field(j, "dict_size", "model file").get<Eigen::Index>();
    if (m.inducing.rows() != D || m.U.rows() != M || m.U.cols() != M) {
        throw IoError("model file dimensions are inconsistent");
    }
    return m;
}

void save_model(const std::string& path, const KoopmanModel& model) {
    save_json(path, model_to_json(model));
}

KoopmanModel load_model(const std::string& path) {
    return model_from_json(load_json(path));
}

std::string json_hash(const nlohmann::ordered_json& j) {
    const std::string text = dump_json(j, -1);
    std::uint64_t h = 1469598103934665603ull; // FNV-1a 64
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string params_hash(const KernelParams& params) {
    return json_hash(params_to_json(params));
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Eigen::MatrixXd& rows) {
    if (header.size() != static_cast<size_t>(rows.cols()) && rows.size() != 0) {
        throw ConfigError("CSV header width does not match the data");
    }
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open for writing: " + path);
    std::string line;
    for (size_t i = 0; i < header.size(); ++i) {
        if (i > 0) line += ",";
        line += header[i];
    }
    line += "\n";
    file << line;
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        line.clear();
        for (Eigen::Index c = 0; c < rows.cols(); ++c) {
            if (c > 0) line += ",";
            line += format_number(rows(r, c));
        }
        line += "\n";
        file << line;
    }
    if (!file) throw IoError("write failed: " + path);
}

Eigen::MatrixXd read_csv(const std::string& path, std::vector<std::string>* header) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(file, line)) throw IoError("empty CSV: " + path);
    std::vector<std::string> head;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) head.push_back(cell);
    }
    if (header != nullptr) *header = head;
    std::vector<std::vector<double>> data;
    while (std::getline(file, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError("bad numeric cell '" + cell + "' in " + path);
            }
        }
        if (row.size() != head.size()) {
            throw IoError("ragged CSV row in " + path);
        }
        data.push_back(std::move(row));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(data.size()),
                      static_cast<Eigen::Index>(head.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = data[static_cast<size_t>(r)][static_cast<size_t>(c)];
        }
    }
    return m;
}

void write_trajectory_csv(const std::string& path, const Eigen::MatrixXd& traj, double dt) {
    const Eigen::Index D = traj.rows();
    std::vector<std::string> header;
    header.push_back("t");
    for (Eigen::Index d = 0; d < D; ++d) header.push_back("x_" + std::to_string(d + 1));
    Eigen::MatrixXd rows(traj.cols(), D + 1);
    for (Eigen::Index s = 0; s < traj.cols(); ++s) {
        rows(s, 0) = dt * static_cast<double>(s);
        rows.row(s).tail(D) = traj.col(s).transpose();
    }
    write_csv(path, header, rows);
}

void write_snapshots_csv(const std::string& path, const SnapshotSet& data) {
    const Eigen::Index D = data.X.rows();
    std::vector<std::string> header;
    for (Eigen::Index d = 0; d < D; ++d) header.push_back("x_" + std::to_string(d + 1));
    for (Eigen::Index d = 0; d < D; ++d) header.push_back("y_" + std::to_string(d + 1));
    Eigen::MatrixXd rows(data.X.cols(), 2 * D);
    rows.leftCols(D) = data.X.transpose();
    rows.rightCols(D) = data.Y.transpose();
    write_csv(path, header, rows);
}

void read_snapshots_csv(const std::string& path, Eigen::MatrixXd& X, Eigen::MatrixXd& Y) {
    std::vector<std::string> header;
    const Eigen::MatrixXd rows = read_csv(path, &header);
    if (header.size() % 2 != 0 || header.empty()) {
        throw IoError("snapshot CSV must hold x and y blocks of equal width: " + path);
    }
    const Eigen::Index D = static_cast<Eigen::Index>(header.size()) / 2;
    X = rows.leftCols(D).transpose();
    Y = rows.rightCols(D).transpose();
}

void write_forecast_csv(const std::string& path, const ForecastResult& fc, double z) {
    const Eigen::Index D = fc.means.rows();
    std::vector<std::string> header;
    header.push_back("step");
    for (Eigen::Index d = 0; d < D; ++d) header.push_back("mean_" + std::to_string(d + 1));
    for (Eigen::Index d = 0; d < D; ++d) header.push_back("var_" + std::to_string(d + 1));
    for (Eigen::Index d = 0; d < D; ++d) header.push_back("lo_" + std::to_string(d + 1));
    for (Eigen::Index d = 0; d < D; ++d) header.push_back("hi_" + std::to_string(d + 1));
    header.push_back("reprojected");

    Eigen::MatrixXd rows(fc.horizon + 1, 4 * D + 2);
    for (int s = 0; s <= fc.horizon; ++s) {
        rows(s, 0) = s;
        const Eigen::VectorXd mean = fc.means.col(s);
        Eigen::VectorXd var = Eigen::VectorXd::Zero(D);
        if (static_cast<size_t>(s) < fc.state_covs.size()) {
            var = fc.state_covs[static_cast<size_t>(s)].diagonal().cwiseMax(0.0);
        }
        const Eigen::VectorXd sigma = var.cwiseSqrt();
        rows.row(s).segment(1, D) = mean.transpose();
        rows.row(s).segment(1 + D, D) = var.transpose();
        rows.row(s).segment(1 + 2 * D, D) = (mean - z * sigma).transpose();
        rows.row(s).segment(1 + 3 * D, D) = (mean + z * sigma).transpose();
        const bool reprojected =
            std::find(fc.reprojection_steps.begin(), fc.reprojection_steps.end(), s) !=
            fc.reprojection_steps.end();
        rows(s, 4 * D + 1) = reprojected ? 1.0 : 0.0;
    }
    write_csv(path, header, rows);
}

nlohmann::ordered_json eval_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["model_id"] = report.model_id;
    j["n_test"] = report.n_test;
    j["config_hash"] = report.config_hash;
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (const auto& [h, s] : report.smape_per_horizon) {
        nlohmann::ordered_json row;
        row["horizon"] = h;
        row["smape"] = s;
        per.push_back(std::move(row));
    }
    j["smape_per_horizon"] = std::move(per);
    return j;
}

void write_eval_csv(const std::string& path, const std::vector<EvalReport>& reports) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open for writing: " + path);
    file << "model,horizon,smape\n";
    for (const auto& report : reports) {
        for (const auto& [h, s] : report.smape_per_horizon) {
            file << report.model_id << "," << h << "," << format_number(s) << "\n";
        }
    }
    if (!file) throw IoError("write failed: " + path);
}

} // namespace gpdmd
