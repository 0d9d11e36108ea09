#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <limits>

#include "gpdmd/errors.hpp"
#include "gpdmd/forecast.hpp"
#include "gpdmd/gp.hpp"
#include "gpdmd/io.hpp"
#include "gpdmd/metrics.hpp"
#include "gpdmd/parallel.hpp"

namespace gpdmd::cli {
namespace {

using nlohmann::ordered_json;

constexpr long kGridPointCap = 250000;

ordered_json load_document(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // the library message carries the line and column of the failure
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
}

void check_keys(const ordered_json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed) known = known || item.key() == key;
        if (!known) throw ConfigError("unknown key \"" + item.key() + "\" in " + where);
    }
}

double get_number(const ordered_json& obj, const std::string& where, const char* key,
                  double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number()) throw ConfigError(where + "." + key + " must be a number");
    return obj[key].get<double>();
}

int get_int(const ordered_json& obj, const std::string& where, const char* key, int fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer())
        throw ConfigError(where + "." + key + " must be an integer");
    return obj[key].get<int>();
}

std::uint64_t get_uint(const ordered_json& obj, const std::string& where, const char* key,
                       std::uint64_t fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_unsigned() && !obj[key].is_number_integer())
        throw ConfigError(where + "." + key + " must be a nonnegative integer");
    if (obj[key].is_number_integer() && obj[key].get<long long>() < 0)
        throw ConfigError(where + "." + key + " must be a nonnegative integer");
    return obj[key].get<std::uint64_t>();
}

bool get_bool(const ordered_json& obj, const std::string& where, const char* key,
              bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_boolean()) throw ConfigError(where + "." + key + " must be a boolean");
    return obj[key].get<bool>();
}

std::string get_string(const ordered_json& obj, const std::string& where, const char* key,
                       const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_string()) throw ConfigError(where + "." + key + " must be a string");
    return obj[key].get<std::string>();
}

SystemSpec parse_system(const ordered_json& obj) {
    check_keys(obj, "system", {"kind", "alpha", "dt", "substeps", "sigma_t"});
    SystemSpec sys;
    sys.kind = get_string(obj, "system", "kind", "");
    if (sys.kind != "vdp" && sys.kind != "double_well" && sys.kind != "quadruple_well")
        throw ConfigError("system.kind must be one of vdp, double_well, quadruple_well");
    if (sys.kind != "vdp") {
        sys.dt = 10.0;
        sys.substeps = 1000;
    }
    sys.alpha = get_number(obj, "system", "alpha", sys.alpha);
    sys.dt = get_number(obj, "system", "dt", sys.dt);
    sys.substeps = get_int(obj, "system", "substeps", sys.substeps);
    sys.sigma_t = get_number(obj, "system", "sigma_t", sys.sigma_t);
    if (sys.dt <= 0.0) throw ConfigError("system.dt must be positive");
    if (sys.substeps < 1) throw ConfigError("system.substeps must be at least 1");
    if (sys.sigma_t < 0.0) throw ConfigError("system.sigma_t must be nonnegative");
    return sys;
}

DatasetSpec parse_dataset(const ordered_json& obj) {
    check_keys(obj, "dataset",
               {"n_trajectories", "trajectory_length", "bounds", "noise_std", "seed",
                "lhs_candidates", "standardize"});
    DatasetSpec ds;
    ds.n_trajectories = get_int(obj, "dataset", "n_trajectories", 0);
    ds.trajectory_length = get_int(obj, "dataset", "trajectory_length", 0);
    ds.noise_std = get_number(obj, "dataset", "noise_std", 0.0);
    ds.seed = get_uint(obj, "dataset", "seed", 1);
    ds.lhs_candidates = get_int(obj, "dataset", "lhs_candidates", 100);
    ds.standardize = get_bool(obj, "dataset", "standardize", true);
    if (ds.n_trajectories < 1) throw ConfigError("dataset.n_trajectories must be at least 1");
    if (ds.trajectory_length < 2)
        throw ConfigError("dataset.trajectory_length must be at least 2 to form pairs");
    if (ds.noise_std < 0.0) throw ConfigError("dataset.noise_std must be nonnegative");
    if (ds.lhs_candidates < 1) throw ConfigError("dataset.lhs_candidates must be at least 1");
    if (!obj.contains("bounds")) throw ConfigError("dataset.bounds is required");
    const auto& b = obj["bounds"];
    if (!b.is_array() || b.empty()) throw ConfigError("dataset.bounds must be a nonempty array");
    ds.bounds.resize(static_cast<Eigen::Index>(b.size()), 2);
    for (size_t d = 0; d < b.size(); ++d) {
        if (!b[d].is_array() || b[d].size() != 2 || !b[d][0].is_number() || !b[d][1].is_number())
            throw ConfigError("dataset.bounds entries must be [low, high] number pairs");
        ds.bounds(static_cast<Eigen::Index>(d), 0) = b[d][0].get<double>();
        ds.bounds(static_cast<Eigen::Index>(d), 1) = b[d][1].get<double>();
        if (!(ds.bounds(static_cast<Eigen::Index>(d), 0) <
              ds.bounds(static_cast<Eigen::Index>(d), 1)))
            throw ConfigError("dataset.bounds rows must satisfy low < high");
    }
    return ds;
}

SelectionConfig parse_selection(const ordered_json& obj) {
    check_keys(obj, "selection",
               {"ald_threshold", "alc_grid", "batch_size", "max_dictionary", "objective",
                "optimize_inducing", "optimizer"});
    SelectionConfig sel;
    sel.ald_threshold = get_number(obj, "selection", "ald_threshold", 0.0);
    sel.batch_size = get_int(obj, "selection", "batch_size", sel.batch_size);
    sel.max_dictionary = get_int(obj, "selection", "max_dictionary", sel.max_dictionary);
    sel.optimize_inducing = get_bool(obj, "selection", "optimize_inducing", false);
    const std::string objective = get_string(obj, "selection", "objective", "vfe");
    if (objective == "vfe") {
        sel.objective = SelectionObjective::kVfe;
    } else if (objective == "vamp2") {
        sel.objective = SelectionObjective::kVamp2;
    } else {
        throw ConfigError("selection.objective must be vfe or vamp2");
    }
    if (obj.contains("alc_grid")) {
        const auto& g = obj["alc_grid"];
        if (!g.is_array() || g.empty())
            throw ConfigError("selection.alc_grid must be a nonempty array of points");
        const size_t dim = g[0].is_array() ? g[0].size() : 0;
        if (dim == 0) throw ConfigError("selection.alc_grid points must be number arrays");
        sel.alc_grid.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(g.size()));
        for (size_t i = 0; i < g.size(); ++i) {
            if (!g[i].is_array() || g[i].size() != dim)
                throw ConfigError("selection.alc_grid points must share one dimension");
            for (size_t d = 0; d < dim; ++d) {
                if (!g[i][d].is_number())
                    throw ConfigError("selection.alc_grid points must be number arrays");
                sel.alc_grid(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(i)) =
                    g[i][d].get<double>();
            }
        }
    }
    if (obj.contains("optimizer")) {
        const auto& opt = obj["optimizer"];
        check_keys(opt, "selection.optimizer",
                   {"max_iterations", "gradient_tolerance", "max_line_search"});
        sel.optimizer.max_iterations = get_int(opt, "selection.optimizer", "max_iterations",
                                               sel.optimizer.max_iterations);
        sel.optimizer.gradient_tolerance = get_number(
            opt, "selection.optimizer", "gradient_tolerance", sel.optimizer.gradient_tolerance);
        sel.optimizer.max_line_search = get_int(opt, "selection.optimizer", "max_line_search",
                                                sel.optimizer.max_line_search);
    }
    return sel;
}

ModelSpec parse_model(const ordered_json& obj) {
    check_keys(obj, "model",
               {"init_lengthscale", "init_signal_variance", "init_noise_variance",
                "inducing_jitter", "lifted_noise", "truncation_tol", "reprojection_tol"});
    ModelSpec ms;
    ms.init_lengthscale = get_number(obj, "model", "init_lengthscale", ms.init_lengthscale);
    ms.init_signal_variance =
        get_number(obj, "model", "init_signal_variance", ms.init_signal_variance);
    ms.init_noise_variance =
        get_number(obj, "model", "init_noise_variance", ms.init_noise_variance);
    ms.inducing_jitter = get_number(obj, "model", "inducing_jitter", ms.inducing_jitter);
    ms.lifted_noise = get_string(obj, "model", "lifted_noise", ms.lifted_noise);
    ms.truncation_tol = get_number(obj, "model", "truncation_tol", ms.truncation_tol);
    ms.reprojection_tol = get_number(obj, "model", "reprojection_tol", ms.reprojection_tol);
    if (ms.lifted_noise != "coupled" && ms.lifted_noise != "decoupled" &&
        ms.lifted_noise != "zero")
        throw ConfigError("model.lifted_noise must be coupled, decoupled, or zero");
    if (ms.init_lengthscale <= 0.0 || ms.init_signal_variance <= 0.0 ||
        ms.init_noise_variance <= 0.0)
        throw ConfigError("model initial kernel values must be positive");
    return ms;
}

EvalSpec parse_eval(const ordered_json& obj) {
    check_keys(obj, "eval", {"horizons", "n_test", "test_seed"});
    EvalSpec ev;
    ev.n_test = get_int(obj, "eval", "n_test", 0);
    ev.test_seed = get_uint(obj, "eval", "test_seed", ev.test_seed);
    if (ev.n_test < 1) throw ConfigError("eval.n_test must be at least 1");
    if (!obj.contains("horizons")) throw ConfigError("eval.horizons is required");
    const auto& h = obj["horizons"];
    if (!h.is_array() || h.empty()) throw ConfigError("eval.horizons must be a nonempty array");
    for (const auto& item : h) {
        if (!item.is_number_integer() || item.get<int>() < 1)
            throw ConfigError("eval.horizons entries must be integers >= 1");
        ev.horizons.push_back(item.get<int>());
    }
    return ev;
}

void ensure_directory(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::string indexed_path(const std::string& dir, const char* stem, int index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04d.csv", stem, index);
    return dir + "/" + buf;
}

Potential potential_of(const std::string& kind) {
    return kind == "double_well" ? Potential::kDoubleWell : Potential::kQuadrupleWell;
}

// One noise-free evolution per initial condition; the SDE systems draw their
// own per-trajectory noise streams so ensembles stay schedule independent.
std::vector<Eigen::MatrixXd> simulate_ensemble(const SystemSpec& sys, const PointSet& starts,
                                               int n_samples, std::uint64_t seed) {
    std::vector<Eigen::MatrixXd> trajs(static_cast<size_t>(starts.cols()));
    if (sys.kind == "vdp") {
        parallel_for(trajs.size(), [&](std::size_t i) {
            trajs[i] = simulate_vdp(starts.col(static_cast<Eigen::Index>(i)), sys.alpha, sys.dt,
                                    sys.substeps, n_samples);
        });
    } else {
        SdeSystem sde;
        sde.potential = potential_of(sys.kind);
        sde.sigma_T = sys.sigma_t;
        sde.dt_sample = sys.dt;
        sde.substeps = sys.substeps;
        sde.seed = seed;
        parallel_for(trajs.size(), [&](std::size_t i) {
            trajs[i] = simulate_langevin(sde, starts.col(static_cast<Eigen::Index>(i)), n_samples,
                                         static_cast<std::uint64_t>(i));
        });
    }
    return trajs;
}

ordered_json system_to_json(const SystemSpec& sys) {
    ordered_json j;
    j["kind"] = sys.kind;
    j["dt"] = sys.dt;
    j["substeps"] = sys.substeps;
    if (sys.kind == "vdp") {
        j["alpha"] = sys.alpha;
    } else {
        j["sigma_t"] = sys.sigma_t;
    }
    return j;
}

SnapshotSet load_dataset(const std::string& dir) {
    const ordered_json manifest = load_json(dir + "/dataset_manifest.json");
    if (!manifest.contains("format") || manifest["format"] != "gpdmd-dataset")
        throw IoError(dir + "/dataset_manifest.json is not a dataset manifest");
    if (!manifest.contains("standardizer"))
        throw IoError("dataset manifest is missing the standardizer block");
    SnapshotSet data;
    read_snapshots_csv(dir + "/snapshots.csv", data.X, data.Y);
    data.standardizer.mean = vector_from_json(manifest["standardizer"]["mean"]);
    data.standardizer.scale = vector_from_json(manifest["standardizer"]["scale"]);
    if (data.standardizer.mean.size() != data.X.rows())
        throw IoError("dataset manifest standardizer does not match the snapshot dimension");
    return data;
}

KernelParams initial_params(const ModelSpec& ms, Eigen::Index dim) {
    return KernelParams::isotropic(static_cast<int>(dim), ms.init_lengthscale,
                                   ms.init_signal_variance, ms.init_noise_variance,
                                   ms.inducing_jitter);
}

// The trajectory files written next to the dataset, as D x T matrices in
// original units (the time column is dropped).
std::vector<Eigen::MatrixXd> load_trajectories(const std::string& dir) {
    std::vector<Eigen::MatrixXd> trajs;
    for (int i = 0;; ++i) {
        const std::string path = indexed_path(dir, "trajectory", i);
        if (!std::filesystem::exists(path)) break;
        const Eigen::MatrixXd table = read_csv(path);
        if (table.cols() < 2) throw IoError(path + " has no state columns");
        trajs.push_back(table.rightCols(table.cols() - 1).transpose());
    }
    if (trajs.empty())
        throw IoError("validation tuning needs the trajectory files next to the dataset in " +
                      dir);
    return trajs;
}

// Final estimator refit at the configured truncation level with the lifted
// regularizer resolved per the requested policy.
KoopmanModel final_fit(const SnapshotSet& data, const PointSet& inducing, KernelParams params,
                       const ModelSpec& ms, const std::string& out_dir, double* lifted_out) {
    if (ms.lifted_noise == "decoupled") {
        if (ms.validation_horizon > 0) {
            const std::vector<Eigen::MatrixXd> rollouts = load_trajectories(out_dir);
            for (const Eigen::MatrixXd& r : rollouts) {
                if (r.cols() < ms.validation_horizon + 1)
                    throw ConfigError("training trajectories are shorter than the "
                                      "requested validation horizon");
            }
            params.lifted_noise_variance = select_lifted_noise_validated(
                data, inducing, params, rollouts, ms.validation_horizon);
        } else {
            params.lifted_noise_variance = select_lifted_noise(data, inducing, params);
        }
    } else if (ms.lifted_noise == "zero") {
        params.lifted_noise_variance = 0.0;
    } else {
        params.lifted_noise_variance = params.noise_variance;
    }
    if (lifted_out) *lifted_out = params.lifted_noise_variance;
    return fit_tcca(data, inducing, params, ms.truncation_tol);
}

ordered_json eigenvalue_table(const KoopmanModel& model) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < model.eigenvalues.size(); ++i) {
        const std::complex<double> lam = model.eigenvalues(i);
        rows.push_back({lam.real(), lam.imag(), std::abs(lam)});
    }
    return rows;
}

std::vector<Eigen::MatrixXd> test_rollouts(const ExperimentConfig& config, int n_samples) {
    const PointSet starts = latin_hypercube(config.eval.n_test, config.dataset.bounds,
                                            config.eval.test_seed, config.dataset.lhs_candidates);
    return simulate_ensemble(config.system, starts, n_samples, config.eval.test_seed);
}

ordered_json benchmark_manifest(const std::string& objective, const std::string& model_name,
                                const KernelParams& params, Eigen::Index dict_size,
                                const std::string& config_hash) {
    ordered_json j;
    j["format"] = "gpdmd-benchmark-manifest";
    j["version"] = 1;
    j["objective"] = objective;
    j["model"] = model_name;
    j["params"] = params_to_json(params);
    j["params_hash"] = params_hash(params);
    j["dictionary_size"] = static_cast<long>(dict_size);
    j["config_hash"] = config_hash;
    return j;
}

} // namespace

ExperimentConfig load_experiment(const std::string& path) {
    ExperimentConfig config;
    config.raw = load_document(path);
    check_keys(config.raw, "config",
               {"system", "dataset", "selection", "model", "eval", "output"});
    if (config.raw.contains("system")) {
        config.system = parse_system(config.raw["system"]);
        config.has_system = true;
    }
    if (config.raw.contains("dataset")) {
        config.dataset = parse_dataset(config.raw["dataset"]);
        config.has_dataset = true;
    }
    if (config.raw.contains("selection"))
        config.selection = parse_selection(config.raw["selection"]);
    if (config.raw.contains("model")) config.model = parse_model(config.raw["model"]);
    if (config.raw.contains("eval")) {
        config.eval = parse_eval(config.raw["eval"]);
        config.has_eval = true;
    }
    if (config.raw.contains("output")) {
        check_keys(config.raw["output"], "output", {"directory"});
        config.out_dir = get_string(config.raw["output"], "output", "directory", config.out_dir);
    }
    return config;
}

void cmd_simulate(const ExperimentConfig& config, const std::string& out_dir) {
    if (!config.has_system || !config.has_dataset)
        throw ConfigError("simulate requires the system and dataset sections");
    const DatasetSpec& ds = config.dataset;
    if (config.dataset.bounds.rows() != 2)
        throw ConfigError("the provided systems are planar; dataset.bounds needs 2 rows");
    ensure_directory(out_dir);

    const PointSet starts =
        latin_hypercube(ds.n_trajectories, ds.bounds, ds.seed, ds.lhs_candidates);
    const std::vector<Eigen::MatrixXd> trajs =
        simulate_ensemble(config.system, starts, ds.trajectory_length, ds.seed);
    for (size_t i = 0; i < trajs.size(); ++i)
        write_trajectory_csv(indexed_path(out_dir, "trajectory", static_cast<int>(i)),
                             trajs[i], config.system.dt);

    const SnapshotSet data = build_snapshots(trajs, ds.noise_std, ds.seed, ds.standardize);
    write_snapshots_csv(out_dir + "/snapshots.csv", data);

    ordered_json manifest;
    manifest["format"] = "gpdmd-dataset";
    manifest["version"] = 1;
    manifest["system"] = system_to_json(config.system);
    ordered_json dsj;
    dsj["n_trajectories"] = ds.n_trajectories;
    dsj["trajectory_length"] = ds.trajectory_length;
    dsj["bounds"] = matrix_to_json(ds.bounds);
    dsj["noise_std"] = ds.noise_std;
    dsj["seed"] = ds.seed;
    dsj["lhs_candidates"] = ds.lhs_candidates;
    dsj["standardize"] = ds.standardize;
    manifest["dataset"] = dsj;
    manifest["n_pairs"] = static_cast<long>(data.X.cols());
    ordered_json std_json;
    std_json["mean"] = vector_to_json(data.standardizer.mean);
    std_json["scale"] = vector_to_json(data.standardizer.scale);
    manifest["standardizer"] = std_json;
    manifest["config_hash"] = json_hash(config.raw);
    save_json(out_dir + "/dataset_manifest.json", manifest);
}

void cmd_fit(const ExperimentConfig& config, const std::string& out_dir) {
    ensure_directory(out_dir);
    const SnapshotSet data = load_dataset(out_dir);
    const KernelParams init = initial_params(config.model, data.X.rows());
    PipelineResult pr = pipeline(data, init, config.selection);

    double lifted = 0.0;
    const KoopmanModel model =
        final_fit(data, pr.inducing, pr.params, config.model, out_dir, &lifted);
    save_model(out_dir + "/model.json", model);

    ordered_json log;
    log["format"] = "gpdmd-fit-log";
    log["version"] = 1;
    log["objective"] =
        config.selection.objective == SelectionObjective::kVfe ? "vfe" : "vamp2";
    log["objective_trace"] = pr.objective_trace;
    log["dictionary_size"] = static_cast<long>(model.dict_size());
    log["lifted_noise"] = config.model.lifted_noise;
    log["lifted_noise_variance"] = lifted;
    if (config.model.validation_horizon > 0)
        log["lifted_validation_horizon"] = config.model.validation_horizon;
    log["params"] = params_to_json(model.params);
    log["params_hash"] = params_hash(model.params);
    log["eigenvalue_table"] = eigenvalue_table(model);
    log["canonical_correlations"] = vector_to_json(model.canonical_correlations);
    log["dropped_modes"] = model.dropped_modes;
    log["diagnostics"] = model.diagnostics;
    log["config_hash"] = json_hash(config.raw);
    save_json(out_dir + "/fit_log.json", log);
}

void cmd_forecast(const ForecastOptions& options, const std::string& out_dir) {
    if (options.horizon < 1) throw ConfigError("forecast horizon must be at least 1");
    if (options.initial_states.empty())
        throw ConfigError("at least one --x0 initial state is required");
    if (options.z != 1 && options.z != 2)
        throw ConfigError("interval width z must be 1 or 2 posterior deviations");
    const KoopmanModel model = load_model(options.model_path);
    for (const auto& x0 : options.initial_states)
        if (x0.size() != model.state_dim())
            throw ConfigError("initial state dimension does not match the model");
    ensure_directory(out_dir);

    const double tol = options.reproject_tol < 0.0
                           ? default_reprojection_tol(model.state_dim())
                           : options.reproject_tol;
    for (size_t i = 0; i < options.initial_states.size(); ++i) {
        const Eigen::VectorXd& x0 = options.initial_states[i];
        const ForecastResult fc =
            forecast_with_reprojection(model, x0, options.horizon, tol);
        write_forecast_csv(indexed_path(out_dir, "forecast", static_cast<int>(i)), fc,
                           static_cast<double>(options.z));
        if (!options.eigenfunctions) continue;

        const EigenfunctionForecast ef = eigenfunction_forecast(model, x0, options.horizon);
        const Eigen::Index M = model.dict_size();
        std::vector<std::string> header;
        header.push_back("step");
        for (Eigen::Index m = 0; m < M; ++m) {
            const std::string tag = std::to_string(m + 1);
            header.push_back("re_phi_" + tag);
            header.push_back("im_phi_" + tag);
            header.push_back("std_phi_" + tag);
        }
        Eigen::MatrixXd rows(options.horizon + 1, 1 + 3 * M);
        for (int k = 0; k <= options.horizon; ++k) {
            rows(k, 0) = k;
            const auto& cov = ef.covariances[static_cast<size_t>(k)];
            for (Eigen::Index m = 0; m < M; ++m) {
                rows(k, 1 + 3 * m) = ef.means(m, k).real();
                rows(k, 2 + 3 * m) = ef.means(m, k).imag();
                rows(k, 3 + 3 * m) = std::sqrt(std::max(cov(m, m).real(), 0.0));
            }
        }
        write_csv(indexed_path(out_dir, "forecast_eigenfunctions", static_cast<int>(i)),
                  header, rows);
    }
}

void cmd_benchmark(const ExperimentConfig& config, const std::string& out_dir,
                   bool decoupled_study) {
    if (!config.has_system || !config.has_dataset || !config.has_eval)
        throw ConfigError("benchmark requires the system, dataset, and eval sections");
    ensure_directory(out_dir);
    const SnapshotSet data = load_dataset(out_dir);
    const Eigen::Index D = data.X.rows();
    const std::vector<int>& horizons = config.eval.horizons;
    const int max_h = *std::max_element(horizons.begin(), horizons.end());
    const std::vector<Eigen::MatrixXd> truth = test_rollouts(config, max_h + 1);
    const std::string config_hash = json_hash(config.raw);

    std::vector<EvalReport> reports;
    KernelParams params_vfe;
    PointSet inducing_vfe;
    for (const SelectionObjective objective :
         {SelectionObjective::kVfe, SelectionObjective::kVamp2}) {
        SelectionConfig sel = config.selection;
        sel.objective = objective;
        const PipelineResult pr =
            pipeline(data, initial_params(config.model, D), sel);
        const std::string tag = objective == SelectionObjective::kVfe ? "vfe" : "vamp2";
        const std::string hash = params_hash(pr.params);

        // All three forecasters share the tuned kernel and inducing set.
        const KoopmanModel tcca =
            fit_tcca(data, pr.inducing, pr.params, config.model.truncation_tol);
        const KoopmanModel edmd =
            fit_exact_edmd(data, pr.inducing, pr.params, config.model.truncation_tol);
        std::vector<SparseGP> channels;
        channels.reserve(static_cast<size_t>(D));
        for (Eigen::Index d = 0; d < D; ++d)
            channels.push_back(
                fit_vfe(TrainSet{data.X, data.Y.row(d).transpose()}, pr.inducing, pr.params));

        reports.push_back(multi_horizon_eval(
            [&tcca](const Eigen::VectorXd& x0, int h) { return predict_mean(tcca, x0, h); },
            truth, horizons, tag + ":gp_tcca", hash));
        reports.push_back(multi_horizon_eval(
            [&edmd](const Eigen::VectorXd& x0, int h) { return predict_mean(edmd, x0, h); },
            truth, horizons, tag + ":exact_edmd", hash));
        reports.push_back(multi_horizon_eval(
            [&channels, &data](const Eigen::VectorXd& x0, int h) {
                return gp_rollout_baseline(channels, data.standardizer, x0, h);
            },
            truth, horizons, tag + ":sparse_gp", hash));

        for (const char* name : {"gp_tcca", "exact_edmd", "sparse_gp"})
            save_json(out_dir + "/manifest_" + tag + "_" + name + ".json",
                      benchmark_manifest(tag, name, pr.params, pr.inducing.cols(), config_hash));
        if (objective == SelectionObjective::kVfe) {
            params_vfe = pr.params;
            inducing_vfe = pr.inducing;
        }
    }
    write_eval_csv(out_dir + "/benchmark.csv", reports);

    if (!decoupled_study) return;

    // Three-way regularizer comparison on the VFE-tuned kernel: the lifted
    // level tied to the observation noise, tuned separately, and removed.
    std::vector<EvalReport> variants;
    for (const std::string variant : {"coupled", "decoupled", "zero"}) {
        KernelParams p = params_vfe;
        if (variant == "coupled") {
            p.lifted_noise_variance = p.noise_variance;
        } else if (variant == "decoupled") {
            p.lifted_noise_variance = select_lifted_noise(data, inducing_vfe, p);
        } else {
            p.lifted_noise_variance = 0.0;
        }
        const KoopmanModel m = fit_tcca(data, inducing_vfe, p, config.model.truncation_tol);
        variants.push_back(multi_horizon_eval(
            [&m](const Eigen::VectorXd& x0, int h) { return predict_mean(m, x0, h); },
            truth, horizons, variant, params_hash(p)));
    }
    write_eval_csv(out_dir + "/decoupled.csv", variants);
}

void cmd_eigenfunctions(const GridOptions& options, const std::string& out_dir) {
    const KoopmanModel model = load_model(options.model_path);
    if (model.state_dim() != 2)
        throw ConfigError("eigenfunction grids require a 2-dimensional state space");
    if (options.nx < 1 || options.ny < 1)
        throw ConfigError("grid resolution must be at least 1 per axis");
    if (options.lo.size() != 2 || options.hi.size() != 2)
        throw ConfigError("grid corners must have 2 coordinates");
    if (!(options.lo(0) < options.hi(0)) || !(options.lo(1) < options.hi(1)))
        throw ConfigError("grid corners must satisfy low < high per axis");
    const long total = static_cast<long>(options.nx) * options.ny;
    if (total > kGridPointCap)
        throw ConfigError("grid has " + std::to_string(total) + " points, above the limit of " +
                          std::to_string(kGridPointCap));
    ensure_directory(out_dir);

    const Eigen::Index M = model.dict_size();
    // Per-mode variance loading: diagonal of W^* K_bc W scaled pointwise by
    // the posterior variance.
    const Eigen::MatrixXcd& W = model.right_eigvecs;
    const Eigen::VectorXd mode_var =
        (W.adjoint() * model.K_bc * W).diagonal().real().cwiseMax(0.0);

    std::vector<std::string> header;
    header.push_back("x_1");
    header.push_back("x_2");
    for (Eigen::Index m = 0; m < M; ++m) {
        const std::string tag = std::to_string(m + 1);
        header.push_back("re_phi_" + tag);
        header.push_back("im_phi_" + tag);
        header.push_back("std_phi_" + tag);
    }
    Eigen::MatrixXd rows(total, 2 + 3 * M);
    const double step_x = options.nx > 1 ? (options.hi(0) - options.lo(0)) / (options.nx - 1) : 0;
    const double step_y = options.ny > 1 ? (options.hi(1) - options.lo(1)) / (options.ny - 1) : 0;
    parallel_for(static_cast<std::size_t>(total), [&](std::size_t r) {
        const int ix = static_cast<int>(r) % options.nx;
        const int iy = static_cast<int>(r) / options.nx;
        Eigen::VectorXd x(2);
        x << options.lo(0) + ix * step_x, options.lo(1) + iy * step_y;
        const Eigen::VectorXd x_std = model.standardizer.apply(x);
        const Eigen::VectorXcd phi =
            model.left_eigvecs * model.lift(x_std).cast<std::complex<double>>();
        const double pointwise = std::max(model.posterior_variance(x_std), 0.0);
        rows(static_cast<Eigen::Index>(r), 0) = x(0);
        rows(static_cast<Eigen::Index>(r), 1) = x(1);
        for (Eigen::Index m = 0; m < M; ++m) {
            rows(static_cast<Eigen::Index>(r), 2 + 3 * m) = phi(m).real();
            rows(static_cast<Eigen::Index>(r), 3 + 3 * m) = phi(m).imag();
            rows(static_cast<Eigen::Index>(r), 4 + 3 * m) = std::sqrt(pointwise * mode_var(m));
        }
    });
    write_csv(out_dir + "/eigenfunctions.csv", header, rows);
}

} // namespace gpdmd::cli
