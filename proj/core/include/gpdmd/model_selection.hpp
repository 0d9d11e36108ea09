#pragma once

#include <vector>

#include <Eigen/Core>

#include "gpdmd/gp.hpp"
#include "gpdmd/kernels.hpp"
#include "gpdmd/koopman.hpp"

namespace gpdmd {

enum class SelectionObjective { kVfe, kVamp2 };

struct OptimizerConfig {
    int max_iterations = 100;
    double gradient_tolerance = 1e-5; // infinity norm in log-parameter space
    int max_line_search = 30;
};

struct SelectionConfig {
    double ald_threshold = 0.0; // <= 0 means derive 1e-3 * signal_variance when used
    PointSet alc_grid;          // empty means integrate variance over the training inputs
    int batch_size = 10;
    int max_dictionary = 200;
    OptimizerConfig optimizer;
    SelectionObjective objective = SelectionObjective::kVfe;
    bool optimize_inducing = false; // continuous refinement of Z coordinates
};

// Greedy approximate-linear-dependence pass: point admitted iff its squared
// RKHS residual against the admitted set exceeds the threshold. The first
// point seeds the set. Maintained through rank-one Cholesky growth.
std::vector<Eigen::Index> ald_screen(const PointSet& X, const KernelParams& params,
                                     double threshold);

// Greedy variance-reduction (active learning Cohn) additions from the given
// candidate columns of X; adds up to config.batch_size points, never past
// config.max_dictionary. Targets are only shape-checked: the A-optimal score
// does not depend on them.
PointSet alc_refine(const PointSet& X, const Eigen::MatrixXd& targets, const PointSet& Z,
                    const KernelParams& params, const SelectionConfig& config,
                    const std::vector<Eigen::Index>& candidates,
                    std::vector<Eigen::Index>* picked = nullptr);

// Quasi-Newton ascent over (log lengthscales, log signal variance, log noise
// variance). The VFE objective uses analytic gradients; VAMP-2 uses central
// finite differences through the correlation estimator. The returned params
// carry lifted_noise_variance = noise_variance (coupled regularization).
KernelParams optimize_hyperparameters(const SnapshotSet& data, const PointSet& inducing,
                                      const KernelParams& init, const SelectionConfig& config);

// Sum of squared canonical correlations of a fitted correlation model.
double vamp2_score(const KoopmanModel& model);

struct PipelineResult {
    KernelParams params;
    PointSet inducing;
    KoopmanModel model;
    std::vector<double> objective_trace; // value after each optimize pass
};

// Layered greedy loop: ALD screen, ALC batch additions, hyperparameter
// re-optimization with warm start, until the dictionary stabilizes or hits
// max_dictionary. Deterministic for fixed (data, config).
PipelineResult pipeline(const SnapshotSet& data, const KernelParams& init,
                        SelectionConfig config);

} // namespace gpdmd
