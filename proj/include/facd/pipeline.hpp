#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "facd/config.hpp"
#include "facd/crosscov.hpp"
#include "facd/data.hpp"
#include "facd/errors.hpp"
#include "facd/grid.hpp"
#include "facd/kernels.hpp"
#include "facd/rng.hpp"
#include "facd/sparse_svd.hpp"
#include "facd/spectral.hpp"

namespace facd {

/// One extracted canonical component. Loadings are tabulated on the model
/// grid (one row per feature) and are exactly zero outside the support;
/// `a` and `b` keep the underlying block coefficients so that scores on new
/// data reuse the same projections.
struct CanonicalComponent {
    int rank_index = 0;
    double eta = 0.0;
    double rho_x = 0.0;
    double rho_y = 0.0;
    Eigen::VectorXd a;
    Eigen::VectorXd b;
    Eigen::MatrixXd loadings_x;  // p x grid_size
    Eigen::MatrixXd loadings_y;  // q x grid_size
    Eigen::VectorXd scores_x;    // training scores, length n
    Eigen::VectorXd scores_y;
    std::vector<int> support_x;
    std::vector<int> support_y;
    bool zero_component = false;
};

/// Per-feature affine transform (value - center) / scale applied before any
/// estimation; empty vectors mean the transform is off.
struct StandardizationParams {
    Eigen::VectorXd center;
    Eigen::VectorXd scale;

    bool active() const { return center.size() > 0; }
};

struct FacdModel {
    RunConfig config;
    Grid grid{2};
    std::vector<std::string> subject_ids;
    std::vector<std::string> feature_names_x;
    std::vector<std::string> feature_names_y;
    StandardizationParams standardize_x;
    StandardizationParams standardize_y;
    MeanFunctions means_x;
    MeanFunctions means_y;
    KernelEstimate kernel_x;
    KernelEstimate kernel_y;
    EigenSystem eig_x;
    EigenSystem eig_y;
    std::vector<CanonicalComponent> components;
    std::vector<SparsityTuning> tunings;  // one per cross-validated component
    std::vector<std::string> warnings;

    int p() const { return means_x.n_features(); }
    int q() const { return means_y.n_features(); }
    int n_components() const { return static_cast<int>(components.size()); }
};

struct ComponentScores {
    Eigen::MatrixXd x;  // n x R
    Eigen::MatrixXd y;
};

namespace detail {

inline StandardizationParams standardization_params(const LongitudinalDataset& data,
                                                    std::vector<std::string>& warnings) {
    StandardizationParams params;
    params.center = Eigen::VectorXd::Zero(data.n_features);
    params.scale = Eigen::VectorXd::Ones(data.n_features);
    for (int j = 0; j < data.n_features; ++j) {
        double sum = 0.0, sumsq = 0.0;
        long count = 0;
        for (const auto& subject : data.observations)
            for (const Observation& obs : subject) {
                if (obs.missing(j)) continue;
                sum += obs.values[j];
                sumsq += obs.values[j] * obs.values[j];
                ++count;
            }
        if (count == 0) continue;
        const double mean = sum / static_cast<double>(count);
        params.center[j] = mean;
        const double var =
            count > 1 ? std::max(0.0, (sumsq - sum * mean) / static_cast<double>(count - 1)) : 0.0;
        if (var > 0.0) {
            params.scale[j] = std::sqrt(var);
        } else {
            warnings.push_back("dataset '" + data.label + "' feature " + std::to_string(j) +
                               " is constant; standardization keeps unit scale");
        }
    }
    return params;
}

inline void apply_standardization(LongitudinalDataset& data, const StandardizationParams& params) {
    if (!params.active()) return;
    if (params.center.size() != data.n_features)
        throw InvalidInputError("standardization parameters do not match the feature count");
    for (auto& subject : data.observations)
        for (Observation& obs : subject)
            for (int j = 0; j < data.n_features; ++j)
                if (!obs.missing(j)) obs.values[j] = (obs.values[j] - params.center[j]) / params.scale[j];
}

/// Penalty levels for one side of the grid search: either the configured
/// override, or log-spaced fractions of the largest feature-group norm.
inline std::vector<double> rho_levels(double override_value, double scale,
                                      const RunConfig& config) {
    if (override_value >= 0.0) return {override_value};
    if (!(scale > 0.0)) return {0.0};
    if (config.rho_grid_size == 1) return {config.rho_grid_min_frac * scale};
    std::vector<double> fracs =
        log_spaced(config.rho_grid_min_frac, config.rho_grid_max_frac, config.rho_grid_size);
    for (double& f : fracs) f *= scale;
    return fracs;
}

inline CanonicalComponent zero_component(int rank_index, int p, int q, int kappa_x, int kappa_y,
                                         int n, int grid_size) {
    CanonicalComponent comp;
    comp.rank_index = rank_index;
    comp.zero_component = true;
    comp.a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p) * kappa_x);
    comp.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q) * kappa_y);
    comp.loadings_x = Eigen::MatrixXd::Zero(p, grid_size);
    comp.loadings_y = Eigen::MatrixXd::Zero(q, grid_size);
    comp.scores_x = Eigen::VectorXd::Zero(n);
    comp.scores_y = Eigen::VectorXd::Zero(n);
    return comp;
}

/// Loading reconstruction: block coefficients against the retained
/// eigenfunctions. Row j of the result is sum_k coef[k p + j] psi_k on the
/// grid; rows of unselected features are exactly zero.
inline Eigen::MatrixXd reconstruct_loadings(const Eigen::VectorXd& coef, int n_features, int kappa,
                                            const EigenSystem& system) {
    Eigen::Map<const Eigen::MatrixXd> blocks(coef.data(), n_features, kappa);
    return blocks * system.eigenfunctions.leftCols(kappa).transpose();
}

}  // namespace detail

/// Full decomposition: smooth means, aggregated kernels, data-adaptive
/// bases, block cross-covariance, then penalized rank-1 extraction with
/// deflation. Deterministic for fixed data, config, and seed.
inline FacdModel fit(const LongitudinalDataset& data_x, const LongitudinalDataset& data_y,
                     const RunConfig& config) {
    config.validate();
    data_x.validate();
    data_y.validate();
    if (data_x.subject_ids != data_y.subject_ids)
        throw PairedDataError("the two datasets do not list the same subjects in the same order");

    FacdModel model;
    model.config = config;
    model.grid = Grid(config.grid_size);
    model.subject_ids = data_x.subject_ids;
    model.feature_names_x = data_x.feature_names;
    model.feature_names_y = data_y.feature_names;

    LongitudinalDataset dx = data_x;
    LongitudinalDataset dy = data_y;
    if (config.standardize) {
        model.standardize_x = detail::standardization_params(dx, model.warnings);
        model.standardize_y = detail::standardization_params(dy, model.warnings);
        detail::apply_standardization(dx, model.standardize_x);
        detail::apply_standardization(dy, model.standardize_y);
    }

    model.means_x = estimate_means(dx, config);
    model.means_y = estimate_means(dy, config);
    const CenteredResiduals rx = center(dx, model.means_x);
    const CenteredResiduals ry = center(dy, model.means_y);

    model.kernel_x = estimate_kernel(raw_moments_x(rx, ry), config);
    model.kernel_y = estimate_kernel(raw_moments_y(rx, ry), config);
    model.eig_x = eigendecompose(model.kernel_x.evaluate_grid(model.grid), model.grid);
    model.eig_y = eigendecompose(model.kernel_y.evaluate_grid(model.grid), model.grid);

    const int p = dx.n_features;
    const int q = dy.n_features;
    int kappa_x = 0;
    int kappa_y = 0;
    try {
        kappa_x = select_kappa(model.eig_x, config.kappa_threshold);
        kappa_y = select_kappa(model.eig_y, config.kappa_threshold);
    } catch (const EmptySpectrumError& e) {
        // No spectral mass means no recoverable signal; degrade to an
        // all-zero decomposition instead of failing the run.
        model.warnings.push_back(std::string("aggregated kernel carries no signal (") + e.what() +
                                 "); all components are zero");
        model.eig_x.kappa = 0;
        model.eig_y.kappa = 0;
        for (int r = 0; r < config.n_components; ++r)
            model.components.push_back(
                detail::zero_component(r, p, q, 1, 1, dx.n_subjects(), config.grid_size));
        return model;
    }
    if (config.kappa_override > 0) {
        kappa_x = std::min(config.kappa_override, model.eig_x.positive_count());
        kappa_y = std::min(config.kappa_override, model.eig_y.positive_count());
        if (kappa_x < config.kappa_override || kappa_y < config.kappa_override)
            model.warnings.push_back("kappa override clipped to the available positive spectrum");
    }
    {
        const int before_x = kappa_x, before_y = kappa_y;
        while (static_cast<double>(p) * kappa_x * static_cast<double>(q) * kappa_y >
                   config.max_block_entries &&
               (kappa_x > 1 || kappa_y > 1)) {
            if (static_cast<long>(p) * kappa_x >= static_cast<long>(q) * kappa_y && kappa_x > 1)
                --kappa_x;
            else if (kappa_y > 1)
                --kappa_y;
            else
                --kappa_x;
        }
        if (kappa_x != before_x || kappa_y != before_y)
            model.warnings.push_back("retained basis counts reduced to respect the memory bound");
    }
    model.eig_x.kappa = kappa_x;
    model.eig_y.kappa = kappa_y;

    const BlockCrossCov block = assemble(rx, ry, model.eig_x, model.eig_y);
    const auto [scale_x, scale_y] = group_norm_bounds(block.pooled, kappa_x, kappa_y);
    const std::vector<double> levels_x =
        detail::rho_levels(config.rho_x_override, scale_x, config);
    const std::vector<double> levels_y =
        detail::rho_levels(config.rho_y_override, scale_y, config);
    std::vector<std::pair<double, double>> cells;
    for (double vx : levels_x)
        for (double vy : levels_y) cells.emplace_back(vx, vy);

    const int n = block.n_subjects();
    std::vector<SingularTriple> extracted;
    bool exhausted = false;
    for (int r = 0; r < config.n_components; ++r) {
        if (exhausted) {
            model.components.push_back(
                detail::zero_component(r, p, q, kappa_x, kappa_y, n, config.grid_size));
            continue;
        }

        double rho_x = cells.front().first;
        double rho_y = cells.front().second;
        if (cells.size() > 1) {
            SparsityTuning tuning = select_rho_cv_factors(
                block.factors_x, block.factors_y, extracted, cells, config.cv_folds,
                derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(r)), kappa_x, kappa_y,
                config.tol, config.max_iter);
            rho_x = tuning.rho_x;
            rho_y = tuning.rho_y;
            model.tunings.push_back(std::move(tuning));
        }

        // The full-data solve runs on the same factored operator and screened
        // start as the fold fits, so the tuned cell and the final component
        // come from the same iteration basin.
        const detail::FactorOp op =
            detail::factored_mean_op(block.factors_x, block.factors_y, extracted);
        const Eigen::VectorXd warm = detail::screened_warm_start(op, kappa_x, kappa_y);
        SingularTriple triple =
            warm.size() == 0
                ? detail::zero_triple(op.rows(), op.cols(), true)
                : detail::rank1_sparse_core(op, rho_x, rho_y, kappa_x, kappa_y, config.tol,
                                            config.max_iter, &warm);
        if (triple.eta <= 0.0 || triple.a.isZero(0.0)) {
            model.warnings.push_back(
                triple.zero_matrix
                    ? "cross-covariance vanished at component " + std::to_string(r + 1) +
                          "; remaining components are zero"
                    : "component " + std::to_string(r + 1) +
                          " shrank to zero; remaining components are zero");
            exhausted = true;
            model.components.push_back(
                detail::zero_component(r, p, q, kappa_x, kappa_y, n, config.grid_size));
            continue;
        }

        CanonicalComponent comp;
        comp.rank_index = r;
        comp.eta = triple.eta;
        comp.rho_x = rho_x;
        comp.rho_y = rho_y;
        comp.loadings_x = detail::reconstruct_loadings(triple.a, p, kappa_x, model.eig_x);
        comp.loadings_y = detail::reconstruct_loadings(triple.b, q, kappa_y, model.eig_y);
        // Sign convention: the stacked X loadings integrate to a nonnegative
        // total; both sides flip together so the bilinear form is unchanged.
        if ((comp.loadings_x * model.grid.weights()).sum() < 0.0) {
            triple.a = -triple.a;
            triple.b = -triple.b;
            comp.loadings_x = -comp.loadings_x;
            comp.loadings_y = -comp.loadings_y;
        }
        comp.a = triple.a;
        comp.b = triple.b;
        comp.support_x = triple.support_x;
        comp.support_y = triple.support_y;
        comp.scores_x = block.factors_x.transpose() * triple.a;
        comp.scores_y = block.factors_y.transpose() * triple.b;
        model.components.push_back(std::move(comp));

        extracted.push_back(std::move(triple));
    }
    return model;
}

/// Component scores for (possibly new) paired data, using the stored means,
/// standardization, and bases. On the training data this reproduces the
/// scores recorded in the model.
inline ComponentScores scores(const FacdModel& model, const LongitudinalDataset& data_x,
                              const LongitudinalDataset& data_y) {
    data_x.validate();
    data_y.validate();
    if (data_x.n_features != model.p() || data_y.n_features != model.q())
        throw InvalidInputError("feature counts do not match the fitted model");
    if (data_x.subject_ids != data_y.subject_ids)
        throw PairedDataError("the two datasets do not list the same subjects in the same order");

    LongitudinalDataset dx = data_x;
    LongitudinalDataset dy = data_y;
    detail::apply_standardization(dx, model.standardize_x);
    detail::apply_standardization(dy, model.standardize_y);
    const CenteredResiduals rx = center(dx, model.means_x);
    const CenteredResiduals ry = center(dy, model.means_y);
    const Eigen::MatrixXd fx = detail::projection_factors(rx, model.eig_x, model.eig_x.kappa);
    const Eigen::MatrixXd fy = detail::projection_factors(ry, model.eig_y, model.eig_y.kappa);

    ComponentScores out;
    out.x = Eigen::MatrixXd::Zero(dx.n_subjects(), model.n_components());
    out.y = Eigen::MatrixXd::Zero(dy.n_subjects(), model.n_components());
    if (model.eig_x.kappa < 1 || model.eig_y.kappa < 1) return out;  // zero-signal model
    for (int r = 0; r < model.n_components(); ++r) {
        out.x.col(r) = fx.transpose() * model.components[static_cast<std::size_t>(r)].a;
        out.y.col(r) = fy.transpose() * model.components[static_cast<std::size_t>(r)].b;
    }
    return out;
}

struct CorrelationMatrix {
    Eigen::MatrixXd values;  // p x q
    bool zero_denominator = false;
};

/// Feature-pair correlation of the rank-r reconstructions, aggregated over
/// the time domain. Factorizes into a score moment times the quadrature
/// cosine of the two loading curves; entries with a vanishing denominator
/// are zero and raise the flag.
inline CorrelationMatrix time_integrated_correlation(const FacdModel& model, int r) {
    if (r < 0 || r >= model.n_components())
        throw InvalidInputError("component index out of range");
    const CanonicalComponent& comp = model.components[static_cast<std::size_t>(r)];
    const double n = static_cast<double>(comp.scores_x.size());
    const double sxy = comp.scores_x.dot(comp.scores_y) / n;
    const double sxx = comp.scores_x.squaredNorm() / n;
    const double syy = comp.scores_y.squaredNorm() / n;

    const Eigen::VectorXd w = model.grid.weights();
    const Eigen::MatrixXd cross = comp.loadings_x * w.asDiagonal() * comp.loadings_y.transpose();
    const Eigen::VectorXd norm_x =
        (comp.loadings_x * w.asDiagonal()).cwiseProduct(comp.loadings_x).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
    const Eigen::VectorXd norm_y =
        (comp.loadings_y * w.asDiagonal()).cwiseProduct(comp.loadings_y).rowwise().sum().cwiseMax(0.0).cwiseSqrt();

    CorrelationMatrix out;
    out.values = Eigen::MatrixXd::Zero(model.p(), model.q());
    const double score_scale = std::sqrt(sxx) * std::sqrt(syy);
    if (!(score_scale > 0.0)) {
        out.zero_denominator = true;
        return out;
    }
    for (int j = 0; j < model.p(); ++j)
        for (int m = 0; m < model.q(); ++m) {
            const double denom = norm_x[j] * norm_y[m] * score_scale;
            if (denom > 0.0)
                out.values(j, m) = sxy * cross(j, m) / denom;
            else
                out.zero_denominator = true;
        }
    return out;
}

}  // namespace facd
