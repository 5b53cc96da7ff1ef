#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "facd/config.hpp"
#include "facd/errors.hpp"
#include "facd/grid.hpp"
#include "facd/spline.hpp"

namespace facd {

/// One visit of one subject: a time in [0, 1] and one value per feature.
/// `mask` is either empty (everything observed) or has one flag per feature
/// with 1 marking a missing entry. Missing entries carry value 0 so that
/// downstream sums can ignore them without branching.
struct Observation {
    double time = 0.0;
    Eigen::VectorXd values;
    std::vector<std::uint8_t> mask;

    bool missing(int feature) const {
        return !mask.empty() && mask[static_cast<std::size_t>(feature)] != 0;
    }
};

struct LongitudinalDataset {
    std::string label;
    int n_features = 0;
    std::vector<std::string> subject_ids;
    std::vector<std::string> feature_names;  // optional; filled by file ingestion
    std::vector<std::vector<Observation>> observations;

    int n_subjects() const { return static_cast<int>(subject_ids.size()); }

    void validate() const {
        if (n_features < 1) throw InvalidInputError("dataset must have at least one feature");
        if (subject_ids.empty()) throw InvalidInputError("dataset must have at least one subject");
        if (observations.size() != subject_ids.size())
            throw InvalidInputError("subject id and observation list sizes differ");
        if (!feature_names.empty() && static_cast<int>(feature_names.size()) != n_features)
            throw InvalidInputError("feature name count does not match feature count");
        std::unordered_set<std::string> seen;
        for (const auto& id : subject_ids)
            if (!seen.insert(id).second)
                throw InvalidInputError("duplicate subject id: " + id);
        for (std::size_t i = 0; i < observations.size(); ++i) {
            if (observations[i].empty())
                throw InvalidInputError("subject " + subject_ids[i] + " has no observations");
            for (const Observation& obs : observations[i]) {
                if (!(obs.time >= 0.0 && obs.time <= 1.0))
                    throw DomainError("observation time outside [0, 1] for subject " +
                                      subject_ids[i]);
                if (obs.values.size() != n_features)
                    throw InvalidInputError("value vector length mismatch for subject " +
                                            subject_ids[i]);
                if (!obs.mask.empty() && static_cast<int>(obs.mask.size()) != n_features)
                    throw InvalidInputError("mask length mismatch for subject " + subject_ids[i]);
                for (int j = 0; j < n_features; ++j)
                    if (!obs.missing(j) && !std::isfinite(obs.values[j]))
                        throw InvalidInputError("non-finite value for subject " + subject_ids[i]);
            }
        }
    }
};

/// Smoothed per-feature mean curves, all sharing one basis.
struct MeanFunctions {
    SplineBasis basis;
    std::vector<Eigen::VectorXd> coefficients;  // one per feature
    std::vector<double> nu;                     // selected smoothing level per feature
    std::vector<std::vector<double>> gcv_traces;

    int n_features() const { return static_cast<int>(coefficients.size()); }

    double evaluate(int feature, double t) const {
        return eval_curve(basis, coefficients[static_cast<std::size_t>(feature)], t);
    }

    Eigen::VectorXd evaluate_grid(int feature, const Grid& grid) const {
        return eval_curve(basis, coefficients[static_cast<std::size_t>(feature)], grid.points());
    }
};

/// Per-feature mean curves by penalized least squares. Every observation of
/// feature j enters with weight 1 / (n N_i), so each subject contributes the
/// same total weight regardless of visit count; the smoothing level is
/// chosen per feature by GCV over the configured grid.
inline MeanFunctions estimate_means(const LongitudinalDataset& data, const RunConfig& config) {
    data.validate();
    config.validate();
    const SplineBasis basis = SplineBasis::create(config.mean_basis_dim, config.spline_order);
    const Eigen::MatrixXd penalty = curvature_penalty(basis);
    const std::vector<double> nu_grid = config.gcv_grid();
    const int n = data.n_subjects();

    MeanFunctions means;
    means.basis = basis;
    means.coefficients.reserve(static_cast<std::size_t>(data.n_features));
    for (int j = 0; j < data.n_features; ++j) {
        std::vector<double> times, values, weights;
        for (int i = 0; i < n; ++i) {
            const auto& obs_list = data.observations[static_cast<std::size_t>(i)];
            const double w = 1.0 / (static_cast<double>(n) * static_cast<double>(obs_list.size()));
            for (const Observation& obs : obs_list) {
                if (obs.missing(j)) continue;
                times.push_back(obs.time);
                values.push_back(obs.values[j]);
                weights.push_back(w);
            }
        }
        if (times.empty())
            throw FeatureEmptyError("feature " + std::to_string(j) + " of dataset '" + data.label +
                                    "' has no observed values");
        try {
            GcvSelection sel = select_nu_gcv(basis, penalty, times, values, weights, nu_grid);
            means.coefficients.push_back(std::move(sel.fit.coefficients));
            means.nu.push_back(sel.nu);
            means.gcv_traces.push_back(std::move(sel.scores));
        } catch (const DegenerateDesignError& e) {
            throw DegenerateDesignError("feature " + std::to_string(j) + " of dataset '" +
                                        data.label + "': " + e.what());
        }
    }
    return means;
}

/// Residual data after removing the smoothed means. Missing entries stay
/// masked and carry residual 0, so they drop out of every downstream sum.
struct CenteredResiduals {
    std::string label;
    int n_features = 0;
    std::vector<std::string> subject_ids;
    std::vector<std::vector<Observation>> observations;

    int n_subjects() const { return static_cast<int>(subject_ids.size()); }
};

inline CenteredResiduals center(const LongitudinalDataset& data, const MeanFunctions& means) {
    data.validate();
    if (means.n_features() != data.n_features)
        throw InvalidInputError("mean curves do not match dataset feature count");
    CenteredResiduals out;
    out.label = data.label;
    out.n_features = data.n_features;
    out.subject_ids = data.subject_ids;
    out.observations.resize(data.observations.size());
    for (std::size_t i = 0; i < data.observations.size(); ++i) {
        out.observations[i].reserve(data.observations[i].size());
        for (const Observation& obs : data.observations[i]) {
            Observation resid;
            resid.time = obs.time;
            resid.mask = obs.mask;
            resid.values.resize(data.n_features);
            for (int j = 0; j < data.n_features; ++j)
                resid.values[j] = obs.missing(j) ? 0.0 : obs.values[j] - means.evaluate(j, obs.time);
            out.observations[i].push_back(std::move(resid));
        }
    }
    return out;
}

}  // namespace facd
