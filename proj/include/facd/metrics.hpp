#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "facd/errors.hpp"
#include "facd/grid.hpp"
#include "facd/pipeline.hpp"
#include "facd/simulate.hpp"

namespace facd {

/// Comparison of one fitted component against a planted one: summed squared
/// curve distances, selection error percentages, and empirical correlation
/// between fitted and planted subject scores.
struct EvaluationReport {
    int rank_index = 0;
    double loading_error_x = 0.0;
    double loading_error_y = 0.0;
    double fpr_x = 0.0;
    double fpr_y = 0.0;
    double fnr_x = 0.0;
    double fnr_y = 0.0;
    double score_corr_x = 0.0;
    double score_corr_y = 0.0;
};

namespace detail {

// The sparse updates produce exact zeros, so this threshold only has to
// absorb quadrature rounding when deciding whether a curve was selected.
inline constexpr double selection_eps = 1e-10;

inline double correlation_or_zero(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    const Eigen::ArrayXd du = u.array() - u.mean();
    const Eigen::ArrayXd dv = v.array() - v.mean();
    const double denom = std::sqrt(du.square().sum() * dv.square().sum());
    if (!(denom > 0.0)) return 0.0;  // constant scores carry no signal
    return (du * dv).sum() / denom;
}

struct SelectionCounts {
    double error = 0.0;
    double fpr = 0.0;
    double fnr = 0.0;
};

inline SelectionCounts loading_side(const Grid& grid, const Eigen::MatrixXd& estimate,
                                    const Eigen::MatrixXd& truth,
                                    const std::vector<int>& support) {
    const int p = static_cast<int>(truth.rows());
    std::vector<bool> active(static_cast<std::size_t>(p), false);
    for (int j : support) active[static_cast<std::size_t>(j)] = true;

    SelectionCounts out;
    int false_pos = 0;
    int false_neg = 0;
    for (int j = 0; j < p; ++j) {
        const Eigen::VectorXd diff = estimate.row(j) - truth.row(j);
        out.error += grid.inner(diff, diff);
        const bool selected = std::sqrt(grid.inner(estimate.row(j), estimate.row(j))) > selection_eps;
        if (active[static_cast<std::size_t>(j)]) {
            if (!selected) ++false_neg;
        } else if (selected) {
            ++false_pos;
        }
    }
    const int n_active = static_cast<int>(support.size());
    const int n_inactive = p - n_active;
    out.fpr = n_inactive > 0 ? 100.0 * static_cast<double>(false_pos) / static_cast<double>(n_inactive) : 0.0;
    out.fnr = n_active > 0 ? 100.0 * static_cast<double>(false_neg) / static_cast<double>(n_active) : 0.0;
    return out;
}

}  // namespace detail

/// Scores a fitted component against planted component r. The estimate is
/// sign-aligned jointly (one flip applied to both loading blocks and both
/// score vectors) before any distance is measured, so the report is invariant
/// to the sign indeterminacy of the decomposition.
inline EvaluationReport evaluate(const CanonicalComponent& component, const GroundTruth& truth,
                                 int r) {
    if (r < 0 || r >= truth.rank())
        throw InvalidInputError("evaluate: component index out of range");
    const Eigen::MatrixXd& truth_x = truth.loadings_x[static_cast<std::size_t>(r)];
    const Eigen::MatrixXd& truth_y = truth.loadings_y[static_cast<std::size_t>(r)];
    const int g = truth.grid.size();
    if (component.loadings_x.rows() != truth_x.rows() || component.loadings_x.cols() != g ||
        component.loadings_y.rows() != truth_y.rows() || component.loadings_y.cols() != g)
        throw InvalidInputError("evaluate: loading shapes do not match the ground truth");
    if (component.scores_x.size() != truth.scores_x.rows() ||
        component.scores_y.size() != truth.scores_y.rows())
        throw InvalidInputError("evaluate: score lengths do not match the ground truth");

    double align = 0.0;
    for (int j = 0; j < truth_x.rows(); ++j)
        align += truth.grid.inner(component.loadings_x.row(j), truth_x.row(j));
    for (int m = 0; m < truth_y.rows(); ++m)
        align += truth.grid.inner(component.loadings_y.row(m), truth_y.row(m));
    const double sign = align < 0.0 ? -1.0 : 1.0;

    const Eigen::MatrixXd est_x = sign * component.loadings_x;
    const Eigen::MatrixXd est_y = sign * component.loadings_y;
    const detail::SelectionCounts side_x = detail::loading_side(truth.grid, est_x, truth_x, truth.support_x);
    const detail::SelectionCounts side_y = detail::loading_side(truth.grid, est_y, truth_y, truth.support_y);

    EvaluationReport report;
    report.rank_index = r;
    report.loading_error_x = side_x.error;
    report.loading_error_y = side_y.error;
    report.fpr_x = side_x.fpr;
    report.fnr_x = side_x.fnr;
    report.fpr_y = side_y.fpr;
    report.fnr_y = side_y.fnr;
    report.score_corr_x = detail::correlation_or_zero(sign * component.scores_x, truth.scores_x.col(r));
    report.score_corr_y = detail::correlation_or_zero(sign * component.scores_y, truth.scores_y.col(r));
    return report;
}

}  // namespace facd
