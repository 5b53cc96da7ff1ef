#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "facd/config.hpp"
#include "facd/data.hpp"
#include "facd/errors.hpp"
#include "facd/grid.hpp"
#include "facd/spline.hpp"

namespace facd {

/// One scattered evaluation of a subject's aggregated second-moment
/// surface, taken at a pair of that subject's visit times.
struct RawMomentSample {
    int subject = 0;
    double t1 = 0.0;
    double t2 = 0.0;
    double value = 0.0;
};

struct RawMoments {
    char side = 'X';
    int n_subjects = 0;
    std::vector<int> visit_counts;  // visits per subject on this side
    std::vector<RawMomentSample> samples;
};

namespace detail {

/// Per-visit residual norms and cross-visit residual inner products, with
/// masked entries contributing zero (their stored value is zero).
inline double mean_squared_norm(const std::vector<Observation>& obs_list) {
    double total = 0.0;
    for (const Observation& obs : obs_list) total += obs.values.squaredNorm();
    return total / static_cast<double>(obs_list.size());
}

inline RawMoments raw_moments_one_side(const CenteredResiduals& primary,
                                       const CenteredResiduals& other, char side) {
    RawMoments out;
    out.side = side;
    out.n_subjects = primary.n_subjects();
    out.visit_counts.reserve(primary.observations.size());
    const double scale =
        1.0 / (static_cast<double>(primary.n_features) * static_cast<double>(other.n_features));
    for (std::size_t i = 0; i < primary.observations.size(); ++i) {
        const auto& visits = primary.observations[i];
        const int n_visits = static_cast<int>(visits.size());
        out.visit_counts.push_back(n_visits);
        if (n_visits < 2) continue;
        const double other_energy = mean_squared_norm(other.observations[i]);
        for (int g1 = 0; g1 < n_visits; ++g1)
            for (int g2 = g1 + 1; g2 < n_visits; ++g2) {
                RawMomentSample s;
                s.subject = static_cast<int>(i);
                s.t1 = visits[static_cast<std::size_t>(g1)].time;
                s.t2 = visits[static_cast<std::size_t>(g2)].time;
                s.value = scale * other_energy *
                          visits[static_cast<std::size_t>(g1)].values.dot(
                              visits[static_cast<std::size_t>(g2)].values);
                out.samples.push_back(s);
            }
    }
    return out;
}

inline void check_paired(const CenteredResiduals& rx, const CenteredResiduals& ry) {
    if (rx.subject_ids != ry.subject_ids)
        throw PairedDataError("the two residual sets do not list the same subjects");
}

}  // namespace detail

/// Off-diagonal raw second moments of the aggregated X-side kernel. Each
/// sample couples the X residual inner product at a visit pair with the
/// subject's mean squared Y residual norm, scaled by 1 / (p q).
inline RawMoments raw_moments_x(const CenteredResiduals& rx, const CenteredResiduals& ry) {
    detail::check_paired(rx, ry);
    return detail::raw_moments_one_side(rx, ry, 'X');
}

inline RawMoments raw_moments_y(const CenteredResiduals& rx, const CenteredResiduals& ry) {
    detail::check_paired(rx, ry);
    return detail::raw_moments_one_side(ry, rx, 'Y');
}

/// Smoothed aggregated kernel as a symmetric tensor-product spline surface.
struct KernelEstimate {
    char side = 'X';
    SplineBasis basis;
    Eigen::VectorXd coefficients;
    double nu = 0.0;
    std::vector<double> gcv_trace;

    double evaluate(double t1, double t2) const { return eval_surface(basis, coefficients, t1, t2); }

    Eigen::MatrixXd evaluate_grid(const Grid& grid) const {
        return eval_surface_grid(basis, coefficients, grid);
    }
};

/// Penalized surface fit of the raw moment samples. Sample weights are
/// 1 / (n (N_i - 1) N_i), which gives every subject the same total weight
/// independent of visit count; the smoothing level comes from GCV.
inline KernelEstimate estimate_kernel(const RawMoments& moments, const RunConfig& config) {
    config.validate();
    if (moments.samples.empty())
        throw DegenerateDesignError(
            "kernel estimation needs at least one subject with two or more visits");
    const SplineBasis basis = SplineBasis::create(config.kernel_basis_dim, config.spline_order);
    const Eigen::MatrixXd penalty = bivariate_curvature_penalty(basis);

    std::vector<SurfaceSample> samples;
    samples.reserve(moments.samples.size());
    const double n = static_cast<double>(moments.n_subjects);
    for (const RawMomentSample& s : moments.samples) {
        const double visits = static_cast<double>(moments.visit_counts[static_cast<std::size_t>(s.subject)]);
        samples.push_back({s.t1, s.t2, s.value, 1.0 / (n * (visits - 1.0) * visits)});
    }
    GcvSelection sel = select_nu_gcv_surface(basis, penalty, samples, config.gcv_grid());

    KernelEstimate kernel;
    kernel.side = moments.side;
    kernel.basis = basis;
    kernel.coefficients = std::move(sel.fit.coefficients);
    kernel.nu = sel.nu;
    kernel.gcv_trace = std::move(sel.scores);
    return kernel;
}

}  // namespace facd
