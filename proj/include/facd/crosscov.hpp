#pragma once

#include <Eigen/Dense>

#include "facd/data.hpp"
#include "facd/errors.hpp"
#include "facd/spectral.hpp"

namespace facd {

/// Cross-covariance of basis-projected residuals, in block layout: row
/// index k * p + j couples basis function k with feature j (column side
/// analogous with q and the Y basis).
///
/// Each subject's contribution is an outer product u_i v_i^T, so only the
/// factors are stored; the pooled matrix is their average. Feature group j
/// on the X side is the index set {k p + j : k < kappa_x}.
struct BlockCrossCov {
    int p = 0;
    int q = 0;
    int kappa_x = 0;
    int kappa_y = 0;
    Eigen::MatrixXd pooled;     // (p kappa_x) x (q kappa_y)
    Eigen::MatrixXd factors_x;  // (p kappa_x) x n, column i = u_i
    Eigen::MatrixXd factors_y;  // (q kappa_y) x n, column i = v_i

    int n_subjects() const { return static_cast<int>(factors_x.cols()); }

    Eigen::MatrixXd subject_matrix(int i) const {
        return factors_x.col(i) * factors_y.col(i).transpose();
    }
};

namespace detail {

/// Visit-averaged projections of one residual set onto the retained
/// eigenfunctions: column i holds, stacked block by block, the matrix
/// (1 / N_i) R_i Psi_i with R_i the p x N_i residual values and Psi_i the
/// N_i x kappa eigenfunction values at the visit times.
inline Eigen::MatrixXd projection_factors(const CenteredResiduals& resid, const EigenSystem& system,
                                          int kappa) {
    const int n = resid.n_subjects();
    const int p = resid.n_features;
    Eigen::MatrixXd factors(static_cast<Eigen::Index>(p) * kappa, n);
    for (int i = 0; i < n; ++i) {
        const auto& visits = resid.observations[static_cast<std::size_t>(i)];
        const int n_visits = static_cast<int>(visits.size());
        Eigen::MatrixXd values(p, n_visits);
        Eigen::MatrixXd psi(n_visits, kappa);
        for (int g = 0; g < n_visits; ++g) {
            values.col(g) = visits[static_cast<std::size_t>(g)].values;
            for (int k = 0; k < kappa; ++k)
                psi(g, k) = system.eigenfunction_at(k, visits[static_cast<std::size_t>(g)].time);
        }
        const Eigen::MatrixXd projected = values * psi / static_cast<double>(n_visits);
        factors.col(i) = Eigen::Map<const Eigen::VectorXd>(projected.data(),
                                                           static_cast<Eigen::Index>(p) * kappa);
    }
    return factors;
}

}  // namespace detail

inline BlockCrossCov assemble(const CenteredResiduals& rx, const CenteredResiduals& ry,
                              const EigenSystem& ex, const EigenSystem& ey) {
    if (rx.subject_ids != ry.subject_ids)
        throw PairedDataError("the two residual sets do not list the same subjects");
    if (ex.kappa < 1 || ey.kappa < 1)
        throw InvalidInputError("assembly needs at least one retained basis function per side");
    if (ex.kappa > ex.eigenfunctions.cols() || ey.kappa > ey.eigenfunctions.cols())
        throw InvalidInputError("retained count exceeds the available eigenfunctions");

    BlockCrossCov block;
    block.p = rx.n_features;
    block.q = ry.n_features;
    block.kappa_x = ex.kappa;
    block.kappa_y = ey.kappa;
    block.factors_x = detail::projection_factors(rx, ex, ex.kappa);
    block.factors_y = detail::projection_factors(ry, ey, ey.kappa);
    block.pooled = block.factors_x * block.factors_y.transpose() /
                   static_cast<double>(block.n_subjects());
    return block;
}

}  // namespace facd
