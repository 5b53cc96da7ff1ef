#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "facd/errors.hpp"
#include "facd/grid.hpp"
#include "facd/kernels.hpp"

namespace facd {

/// Discretized eigensystem of a smoothed kernel. Eigenfunctions are stored
/// as grid columns, orthonormal under the trapezoid quadrature weights, and
/// read off the grid by linear interpolation.
struct EigenSystem {
    Grid grid;
    Eigen::VectorXd eigenvalues;     // descending; negative tail clipped to 0
    Eigen::MatrixXd eigenfunctions;  // grid_size x grid_size
    double trace_total = 0.0;        // integral of the kernel diagonal
    int kappa = 0;                   // retained count, set by the caller

    int positive_count() const {
        int count = 0;
        while (count < eigenvalues.size() && eigenvalues[count] > 0.0) ++count;
        return count;
    }

    double eigenfunction_at(int k, double t) const {
        return grid.interpolate(eigenfunctions.col(k), t);
    }
};

/// Eigendecomposition of a kernel tabulated on the grid. The continuous
/// problem is discretized as W^{1/2} K W^{1/2} with W the quadrature
/// weights; eigenvectors are rescaled by W^{-1/2} so that the resulting
/// functions are orthonormal in the quadrature inner product.
///
/// Sign convention: each eigenfunction integrates to a nonnegative value;
/// when the integral vanishes, the first entry of largest magnitude is made
/// positive.
inline EigenSystem eigendecompose(const Eigen::MatrixXd& kernel_values, const Grid& grid) {
    const int n = grid.size();
    if (kernel_values.rows() != n || kernel_values.cols() != n)
        throw InvalidInputError("kernel tabulation does not match the grid");

    const Eigen::VectorXd sqrt_w = grid.weights().cwiseSqrt();
    Eigen::MatrixXd scaled = sqrt_w.asDiagonal() * kernel_values * sqrt_w.asDiagonal();
    scaled = 0.5 * (scaled + scaled.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(scaled);
    if (solver.info() != Eigen::Success)
        throw DegenerateDesignError("kernel eigendecomposition failed to converge");

    EigenSystem system;
    system.grid = grid;
    system.eigenvalues.resize(n);
    system.eigenfunctions.resize(n, n);
    system.trace_total = grid.integrate(kernel_values.diagonal());

    // Anything below a relative dust threshold is numerically zero; without
    // the cutoff, rounding noise around 0 would masquerade as signal
    // directions and inflate the positive count.
    const double radius = std::max(std::abs(solver.eigenvalues()[0]),
                                   std::abs(solver.eigenvalues()[n - 1]));
    const double dust = 1e-12 * radius;

    const Eigen::VectorXd inv_sqrt_w = sqrt_w.cwiseInverse();
    for (int k = 0; k < n; ++k) {
        const int src = n - 1 - k;  // solver returns ascending order
        const double value = solver.eigenvalues()[src];
        system.eigenvalues[k] = (value > dust) ? value : 0.0;
        Eigen::VectorXd psi = inv_sqrt_w.asDiagonal() * solver.eigenvectors().col(src);
        const double integral = grid.integrate(psi);
        if (std::abs(integral) < 1e-9 * psi.lpNorm<Eigen::Infinity>()) {
            // Ambiguous integral: make the first entry of (near) extreme
            // magnitude positive instead.
            const double peak = psi.cwiseAbs().maxCoeff();
            for (int a = 0; a < n; ++a)
                if (std::abs(psi[a]) >= (1.0 - 1e-9) * peak) {
                    if (psi[a] < 0.0) psi = -psi;
                    break;
                }
        } else if (integral < 0.0) {
            psi = -psi;
        }
        system.eigenfunctions.col(k) = psi;
    }
    system.kappa = system.positive_count();
    return system;
}

inline EigenSystem eigendecompose(const KernelEstimate& kernel, int grid_size) {
    const Grid grid(grid_size);
    return eigendecompose(kernel.evaluate_grid(grid), grid);
}

/// Smallest truncation level whose cumulative eigenvalue share of the total
/// diagonal mass exceeds the threshold; falls back to every strictly
/// positive eigenvalue when the threshold is never crossed.
inline int select_kappa(const EigenSystem& system, double threshold) {
    if (!(threshold > 0.0) || threshold > 1.0)
        throw InvalidConfigError("kappa threshold must lie in (0, 1]");
    const int positive = system.positive_count();
    if (positive == 0)
        throw EmptySpectrumError("no positive eigenvalue: the kernel carries no signal");
    double cumulative = 0.0;
    for (int k = 0; k < positive; ++k) {
        cumulative += system.eigenvalues[k];
        if (system.trace_total > 0.0 && cumulative / system.trace_total > threshold) return k + 1;
    }
    return positive;
}

}  // namespace facd
