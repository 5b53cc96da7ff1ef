#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "facd/errors.hpp"
#include "facd/grid.hpp"

namespace facd {

/// Clamped B-spline basis on [0, 1] with equally spaced interior knots.
///
/// dimension = number of basis functions, order = polynomial degree + 1.
/// The knot vector has `order` copies of 0, `dimension - order` interior
/// knots, and `order` copies of 1, so dimension >= order is required.
class SplineBasis {
public:
    SplineBasis() = default;

    static SplineBasis create(int dimension, int order) {
        if (order < 2) throw InvalidConfigError("spline order must be at least 2");
        if (dimension < order)
            throw InvalidConfigError("spline dimension must be at least the order");
        SplineBasis basis;
        basis.dimension_ = dimension;
        basis.order_ = order;
        basis.knots_.resize(static_cast<std::size_t>(dimension + order));
        const int segments = dimension - order + 1;
        for (int i = 0; i < dimension + order; ++i) {
            double v = 0.0;
            if (i >= dimension) {
                v = 1.0;
            } else if (i >= order) {
                v = static_cast<double>(i - order + 1) / static_cast<double>(segments);
            }
            basis.knots_[static_cast<std::size_t>(i)] = v;
        }
        return basis;
    }

    int dimension() const { return dimension_; }
    int order() const { return order_; }
    const std::vector<double>& knots() const { return knots_; }

    /// Index mu of the knot span containing t: knots[mu] <= t < knots[mu+1],
    /// with the right endpoint folded into the last span.
    int find_span(double t) const {
        if (t < 0.0 || t > 1.0) throw DomainError("spline evaluation point outside [0, 1]");
        if (t >= 1.0) return dimension_ - 1;
        int lo = order_ - 1;
        int hi = dimension_ - 1;
        while (lo < hi) {
            int mid = (lo + hi + 1) / 2;
            if (knots_[static_cast<std::size_t>(mid)] <= t)
                lo = mid;
            else
                hi = mid - 1;
        }
        return lo;
    }

    /// Values (and derivatives up to max_deriv) of the `order` basis
    /// functions that are nonzero at t. Row d of the result holds the d-th
    /// derivatives; column r corresponds to basis function first + r where
    /// first = find_span(t) - order + 1.
    struct LocalBlock {
        int first = 0;
        Eigen::MatrixXd values;  // (max_deriv + 1) x order
    };

    LocalBlock local(double t, int max_deriv = 0) const {
        const int span = find_span(t);
        const int z = order_;
        LocalBlock out;
        out.first = span - z + 1;
        out.values.setZero(max_deriv + 1, z);

        // Triangular table of all lower-order basis values at t together
        // with the left/right knot differences (NURBS-book layout).
        Eigen::MatrixXd ndu(z, z);
        std::vector<double> left(static_cast<std::size_t>(z)), right(static_cast<std::size_t>(z));
        ndu(0, 0) = 1.0;
        for (int j = 1; j < z; ++j) {
            left[static_cast<std::size_t>(j)] = t - knots_[static_cast<std::size_t>(span + 1 - j)];
            right[static_cast<std::size_t>(j)] = knots_[static_cast<std::size_t>(span + j)] - t;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                ndu(j, r) = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
                const double temp = ndu(r, j - 1) / ndu(j, r);
                ndu(r, j) = saved + right[static_cast<std::size_t>(r + 1)] * temp;
                saved = left[static_cast<std::size_t>(j - r)] * temp;
            }
            ndu(j, j) = saved;
        }
        for (int r = 0; r < z; ++r) out.values(0, r) = ndu(r, z - 1);
        if (max_deriv == 0) return out;

        // Derivative sweep (NURBS book A2.3).
        Eigen::MatrixXd a(2, z);
        for (int r = 0; r < z; ++r) {
            int s1 = 0;
            int s2 = 1;
            a.setZero();
            a(0, 0) = 1.0;
            for (int k = 1; k <= max_deriv && k < z; ++k) {
                double d = 0.0;
                const int rk = r - k;
                const int pk = z - 1 - k;
                if (r >= k) {
                    a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
                    d = a(s2, 0) * ndu(rk, pk);
                }
                const int j1 = (rk >= -1) ? 1 : -rk;
                const int j2 = (r - 1 <= pk) ? k - 1 : z - 1 - r;
                for (int j = j1; j <= j2; ++j) {
                    a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
                    d += a(s2, j) * ndu(rk + j, pk);
                }
                if (r <= pk) {
                    a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
                    d += a(s2, k) * ndu(r, pk);
                }
                out.values(k, r) = d;
                std::swap(s1, s2);
            }
        }
        double factor = static_cast<double>(z - 1);
        for (int k = 1; k <= max_deriv; ++k) {
            if (k < z)
                for (int r = 0; r < z; ++r) out.values(k, r) *= factor;
            factor *= static_cast<double>(z - 1 - k);
        }
        return out;
    }

    /// Dense design matrix: one row per point, one column per basis function.
    Eigen::MatrixXd evaluate(std::span<const double> points, int deriv = 0) const {
        Eigen::MatrixXd design = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()), dimension_);
        for (std::size_t i = 0; i < points.size(); ++i) {
            const LocalBlock block = local(points[i], deriv);
            for (int r = 0; r < order_; ++r)
                design(static_cast<Eigen::Index>(i), block.first + r) = block.values(deriv, r);
        }
        return design;
    }

private:
    int dimension_ = 0;
    int order_ = 0;
    std::vector<double> knots_;
};

/// Gauss-Legendre rule on [0, 1] computed from the Jacobi matrix of the
/// Legendre recurrence (Golub-Welsch). Exact for polynomials of degree
/// 2n - 1, which covers all products of basis functions used below.
struct QuadratureRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

inline QuadratureRule gauss_legendre_unit(int n) {
    if (n < 1) throw InvalidConfigError("quadrature order must be positive");
    QuadratureRule rule;
    if (n == 1) {
        rule.nodes = Eigen::VectorXd::Constant(1, 0.5);
        rule.weights = Eigen::VectorXd::Constant(1, 1.0);
        return rule;
    }
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        const double beta = static_cast<double>(k) /
                            std::sqrt(4.0 * static_cast<double>(k) * static_cast<double>(k) - 1.0);
        jacobi(k, k - 1) = beta;
        jacobi(k - 1, k) = beta;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        // Map from [-1, 1] to [0, 1].
        rule.nodes[i] = 0.5 * (solver.eigenvalues()[i] + 1.0);
        const double v = solver.eigenvectors()(0, i);
        rule.weights[i] = v * v;  // weight 2 v^2 on [-1,1], halved by the map
    }
    return rule;
}

namespace detail {

/// Accumulates int_0^1 f^(d) g^(d) over all basis pairs, one knot span at a
/// time so only the local `order x order` block is touched per node.
inline Eigen::MatrixXd basis_product_integral(const SplineBasis& basis, int deriv) {
    const int dim = basis.dimension();
    const int z = basis.order();
    Eigen::MatrixXd result = Eigen::MatrixXd::Zero(dim, dim);
    if (deriv >= z) return result;  // derivative vanishes identically
    const QuadratureRule rule = gauss_legendre_unit(z);
    const auto& knots = basis.knots();
    for (int span = z - 1; span < dim; ++span) {
        const double a = knots[static_cast<std::size_t>(span)];
        const double b = knots[static_cast<std::size_t>(span + 1)];
        if (b <= a) continue;
        for (int q = 0; q < rule.nodes.size(); ++q) {
            const double t = a + (b - a) * rule.nodes[q];
            const double w = (b - a) * rule.weights[q];
            const SplineBasis::LocalBlock block = basis.local(std::min(t, 1.0), deriv);
            for (int r = 0; r < z; ++r) {
                const double vr = block.values(deriv, r);
                if (vr == 0.0) continue;
                for (int c = 0; c < z; ++c)
                    result(block.first + r, block.first + c) += w * vr * block.values(deriv, c);
            }
        }
    }
    // The accumulation above is symmetric in exact arithmetic; enforce it.
    result = 0.5 * (result + result.transpose()).eval();
    return result;
}

}  // namespace detail

/// Gram matrix of the basis under the L2 inner product on [0, 1].
inline Eigen::MatrixXd gram_matrix(const SplineBasis& basis) {
    return detail::basis_product_integral(basis, 0);
}

/// Integrated squared second derivative penalty: P(l, m) = int B_l'' B_m''.
inline Eigen::MatrixXd curvature_penalty(const SplineBasis& basis) {
    return detail::basis_product_integral(basis, 2);
}

/// Separable surface curvature penalty on the tensor product basis
/// B_{l1}(t1) B_{l2}(t2) with coefficient index l1 * dim + l2:
/// int int (d^2 f / d t1^2)^2 + (d^2 f / d t2^2)^2.
inline Eigen::MatrixXd bivariate_curvature_penalty(const SplineBasis& basis) {
    const Eigen::MatrixXd omega = curvature_penalty(basis);
    const Eigen::MatrixXd gram = gram_matrix(basis);
    const int dim = basis.dimension();
    Eigen::MatrixXd penalty(dim * dim, dim * dim);
    for (int l1 = 0; l1 < dim; ++l1)
        for (int l2 = 0; l2 < dim; ++l2)
            for (int m1 = 0; m1 < dim; ++m1)
                for (int m2 = 0; m2 < dim; ++m2)
                    penalty(l1 * dim + l2, m1 * dim + m2) =
                        omega(l1, m1) * gram(l2, m2) + gram(l1, m1) * omega(l2, m2);
    return penalty;
}

struct PenalizedFit {
    Eigen::VectorXd coefficients;
    double nu = 0.0;
    double edf = 0.0;
    double rss = 0.0;
    bool ridged = false;  // true when the 1e-10 diagonal fallback was needed
};

namespace detail {

/// Weighted normal equations accumulated row by row; enough to recover the
/// solution, the residual sum of squares, and the effective degrees of
/// freedom without retaining the design matrix.
struct NormalEq {
    Eigen::MatrixXd xtwx;
    Eigen::VectorXd xtwy;
    double ytwy = 0.0;
    long n_samples = 0;  // original sample count, before any row duplication

    explicit NormalEq(int dim) : xtwx(Eigen::MatrixXd::Zero(dim, dim)), xtwy(Eigen::VectorXd::Zero(dim)) {}
};

inline void add_curve_row(NormalEq& eq, const SplineBasis& basis, double t, double y, double w) {
    const SplineBasis::LocalBlock block = basis.local(t);
    const int z = basis.order();
    for (int r = 0; r < z; ++r) {
        const double vr = block.values(0, r);
        if (vr == 0.0) continue;
        eq.xtwy[block.first + r] += w * vr * y;
        for (int c = 0; c < z; ++c)
            eq.xtwx(block.first + r, block.first + c) += w * vr * block.values(0, c);
    }
    eq.ytwy += w * y * y;
}

inline void add_surface_row(NormalEq& eq, const SplineBasis& basis, double t1, double t2, double y,
                            double w) {
    const SplineBasis::LocalBlock b1 = basis.local(t1);
    const SplineBasis::LocalBlock b2 = basis.local(t2);
    const int z = basis.order();
    const int dim = basis.dimension();
    Eigen::VectorXd vals(z * z);
    Eigen::VectorXi idx(z * z);
    int m = 0;
    for (int r1 = 0; r1 < z; ++r1)
        for (int r2 = 0; r2 < z; ++r2) {
            vals[m] = b1.values(0, r1) * b2.values(0, r2);
            idx[m] = (b1.first + r1) * dim + (b2.first + r2);
            ++m;
        }
    for (int r = 0; r < m; ++r) {
        if (vals[r] == 0.0) continue;
        eq.xtwy[idx[r]] += w * vals[r] * y;
        for (int c = 0; c < m; ++c) eq.xtwx(idx[r], idx[c]) += w * vals[r] * vals[c];
    }
    eq.ytwy += w * y * y;
}

struct SolveResult {
    Eigen::VectorXd coefficients;
    double edf = 0.0;
    double rss = 0.0;
    bool ridged = false;
};

inline SolveResult solve_penalized(const NormalEq& eq, const Eigen::MatrixXd& penalty, double nu) {
    if (penalty.rows() != eq.xtwx.rows() || penalty.cols() != eq.xtwx.cols())
        throw InvalidConfigError("penalty matrix does not match basis dimension");
    Eigen::MatrixXd lhs = eq.xtwx + nu * penalty;
    auto attempt = [&](const Eigen::MatrixXd& m, SolveResult& out) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
        if (ldlt.info() != Eigen::Success) return false;
        out.coefficients = ldlt.solve(eq.xtwy);
        if (!out.coefficients.allFinite()) return false;
        const double resid = (m * out.coefficients - eq.xtwy).norm();
        const double scale = eq.xtwy.norm() + m.norm() * out.coefficients.norm();
        if (resid > 1e-8 * std::max(1.0, scale)) return false;
        out.edf = ldlt.solve(eq.xtwx).trace();
        return std::isfinite(out.edf);
    };
    SolveResult out;
    if (!attempt(lhs, out)) {
        lhs.diagonal().array() += 1e-10;
        out.ridged = true;
        if (!attempt(lhs, out))
            throw DegenerateDesignError("penalized least squares system could not be solved");
    }
    const double fitted = 2.0 * out.coefficients.dot(eq.xtwy) -
                          out.coefficients.dot(eq.xtwx * out.coefficients);
    out.rss = std::max(0.0, eq.ytwy - fitted);
    return out;
}

inline double gcv_score(const SolveResult& solved, long n) {
    const double denom = static_cast<double>(n) - solved.edf;
    if (denom <= 1e-9) return std::numeric_limits<double>::infinity();
    return static_cast<double>(n) * solved.rss / (denom * denom);
}

inline void check_curve_inputs(std::span<const double> times, std::span<const double> values,
                               std::span<const double> weights) {
    if (times.empty()) throw InvalidInputError("penalized fit requires at least one sample");
    if (times.size() != values.size() || times.size() != weights.size())
        throw InvalidInputError("penalized fit: times, values, weights must have equal length");
    for (double t : times)
        if (t < 0.0 || t > 1.0) throw DomainError("sample time outside [0, 1]");
    for (double w : weights)
        if (!(w > 0.0)) throw InvalidInputError("sample weights must be positive");
}

}  // namespace detail

/// Penalized weighted least squares curve fit at a fixed smoothing level.
inline PenalizedFit fit_penalized(const SplineBasis& basis, const Eigen::MatrixXd& penalty,
                                  std::span<const double> times, std::span<const double> values,
                                  std::span<const double> weights, double nu) {
    detail::check_curve_inputs(times, values, weights);
    if (nu < 0.0) throw InvalidConfigError("smoothing parameter must be nonnegative");
    detail::NormalEq eq(basis.dimension());
    for (std::size_t i = 0; i < times.size(); ++i)
        detail::add_curve_row(eq, basis, times[i], values[i], weights[i]);
    eq.n_samples = static_cast<long>(times.size());
    const detail::SolveResult solved = detail::solve_penalized(eq, penalty, nu);
    return PenalizedFit{solved.coefficients, nu, solved.edf, solved.rss, solved.ridged};
}

struct GcvSelection {
    PenalizedFit fit;
    double nu = 0.0;
    std::vector<double> scores;  // one GCV value per grid entry
};

/// Picks the smoothing level minimizing GCV(nu) = n RSS / (n - edf)^2 over
/// the supplied grid. Grid entries whose effective degrees of freedom
/// exhaust the sample score +inf; if every entry does, the design cannot be
/// smoothed and an error is raised.
inline GcvSelection select_nu_gcv(const SplineBasis& basis, const Eigen::MatrixXd& penalty,
                                  std::span<const double> times, std::span<const double> values,
                                  std::span<const double> weights, std::span<const double> nu_grid) {
    detail::check_curve_inputs(times, values, weights);
    if (nu_grid.empty()) throw InvalidConfigError("GCV grid must not be empty");
    detail::NormalEq eq(basis.dimension());
    for (std::size_t i = 0; i < times.size(); ++i)
        detail::add_curve_row(eq, basis, times[i], values[i], weights[i]);
    eq.n_samples = static_cast<long>(times.size());

    GcvSelection sel;
    sel.scores.reserve(nu_grid.size());
    double best = std::numeric_limits<double>::infinity();
    for (double nu : nu_grid) {
        if (nu < 0.0) throw InvalidConfigError("smoothing parameter must be nonnegative");
        const detail::SolveResult solved = detail::solve_penalized(eq, penalty, nu);
        const double score = detail::gcv_score(solved, eq.n_samples);
        sel.scores.push_back(score);
        if (score < best) {
            best = score;
            sel.nu = nu;
            sel.fit = PenalizedFit{solved.coefficients, nu, solved.edf, solved.rss, solved.ridged};
        }
    }
    if (!std::isfinite(best))
        throw DegenerateDesignError("GCV failed: every smoothing level exhausts the sample");
    return sel;
}

/// One scattered sample of a symmetric surface.
struct SurfaceSample {
    double t1 = 0.0;
    double t2 = 0.0;
    double value = 0.0;
    double weight = 1.0;
};

namespace detail {

/// Builds surface normal equations. Each off-diagonal sample is entered at
/// (t1, t2) and (t2, t1) with half weight so the fitted surface treats the
/// two arguments symmetrically; samples are first put into a canonical
/// order, which makes the accumulated sums independent of input order.
inline NormalEq surface_normal_eq(const SplineBasis& basis, std::vector<SurfaceSample> samples) {
    if (samples.empty()) throw InvalidInputError("surface fit requires at least one sample");
    for (const auto& s : samples) {
        if (s.t1 < 0.0 || s.t1 > 1.0 || s.t2 < 0.0 || s.t2 > 1.0)
            throw DomainError("surface sample time outside [0, 1]");
        if (!(s.weight > 0.0)) throw InvalidInputError("sample weights must be positive");
    }
    std::sort(samples.begin(), samples.end(), [](const SurfaceSample& a, const SurfaceSample& b) {
        if (a.t1 != b.t1) return a.t1 < b.t1;
        if (a.t2 != b.t2) return a.t2 < b.t2;
        if (a.value != b.value) return a.value < b.value;
        return a.weight < b.weight;
    });
    const int dim = basis.dimension();
    NormalEq eq(dim * dim);
    for (const auto& s : samples) {
        if (s.t1 == s.t2) {
            add_surface_row(eq, basis, s.t1, s.t2, s.value, s.weight);
        } else {
            add_surface_row(eq, basis, s.t1, s.t2, s.value, 0.5 * s.weight);
            add_surface_row(eq, basis, s.t2, s.t1, s.value, 0.5 * s.weight);
        }
    }
    eq.n_samples = static_cast<long>(samples.size());
    return eq;
}

inline Eigen::VectorXd symmetrize_surface(const Eigen::VectorXd& coeffs, int dim) {
    Eigen::VectorXd out(coeffs.size());
    for (int l1 = 0; l1 < dim; ++l1)
        for (int l2 = 0; l2 < dim; ++l2)
            out[l1 * dim + l2] = 0.5 * (coeffs[l1 * dim + l2] + coeffs[l2 * dim + l1]);
    return out;
}

}  // namespace detail

inline PenalizedFit fit_penalized_surface(const SplineBasis& basis, const Eigen::MatrixXd& penalty,
                                          const std::vector<SurfaceSample>& samples, double nu) {
    if (nu < 0.0) throw InvalidConfigError("smoothing parameter must be nonnegative");
    const detail::NormalEq eq = detail::surface_normal_eq(basis, samples);
    detail::SolveResult solved = detail::solve_penalized(eq, penalty, nu);
    solved.coefficients = detail::symmetrize_surface(solved.coefficients, basis.dimension());
    return PenalizedFit{solved.coefficients, nu, solved.edf, solved.rss, solved.ridged};
}

inline GcvSelection select_nu_gcv_surface(const SplineBasis& basis, const Eigen::MatrixXd& penalty,
                                          const std::vector<SurfaceSample>& samples,
                                          std::span<const double> nu_grid) {
    if (nu_grid.empty()) throw InvalidConfigError("GCV grid must not be empty");
    const detail::NormalEq eq = detail::surface_normal_eq(basis, samples);
    GcvSelection sel;
    sel.scores.reserve(nu_grid.size());
    double best = std::numeric_limits<double>::infinity();
    for (double nu : nu_grid) {
        if (nu < 0.0) throw InvalidConfigError("smoothing parameter must be nonnegative");
        const detail::SolveResult solved = detail::solve_penalized(eq, penalty, nu);
        const double score = detail::gcv_score(solved, eq.n_samples);
        sel.scores.push_back(score);
        if (score < best) {
            best = score;
            sel.nu = nu;
            sel.fit = PenalizedFit{detail::symmetrize_surface(solved.coefficients, basis.dimension()),
                                   nu, solved.edf, solved.rss, solved.ridged};
        }
    }
    if (!std::isfinite(best))
        throw DegenerateDesignError("GCV failed: every smoothing level exhausts the sample");
    return sel;
}

inline double eval_curve(const SplineBasis& basis, const Eigen::VectorXd& coeffs, double t) {
    if (coeffs.size() != basis.dimension())
        throw InvalidInputError("coefficient length does not match basis dimension");
    const SplineBasis::LocalBlock block = basis.local(t);
    double value = 0.0;
    for (int r = 0; r < basis.order(); ++r) value += coeffs[block.first + r] * block.values(0, r);
    return value;
}

inline Eigen::VectorXd eval_curve(const SplineBasis& basis, const Eigen::VectorXd& coeffs,
                                  const Eigen::VectorXd& points) {
    Eigen::VectorXd out(points.size());
    for (Eigen::Index i = 0; i < points.size(); ++i) out[i] = eval_curve(basis, coeffs, points[i]);
    return out;
}

inline double eval_surface(const SplineBasis& basis, const Eigen::VectorXd& coeffs, double t1,
                           double t2) {
    const int dim = basis.dimension();
    if (coeffs.size() != static_cast<Eigen::Index>(dim) * dim)
        throw InvalidInputError("coefficient length does not match tensor basis dimension");
    const SplineBasis::LocalBlock b1 = basis.local(t1);
    const SplineBasis::LocalBlock b2 = basis.local(t2);
    double value = 0.0;
    for (int r1 = 0; r1 < basis.order(); ++r1)
        for (int r2 = 0; r2 < basis.order(); ++r2)
            value += coeffs[(b1.first + r1) * dim + (b2.first + r2)] * b1.values(0, r1) *
                     b2.values(0, r2);
    return value;
}

/// Tabulates the surface on grid x grid. Computed as B C B^T with B the
/// design matrix on the grid points.
inline Eigen::MatrixXd eval_surface_grid(const SplineBasis& basis, const Eigen::VectorXd& coeffs,
                                         const Grid& grid) {
    const int dim = basis.dimension();
    if (coeffs.size() != static_cast<Eigen::Index>(dim) * dim)
        throw InvalidInputError("coefficient length does not match tensor basis dimension");
    std::vector<double> pts(grid.points().data(), grid.points().data() + grid.size());
    const Eigen::MatrixXd design = basis.evaluate(pts);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> cmat(
        coeffs.data(), dim, dim);
    return design * cmat * design.transpose();
}

}  // namespace facd
