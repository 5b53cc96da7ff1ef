#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "facd/errors.hpp"
#include "facd/rng.hpp"

namespace facd {

/// One extracted component of the block cross-covariance. `a` and `b` are
/// unit vectors (or exactly zero under full shrinkage) in the stacked block
/// layout; the support lists hold the feature groups with nonzero loading
/// blocks.
struct SingularTriple {
    double eta = 0.0;
    Eigen::VectorXd a;
    Eigen::VectorXd b;
    std::vector<int> support_x;
    std::vector<int> support_y;
    int iterations = 0;
    bool converged = false;
    bool objective_monotone = true;
    bool zero_matrix = false;
    std::vector<double> objective_trace;
};

namespace detail {

/// Feature-group soft threshold. The vector is laid out as kappa blocks of
/// length n_groups; group j is row j of the (n_groups x kappa) view.
inline Eigen::VectorXd group_threshold(const Eigen::VectorXd& vec, int n_groups, int kappa,
                                       double threshold) {
    if (threshold <= 0.0) return vec;
    Eigen::VectorXd out(vec.size());
    Eigen::Map<const Eigen::MatrixXd> in_view(vec.data(), n_groups, kappa);
    Eigen::Map<Eigen::MatrixXd> out_view(out.data(), n_groups, kappa);
    for (int j = 0; j < n_groups; ++j) {
        const double norm = in_view.row(j).norm();
        if (norm > threshold)
            out_view.row(j) = (1.0 - threshold / norm) * in_view.row(j);
        else
            out_view.row(j).setZero();
    }
    return out;
}

inline double group_penalty(const Eigen::VectorXd& vec, int n_groups, int kappa) {
    Eigen::Map<const Eigen::MatrixXd> view(vec.data(), n_groups, kappa);
    double total = 0.0;
    for (int j = 0; j < n_groups; ++j) total += view.row(j).norm();
    return total;
}

inline std::vector<int> group_support(const Eigen::VectorXd& vec, int n_groups, int kappa) {
    Eigen::Map<const Eigen::MatrixXd> view(vec.data(), n_groups, kappa);
    std::vector<int> support;
    for (int j = 0; j < n_groups; ++j)
        if (view.row(j).squaredNorm() > 0.0) support.push_back(j);
    return support;
}

/// Matrix access used by the extraction loop. Both operators cache the
/// squared Frobenius norm and row norms at construction since the loop asks
/// for them once per fit.
struct DenseOp {
    const Eigen::MatrixXd& g;
    double frob2_cache;
    Eigen::VectorXd row_norm_cache;

    explicit DenseOp(const Eigen::MatrixXd& m)
        : g(m), frob2_cache(m.squaredNorm()), row_norm_cache(m.rowwise().norm()) {}

    Eigen::Index rows() const { return g.rows(); }
    Eigen::Index cols() const { return g.cols(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& b) const { return g * b; }
    Eigen::VectorXd apply_t(const Eigen::VectorXd& a) const { return g.transpose() * a; }
    const Eigen::VectorXd& row_norms() const { return row_norm_cache; }
    Eigen::VectorXd row(Eigen::Index r) const { return g.row(r).transpose(); }
    double frob2() const { return frob2_cache; }
};

/// G = u v^T without materializing it; u is rows x m, v is cols x m. Matrix
/// means over subject outer products and their deflations both fit this
/// form, which keeps every matvec at O((rows + cols) m).
struct FactorOp {
    Eigen::MatrixXd u;
    Eigen::MatrixXd v;
    double frob2_cache = 0.0;
    Eigen::VectorXd row_norm_cache;

    FactorOp(Eigen::MatrixXd u_in, Eigen::MatrixXd v_in) : u(std::move(u_in)), v(std::move(v_in)) {
        const Eigen::MatrixXd vtv = v.transpose() * v;
        const Eigen::MatrixXd utu = u.transpose() * u;
        frob2_cache = utu.cwiseProduct(vtv).sum();
        row_norm_cache = (u * vtv).cwiseProduct(u).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
    }

    Eigen::Index rows() const { return u.rows(); }
    Eigen::Index cols() const { return v.rows(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& b) const { return u * (v.transpose() * b); }
    Eigen::VectorXd apply_t(const Eigen::VectorXd& a) const { return v * (u.transpose() * a); }
    const Eigen::VectorXd& row_norms() const { return row_norm_cache; }
    Eigen::VectorXd row(Eigen::Index r) const { return v * u.row(r).transpose(); }
    double frob2() const { return frob2_cache; }
};

/// Mean of the subject outer products with extracted components subtracted,
/// in factored form: one column per subject plus one per deflation.
inline FactorOp factored_mean_op(const Eigen::MatrixXd& factors_x,
                                 const Eigen::MatrixXd& factors_y,
                                 const std::vector<SingularTriple>& deflations) {
    const Eigen::Index n = factors_x.cols();
    const Eigen::Index n_defl = static_cast<Eigen::Index>(deflations.size());
    Eigen::MatrixXd u(factors_x.rows(), n + n_defl);
    Eigen::MatrixXd v(factors_y.rows(), n + n_defl);
    u.leftCols(n) = factors_x / static_cast<double>(n);
    v.leftCols(n) = factors_y;
    for (Eigen::Index s = 0; s < n_defl; ++s) {
        const SingularTriple& defl = deflations[static_cast<std::size_t>(s)];
        u.col(n + s) = -defl.eta * defl.a;
        v.col(n + s) = defl.b;
    }
    return FactorOp(std::move(u), std::move(v));
}

inline SingularTriple zero_triple(Eigen::Index rows, Eigen::Index cols, bool flag_zero_matrix) {
    SingularTriple out;
    out.a = Eigen::VectorXd::Zero(rows);
    out.b = Eigen::VectorXd::Zero(cols);
    out.converged = true;
    out.zero_matrix = flag_zero_matrix;
    return out;
}

/// Unpenalized warm start: the normalized row of largest norm, refined by
/// 50 plain power iterations. Returns an empty vector for a zero operator.
template <class Op>
Eigen::VectorXd default_warm_start(const Op& op) {
    Eigen::Index r_star = 0;
    const double best = op.row_norms().maxCoeff(&r_star);
    if (!(best > 0.0)) return Eigen::VectorXd();
    Eigen::VectorXd b = op.row(r_star);
    b /= b.norm();
    for (int it = 0; it < 50; ++it) {
        Eigen::VectorXd a = op.apply(b);
        const double na = a.norm();
        if (!(na > 0.0)) break;
        a /= na;
        Eigen::VectorXd next = op.apply_t(a);
        const double nb = next.norm();
        if (!(nb > 0.0)) break;
        b = next / nb;
    }
    return b;
}

/// Screened start for factored operators. Feature groups are ranked by the
/// marginal energy their rows carry across the factor columns (with
/// per-subject factors this is the subjects' second moment per feature), the
/// operator is restricted to the strongest groups on both sides, and the
/// restricted leading pair seeds the iteration. When sampling noise swamps
/// the dense leading pair, that pair points away from every heavy group and
/// plain power iteration starts the alternating updates in its basin; the
/// marginal ranking does not share that failure mode because energies
/// average over columns instead of aligning with any single direction.
/// Small sides are never screened, so the start coincides with the
/// unpenalized one there.
inline Eigen::VectorXd screened_warm_start(const FactorOp& op, int kappa_x, int kappa_y) {
    const int p = static_cast<int>(op.rows()) / kappa_x;
    const int q = static_cast<int>(op.cols()) / kappa_y;

    const auto pick = [](const Eigen::MatrixXd& f, int n_groups, int kappa) {
        Eigen::VectorXd energy = Eigen::VectorXd::Zero(n_groups);
        const Eigen::VectorXd row_sq = f.rowwise().squaredNorm();
        for (int k = 0; k < kappa; ++k)
            energy += row_sq.segment(static_cast<Eigen::Index>(k) * n_groups, n_groups);
        std::vector<int> order(static_cast<std::size_t>(n_groups));
        for (int j = 0; j < n_groups; ++j) order[static_cast<std::size_t>(j)] = j;
        std::sort(order.begin(), order.end(), [&](int lhs, int rhs) {
            if (energy[lhs] != energy[rhs]) return energy[lhs] > energy[rhs];
            return lhs < rhs;
        });
        std::vector<double> sorted(static_cast<std::size_t>(n_groups));
        for (int j = 0; j < n_groups; ++j) sorted[static_cast<std::size_t>(j)] = energy[order[static_cast<std::size_t>(j)]];
        const double median = sorted[static_cast<std::size_t>(n_groups / 2)];
        int count = 0;
        while (count < n_groups && sorted[static_cast<std::size_t>(count)] > 1.5 * median) ++count;
        const int floor_m = std::min(n_groups, 8);
        const int cap_m = std::max(floor_m, (n_groups + 2) / 3);
        count = std::min(std::max(count, floor_m), cap_m);
        order.resize(static_cast<std::size_t>(count));
        std::sort(order.begin(), order.end());
        return order;
    };

    const std::vector<int> keep_x = pick(op.u, p, kappa_x);
    const std::vector<int> keep_y = pick(op.v, q, kappa_y);
    const int mx = static_cast<int>(keep_x.size());
    const int my = static_cast<int>(keep_y.size());
    if (mx == p && my == q) return default_warm_start(op);

    Eigen::MatrixXd u_sub(static_cast<Eigen::Index>(mx) * kappa_x, op.u.cols());
    Eigen::MatrixXd v_sub(static_cast<Eigen::Index>(my) * kappa_y, op.v.cols());
    for (int k = 0; k < kappa_x; ++k)
        for (int t = 0; t < mx; ++t)
            u_sub.row(static_cast<Eigen::Index>(k) * mx + t) =
                op.u.row(static_cast<Eigen::Index>(k) * p + keep_x[static_cast<std::size_t>(t)]);
    for (int k = 0; k < kappa_y; ++k)
        for (int t = 0; t < my; ++t)
            v_sub.row(static_cast<Eigen::Index>(k) * my + t) =
                op.v.row(static_cast<Eigen::Index>(k) * q + keep_y[static_cast<std::size_t>(t)]);
    const FactorOp sub(std::move(u_sub), std::move(v_sub));
    const Eigen::VectorXd b_sub = default_warm_start(sub);
    if (b_sub.size() == 0) return b_sub;

    Eigen::VectorXd b0 = Eigen::VectorXd::Zero(op.cols());
    for (int k = 0; k < kappa_y; ++k)
        for (int t = 0; t < my; ++t)
            b0[static_cast<Eigen::Index>(k) * q + keep_y[static_cast<std::size_t>(t)]] =
                b_sub[static_cast<Eigen::Index>(k) * my + t];
    return b0;
}

/// Alternating block updates. Each half step applies the feature-group
/// soft threshold at rho / 2 to the matvec image and rescales the result to
/// the unit sphere (a fully shrunk vector stays at zero). Restricted to
/// unit vectors this is the exact block minimizer of
///   || G - a b^T ||_F^2 + rho_x P(a) + rho_y P(b),
/// so the objective never increases; the trace records it per iteration.
template <class Op>
SingularTriple rank1_sparse_core(const Op& op, double rho_x, double rho_y, int kappa_x, int kappa_y,
                                 double tol, int max_iter, const Eigen::VectorXd* warm_start) {
    if (rho_x < 0.0 || rho_y < 0.0) throw InvalidConfigError("penalty levels must be nonnegative");
    if (!(tol > 0.0)) throw InvalidConfigError("tolerance must be positive");
    if (max_iter < 1) throw InvalidConfigError("iteration cap must be positive");
    if (kappa_x < 1 || kappa_y < 1) throw InvalidConfigError("block counts must be positive");
    if (op.rows() % kappa_x != 0 || op.cols() % kappa_y != 0)
        throw InvalidInputError("matrix dimensions are not multiples of the block counts");
    const int p = static_cast<int>(op.rows()) / kappa_x;
    const int q = static_cast<int>(op.cols()) / kappa_y;

    Eigen::VectorXd b;
    if (warm_start) {
        if (warm_start->size() != op.cols())
            throw InvalidInputError("warm start length does not match the matrix");
        b = *warm_start;
    } else {
        b = default_warm_start(op);
        if (b.size() == 0) return zero_triple(op.rows(), op.cols(), true);
    }

    SingularTriple out;
    out.a = Eigen::VectorXd::Zero(op.rows());
    out.b = b;
    const double frob2 = op.frob2();
    double prev_obj = std::numeric_limits<double>::infinity();
    double last_bilinear = 0.0;
    bool shrunk_to_zero = false;

    for (int iter = 1; iter <= max_iter; ++iter) {
        out.iterations = iter;
        const Eigen::VectorXd c = op.apply(b);
        Eigen::VectorXd a_new = group_threshold(c, p, kappa_x, 0.5 * rho_x);
        const double an = a_new.norm();
        if (!(an > 0.0)) {
            shrunk_to_zero = true;
            break;
        }
        a_new /= an;
        const Eigen::VectorXd d = op.apply_t(a_new);
        Eigen::VectorXd b_new = group_threshold(d, q, kappa_y, 0.5 * rho_y);
        const double bn = b_new.norm();
        if (!(bn > 0.0)) {
            shrunk_to_zero = true;
            break;
        }
        b_new /= bn;
        last_bilinear = d.dot(b_new);

        const double obj = frob2 - 2.0 * last_bilinear + 1.0 +
                           rho_x * group_penalty(a_new, p, kappa_x) +
                           rho_y * group_penalty(b_new, q, kappa_y);
        if (!out.objective_trace.empty() &&
            obj > prev_obj + 1e-9 * std::max(1.0, std::abs(prev_obj)))
            out.objective_monotone = false;
        out.objective_trace.push_back(obj);
        prev_obj = obj;

        const double delta =
            std::sqrt((a_new - out.a).squaredNorm() + (b_new - b).squaredNorm());
        const double scale = std::sqrt(out.a.squaredNorm() + b.squaredNorm());
        out.a = a_new;
        b = b_new;
        if (scale > 0.0 && delta < tol * scale) {
            out.converged = true;
            break;
        }
    }
    if (shrunk_to_zero) {
        out.a.setZero();
        out.b = Eigen::VectorXd::Zero(op.cols());
        out.converged = true;
        out.eta = 0.0;
    } else {
        out.b = b;
        out.eta = std::max(0.0, last_bilinear);
    }
    out.support_x = group_support(out.a, p, kappa_x);
    out.support_y = group_support(out.b, q, kappa_y);
    return out;
}

}  // namespace detail

/// Leading penalized rank-1 component of a dense block matrix.
inline SingularTriple rank1_sparse(const Eigen::MatrixXd& gamma, double rho_x, double rho_y,
                                   int kappa_x, int kappa_y, double tol = 1e-6,
                                   int max_iter = 500) {
    const detail::DenseOp op(gamma);
    return detail::rank1_sparse_core(op, rho_x, rho_y, kappa_x, kappa_y, tol, max_iter, nullptr);
}

/// Removes an extracted component: gamma - eta a b^T.
inline Eigen::MatrixXd deflate(const Eigen::MatrixXd& gamma, const SingularTriple& triple) {
    if (triple.a.size() != gamma.rows() || triple.b.size() != gamma.cols())
        throw InvalidInputError("component dimensions do not match the matrix");
    return gamma - triple.eta * triple.a * triple.b.transpose();
}

struct SparsityTuning {
    double rho_x = 0.0;
    double rho_y = 0.0;
    double cv_objective = 0.0;
    std::vector<std::pair<double, double>> grid;
    std::vector<double> objectives;        // held-out value per grid entry
    std::vector<int> fold_assignment;      // fold index per subject
};

namespace detail {

inline std::vector<int> cv_fold_assignment(int n, int folds, std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<int> perm = rng.permutation(n);
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (int idx = 0; idx < n; ++idx) fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(idx)])] = idx % folds;
    return fold;
}

inline void check_cv_args(int n, int folds, std::size_t grid_size) {
    if (folds < 2) throw InvalidConfigError("cross-validation needs at least two folds");
    if (n < folds) throw InvalidInputError("fewer subjects than cross-validation folds");
    if (grid_size == 0) throw InvalidConfigError("penalty grid must not be empty");
}

/// Argmax with ties resolved toward the sparser corner: larger rho sum,
/// then larger rho_x.
inline void pick_best_cell(SparsityTuning& tuning) {
    std::size_t best = 0;
    for (std::size_t idx = 1; idx < tuning.objectives.size(); ++idx) {
        const double cur = tuning.objectives[idx];
        const double ref = tuning.objectives[best];
        if (cur > ref) {
            best = idx;
        } else if (cur == ref) {
            const auto& [cx, cy] = tuning.grid[idx];
            const auto& [bx, by] = tuning.grid[best];
            if (cx + cy > bx + by || (cx + cy == bx + by && cx > bx)) best = idx;
        }
    }
    tuning.rho_x = tuning.grid[best].first;
    tuning.rho_y = tuning.grid[best].second;
    tuning.cv_objective = tuning.objectives[best];
}

}  // namespace detail

/// Cross-validated penalty selection over explicit per-subject matrices.
/// Each fold fits every grid cell on the mean of the training matrices and
/// scores a^T M b on the mean of the held-out ones; fold fits share the
/// unpenalized warm start, which depends only on the training mean.
inline SparsityTuning select_rho_cv(const std::vector<Eigen::MatrixXd>& per_subject,
                                    const std::vector<std::pair<double, double>>& grid, int folds,
                                    std::uint64_t seed, int kappa_x, int kappa_y, double tol = 1e-6,
                                    int max_iter = 500) {
    const int n = static_cast<int>(per_subject.size());
    detail::check_cv_args(n, folds, grid.size());
    for (const auto& m : per_subject)
        if (m.rows() != per_subject.front().rows() || m.cols() != per_subject.front().cols())
            throw InvalidInputError("per-subject matrices have inconsistent dimensions");

    SparsityTuning tuning;
    tuning.grid = grid;
    tuning.objectives.assign(grid.size(), 0.0);
    tuning.fold_assignment = detail::cv_fold_assignment(n, folds, seed);

    for (int g = 0; g < folds; ++g) {
        Eigen::MatrixXd train = Eigen::MatrixXd::Zero(per_subject.front().rows(),
                                                      per_subject.front().cols());
        Eigen::MatrixXd test = train;
        int n_train = 0, n_test = 0;
        for (int i = 0; i < n; ++i) {
            if (tuning.fold_assignment[static_cast<std::size_t>(i)] == g) {
                test += per_subject[static_cast<std::size_t>(i)];
                ++n_test;
            } else {
                train += per_subject[static_cast<std::size_t>(i)];
                ++n_train;
            }
        }
        train /= static_cast<double>(n_train);
        test /= static_cast<double>(n_test);

        const detail::DenseOp op(train);
        const Eigen::VectorXd warm = detail::default_warm_start(op);
        if (warm.size() == 0) continue;  // zero training mean scores zero everywhere
        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            const SingularTriple triple =
                detail::rank1_sparse_core(op, grid[idx].first, grid[idx].second, kappa_x, kappa_y,
                                          tol, max_iter, &warm);
            tuning.objectives[idx] += triple.a.dot(test * triple.b);
        }
    }
    detail::pick_best_cell(tuning);
    return tuning;
}

/// Same procedure on the factored representation: subject i's matrix is
/// implicitly u_i v_i^T minus the already extracted components. Training
/// means and deflation stay in factored form, so nothing of size
/// rows x cols is ever materialized.
inline SparsityTuning select_rho_cv_factors(const Eigen::MatrixXd& factors_x,
                                            const Eigen::MatrixXd& factors_y,
                                            const std::vector<SingularTriple>& deflations,
                                            const std::vector<std::pair<double, double>>& grid,
                                            int folds, std::uint64_t seed, int kappa_x,
                                            int kappa_y, double tol = 1e-6, int max_iter = 500) {
    const int n = static_cast<int>(factors_x.cols());
    detail::check_cv_args(n, folds, grid.size());
    if (factors_y.cols() != n) throw InvalidInputError("factor matrices disagree on subject count");

    SparsityTuning tuning;
    tuning.grid = grid;
    tuning.objectives.assign(grid.size(), 0.0);
    tuning.fold_assignment = detail::cv_fold_assignment(n, folds, seed);
    const Eigen::Index n_defl = static_cast<Eigen::Index>(deflations.size());

    for (int g = 0; g < folds; ++g) {
        std::vector<int> train_idx, test_idx;
        for (int i = 0; i < n; ++i)
            (tuning.fold_assignment[static_cast<std::size_t>(i)] == g ? test_idx : train_idx)
                .push_back(i);
        const auto n_train = static_cast<Eigen::Index>(train_idx.size());
        const auto n_test = static_cast<Eigen::Index>(test_idx.size());

        Eigen::MatrixXd u(factors_x.rows(), n_train + n_defl);
        Eigen::MatrixXd v(factors_y.rows(), n_train + n_defl);
        for (Eigen::Index c = 0; c < n_train; ++c) {
            u.col(c) = factors_x.col(train_idx[static_cast<std::size_t>(c)]) /
                       static_cast<double>(n_train);
            v.col(c) = factors_y.col(train_idx[static_cast<std::size_t>(c)]);
        }
        for (Eigen::Index s = 0; s < n_defl; ++s) {
            const SingularTriple& defl = deflations[static_cast<std::size_t>(s)];
            u.col(n_train + s) = -defl.eta * defl.a;
            v.col(n_train + s) = defl.b;
        }
        const detail::FactorOp op(std::move(u), std::move(v));
        const Eigen::VectorXd warm = detail::screened_warm_start(op, kappa_x, kappa_y);
        if (warm.size() == 0) continue;

        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            const SingularTriple triple =
                detail::rank1_sparse_core(op, grid[idx].first, grid[idx].second, kappa_x, kappa_y,
                                          tol, max_iter, &warm);
            double value = 0.0;
            for (int i : test_idx)
                value += triple.a.dot(factors_x.col(i)) * factors_y.col(i).dot(triple.b);
            value /= static_cast<double>(n_test);
            for (const SingularTriple& defl : deflations)
                value -= defl.eta * triple.a.dot(defl.a) * defl.b.dot(triple.b);
            tuning.objectives[idx] += value;
        }
    }
    detail::pick_best_cell(tuning);
    return tuning;
}

/// Largest feature-group norms of the two block directions; penalty grids
/// are scaled relative to these.
inline std::pair<double, double> group_norm_bounds(const Eigen::MatrixXd& gamma, int kappa_x,
                                                   int kappa_y) {
    if (kappa_x < 1 || kappa_y < 1 || gamma.rows() % kappa_x != 0 || gamma.cols() % kappa_y != 0)
        throw InvalidInputError("matrix dimensions are not multiples of the block counts");
    const int p = static_cast<int>(gamma.rows()) / kappa_x;
    const int q = static_cast<int>(gamma.cols()) / kappa_y;
    double sx = 0.0;
    for (int j = 0; j < p; ++j) {
        double total = 0.0;
        for (int k = 0; k < kappa_x; ++k) total += gamma.row(k * p + j).squaredNorm();
        sx = std::max(sx, std::sqrt(total));
    }
    double sy = 0.0;
    for (int m = 0; m < q; ++m) {
        double total = 0.0;
        for (int k = 0; k < kappa_y; ++k) total += gamma.col(k * q + m).squaredNorm();
        sy = std::max(sy, std::sqrt(total));
    }
    return {sx, sy};
}

}  // namespace facd
