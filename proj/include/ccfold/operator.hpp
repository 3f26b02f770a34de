#pragma once

// Residual F(u, lambda), its linearization F_u, the discrete positive cone,
// and a damped Newton solver whose iterates never leave the cone.

#include "ccfold/mesh.hpp"
#include "ccfold/model.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <string>
#include <vector>

namespace ccfold {

struct Residual {
    StateVector values;
    double norm = 0.0; // lumped L2 norm
};

/// F_u(u, lambda) as an (m*n) x (m*n) sparse matrix, component-major.
struct LinearOperator {
    SparseMatrix matrix;
    int m = 0;
    Index nodes = 0;
    Index bandwidth = 0;
};

namespace detail {

inline void require_open_cone(const StateVector& s)
{
    for (Index k = 0; k < s.flat().size(); ++k) {
        CCFOLD_THROW_IF(!(s.flat()[k] > 0.0), ErrorCode::ConeViolation,
                        "state is not strictly positive at flat index " + std::to_string(k) +
                            " (u^(q-1) is singular there)");
    }
}

inline void require_state_on(const Grid& g, const ProblemSpec& p, const StateVector& s)
{
    CCFOLD_THROW_IF(s.components() != p.m || s.nodes() != g.size(), ErrorCode::ShapeError,
                    "state does not match problem/grid shape");
}

/// a_i sign(u_i)|u_i|^{q_i}
inline StateVector concave_term(const ProblemSpec& p, const StateVector& s)
{
    StateVector out(p.m, s.nodes());
    for (int i = 0; i < p.m; ++i) {
        const double qi = p.q[static_cast<std::size_t>(i)];
        out.comp(i) = p.a[static_cast<std::size_t>(i)].cwiseProduct(
            s.comp(i).unaryExpr([qi](double u) { return spow(u, qi); }));
    }
    return out;
}

inline Index bandwidth_of(const SparseMatrix& A)
{
    Index bw = 0;
    for (Index c = 0; c < A.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(A, c); it; ++it)
            bw = std::max(bw, std::abs(it.row() - it.col()));
    return bw;
}

} // namespace detail

/// Block-diagonal stencil acting on every component.
inline Eigen::VectorXd apply_stencil(const Grid& g, const StateVector& s)
{
    Eigen::VectorXd out(s.flat().size());
    for (int i = 0; i < s.components(); ++i)
        out.segment(static_cast<Index>(i) * g.size(), g.size()) = g.stencil() * s.comp(i);
    return out;
}

/// Residual without the cone requirement; used wherever a state may touch zero.
inline Residual residual_unchecked(const ProblemSpec& p, const Grid& g, const StateVector& s,
                                   double lambda)
{
    detail::require_state_on(g, p, s);
    const StateVector gs = eval_g(p, s);
    const StateVector cv = detail::concave_term(p, s);
    Residual r{StateVector(p.m, apply_stencil(g, s) - cv.flat() - lambda * gs.flat()), 0.0};
    r.norm = l2_norm(g, r.values.flat());
    return r;
}

inline Residual assemble_residual(const ProblemSpec& p, const Grid& g, const StateVector& s,
                                  double lambda)
{
    detail::require_state_on(g, p, s);
    detail::require_open_cone(s);
    return residual_unchecked(p, g, s, lambda);
}

/// -(d/d lambda) F = g(u); F_lambda = -g.
inline Eigen::VectorXd residual_lambda_derivative(const ProblemSpec& p, const StateVector& s)
{
    return -eval_g(p, s).flat();
}

/// Block (i, j) of the pure-g part -lambda * diag(g_{i,u_j}) plus the diagonal
/// concave term; the stencil sits on every diagonal block.
inline LinearOperator assemble_jacobian(const ProblemSpec& p, const Grid& g, const StateVector& s,
                                        double lambda)
{
    detail::require_state_on(g, p, s);
    detail::require_open_cone(s);
    const Index n = g.size();
    const JacobianFields J = eval_g_jacobian(p, s);
    const SparseMatrix& K = g.stencil();

    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(K.nonZeros() * p.m + n * p.m * p.m));
    for (int i = 0; i < p.m; ++i) {
        const Index off = static_cast<Index>(i) * n;
        for (Index c = 0; c < K.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(K, c); it; ++it)
                t.emplace_back(off + it.row(), off + it.col(), it.value());
        const double qi = p.q[static_cast<std::size_t>(i)];
        const GridField& ai = p.a[static_cast<std::size_t>(i)];
        for (Index k = 0; k < n; ++k)
            t.emplace_back(off + k, off + k, -qi * ai[k] * std::pow(s(i, k), qi - 1.0));
        if (lambda != 0.0) {
            for (int j = 0; j < p.m; ++j) {
                const Index offj = static_cast<Index>(j) * n;
                const GridField& e = J(i, j);
                for (Index k = 0; k < n; ++k)
                    if (e[k] != 0.0) t.emplace_back(off + k, offj + k, -lambda * e[k]);
            }
        }
    }
    LinearOperator L;
    L.m = p.m;
    L.nodes = n;
    L.matrix.resize(p.m * n, p.m * n);
    L.matrix.setFromTriplets(t.begin(), t.end());
    L.matrix.makeCompressed();
    L.bandwidth = detail::bandwidth_of(L.matrix);
    return L;
}

/// u_i >= delta d(x) at every node; delta = 0 means strict positivity.
inline bool cone_membership(const Grid& g, const StateVector& s, double delta)
{
    CCFOLD_THROW_IF(delta < 0.0, ErrorCode::InvariantViolation, "cone parameter must be >= 0");
    CCFOLD_THROW_IF(s.nodes() != g.size(), ErrorCode::ShapeError, "state does not match grid");
    const GridField& d = g.distance();
    for (int i = 0; i < s.components(); ++i)
        for (Index k = 0; k < g.size(); ++k) {
            const double u = s(i, k);
            if (delta == 0.0 ? !(u > 0.0) : !(u >= delta * d[k])) return false;
        }
    return true;
}

/// Largest delta with u in S(delta): min over nodes and components of u_i/d.
inline double cone_parameter(const Grid& g, const StateVector& s)
{
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < s.components(); ++i)
        best = std::min(best, s.comp(i).cwiseQuotient(g.distance()).minCoeff());
    return best;
}

struct NewtonOptions {
    double tol = 1e-10;
    int max_iter = 50;
    /// Iterates must satisfy u >= delta_floor * d. Negative selects 1e-8 * min(d).
    double delta_floor = -1.0;
    double min_step = 1.0 / 1024.0;
    /// Extra full steps after tol is met, kept only while the residual drops.
    /// Quotient evaluations divide by <g, v>, so they profit from the floor.
    int polish_steps = 2;
};

struct NewtonResult {
    StateVector state;
    int iterations = 0;
    double residual = 0.0;
};

inline double resolved_floor(const Grid& g, double delta_floor)
{
    return delta_floor >= 0.0 ? delta_floor : 1e-8 * g.distance().minCoeff();
}

inline NewtonResult newton_solve(const ProblemSpec& p, const Grid& g, const StateVector& s0,
                                 double lambda, const NewtonOptions& opts = {})
{
    detail::require_state_on(g, p, s0);
    detail::require_open_cone(s0);
    const double floor = resolved_floor(g, opts.delta_floor);

    NewtonResult res{s0, 0, assemble_residual(p, g, s0, lambda).norm};
    Residual F = assemble_residual(p, g, res.state, lambda);
    while (F.norm > opts.tol) {
        if (res.iterations >= opts.max_iter)
            throw Error(ErrorCode::MaxIterations,
                        "Newton did not reach tol " + fmt_num(opts.tol) + " in " +
                            std::to_string(opts.max_iter) + " iterations (residual " +
                            fmt_num(F.norm) + ")");
        const LinearOperator J = assemble_jacobian(p, g, res.state, lambda);
        Eigen::SparseLU<SparseMatrix> lu;
        lu.compute(J.matrix);
        CCFOLD_THROW_IF(lu.info() != Eigen::Success, ErrorCode::SingularJacobian,
                        "factorization of F_u failed at lambda = " + fmt_num(lambda));
        const Eigen::VectorXd step = lu.solve(-F.values.flat());
        CCFOLD_THROW_IF(!step.allFinite(), ErrorCode::SingularJacobian,
                        "Newton step is not finite at lambda = " + fmt_num(lambda));

        // Backtrack: stay in the cone, prefer Armijo decrease.
        double alpha = 1.0;
        bool feasible = false;
        StateVector best;
        Residual best_F;
        while (alpha >= opts.min_step) {
            StateVector trial(p.m, res.state.flat() + alpha * step);
            if (cone_membership(g, trial, floor) && cone_membership(g, trial, 0.0)) {
                Residual Ft = residual_unchecked(p, g, trial, lambda);
                if (std::isfinite(Ft.norm) && (!feasible || Ft.norm < best_F.norm)) {
                    best = trial;
                    best_F = Ft;
                    feasible = true;
                }
                if (Ft.norm <= (1.0 - 1e-4 * alpha) * F.norm) break;
            }
            alpha *= 0.5;
        }
        CCFOLD_THROW_IF(!feasible, ErrorCode::ConeExit,
                        "no admissible Newton step keeps the iterate in the cone");
        res.state = std::move(best);
        F = std::move(best_F);
        ++res.iterations;
    }
    for (int k = 0; k < opts.polish_steps; ++k) {
        Eigen::SparseLU<SparseMatrix> lu(assemble_jacobian(p, g, res.state, lambda).matrix);
        if (lu.info() != Eigen::Success) break;
        StateVector trial(p.m, res.state.flat() - lu.solve(F.values.flat()));
        if (!cone_membership(g, trial, 0.0)) break;
        Residual Ft = residual_unchecked(p, g, trial, lambda);
        if (!(Ft.norm < F.norm)) break;
        res.state = std::move(trial);
        F = std::move(Ft);
    }
    res.residual = F.norm;
    return res;
}

} // namespace ccfold
