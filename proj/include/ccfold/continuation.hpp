#pragma once

// Pseudo-arclength branch tracing, fold bracketing and Moore-Spence
// refinement, plus the quotient-based estimates of the fold value and the
// invariant suite run over a stored branch.

#include "ccfold/operator.hpp"
#include "ccfold/quotient.hpp"
#include "ccfold/random.hpp"
#include "ccfold/spectral.hpp"
#include "ccfold/sublinear.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ccfold {

struct BranchNorms {
    double h1 = 0.0;      // (sum_i int |grad u_i|^2)^(1/2)
    double lgamma0 = 0.0; // (sum_i int |u_i|^gamma0)^(1/gamma0)
    double lgamma = 0.0;  // (sum_i int |u_i|^gamma)^(1/gamma)
};

inline BranchNorms branch_norms(const ProblemSpec& p, const Grid& g, const StateVector& u)
{
    auto lp = [&](double e) {
        return std::pow(g.weight() * u.flat().cwiseAbs().array().pow(e).sum(), 1.0 / e);
    };
    return {std::sqrt(h1_pairing(g, u, u)), lp(p.gamma0), lp(p.gamma)};
}

struct BranchPoint {
    double lambda = 0.0;
    StateVector state;
    double lambda1 = 0.0;
    StabilityTag stability;
    double arclength = 0.0;
    BranchNorms norms;
    double residual = 0.0;
    double dlambda_ds = 0.0; // lambda component of the unit tangent
    double min_u_over_d = 0.0;
};

struct Branch {
    std::vector<BranchPoint> points;
    /// k such that dlambda/ds changes sign between points k-1 and k.
    std::vector<std::size_t> fold_markers;
    std::string stop_reason;
    double lambda_scale = 1.0; // metric weights used for the arclength
    double state_scale = 1.0;
};

struct ContinuationOptions {
    double tol = 1e-10;             // corrector tolerance on ||F||
    int max_corrector_iter = 12;
    int polish_steps = 2;
    double ds0 = 0.02;              // initial step, scaled metric
    double ds_max = 0.05;
    double ds_min_factor = 1e-6;    // floor = ds_min_factor * ds0
    double lambda_min = 0.0;        // trace stops once lambda leaves [min, max]
    double lambda_max = std::numeric_limits<double>::infinity();
    double arclength_budget = 50.0;
    double post_fold_arclength = 2.0; // keep tracing this far past the first fold
    int max_steps = 2000;
    /// Zero picks lambda scale |u0| / |du/dlambda| at the start.
    double lambda_scale = 0.0;
    double stability_tol = -1.0;    // negative: default_stability_tol
    EigenOptions eig;
};

namespace detail {

// Scaled metric: ds^2 = w |du|^2 / U^2 + dlambda^2 / L^2.
struct Metric {
    double w, U, L;
    [[nodiscard]] double norm(const Eigen::VectorXd& du, double dl) const
    {
        return std::sqrt(w * du.squaredNorm() / (U * U) + dl * dl / (L * L));
    }
};

// [J, -g; cu^T, cl]; the last row is dense.
inline SparseMatrix bordered(const SparseMatrix& J, const Eigen::VectorXd& g_col,
                             const Eigen::VectorXd& cu, double cl)
{
    const Index N = J.rows();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(J.nonZeros() + 2 * N + 1));
    for (Index c = 0; c < J.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(J, c); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (Index k = 0; k < N; ++k) {
        if (g_col[k] != 0.0) t.emplace_back(k, N, -g_col[k]);
        if (cu[k] != 0.0) t.emplace_back(N, k, cu[k]);
    }
    t.emplace_back(N, N, cl);
    SparseMatrix B(N + 1, N + 1);
    B.setFromTriplets(t.begin(), t.end());
    B.makeCompressed();
    return B;
}

// Unit tangent (du, dlambda) at (u, lambda), oriented so that its metric
// product with `prev` is positive.
struct Tangent {
    Eigen::VectorXd du;
    double dl = 0.0;
};

inline Tangent tangent_at(const ProblemSpec& p, const Grid& g, const StateVector& u, double lambda,
                          const Metric& M, const Tangent& prev)
{
    const SparseMatrix J = assemble_jacobian(p, g, u, lambda).matrix;
    const Eigen::VectorXd gv = eval_g(p, u).flat();
    const Eigen::VectorXd cu = (M.w / (M.U * M.U)) * prev.du;
    const SparseMatrix B = bordered(J, gv, cu, prev.dl / (M.L * M.L));
    Eigen::SparseLU<SparseMatrix> lu(B);
    CCFOLD_THROW_IF(lu.info() != Eigen::Success, ErrorCode::SingularJacobian,
                    "bordered tangent system is singular at lambda = " + fmt_num(lambda));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(B.rows());
    rhs[B.rows() - 1] = 1.0;
    const Eigen::VectorXd x = lu.solve(rhs);
    CCFOLD_THROW_IF(!x.allFinite(), ErrorCode::SingularJacobian, "tangent is not finite");
    const Index N = J.rows();
    Tangent t{x.head(N), x[N]};
    const double nrm = M.norm(t.du, t.dl);
    t.du /= nrm;
    t.dl /= nrm;
    return t;
}

struct Corrected {
    StateVector u;
    double lambda = 0.0;
    double residual = 0.0;
    int iterations = 0;
};

// Newton on [F(u, lambda); <t, (u, lambda) - pred>_M] from the predictor.
inline std::optional<Corrected> correct(const ProblemSpec& p, const Grid& g, const StateVector& u_pred,
                                        double l_pred, const Tangent& t, const Metric& M,
                                        const ContinuationOptions& o)
{
    const double floor = resolved_floor(g, -1.0);
    if (!cone_membership(g, u_pred, 0.0)) return std::nullopt;
    const Eigen::VectorXd cu = (M.w / (M.U * M.U)) * t.du;
    const double cl = t.dl / (M.L * M.L);
    StateVector u = u_pred;
    double lambda = l_pred;
    auto constraint = [&](const StateVector& x, double l) {
        return cu.dot(x.flat() - u_pred.flat()) + cl * (l - l_pred);
    };
    auto merit = [&](const Residual& F, double c) { return std::hypot(F.norm, c); };

    Residual F = residual_unchecked(p, g, u, lambda);
    double c = constraint(u, lambda);
    int it = 0;
    int polished = 0;
    for (;; ++it) {
        const bool converged = F.norm <= o.tol && std::abs(c) <= o.tol;
        if (converged && polished >= o.polish_steps) break;
        if (!converged && it >= o.max_corrector_iter) return std::nullopt;
        const SparseMatrix J = assemble_jacobian(p, g, u, lambda).matrix;
        const SparseMatrix B = bordered(J, eval_g(p, u).flat(), cu, cl);
        Eigen::SparseLU<SparseMatrix> lu(B);
        if (lu.info() != Eigen::Success) return std::nullopt;
        Eigen::VectorXd rhs(B.rows());
        rhs.head(J.rows()) = -F.values.flat();
        rhs[J.rows()] = -c;
        const Eigen::VectorXd step = lu.solve(rhs);
        if (!step.allFinite()) return std::nullopt;
        const Index N = J.rows();
        if (converged) {
            // polish: keep only while the merit drops
            StateVector ut(p.m, u.flat() + step.head(N));
            if (!cone_membership(g, ut, 0.0)) break;
            const Residual Ft = residual_unchecked(p, g, ut, lambda + step[N]);
            const double ct = constraint(ut, lambda + step[N]);
            if (!(merit(Ft, ct) < merit(F, c))) break;
            u = std::move(ut);
            lambda += step[N];
            F = Ft;
            c = ct;
            ++polished;
            continue;
        }
        double alpha = 1.0;
        bool accepted = false;
        while (alpha >= 1.0 / 1024.0) {
            StateVector ut(p.m, u.flat() + alpha * step.head(N));
            if (cone_membership(g, ut, floor) && cone_membership(g, ut, 0.0)) {
                const Residual Ft = residual_unchecked(p, g, ut, lambda + alpha * step[N]);
                const double ct = constraint(ut, lambda + alpha * step[N]);
                if (std::isfinite(Ft.norm) && merit(Ft, ct) < merit(F, c)) {
                    u = std::move(ut);
                    lambda += alpha * step[N];
                    F = Ft;
                    c = ct;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if (!accepted) return std::nullopt;
    }
    return Corrected{std::move(u), lambda, F.norm, it};
}

} // namespace detail

/// Fills in stability, norms and cone data for a solved state.
inline BranchPoint make_branch_point(const ProblemSpec& p, const Grid& g, StateVector u, double lambda,
                                     double arclength, double dlambda_ds,
                                     const ContinuationOptions& o = {})
{
    BranchPoint b;
    b.lambda = lambda;
    b.residual = assemble_residual(p, g, u, lambda).norm;
    b.stability = classify_stability(p, g, u, lambda, o.stability_tol, o.eig);
    b.lambda1 = b.stability.lambda1;
    b.arclength = arclength;
    b.norms = branch_norms(p, g, u);
    b.dlambda_ds = dlambda_ds;
    b.min_u_over_d = cone_parameter(g, u);
    b.state = std::move(u);
    return b;
}

/// Pseudo-arclength continuation from `start` in the direction of increasing
/// lambda. Stops on budget, lambda range, step count, the post-fold
/// allowance, or when the step floor is reached (reason recorded). Throws
/// corrector-failure only if not a single step could be taken.
inline Branch trace_branch(const ProblemSpec& p, const Grid& g, const BranchPoint& start,
                           const ContinuationOptions& o = {})
{
    CCFOLD_THROW_IF(!(start.residual <= std::max(o.tol, 1e-10) * 10.0), ErrorCode::InvariantViolation,
                    "start point residual " + fmt_num(start.residual) + " exceeds tolerance");
    Branch br;
    br.points.push_back(start);
    if (!(o.arclength_budget > 0.0) || o.max_steps <= 0) {
        br.stop_reason = "arclength-budget";
        return br;
    }

    // metric scales from the start: U = |u0|, L = lambda change that moves u by U
    const StateVector& u0 = start.state;
    const double U = std::max(l2_norm(g, u0.flat()), 1e-300);
    double L = o.lambda_scale;
    if (!(L > 0.0)) {
        Eigen::SparseLU<SparseMatrix> lu(assemble_jacobian(p, g, u0, start.lambda).matrix);
        CCFOLD_THROW_IF(lu.info() != Eigen::Success, ErrorCode::SingularJacobian,
                        "F_u is singular at the start point");
        const Eigen::VectorXd z = lu.solve(eval_g(p, u0).flat());
        const double zn = l2_norm(g, z);
        L = zn > 0.0 ? U / zn : 1.0;
    }
    br.state_scale = U;
    br.lambda_scale = L;
    const detail::Metric M{g.weight(), U, L};

    detail::Tangent t = detail::tangent_at(p, g, u0, start.lambda, M,
                                           detail::Tangent{Eigen::VectorXd::Zero(u0.flat().size()), 1.0});
    br.points.front().dlambda_ds = t.dl;

    const double ds_floor = o.ds_min_factor * o.ds0;
    double ds = o.ds0;
    std::optional<double> fold_s;
    for (int step = 0; step < o.max_steps; ++step) {
        const BranchPoint& last = br.points.back();
        // secant predictor once two points exist, tangent before
        detail::Tangent dir = t;
        if (br.points.size() >= 2) {
            const BranchPoint& prev = br.points[br.points.size() - 2];
            dir.du = last.state.flat() - prev.state.flat();
            dir.dl = last.lambda - prev.lambda;
            const double nrm = M.norm(dir.du, dir.dl);
            dir.du /= nrm;
            dir.dl /= nrm;
        }
        std::optional<detail::Corrected> c;
        while (ds >= ds_floor) {
            const StateVector up(p.m, last.state.flat() + ds * dir.du);
            c = detail::correct(p, g, up, last.lambda + ds * dir.dl, dir, M, o);
            if (c) break;
            ds *= 0.5;
        }
        if (!c) {
            if (br.points.size() == 1)
                throw Error(ErrorCode::CorrectorFailure,
                            "corrector failed down to the step floor " + fmt_num(ds_floor) +
                                " on the first step");
            br.stop_reason = "corrector-failure";
            break;
        }
        const double s_new =
            last.arclength + M.norm(c->u.flat() - last.state.flat(), c->lambda - last.lambda);
        t = detail::tangent_at(p, g, c->u, c->lambda, M, t);
        const bool out_of_range = c->lambda > o.lambda_max || c->lambda < o.lambda_min;
        if (out_of_range) {
            br.stop_reason = "lambda-range";
            break;
        }
        br.points.push_back(make_branch_point(p, g, std::move(c->u), c->lambda, s_new, t.dl, o));
        const std::size_t k = br.points.size() - 1;
        if ((br.points[k - 1].dlambda_ds > 0.0) != (br.points[k].dlambda_ds > 0.0)) {
            br.fold_markers.push_back(k);
            if (!fold_s) fold_s = s_new;
        }

        if (c->iterations <= 3) ds = std::min(2.0 * ds, o.ds_max);
        else if (c->iterations >= 8) ds = std::max(0.5 * ds, ds_floor);

        if (s_new >= o.arclength_budget) {
            br.stop_reason = "arclength-budget";
            break;
        }
        if (fold_s && s_new - *fold_s >= o.post_fold_arclength) {
            br.stop_reason = "post-fold-arclength";
            break;
        }
    }
    if (br.stop_reason.empty()) br.stop_reason = "max-steps";
    return br;
}

/// Starting point: the baseline at lambda = 0.
inline BranchPoint baseline_point(const ProblemSpec& p, const Grid& g, const ContinuationOptions& o = {})
{
    return make_branch_point(p, g, baseline_state(p, g).w, 0.0, 0.0, 1.0, o);
}

// -- fold detection -------------------------------------------------------------

struct FoldBracket {
    std::size_t lo = 0, hi = 0; // union of the agreeing brackets
    std::size_t eigen_lo = 0;   // lambda_1 changes sign between eigen_lo, eigen_lo+1
    std::size_t tangent_lo = 0; // dlambda/ds changes sign between tangent_lo, tangent_lo+1
};

class CriteriaDisagreeError : public Error {
public:
    CriteriaDisagreeError(const std::string& what, std::vector<std::size_t> eig,
                          std::vector<std::size_t> tan)
        : Error(ErrorCode::CriteriaDisagree, what), eig_(std::move(eig)), tan_(std::move(tan))
    {
    }
    [[nodiscard]] const std::vector<std::size_t>& eigen_brackets() const { return eig_; }
    [[nodiscard]] const std::vector<std::size_t>& tangent_brackets() const { return tan_; }

private:
    std::vector<std::size_t> eig_, tan_;
};

/// Brackets where lambda_1 and dlambda/ds both change sign. A pair of
/// brackets agrees when their left indices differ by at most one: the two
/// sign changes straddle the same turning point but are sampled at
/// different points.
inline std::vector<FoldBracket> detect_fold(const Branch& br)
{
    const auto& P = br.points;
    std::vector<std::size_t> eig, tan;
    for (std::size_t k = 0; k + 1 < P.size(); ++k) {
        if ((P[k].lambda1 >= 0.0) != (P[k + 1].lambda1 >= 0.0)) eig.push_back(k);
        if ((P[k].dlambda_ds > 0.0) != (P[k + 1].dlambda_ds > 0.0)) tan.push_back(k);
    }
    auto list = [](const std::vector<std::size_t>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s + "]";
    };
    if (eig.empty() && tan.empty())
        throw Error(ErrorCode::NoFoldFound, "no sign change of lambda_1 or dlambda/ds along " +
                                                std::to_string(P.size()) + " points");
    bool agree = eig.size() == tan.size();
    for (std::size_t i = 0; agree && i < eig.size(); ++i)
        agree = (eig[i] > tan[i] ? eig[i] - tan[i] : tan[i] - eig[i]) <= 1;
    if (!agree)
        throw CriteriaDisagreeError("lambda_1 sign changes at " + list(eig) +
                                        ", dlambda/ds sign changes at " + list(tan),
                                    eig, tan);
    std::vector<FoldBracket> out;
    for (std::size_t i = 0; i < eig.size(); ++i)
        out.push_back({std::min(eig[i], tan[i]), std::max(eig[i], tan[i]) + 1, eig[i], tan[i]});
    return out;
}

// -- Moore-Spence refinement ------------------------------------------------------

struct FoldPoint {
    double lambda_star = 0.0;
    StateVector state;
    StateVector null_vector; // w sum v^2 = 1, positive at the max-|v| node
    double residual_F = 0.0;
    double residual_Fv = 0.0;
    double normalization_error = 0.0;
    double lambda1_sym = 0.0;          // symmetrized form
    double lambda1_principal = 0.0;    // full operator
    double smallest_singular_value = 0.0;
    int iterations = 0;
    std::string normalization_id = "l2-unit-mass/positive-at-max-abs";
};

struct MooreSpenceOptions {
    double tol_F = 1e-10;
    double tol_Fv = 1e-8;
    int max_iter = 40;
    int polish_steps = 2;
    EigenOptions eig;
};

/// Fold tolerance on lambda_1: 1e-6 times the stencil's lambda_1.
inline double fold_tol(const Grid& g) { return 1e-6 * g.stencil_lambda1(); }

namespace detail {

inline void sign_fix_max_abs(Eigen::VectorXd& v)
{
    Index k = 0;
    v.cwiseAbs().maxCoeff(&k);
    if (v[k] < 0.0) v = -v;
}

// (F_u v) and d(F_u v)/du.
inline SparseMatrix fu_v_derivative(const ProblemSpec& p, const Grid& g, const StateVector& u,
                                    const StateVector& v, double lambda)
{
    const Index n = g.size();
    const JacobianFields H = eval_g_hessian_contract(p, u, v);
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < p.m; ++i) {
        const double qi = p.q[static_cast<std::size_t>(i)];
        const GridField& ai = p.a[static_cast<std::size_t>(i)];
        for (int k = 0; k < p.m; ++k)
            for (Index x = 0; x < n; ++x) {
                double val = -lambda * H(i, k)[x];
                if (i == k) val -= qi * (qi - 1.0) * ai[x] * std::pow(u(i, x), qi - 2.0) * v(i, x);
                if (val != 0.0) t.emplace_back(i * n + x, k * n + x, val);
            }
    }
    SparseMatrix D(p.m * n, p.m * n);
    D.setFromTriplets(t.begin(), t.end());
    return D;
}

} // namespace detail

/// Newton on F = 0, F_u v = 0, w |v|^2 = 1 in (u, v, lambda), seeded from the
/// bracket midpoint and the principal eigenvector there.
inline FoldPoint refine_fold_moore_spence(const ProblemSpec& p, const Grid& g, const Branch& br,
                                          const FoldBracket& bracket, const MooreSpenceOptions& o = {})
{
    CCFOLD_THROW_IF(bracket.hi >= br.points.size() || bracket.lo > bracket.hi, ErrorCode::ShapeError,
                    "bracket outside the branch");
    // seed from the point of the bracket with the smallest |lambda_1|
    std::size_t best = bracket.lo;
    for (std::size_t k = bracket.lo; k <= bracket.hi; ++k)
        if (std::abs(br.points[k].lambda1) < std::abs(br.points[best].lambda1)) best = k;
    StateVector u = br.points[best].state;
    double lambda = br.points[best].lambda;

    const Index N = u.flat().size();
    const double w = g.weight();
    Eigen::VectorXd v = principal_eigenpair(assemble_jacobian(p, g, u, lambda), g, o.eig).phi.flat();
    v /= std::sqrt(w * v.squaredNorm());

    auto residuals = [&](const StateVector& uu, const Eigen::VectorXd& vv, double l) {
        const Residual F = residual_unchecked(p, g, uu, l);
        const Eigen::VectorXd Fv = assemble_jacobian(p, g, uu, l).matrix * vv;
        Eigen::VectorXd r(2 * N + 1);
        r.head(N) = F.values.flat();
        r.segment(N, N) = Fv;
        r[2 * N] = w * vv.squaredNorm() - 1.0;
        return r;
    };
    auto merit = [&](const Eigen::VectorXd& r) { return std::sqrt(w) * r.head(2 * N).norm() + std::abs(r[2 * N]); };
    const double floor = resolved_floor(g, -1.0);

    Eigen::VectorXd r = residuals(u, v, lambda);
    int it = 0, polished = 0;
    for (;; ++it) {
        const double rF = std::sqrt(w) * r.head(N).norm(), rFv = std::sqrt(w) * r.segment(N, N).norm();
        const bool converged = rF <= o.tol_F && rFv <= o.tol_Fv && std::abs(r[2 * N]) <= 1e-12;
        if (converged && polished >= o.polish_steps) break;
        if (!converged && it >= o.max_iter)
            throw Error(ErrorCode::MaxIterations, "Moore-Spence Newton stopped at |F| = " + fmt_num(rF) +
                                                      ", |F_u v| = " + fmt_num(rFv));
        const SparseMatrix J = assemble_jacobian(p, g, u, lambda).matrix;
        const SparseMatrix D = detail::fu_v_derivative(p, g, u, StateVector(p.m, v), lambda);
        const Eigen::VectorXd gu = eval_g(p, u).flat();
        const JacobianFields Jg = eval_g_jacobian(p, u);
        Eigen::VectorXd Jgv = Eigen::VectorXd::Zero(N);
        const Index n = g.size();
        for (int i = 0; i < p.m; ++i)
            for (int j = 0; j < p.m; ++j)
                Jgv.segment(i * n, n) += Jg(i, j).cwiseProduct(v.segment(j * n, n));

        std::vector<Eigen::Triplet<double>> t;
        t.reserve(static_cast<std::size_t>(2 * J.nonZeros() + D.nonZeros() + 3 * N + 1));
        for (Index c = 0; c < J.outerSize(); ++c)
            for (SparseMatrix::InnerIterator e(J, c); e; ++e) {
                t.emplace_back(e.row(), e.col(), e.value());
                t.emplace_back(N + e.row(), N + e.col(), e.value());
            }
        for (Index c = 0; c < D.outerSize(); ++c)
            for (SparseMatrix::InnerIterator e(D, c); e; ++e) t.emplace_back(N + e.row(), e.col(), e.value());
        for (Index k = 0; k < N; ++k) {
            if (gu[k] != 0.0) t.emplace_back(k, 2 * N, -gu[k]);
            if (Jgv[k] != 0.0) t.emplace_back(N + k, 2 * N, -Jgv[k]);
            t.emplace_back(2 * N, N + k, 2.0 * w * v[k]);
        }
        SparseMatrix A(2 * N + 1, 2 * N + 1);
        A.setFromTriplets(t.begin(), t.end());
        A.makeCompressed();
        Eigen::SparseLU<SparseMatrix> lu(A);
        CCFOLD_THROW_IF(lu.info() != Eigen::Success, ErrorCode::AugmentedSingularity,
                        "augmented Jacobian is singular at lambda = " + fmt_num(lambda));
        const Eigen::VectorXd step = lu.solve(-r);
        CCFOLD_THROW_IF(!step.allFinite(), ErrorCode::AugmentedSingularity,
                        "augmented Newton step is not finite");

        double alpha = 1.0;
        bool accepted = false;
        const double alpha_min = converged ? 1.0 : 1.0 / 1024.0;
        while (alpha >= alpha_min) {
            StateVector ut(p.m, u.flat() + alpha * step.head(N));
            if (cone_membership(g, ut, converged ? 0.0 : floor) && cone_membership(g, ut, 0.0)) {
                const Eigen::VectorXd vt = v + alpha * step.segment(N, N);
                const double lt = lambda + alpha * step[2 * N];
                const Eigen::VectorXd rt = residuals(ut, vt, lt);
                if (rt.allFinite() && merit(rt) < merit(r)) {
                    u = std::move(ut);
                    v = vt;
                    lambda = lt;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if (converged) {
            if (!accepted) break;
            ++polished;
            continue;
        }
        CCFOLD_THROW_IF(!accepted, ErrorCode::ConeExit,
                        "no Moore-Spence step keeps u in the cone with decreasing residual");
    }

    FoldPoint f;
    detail::sign_fix_max_abs(v);
    f.lambda_star = lambda;
    f.residual_F = std::sqrt(w) * r.head(N).norm();
    f.residual_Fv = std::sqrt(w) * r.segment(N, N).norm();
    f.normalization_error = std::abs(w * v.squaredNorm() - 1.0);
    const LinearOperator J = assemble_jacobian(p, g, u, lambda);
    f.lambda1_sym = smallest_eigenpair(J, g, o.eig).lambda1;
    f.lambda1_principal = principal_eigenpair(J, g, o.eig).lambda1;
    f.smallest_singular_value = smallest_singular_value(J.matrix);
    f.iterations = it;
    f.state = std::move(u);
    f.null_vector = StateVector(p.m, std::move(v));
    return f;
}

// -- minimax estimate -------------------------------------------------------------

struct MinimaxReport {
    double lambda_s = -std::numeric_limits<double>::infinity();  // max over W_s members
    double lambda_as = -std::numeric_limits<double>::infinity(); // max over W_as members
    std::size_t members_s = 0, members_as = 0;
    std::size_t argmax_s = 0;
    /// max |lambda_j - lambda_{j+-1}| around argmax_s.
    double local_step = 0.0;
    std::optional<double> fold_lambda;
    double gap_s = 0.0, gap_as = 0.0; // fold - estimate, when a fold is given
    bool truncated = false;           // last point of the branch is still stable
};

/// Probes every W_s member of the branch; each must come back Constant.
inline MinimaxReport lambda_star_minimax(const ProblemSpec& p, const Grid& g, const Branch& br,
                                         std::optional<double> fold_lambda = std::nullopt,
                                         const ProbeOptions& probe = {}, double tol = -1.0)
{
    MinimaxReport r;
    r.fold_lambda = fold_lambda;
    bool last_member = false;
    for (std::size_t k = 0; k < br.points.size(); ++k) {
        const BranchPoint& b = br.points[k];
        const Membership mem = membership_Ws(p, g, b.state, tol);
        last_member = mem.member;
        if (!mem.member) continue;
        ProbeOptions po = probe;
        po.keep_states = false;
        const InfProbeResult pr = inner_inf_probe(p, g, b.state, po);
        CCFOLD_THROW_IF(pr.kind != ProbeKind::Constant, ErrorCode::ProbeInconclusive,
                        "stable branch point " + std::to_string(k) + " is not certified Constant");
        ++r.members_s;
        if (pr.value > r.lambda_s) {
            r.lambda_s = pr.value;
            r.argmax_s = k;
        }
        if (mem.strict) {
            ++r.members_as;
            r.lambda_as = std::max(r.lambda_as, pr.value);
        }
    }
    r.truncated = last_member;
    if (r.members_s > 0) {
        const auto& P = br.points;
        const std::size_t j = r.argmax_s;
        if (j > 0) r.local_step = std::max(r.local_step, std::abs(P[j].lambda - P[j - 1].lambda));
        if (j + 1 < P.size()) r.local_step = std::max(r.local_step, std::abs(P[j + 1].lambda - P[j].lambda));
    }
    if (fold_lambda) {
        r.gap_s = *fold_lambda - r.lambda_s;
        r.gap_as = *fold_lambda - r.lambda_as;
    }
    return r;
}

// -- nonexistence probe -----------------------------------------------------------

struct SeedOutcome {
    std::string seed_kind; // "scaled-baseline" or "branch"
    double seed_scale = 0.0;
    bool converged = false;
    double lambda1 = 0.0;
    bool stable = false;
    std::string error; // error code when Newton failed
};

struct NonexistenceReport {
    double lambda = 0.0;
    std::vector<SeedOutcome> seeds;
    std::size_t converged = 0;
    std::size_t stable_found = 0;
    /// Set when a stable solution was found; above the fold that contradicts
    /// the theory (grid artifact or bug). Below it this is the expected outcome.
    bool falsified = false;
};

/// Newton from `seeds` cone states at `lambda`: scaled baselines on a
/// geometric ladder and, when a branch is supplied, branch states spread along it.
inline NonexistenceReport nonexistence_probe(const ProblemSpec& p, const Grid& g, double lambda, int seeds,
                                             const StateVector& baseline, const Branch* br = nullptr,
                                             std::uint64_t rng_seed = 1, double tol = -1.0)
{
    NonexistenceReport rep;
    rep.lambda = lambda;
    if (seeds <= 0) return rep;
    if (tol < 0.0) tol = default_stability_tol(g);
    Uniform rng(rng_seed);
    const std::size_t nb = br ? br->points.size() : 0;
    for (int k = 0; k < seeds; ++k) {
        SeedOutcome o;
        StateVector seed;
        if (nb > 0 && k % 2 == 1) {
            const std::size_t idx = static_cast<std::size_t>((k / 2) * nb / std::max(1, seeds / 2)) % nb;
            o.seed_kind = "branch";
            o.seed_scale = static_cast<double>(idx);
            seed = br->points[idx].state;
        } else {
            // scales 10^[-0.5, 1.5] with a jitter so no two seeds coincide
            const double e = -0.5 + 2.0 * (k + rng(0.0, 1.0)) / seeds;
            o.seed_kind = "scaled-baseline";
            o.seed_scale = std::pow(10.0, e);
            seed = StateVector(p.m, o.seed_scale * baseline.flat());
        }
        try {
            const NewtonResult nr = newton_solve(p, g, seed, lambda);
            o.converged = true;
            o.lambda1 = smallest_eigenpair(assemble_jacobian(p, g, nr.state, lambda), g).lambda1;
            o.stable = o.lambda1 >= -tol;
            ++rep.converged;
            if (o.stable) ++rep.stable_found;
        } catch (const Error& err) {
            o.error = to_string(err.code());
        }
        rep.seeds.push_back(std::move(o));
    }
    rep.falsified = rep.stable_found > 0;
    return rep;
}

// -- stable sequence --------------------------------------------------------------

struct SequenceRow {
    double lambda = 0.0;
    double distance = 0.0; // |u_n - u*| in the Dirichlet norm
    double lambda1 = 0.0;
};

struct StableSequenceReport {
    std::vector<SequenceRow> rows; // pre-fold, asymptotically stable, in branch order
    std::size_t tail = 10;
    bool distance_decreasing = true; // over the tail
    bool lambda1_decreasing = true;
    double fold_lambda1 = 0.0;
};

/// Asymptotically stable points before the first fold marker, with their
/// distance to the fold state.
inline StableSequenceReport stable_sequence_extract(const ProblemSpec& p, const Grid& g, const Branch& br,
                                                    const FoldPoint& fold, std::size_t tail = 10)
{
    StableSequenceReport rep;
    rep.tail = tail;
    rep.fold_lambda1 = fold.lambda1_sym;
    const std::size_t end = br.fold_markers.empty() ? 0 : br.fold_markers.front();
    for (std::size_t k = 0; k < end; ++k) {
        const BranchPoint& b = br.points[k];
        if (b.stability.kind != Stability::AsymptoticallyStable) continue;
        const StateVector diff(p.m, b.state.flat() - fold.state.flat());
        rep.rows.push_back({b.lambda, std::sqrt(h1_pairing(g, diff, diff)), b.lambda1});
    }
    CCFOLD_THROW_IF(rep.rows.size() < 5, ErrorCode::InsufficientPoints,
                    "only " + std::to_string(rep.rows.size()) +
                        " asymptotically stable points precede the fold (need 5)");
    const std::size_t from = rep.rows.size() > tail ? rep.rows.size() - tail : 0;
    for (std::size_t k = from + 1; k < rep.rows.size(); ++k) {
        if (!(rep.rows[k].distance < rep.rows[k - 1].distance)) rep.distance_decreasing = false;
        if (!(rep.rows[k].lambda1 < rep.rows[k - 1].lambda1)) rep.lambda1_decreasing = false;
    }
    return rep;
}

// -- invariant suite ----------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool pass = true;
    double worst = 0.0; // worst normalized violation (<= 1 passes) or raw value
    std::string detail;
};

struct VerifyReport {
    std::vector<CheckResult> checks;
    [[nodiscard]] bool pass() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
    }
};

namespace detail {

struct IdentityTerms {
    double h1 = 0.0;        // sum_i int |grad u_i|^2
    double concave = 0.0;   // sum_i int a_i u_i^{q_i+1}
    double concave_q = 0.0; // sum_i q_i int a_i u_i^{q_i+1}
    double concave_1q = 0.0;// sum_i (1 - q_i) int a_i u_i^{q_i+1}
    double g_u = 0.0;       // sum_i int g_i u_i
    double g_diag = 0.0;    // sum_i int g_{i,u_i} u_i^2
    double l2 = 0.0;        // |u|
    double magnitude = 0.0; // sum of absolute term sizes, for rounding allowance
};

inline IdentityTerms identity_terms(const ProblemSpec& p, const Grid& g, const StateVector& u, double lambda)
{
    IdentityTerms t;
    const StateVector gs = eval_g(p, u);
    const JacobianFields J = eval_g_jacobian(p, u);
    t.h1 = h1_pairing(g, u, u);
    for (int i = 0; i < p.m; ++i) {
        const double qi = p.q[static_cast<std::size_t>(i)];
        const GridField ui = u.comp(i);
        const double c =
            integrate(g, p.a[static_cast<std::size_t>(i)].cwiseProduct(
                             ui.unaryExpr([qi](double x) { return std::pow(x, qi + 1.0); })));
        t.concave += c;
        t.concave_q += qi * c;
        t.concave_1q += (1.0 - qi) * c;
        t.g_u += integrate(g, GridField(gs.comp(i).cwiseProduct(ui)));
        t.g_diag += integrate(g, GridField(J(i, i).cwiseProduct(ui).cwiseProduct(ui)));
    }
    t.l2 = l2_norm(g, u.flat());
    t.magnitude = t.h1 + t.concave + std::abs(lambda) * (std::abs(t.g_u) + std::abs(t.g_diag));
    return t;
}

// bound = 10 residual |u| plus a rounding allowance on the summed terms
inline double identity_allowance(const IdentityTerms& t, double residual)
{
    return 10.0 * residual * t.l2 + 64.0 * std::numeric_limits<double>::epsilon() * t.magnitude;
}

} // namespace detail

struct VerifyOptions {
    double branch_tol = 1e-10;
    double barrier_tol = 1e-8;
    double stability_tol = -1.0;
};

/// The invariant suite over a stored branch; fold-dependent checks run when
/// a fold is supplied.
inline VerifyReport verify_branch(const ProblemSpec& p, const Grid& g, const Branch& br,
                                  const StateVector& baseline, const FoldPoint* fold = nullptr,
                                  const VerifyOptions& o = {})
{
    VerifyReport rep;
    const double stol = o.stability_tol < 0.0 ? default_stability_tol(g) : o.stability_tol;
    CheckResult res{"residual", true, 0.0, ""}, tag{"stability-tag", true, 0.0, ""},
        nrm{"norms", true, 0.0, ""}, id12{"integral-identity", true, 0.0, ""},
        st14{"stability-inequality", true, 0.0, ""}, en16{"energy-bound", true, 0.0, ""},
        bar{"barrier", true, 0.0, ""}, arc{"arclength-increasing", true, 0.0, ""};
    for (std::size_t k = 0; k < br.points.size(); ++k) {
        const BranchPoint& b = br.points[k];
        const double r = assemble_residual(p, g, b.state, b.lambda).norm;
        res.worst = std::max(res.worst, r / o.branch_tol);
        if (tag_from_lambda1(b.lambda1, stol).kind != b.stability.kind) tag.pass = false;
        const BranchNorms bn = branch_norms(p, g, b.state);
        const double dn = std::max({std::abs(bn.h1 - b.norms.h1) / std::max(bn.h1, 1e-300),
                                    std::abs(bn.lgamma0 - b.norms.lgamma0) / std::max(bn.lgamma0, 1e-300),
                                    std::abs(bn.lgamma - b.norms.lgamma) / std::max(bn.lgamma, 1e-300)});
        nrm.worst = std::max(nrm.worst, dn);
        if (k > 0 && !(b.arclength > br.points[k - 1].arclength)) arc.pass = false;

        const auto t = detail::identity_terms(p, g, b.state, b.lambda);
        const double allow = detail::identity_allowance(t, r);
        const double e12 = std::abs(t.h1 - t.concave - b.lambda * t.g_u);
        id12.worst = std::max(id12.worst, e12 / allow);
        if (b.lambda1 >= 0.0) {
            // (F_u u, u) >= 0 with the cooperative off-diagonal part dropped
            const double q14 = t.h1 - t.concave_q - b.lambda * t.g_diag;
            st14.worst = std::max(st14.worst, std::max(0.0, -q14) / allow);
            // difference of the two: sum (1-q_i) int a u^{q+1} >= lambda sum int (g_{i,u_i} u_i^2 - g_i u_i)
            const double e16 = t.concave_1q - b.lambda * (t.g_diag - t.g_u);
            en16.worst = std::max(en16.worst, std::max(0.0, -e16) / allow);
        }
        if (b.lambda >= 0.0) {
            const ComparisonReport c = comparison_check(g, b.state, baseline, o.barrier_tol);
            bar.worst = std::max(bar.worst, c.worst_violation);
            if (!c.pass) bar.pass = false;
        }
    }
    res.pass = res.worst <= 1.0;
    nrm.pass = nrm.worst <= 1e-12;
    id12.pass = id12.worst <= 1.0;
    st14.pass = st14.worst <= 1.0;
    en16.pass = en16.worst <= 1.0;
    res.detail = "max residual / branch tol";
    id12.detail = st14.detail = en16.detail = "max violation / (10 residual |u| + rounding)";
    bar.detail = "max of w - u";
    for (auto* c : {&res, &tag, &nrm, &arc, &id12, &st14, &en16, &bar}) rep.checks.push_back(*c);

    if (fold) {
        const double ft = fold_tol(g);
        CheckResult cert{"fold-certificate", true, 0.0, ""};
        cert.worst = std::max(std::abs(fold->lambda1_sym), fold->smallest_singular_value) / ft;
        cert.pass = cert.worst <= 1.0 && fold->residual_F <= 1e-10 && fold->residual_Fv <= 1e-8;
        cert.detail = "max(|lambda1_sym|, sigma_min) / fold tol; gap to principal = " +
                      fmt_num(std::abs(fold->lambda1_principal - fold->lambda1_sym));
        rep.checks.push_back(cert);

        CheckResult mm{"minimax-agreement", true, 0.0, ""};
        try {
            const MinimaxReport m = lambda_star_minimax(p, g, br, fold->lambda_star);
            mm.worst = std::abs(m.gap_s) / std::max(2.0 * m.local_step, 1e-300);
            mm.pass = m.members_s > 0 && mm.worst <= 1.0 && m.lambda_as <= m.lambda_s + 1e-12;
            mm.detail = "|lambda* - lambda*_s| / (2 local step); lambda*_s = " + fmt_num(m.lambda_s) +
                        ", lambda*_as = " + fmt_num(m.lambda_as);
        } catch (const Error& e) {
            mm.pass = false;
            mm.detail = e.what();
        }
        rep.checks.push_back(mm);

        CheckResult seq{"stable-sequence", true, 0.0, ""};
        try {
            const StableSequenceReport s = stable_sequence_extract(p, g, br, *fold);
            seq.pass = s.distance_decreasing && s.lambda1_decreasing;
            seq.worst = static_cast<double>(s.rows.size());
            seq.detail = "pre-fold asymptotically stable points; tail of " + std::to_string(s.tail) +
                         " checked for decreasing distance and lambda_1";
        } catch (const Error& e) {
            seq.pass = false;
            seq.detail = e.what();
        }
        rep.checks.push_back(seq);
    }
    return rep;
}

} // namespace ccfold
