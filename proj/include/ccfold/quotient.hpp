#pragma once

// The extended Rayleigh quotient
//
//   R(u, v) = [ sum_i int grad u_i . grad v_i - int a_i u_i^q v_i ] / sum_i int g_i(x,u) v_i
//
// with its first derivatives in v and u, the dichotomy probe for the inner
// infimum over v, a descent-based minimizing-sequence diagnostic and the
// residual bookkeeping for (lambda = R, R_v = 0, R_u = 0) <=> (F = 0, F_u v = 0).

#include "ccfold/error.hpp"
#include "ccfold/mesh.hpp"
#include "ccfold/model.hpp"
#include "ccfold/operator.hpp"
#include "ccfold/random.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace ccfold {

/// Admissibility floor for |denominator|, relative to ||g(u)|| ||v||; scale
/// invariant, since small solutions give small but legitimate pairings.
inline constexpr double kDenominatorEps = 1e-10;

struct QuotientValue {
    double value = 0.0;
    double numerator = 0.0;
    double denominator = 0.0;
};

/// A linear functional on states, held as its Riesz representative in the
/// lumped L2 pairing.
struct Functional {
    StateVector riesz;
    double norm = 0.0;
};

namespace detail {

struct QuotientParts {
    Eigen::VectorXd r0; // K u - a u^q, the numerator's Riesz representative
    StateVector g;      // g(x, u)
};

inline QuotientParts quotient_parts(const ProblemSpec& p, const Grid& grid, const StateVector& s)
{
    require_state_on(grid, p, s);
    require_open_cone(s);
    return {apply_stencil(grid, s) - concave_term(p, s).flat(), eval_g(p, s)};
}

inline double checked_denominator(const Grid& grid, const QuotientParts& parts,
                                  const StateVector& v)
{
    const double den = pairing(grid, parts.g, v);
    const double scale = l2_norm(grid, parts.g.flat()) * l2_norm(grid, v.flat());
    CCFOLD_THROW_IF(!(std::abs(den) >= kDenominatorEps * scale) || den == 0.0, ErrorCode::DenominatorDegenerate,
                    "int g(x,u) v vanishes: v is outside Sigma(u)");
    return den;
}

} // namespace detail

inline QuotientValue rayleigh_extended(const ProblemSpec& p, const Grid& grid, const StateVector& s,
                                       const StateVector& v)
{
    const auto parts = detail::quotient_parts(p, grid, s);
    CCFOLD_THROW_IF(v.flat().size() != s.flat().size(), ErrorCode::ShapeError,
                    "test state does not match the state shape");
    const double den = detail::checked_denominator(grid, parts, v);
    const double num = grid.weight() * parts.r0.dot(v.flat());
    return {num / den, num, den};
}

/// xi -> [<K u - a u^q, xi> - R(u,v) <g(u), xi>] / <g(u), v>.
inline Functional quotient_grad_v(const ProblemSpec& p, const Grid& grid, const StateVector& s,
                                  const StateVector& v)
{
    const auto parts = detail::quotient_parts(p, grid, s);
    const double den = detail::checked_denominator(grid, parts, v);
    const double R = grid.weight() * parts.r0.dot(v.flat()) / den;
    Functional f{StateVector(p.m, (parts.r0 - R * parts.g.flat()) / den), 0.0};
    f.norm = l2_norm(grid, f.riesz.flat());
    return f;
}

/// (g_u)^T v, i.e. component j holds sum_i g_{i,u_j} v_i.
inline Eigen::VectorXd g_jacobian_transpose_apply(const ProblemSpec& p, const StateVector& s,
                                                  const StateVector& v)
{
    const JacobianFields J = eval_g_jacobian(p, s);
    StateVector out(p.m, s.nodes());
    for (int j = 0; j < p.m; ++j)
        for (int i = 0; i < p.m; ++i) out.comp(j) += J(i, j).cwiseProduct(v.comp(i));
    return out.flat();
}

inline Eigen::VectorXd g_jacobian_apply(const ProblemSpec& p, const StateVector& s,
                                        const StateVector& v)
{
    const JacobianFields J = eval_g_jacobian(p, s);
    StateVector out(p.m, s.nodes());
    for (int i = 0; i < p.m; ++i)
        for (int j = 0; j < p.m; ++j) out.comp(i) += J(i, j).cwiseProduct(v.comp(j));
    return out.flat();
}

/// xi -> [<K v, xi> - <q a u^{q-1} v, xi> - R(u,v) <(g_u)^T v, xi>] / <g(u), v>,
/// which is F_u(u, R)^T v divided by the denominator.
inline Functional quotient_grad_u(const ProblemSpec& p, const Grid& grid, const StateVector& s,
                                  const StateVector& v)
{
    const auto parts = detail::quotient_parts(p, grid, s);
    const double den = detail::checked_denominator(grid, parts, v);
    const double R = grid.weight() * parts.r0.dot(v.flat()) / den;
    StateVector lin(p.m, s.nodes());
    for (int i = 0; i < p.m; ++i) {
        const double qi = p.q[static_cast<std::size_t>(i)];
        lin.comp(i) = grid.stencil() * v.comp(i) -
                      (qi * p.a[static_cast<std::size_t>(i)].cwiseProduct(s.comp(i).unaryExpr(
                                [qi](double u) { return std::pow(u, qi - 1.0); })))
                          .cwiseProduct(v.comp(i));
    }
    Functional f{StateVector(p.m, (lin.flat() - R * g_jacobian_transpose_apply(p, s, v)) / den),
                 0.0};
    f.norm = l2_norm(grid, f.riesz.flat());
    return f;
}

// -- inner infimum probe ------------------------------------------------------

enum class ProbeKind { Constant, UnboundedBelow };

struct ProbeSample {
    StateVector v;
    double value = 0.0;
};

struct InfProbeResult {
    ProbeKind kind = ProbeKind::Constant;
    double value = 0.0;  // lambda_0 when Constant, last sampled R when UnboundedBelow
    double spread = 0.0; // max - min of sampled R when Constant
    double residual = 0.0; // ||F(u, R(u,u))||
    std::vector<ProbeSample> certificate;
};

struct ProbeOptions {
    int trials = 100;
    double residual_tol = 1e-8;
    double spread_tol = 1e-8;
    double unbounded_level = 1e6;
    std::uint64_t seed = 1;
    bool keep_states = true; // store v in the certificate
};

/// Random strictly positive test state, entries in [0.1, 1].
inline StateVector random_positive_state(int m, Index n, Uniform& rng)
{
    StateVector v(m, n);
    for (Index k = 0; k < v.flat().size(); ++k) v.flat()[k] = rng(0.1, 1.0);
    return v;
}

/// Certifies one side of the dichotomy for inf_v R(u, v): either u solves the
/// problem at lambda_0 = R(u,u) and R(u, .) is constant, or R(u, .) is driven
/// below -unbounded_level along v_t = g(u) - t e, e being the part of the
/// numerator representative orthogonal to g(u).
inline InfProbeResult inner_inf_probe(const ProblemSpec& p, const Grid& grid, const StateVector& s,
                                      const ProbeOptions& opts = {})
{
    const auto parts = detail::quotient_parts(p, grid, s);
    const QuotientValue self = rayleigh_extended(p, grid, s, s);
    InfProbeResult out;
    out.residual =
        l2_norm(grid, parts.r0 - self.value * parts.g.flat());

    if (out.residual <= opts.residual_tol) {
        out.kind = ProbeKind::Constant;
        Uniform rng(opts.seed);
        double lo = self.value, hi = self.value;
        for (int t = 0; t < opts.trials; ++t) {
            StateVector v = random_positive_state(p.m, s.nodes(), rng);
            const double R = rayleigh_extended(p, grid, s, v).value;
            lo = std::min(lo, R);
            hi = std::max(hi, R);
            out.certificate.push_back({opts.keep_states ? std::move(v) : StateVector{}, R});
        }
        out.spread = hi - lo;
        out.value = self.value;
        CCFOLD_THROW_IF(out.spread > opts.spread_tol, ErrorCode::ProbeInconclusive,
                        "residual is below tolerance but R(u, .) spreads by " +
                            fmt_num(out.spread));
        return out;
    }

    out.kind = ProbeKind::UnboundedBelow;
    const Eigen::VectorXd& gg = parts.g.flat();
    const double gg2 = gg.squaredNorm();
    CCFOLD_THROW_IF(!(gg2 > 0.0), ErrorCode::DenominatorDegenerate,
                    "g(x,u) vanishes identically; Sigma(u) is empty");
    const Eigen::VectorXd e = parts.r0 - (parts.r0.dot(gg) / gg2) * gg;
    CCFOLD_THROW_IF(!(e.squaredNorm() > 0.0), ErrorCode::ProbeInconclusive,
                    "numerator is parallel to g(u) yet the residual exceeds tolerance");
    // On v_t = g - t e the quotient is R(s, g) - t |e|^2 / |g|^2, so t0 below
    // lowers it by about max(1, |R(s, g)|) per decade and the certificate
    // records the descent rather than jumping straight past the level.
    const double r_g = parts.r0.dot(gg) / gg2;
    const double t0 = std::max(1.0, std::abs(r_g)) * gg2 / e.squaredNorm();
    double t = 0.0;
    double last = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 400; ++k, t = (k == 1) ? t0 : 10.0 * t) {
        StateVector v(p.m, gg - t * e);
        const double R = rayleigh_extended(p, grid, s, v).value;
        if (!(R < last)) continue;
        last = R;
        out.certificate.push_back({opts.keep_states ? std::move(v) : StateVector{}, R});
        if (R <= -opts.unbounded_level) {
            out.value = R;
            return out;
        }
    }
    throw Error(ErrorCode::ProbeInconclusive, "quotient did not fall below the unbounded level");
}

// -- minimizing sequence ------------------------------------------------------

struct MinimizingSequenceReport {
    std::vector<double> quotient;        // R(u, v_k)
    /// ||R_v(u, v_k)|| restricted to the slice: the component along g(u) is
    /// the multiplier of the constraint and grows with |R|, so it is dropped.
    std::vector<double> grad_norm;
    std::vector<double> full_grad_norm;  // unrestricted ||R_v(u, v_k)||
    std::vector<double> envelope;        // sup_{j >= k} grad_norm_j
    bool vanishing = true;               // final envelope <= tol
    double tol = 0.0;
};

/// Steepest descent for v -> R(u, v) on the slice <g(u), v> = 1, starting from
/// the normalized u. Each step moves v by step_fraction * ||v_0||.
inline MinimizingSequenceReport minimizing_sequence_test(const ProblemSpec& p, const Grid& grid,
                                                         const StateVector& s, int k_max,
                                                         double tol = 1e-6,
                                                         double step_fraction = 0.1)
{
    MinimizingSequenceReport rep;
    rep.tol = tol;
    if (k_max <= 0) return rep;
    const auto parts = detail::quotient_parts(p, grid, s);
    const Eigen::VectorXd& gg = parts.g.flat();
    const double den0 = pairing(grid, parts.g, s);
    CCFOLD_THROW_IF(!(std::abs(den0) > 0.0), ErrorCode::DenominatorDegenerate,
                    "cannot normalize <g(u), v> = 1");
    StateVector v(p.m, s.flat() / den0);
    const double v0_norm = l2_norm(grid, v.flat());
    // tangential descent direction is fixed: R is linear on the slice
    const double gg2 = gg.squaredNorm();
    Eigen::VectorXd dir = parts.r0 - (parts.r0.dot(gg) / gg2) * gg;
    dir -= (dir.dot(gg) / gg2) * gg; // second pass: dir is tiny near solutions
    const double dnorm = l2_norm(grid, dir);
    const double alpha = dnorm > 0.0 ? step_fraction * v0_norm / dnorm : 0.0;
    for (int k = 0; k < k_max; ++k) {
        // pull rounding drift back onto the slice
        v.flat() += ((1.0 - pairing(grid, parts.g, v)) / (grid.weight() * gg2)) * gg;
        const double den = pairing(grid, parts.g, v);
        CCFOLD_THROW_IF(std::abs(den - 1.0) > 1e-8, ErrorCode::DenominatorDegenerate,
                        "normalization <g(u), v> = 1 lost");
        const Functional gv = quotient_grad_v(p, grid, s, v);
        rep.quotient.push_back(rayleigh_extended(p, grid, s, v).value);
        const Eigen::VectorXd& r = gv.riesz.flat();
        rep.grad_norm.push_back(l2_norm(grid, r - (r.dot(gg) / gg.squaredNorm()) * gg));
        rep.full_grad_norm.push_back(gv.norm);
        v.flat() -= alpha * dir;
    }
    rep.envelope.resize(rep.grad_norm.size());
    double run = 0.0;
    for (std::size_t k = rep.grad_norm.size(); k-- > 0;) {
        run = std::max(run, rep.grad_norm[k]);
        rep.envelope[k] = run;
    }
    rep.vanishing = rep.envelope.back() <= tol;
    return rep;
}

// -- criticality equivalence ----------------------------------------------------

struct EquivalenceReport {
    // left: quotient side
    double lambda_gap = 0.0; // |lambda - R(u,v)|
    double grad_v = 0.0;     // ||R_v(u,v)||
    double grad_u = 0.0;     // ||R_u(u,v)||
    // right: fold-system side
    double residual_F = 0.0;  // ||F(u, lambda)||
    double residual_Fv = 0.0; // ||F_u(u, lambda) v||
    /// ||(F_u - F_u^T) v||; zero for symmetric couplings.
    double asymmetry = 0.0;
    double denominator = 0.0;
    double K_right_from_left = 0.0;
    double K_left_from_right = 0.0;
    bool consistent = true; // both bounds hold

    [[nodiscard]] double left_max() const { return std::max({lambda_gap, grad_v, grad_u}); }
    [[nodiscard]] double right_max() const { return std::max(residual_F, residual_Fv); }
};

/// Computes both residual triples and the constants linking them:
///   right_max <= K_rl * left_max + asymmetry
///   left_max  <= K_lr * right_max + asymmetry / |den|.
inline EquivalenceReport criticality_equivalence_check(const ProblemSpec& p, const Grid& grid,
                                                       const StateVector& s, const StateVector& v,
                                                       double lambda)
{
    EquivalenceReport r;
    const QuotientValue R = rayleigh_extended(p, grid, s, v);
    r.denominator = R.denominator;
    r.lambda_gap = std::abs(lambda - R.value);
    r.grad_v = quotient_grad_v(p, grid, s, v).norm;
    r.grad_u = quotient_grad_u(p, grid, s, v).norm;
    r.residual_F = assemble_residual(p, grid, s, lambda).norm;
    const LinearOperator J = assemble_jacobian(p, grid, s, lambda);
    r.residual_Fv = l2_norm(grid, J.matrix * v.flat());
    const Eigen::VectorXd jt = g_jacobian_transpose_apply(p, s, v);
    const Eigen::VectorXd jv = g_jacobian_apply(p, s, v);
    r.asymmetry = std::abs(lambda) * l2_norm(grid, jv - jt);

    const double D = std::abs(R.denominator);
    const double gn = l2_norm(grid, eval_g(p, s).flat());
    const double vn = l2_norm(grid, v.flat());
    const double jtn = l2_norm(grid, jt);
    r.K_right_from_left = D + std::max(gn, jtn);
    r.K_left_from_right =
        std::max({vn / D, (1.0 + vn * gn / D) / D, (1.0 + vn * jtn / D) / D});
    const double slack = 1e-9;
    const double right_bound = r.K_right_from_left * r.left_max() + r.asymmetry;
    const double left_bound = r.K_left_from_right * r.right_max() + r.asymmetry / D;
    r.consistent = r.right_max() <= right_bound * (1.0 + slack) + 1e-13 &&
                   r.left_max() <= left_bound * (1.0 + slack) + 1e-13;
    return r;
}

} // namespace ccfold
