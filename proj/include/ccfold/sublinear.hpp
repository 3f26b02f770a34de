#pragma once

// The lambda = 0 problem -Lap w = a w^q, solved componentwise by monotone
// fixed-point iteration bracketed between a sub- and a supersolution, plus
// the energy functional and the comparison barrier u >= w.

#include "ccfold/error.hpp"
#include "ccfold/mesh.hpp"
#include "ccfold/model.hpp"
#include "ccfold/operator.hpp"
#include "ccfold/spectral.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace ccfold {

struct FixedPointOptions {
    double tol = 1e-12;
    int max_iter = 2000;
    /// Iterations without a 10x residual reduction before declaring a stall.
    int stall_window = 50;
    /// Optional starting field for the lower iterate; must be >= 0 and not identically 0.
    std::optional<GridField> seed;
};

struct BrezisOswaldResult {
    GridField w;      // upper (decreasing) iterate
    GridField lower;  // lower (increasing) iterate
    int iterations = 0;
    double residual = 0.0;
    double bracket_width = 0.0; // max |upper - lower|
    bool monotone = true;       // lower <= upper at every step
    std::vector<double> energy; // energy of the upper iterates
};

/// Raised when the fixed point stops making progress; carries the last iterate.
class StallError : public Error {
public:
    StallError(const std::string& what, GridField last)
        : Error(ErrorCode::Stall, what), last_(std::move(last))
    {
    }
    [[nodiscard]] const GridField& last_iterate() const noexcept { return last_; }

private:
    GridField last_;
};

inline double scalar_energy(const Grid& g, const GridField& v, const GridField& a, double q)
{
    const double grad = 0.5 * inner_h1(g, v, v);
    const double pot =
        integrate(g, a.cwiseProduct(v.cwiseAbs().unaryExpr([q](double x) { return std::pow(x, q + 1.0); })));
    return grad - pot / (q + 1.0);
}

/// E(v) = 1/2 sum_i int |grad v_i|^2 - sum_i 1/(q_i+1) int a_i |v_i|^{q_i+1}.
inline double energy(const ProblemSpec& p, const Grid& g, const StateVector& v)
{
    double e = 0.0;
    for (int i = 0; i < p.m; ++i)
        e += scalar_energy(g, v.comp(i), p.a[static_cast<std::size_t>(i)],
                           p.q[static_cast<std::size_t>(i)]);
    return e;
}

inline BrezisOswaldResult solve_brezis_oswald(const ProblemSpec& p, const Grid& g, int i,
                                              const FixedPointOptions& opts = {})
{
    CCFOLD_THROW_IF(i < 0 || i >= p.m, ErrorCode::ShapeError, "component index out of range");
    const double q = p.q[static_cast<std::size_t>(i)];
    CCFOLD_THROW_IF(!(q > 0.0 && q < 1.0), ErrorCode::InvalidExponent,
                    "q_i must lie in (0,1), got " + fmt_num(q));
    const GridField& a = p.a[static_cast<std::size_t>(i)];
    CCFOLD_THROW_IF(a.size() != g.size() || !(a.minCoeff() > 0.0), ErrorCode::InvariantViolation,
                    "a_i must be > 0 on the grid");

    const SparseMatrix& K = g.stencil();
    Eigen::SimplicialLDLT<SparseMatrix> solver(K);
    CCFOLD_THROW_IF(solver.info() != Eigen::Success, ErrorCode::SingularJacobian,
                    "stencil factorization failed");
    auto power = [q](const GridField& w) {
        return w.unaryExpr([q](double x) { return std::pow(std::max(x, 0.0), q); });
    };
    auto residual = [&](const GridField& w) {
        return std::sqrt(g.weight()) * (K * w - a.cwiseProduct(power(w))).norm();
    };

    // Subsolution eps*d: needs eps^{1-q} K d <= a d^q wherever K d > 0.
    const GridField& d = g.distance();
    GridField lower;
    if (opts.seed) {
        CCFOLD_THROW_IF(opts.seed->size() != g.size(), ErrorCode::ShapeError, "seed size mismatch");
        CCFOLD_THROW_IF(!(opts.seed->minCoeff() >= 0.0) || !(opts.seed->maxCoeff() > 0.0),
                        ErrorCode::InvalidSeed,
                        "seed must be nonnegative and not identically zero (0 is the trivial fixed point)");
        lower = *opts.seed;
    } else {
        const GridField Kd = K * d;
        double ratio = std::numeric_limits<double>::infinity();
        for (Index k = 0; k < g.size(); ++k)
            if (Kd[k] > 0.0) ratio = std::min(ratio, a[k] * std::pow(d[k], q) / Kd[k]);
        const double eps = std::isfinite(ratio) ? 0.5 * std::pow(ratio, 1.0 / (1.0 - q)) : 1.0;
        lower = eps * d;
    }

    // Supersolution c*z with K z = a: needs c^{1-q} >= z^q.
    const GridField z = solver.solve(a);
    double c = std::max(1.0, std::pow(z.maxCoeff(), q / (1.0 - q)));
    GridField upper = c * z;
    for (int guard = 0; guard < 60; ++guard) {
        const GridField defect = K * upper - a.cwiseProduct(power(upper));
        if (defect.minCoeff() >= -1e-12 * a.maxCoeff() && (upper - lower).minCoeff() >= 0.0) break;
        c *= 2.0;
        upper = c * z;
    }

    BrezisOswaldResult r;
    double best = residual(upper);
    int since_best = 0;
    r.energy.push_back(scalar_energy(g, upper, a, q));
    for (int it = 1; it <= opts.max_iter; ++it) {
        // rhs evaluated first: solve() writes into its destination while reading
        const GridField ru = a.cwiseProduct(power(upper)), rl = a.cwiseProduct(power(lower));
        upper = solver.solve(ru);
        lower = solver.solve(rl);
        r.iterations = it;
        r.energy.push_back(scalar_energy(g, upper, a, q));
        if ((upper - lower).minCoeff() < -1e-13 * upper.maxCoeff()) r.monotone = false;
        const double res = residual(upper);
        const double width = (upper - lower).cwiseAbs().maxCoeff();
        if (res <= opts.tol && width <= std::max(1e-10, 1e3 * opts.tol) * upper.maxCoeff()) {
            r.w = upper;
            r.lower = lower;
            r.residual = res;
            r.bracket_width = width;
            return r;
        }
        if (res < 0.1 * best) {
            best = res;
            since_best = 0;
        } else if (++since_best >= opts.stall_window && res > opts.tol) {
            throw StallError("fixed-point residual plateaued at " + fmt_num(res), upper);
        }
    }
    throw StallError("fixed point did not converge in " + std::to_string(opts.max_iter) +
                         " iterations",
                     upper);
}

struct BaselineReport {
    double lambda1 = 0.0;       // lambda_1(F_u(w, 0))
    double lambda1_tol = 0.0;
    bool stable = true;         // lambda1 >= -tol
    double delta_bar = 0.0;     // min_i min_x w_i / d
    std::vector<double> residuals;
    std::vector<int> iterations;
};

struct BaselineResult {
    StateVector w;
    BaselineReport report;
};

inline BaselineResult baseline_state(const ProblemSpec& p, const Grid& g,
                                     const FixedPointOptions& opts = {},
                                     const EigenOptions& eig = {})
{
    BaselineResult out{StateVector(p.m, g.size()), {}};
    for (int i = 0; i < p.m; ++i) {
        const BrezisOswaldResult r = solve_brezis_oswald(p, g, i, opts);
        out.w.comp(i) = r.w;
        out.report.residuals.push_back(r.residual);
        out.report.iterations.push_back(r.iterations);
    }
    // The components decouple at lambda = 0; Newton polishes the Picard limit
    // down to the rounding floor.
    NewtonOptions polish;
    polish.tol = std::numeric_limits<double>::infinity();
    polish.polish_steps = 3;
    out.w = newton_solve(p, g, out.w, 0.0, polish).state;
    out.report.residuals.assign(static_cast<std::size_t>(p.m), 0.0);
    for (int i = 0; i < p.m; ++i) {
        const GridField& a = p.a[static_cast<std::size_t>(i)];
        const double q = p.q[static_cast<std::size_t>(i)];
        const GridField wi = out.w.comp(i);
        out.report.residuals[static_cast<std::size_t>(i)] =
            std::sqrt(g.weight()) *
            (g.stencil() * wi - a.cwiseProduct(wi.unaryExpr([q](double x) { return std::pow(x, q); }))).norm();
    }
    out.report.lambda1 = smallest_eigenpair(assemble_jacobian(p, g, out.w, 0.0), g, eig).lambda1;
    out.report.lambda1_tol = 1e-8 * (1.0 + g.stencil_lambda1());
    out.report.stable = out.report.lambda1 >= -out.report.lambda1_tol;
    out.report.delta_bar = cone_parameter(g, out.w);
    return out;
}

struct ComparisonReport {
    bool pass = true;
    double min_margin = 0.0;      // min over nodes/components of s - w
    double worst_violation = 0.0; // max(0, max of w - s)
    double tol = 0.0;
};

/// Barrier u_i >= w_i - tol at every node.
inline ComparisonReport comparison_check(const Grid& g, const StateVector& s, const StateVector& w,
                                         double tol = 1e-8)
{
    CCFOLD_THROW_IF(s.flat().size() != w.flat().size() || s.nodes() != g.size(),
                    ErrorCode::ShapeError, "states must share the grid");
    ComparisonReport r;
    r.tol = tol;
    r.min_margin = (s.flat() - w.flat()).minCoeff();
    r.worst_violation = std::max(0.0, -r.min_margin);
    r.pass = r.min_margin >= -tol;
    return r;
}

} // namespace ccfold
