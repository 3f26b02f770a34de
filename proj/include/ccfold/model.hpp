#pragma once

// Problem definition for -Lap u_i = a_i u_i^{q_i} + lambda g_i(x, u):
// state vectors, the nonlinearity families with first and second
// derivatives, and sample-based checks of the growth/coercivity hypotheses.

#include "ccfold/error.hpp"
#include "ccfold/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace ccfold {

/// Relative slack for sampled inequality checks that can hold with equality.
inline constexpr double kRoundoff = 1e-12;

/// u = (u_1, ..., u_m) on a grid, stored component-major in one flat vector.
class StateVector {
public:
    StateVector() = default;
    StateVector(int m, Index nodes) : m_(m), nodes_(nodes), values_(Eigen::VectorXd::Zero(m * nodes))
    {
    }
    StateVector(int m, Eigen::VectorXd flat) : m_(m), values_(std::move(flat))
    {
        CCFOLD_THROW_IF(m <= 0 || values_.size() % m != 0, ErrorCode::ShapeError,
                        "flat state size is not a multiple of the component count");
        nodes_ = values_.size() / m;
    }
    [[nodiscard]] int components() const noexcept { return m_; }
    [[nodiscard]] Index nodes() const noexcept { return nodes_; }
    [[nodiscard]] auto comp(int i) { return values_.segment(static_cast<Index>(i) * nodes_, nodes_); }
    [[nodiscard]] auto comp(int i) const
    {
        return values_.segment(static_cast<Index>(i) * nodes_, nodes_);
    }
    [[nodiscard]] double operator()(int i, Index node) const { return values_[i * nodes_ + node]; }
    [[nodiscard]] const Eigen::VectorXd& flat() const noexcept { return values_; }
    [[nodiscard]] Eigen::VectorXd& flat() noexcept { return values_; }

    /// Replicates one field into all m components.
    static StateVector replicate(int m, const GridField& f)
    {
        StateVector s(m, f.size());
        for (int i = 0; i < m; ++i) s.values_.segment(static_cast<Index>(i) * f.size(), f.size()) = f;
        return s;
    }

private:
    int m_ = 0;
    Index nodes_ = 0;
    Eigen::VectorXd values_;
};

/// Integral of sum_i f_i g_i with the lumped node weights.
inline double pairing(const Grid& g, const StateVector& f1, const StateVector& f2)
{
    CCFOLD_THROW_IF(f1.flat().size() != f2.flat().size(), ErrorCode::ShapeError,
                    "state sizes differ");
    return g.weight() * f1.flat().dot(f2.flat());
}

inline double l2_norm(const Grid& g, const Eigen::VectorXd& flat)
{
    return std::sqrt(g.weight()) * flat.norm();
}

/// sum_i of the Dirichlet form of u_i with v_i.
inline double h1_pairing(const Grid& g, const StateVector& u, const StateVector& v)
{
    double s = 0.0;
    for (int i = 0; i < u.components(); ++i) s += inner_h1(g, u.comp(i), v.comp(i));
    return s;
}

// -- nonlinearity families --------------------------------------------------

/// g_i = b_i(x) u_i + b(x) sum_j |u_j|^{gamma-1} u_j.
struct PowerCoupled {
    std::vector<GridField> b_diag;
    GridField b;
};

/// m = 1, g = b(x) u^gamma.
struct ScalarPower {
    GridField b;
};

/// g_i = b(x) sum_j G_ij(u_j) with each G_ij a cubic Hermite interpolant of
/// tabulated values and slopes on knots t_0 = 0 < t_1 < ... ; linear
/// continuation with the last slope beyond the final knot.
struct CustomTable {
    std::vector<double> knots;
    /// values[i*m + j][k] = G_ij(t_k); slopes likewise.
    std::vector<std::vector<double>> values;
    std::vector<std::vector<double>> slopes;
    GridField b;
};

using NonlinearityFamily = std::variant<PowerCoupled, ScalarPower, CustomTable>;

inline std::string family_tag(const NonlinearityFamily& f)
{
    switch (f.index()) {
    case 0: return "power-coupled";
    case 1: return "scalar-power";
    default: return "custom-table";
    }
}

struct ProblemSpec {
    int m = 1;
    int space_dim = 1;
    std::vector<double> q;
    std::vector<GridField> a;
    NonlinearityFamily family;
    double gamma = 3.0;
    double gamma0 = 3.0;
    double c0 = 0.0, c1 = 0.0; // growth pair
    double c2 = 0.0, c3 = 0.0; // coercivity pair
};

namespace detail {

struct Hermite {
    double value, slope, curvature;
};

inline Hermite hermite_eval(const std::vector<double>& t, const std::vector<double>& val,
                            const std::vector<double>& slope, double x)
{
    const std::size_t nk = t.size();
    if (x >= t.back()) {
        const double dx = x - t.back();
        return {val.back() + slope.back() * dx, slope.back(), 0.0};
    }
    std::size_t k = 0;
    if (x > t.front()) {
        auto it = std::upper_bound(t.begin(), t.end(), x);
        k = static_cast<std::size_t>(it - t.begin()) - 1;
    }
    k = std::min(k, nk - 2);
    const double dt = t[k + 1] - t[k];
    const double s = (x - t[k]) / dt;
    const double y0 = val[k], y1 = val[k + 1];
    const double m0 = slope[k] * dt, m1 = slope[k + 1] * dt;
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2,
                 h11 = s3 - s2;
    const double d00 = 6 * s2 - 6 * s, d10 = 3 * s2 - 4 * s + 1, d01 = -6 * s2 + 6 * s,
                 d11 = 3 * s2 - 2 * s;
    const double e00 = 12 * s - 6, e10 = 6 * s - 4, e01 = -12 * s + 6, e11 = 6 * s - 2;
    return {h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1,
            (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / dt,
            (e00 * y0 + e10 * m0 + e01 * y1 + e11 * m1) / (dt * dt)};
}

// sign(u)|u|^p, total on the real line
inline double spow(double u, double p) { return std::copysign(std::pow(std::abs(u), p), u); }

inline void require_nonnegative(const StateVector& s)
{
    for (Index k = 0; k < s.flat().size(); ++k) {
        CCFOLD_THROW_IF(!(s.flat()[k] >= 0.0), ErrorCode::ConeViolation,
                        "state has a negative or non-finite entry at flat index " +
                            std::to_string(k));
    }
}

} // namespace detail

/// Raises invariant-violation for anything outside the admissible class.
inline void validate_spec(const ProblemSpec& p, const Grid& g)
{
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvariantViolation, msg); };
    if (p.m < 1) fail("m must be >= 1");
    if (p.space_dim < 1) fail("space_dim must be >= 1");
    if (static_cast<int>(p.q.size()) != p.m) fail("need one exponent q_i per component");
    for (double qi : p.q)
        if (!(qi > 0.0 && qi < 1.0)) fail("q_i must lie in (0,1), got " + fmt_num(qi));
    if (static_cast<int>(p.a.size()) != p.m) fail("need one coefficient field a_i per component");
    for (const auto& ai : p.a) {
        if (ai.size() != g.size()) fail("coefficient field a_i does not match the grid");
        if (!(ai.minCoeff() > 0.0) || !ai.allFinite()) fail("a_i(x) must be > 0 at every node");
    }
    if (!(p.gamma > 1.0)) fail("gamma must be > 1");
    if (!(p.gamma0 > 1.0 && p.gamma0 <= p.gamma)) fail("gamma0 must lie in (1, gamma]");

    auto check_b = [&](const GridField& b, const char* name) {
        if (b.size() != g.size()) fail(std::string(name) + " does not match the grid");
        if (!(b.minCoeff() >= 0.0) || !b.allFinite())
            fail(std::string(name) + " must be >= 0 (cooperative coupling)");
    };
    if (const auto* pc = std::get_if<PowerCoupled>(&p.family)) {
        if (static_cast<int>(pc->b_diag.size()) != p.m) fail("need one b_i field per component");
        for (const auto& bi : pc->b_diag) check_b(bi, "b_i");
        check_b(pc->b, "b");
    } else if (const auto* sp = std::get_if<ScalarPower>(&p.family)) {
        if (p.m != 1) fail("scalar-power family requires m = 1");
        check_b(sp->b, "b");
    } else {
        const auto& ct = std::get<CustomTable>(p.family);
        check_b(ct.b, "b");
        if (ct.knots.size() < 2) fail("custom table needs at least two knots");
        if (ct.knots.front() != 0.0) fail("custom table must start at t = 0");
        for (std::size_t k = 1; k < ct.knots.size(); ++k)
            if (!(ct.knots[k] > ct.knots[k - 1])) fail("custom table knots must increase");
        const std::size_t mm = static_cast<std::size_t>(p.m * p.m);
        if (ct.values.size() != mm || ct.slopes.size() != mm)
            fail("custom table needs m*m value and slope columns");
        for (std::size_t c = 0; c < mm; ++c) {
            if (ct.values[c].size() != ct.knots.size() || ct.slopes[c].size() != ct.knots.size())
                fail("custom table column length differs from knot count");
            if (ct.values[c].front() != 0.0) fail("custom table requires G_ij(0) = 0");
            for (double v : ct.values[c])
                if (!(v >= 0.0)) fail("custom table values must be >= 0");
            const bool off_diag = (c / p.m) != (c % p.m);
            if (off_diag)
                for (double d : ct.slopes[c])
                    if (!(d >= 0.0)) fail("custom table off-diagonal slopes must be >= 0");
        }
    }
}

struct TableConsistency {
    bool pass = true;
    double worst_mismatch = 0.0; // relative
};

/// Tabulated slopes against secants of the tabulated values: their mean on
/// each interval must match the secant to rel_tol.
inline TableConsistency check_table_consistency(const CustomTable& ct, double rel_tol = 1e-2)
{
    TableConsistency r;
    for (std::size_t c = 0; c < ct.values.size(); ++c) {
        double scale = 0.0;
        for (double d : ct.slopes[c]) scale = std::max(scale, std::abs(d));
        for (std::size_t k = 0; k + 1 < ct.knots.size(); ++k) {
            const double secant =
                (ct.values[c][k + 1] - ct.values[c][k]) / (ct.knots[k + 1] - ct.knots[k]);
            const double mean = 0.5 * (ct.slopes[c][k] + ct.slopes[c][k + 1]);
            const double rel = std::abs(mean - secant) / (scale + 1e-300);
            r.worst_mismatch = std::max(r.worst_mismatch, rel);
        }
    }
    r.pass = r.worst_mismatch <= rel_tol;
    return r;
}

/// m x m nodewise fields, entry (i, j) at index i*m + j.
struct JacobianFields {
    int m = 0;
    std::vector<GridField> entries;
    [[nodiscard]] const GridField& operator()(int i, int j) const
    {
        return entries[static_cast<std::size_t>(i * m + j)];
    }
    GridField& operator()(int i, int j) { return entries[static_cast<std::size_t>(i * m + j)]; }
};

/// g_i(x, u(x)) at every node. Requires u >= 0.
inline StateVector eval_g(const ProblemSpec& p, const StateVector& s)
{
    detail::require_nonnegative(s);
    const Index n = s.nodes();
    StateVector out(p.m, n);
    if (const auto* pc = std::get_if<PowerCoupled>(&p.family)) {
        GridField coupled = GridField::Zero(n);
        for (int j = 0; j < p.m; ++j)
            coupled += s.comp(j).unaryExpr([&](double u) { return detail::spow(u, p.gamma); });
        for (int i = 0; i < p.m; ++i)
            out.comp(i) = pc->b_diag[i].cwiseProduct(s.comp(i)) + pc->b.cwiseProduct(coupled);
    } else if (const auto* sp = std::get_if<ScalarPower>(&p.family)) {
        out.comp(0) =
            sp->b.cwiseProduct(s.comp(0).unaryExpr([&](double u) { return std::pow(u, p.gamma); }));
    } else {
        const auto& ct = std::get<CustomTable>(p.family);
        for (int i = 0; i < p.m; ++i) {
            GridField acc = GridField::Zero(n);
            for (int j = 0; j < p.m; ++j) {
                const auto& vals = ct.values[static_cast<std::size_t>(i * p.m + j)];
                const auto& sl = ct.slopes[static_cast<std::size_t>(i * p.m + j)];
                for (Index k = 0; k < n; ++k)
                    acc[k] += detail::hermite_eval(ct.knots, vals, sl, s(j, k)).value;
            }
            out.comp(i) = ct.b.cwiseProduct(acc);
        }
    }
    return out;
}

/// Nodewise d g_i / d u_j.
inline JacobianFields eval_g_jacobian(const ProblemSpec& p, const StateVector& s)
{
    detail::require_nonnegative(s);
    const Index n = s.nodes();
    JacobianFields J{p.m, std::vector<GridField>(static_cast<std::size_t>(p.m * p.m),
                                                 GridField::Zero(n))};
    if (const auto* pc = std::get_if<PowerCoupled>(&p.family)) {
        for (int j = 0; j < p.m; ++j) {
            const GridField dj = p.gamma * pc->b.cwiseProduct(s.comp(j).unaryExpr(
                                               [&](double u) { return std::pow(std::abs(u), p.gamma - 1.0); }));
            for (int i = 0; i < p.m; ++i) J(i, j) = dj;
        }
        for (int i = 0; i < p.m; ++i) J(i, i) += pc->b_diag[i];
    } else if (const auto* sp = std::get_if<ScalarPower>(&p.family)) {
        J(0, 0) = p.gamma * sp->b.cwiseProduct(s.comp(0).unaryExpr(
                                [&](double u) { return std::pow(u, p.gamma - 1.0); }));
    } else {
        const auto& ct = std::get<CustomTable>(p.family);
        for (int i = 0; i < p.m; ++i)
            for (int j = 0; j < p.m; ++j) {
                const auto& vals = ct.values[static_cast<std::size_t>(i * p.m + j)];
                const auto& sl = ct.slopes[static_cast<std::size_t>(i * p.m + j)];
                GridField& e = J(i, j);
                for (Index k = 0; k < n; ++k)
                    e[k] = ct.b[k] * detail::hermite_eval(ct.knots, vals, sl, s(j, k)).slope;
            }
    }
    return J;
}

/// Second derivative contracted with a direction v:
/// H(i, k) = sum_j d^2 g_i / (d u_j d u_k) v_j, nodewise.
inline JacobianFields eval_g_hessian_contract(const ProblemSpec& p, const StateVector& s,
                                              const StateVector& v)
{
    detail::require_nonnegative(s);
    const Index n = s.nodes();
    JacobianFields H{p.m, std::vector<GridField>(static_cast<std::size_t>(p.m * p.m),
                                                 GridField::Zero(n))};
    const double c = p.gamma * (p.gamma - 1.0);
    if (const auto* pc = std::get_if<PowerCoupled>(&p.family)) {
        for (int k = 0; k < p.m; ++k) {
            GridField e(n);
            for (Index x = 0; x < n; ++x)
                e[x] = c * pc->b[x] * detail::spow(s(k, x), p.gamma - 2.0) * v(k, x);
            for (int i = 0; i < p.m; ++i) H(i, k) = e;
        }
    } else if (const auto* sp = std::get_if<ScalarPower>(&p.family)) {
        for (Index x = 0; x < n; ++x)
            H(0, 0)[x] = c * sp->b[x] * std::pow(s(0, x), p.gamma - 2.0) * v(0, x);
    } else {
        const auto& ct = std::get<CustomTable>(p.family);
        for (int i = 0; i < p.m; ++i)
            for (int k = 0; k < p.m; ++k) {
                const auto& vals = ct.values[static_cast<std::size_t>(i * p.m + k)];
                const auto& sl = ct.slopes[static_cast<std::size_t>(i * p.m + k)];
                for (Index x = 0; x < n; ++x)
                    H(i, k)[x] = ct.b[x] *
                                 detail::hermite_eval(ct.knots, vals, sl, s(k, x)).curvature *
                                 v(k, x);
            }
    }
    return H;
}

// -- hypothesis checks --------------------------------------------------------

using Sample = std::vector<double>;

namespace detail {
inline StateVector constant_state(int m, Index n, const Sample& u)
{
    StateVector s(m, n);
    for (int i = 0; i < m; ++i) s.comp(i).setConstant(u[static_cast<std::size_t>(i)]);
    return s;
}
inline double euclid(const Sample& u)
{
    double s = 0.0;
    for (double x : u) s += x * x;
    return std::sqrt(s);
}
} // namespace detail

struct GrowthReport {
    bool pass = true;
    bool nonnegative = true;
    double worst_ratio = 0.0;
    std::size_t worst_sample = 0;
    Index worst_node = 0;
};

/// g_i / (c0 |u| + c1 |u|^gamma) over samples and nodes; verified on samples only.
inline GrowthReport check_growth_g1(const ProblemSpec& p, const Grid& g,
                                    const std::vector<Sample>& samples)
{
    GrowthReport r;
    for (std::size_t si = 0; si < samples.size(); ++si) {
        const auto& u = samples[si];
        CCFOLD_THROW_IF(static_cast<int>(u.size()) != p.m, ErrorCode::ShapeError,
                        "sample size must equal m");
        const StateVector gs = eval_g(p, detail::constant_state(p.m, g.size(), u));
        const double nu = detail::euclid(u);
        const double bound = p.c0 * nu + p.c1 * std::pow(nu, p.gamma);
        for (int i = 0; i < p.m; ++i) {
            for (Index k = 0; k < g.size(); ++k) {
                const double gi = gs(i, k);
                if (gi < 0.0) r.nonnegative = false;
                double ratio = 0.0;
                if (bound > 0.0) ratio = gi / bound;
                else if (gi > 0.0) ratio = std::numeric_limits<double>::infinity();
                if (ratio > r.worst_ratio) {
                    r.worst_ratio = ratio;
                    r.worst_sample = si;
                    r.worst_node = k;
                }
            }
        }
    }
    r.pass = r.nonnegative && r.worst_ratio <= 1.0 + kRoundoff;
    return r;
}

struct CoercivityReport {
    bool pass = true;           // summed over i
    bool pass_per_index = true; // each i on its own
    double worst_margin = std::numeric_limits<double>::infinity();
    double worst_margin_per_index = std::numeric_limits<double>::infinity();
    std::size_t worst_sample = 0;
};

/// sum_i (g_{i,u_i} u_i^2 - g_i u_i) >= c2 |u|^{gamma0+1} + c3 |u|^{gamma+1},
/// up to a relative rounding allowance (equality cases are legitimate).
inline CoercivityReport check_coercivity_g2(const ProblemSpec& p, const Grid& g,
                                            const std::vector<Sample>& samples)
{
    CoercivityReport r;
    for (std::size_t si = 0; si < samples.size(); ++si) {
        const auto& u = samples[si];
        CCFOLD_THROW_IF(static_cast<int>(u.size()) != p.m, ErrorCode::ShapeError,
                        "sample size must equal m");
        const StateVector s = detail::constant_state(p.m, g.size(), u);
        const StateVector gs = eval_g(p, s);
        const JacobianFields J = eval_g_jacobian(p, s);
        const double nu = detail::euclid(u);
        const double right = p.c2 * std::pow(nu, p.gamma0 + 1.0) + p.c3 * std::pow(nu, p.gamma + 1.0);
        for (Index k = 0; k < g.size(); ++k) {
            double left = 0.0;
            for (int i = 0; i < p.m; ++i) {
                const double ui = u[static_cast<std::size_t>(i)];
                const double term = J(i, i)[k] * ui * ui - gs(i, k) * ui;
                left += term;
                r.worst_margin_per_index = std::min(r.worst_margin_per_index, term - right);
                if (term - right < -kRoundoff * (std::abs(term) + right)) r.pass_per_index = false;
            }
            if (left - right < -kRoundoff * (std::abs(left) + right)) r.pass = false;
            if (left - right < r.worst_margin) {
                r.worst_margin = left - right;
                r.worst_sample = si;
            }
        }
    }
    if (samples.empty()) r.worst_margin = r.worst_margin_per_index = 0.0;
    return r;
}

struct HypothesisReport {
    int space_dim = 1;
    std::optional<double> critical_exponent; // 2* ; empty means +infinity
    std::optional<double> q_bound;           // 2/(d-2); empty means no restriction
    bool gamma_subcritical = true;
    std::vector<bool> q_admissible;
    [[nodiscard]] bool pass() const
    {
        if (!gamma_subcritical) return false;
        for (bool b : q_admissible)
            if (!b) return false;
        return true;
    }
};

/// Exponent restrictions needed for a positive fold value with stable fold state.
inline HypothesisReport check_fold_hypotheses(const ProblemSpec& p)
{
    HypothesisReport r;
    r.space_dim = p.space_dim;
    r.q_admissible.assign(p.q.size(), true);
    if (p.space_dim <= 2) return r;
    const double d = p.space_dim;
    r.critical_exponent = 2.0 * d / (d - 2.0);
    r.q_bound = 2.0 / (d - 2.0);
    r.gamma_subcritical = p.gamma < *r.critical_exponent;
    for (std::size_t i = 0; i < p.q.size(); ++i) r.q_admissible[i] = p.q[i] < *r.q_bound;
    return r;
}

// -- convenience constructors -------------------------------------------------

inline ProblemSpec make_scalar_power(const Grid& g, double q, double a, double b, double gamma)
{
    ProblemSpec p;
    p.m = 1;
    p.q = {q};
    p.a = {GridField::Constant(g.size(), a)};
    p.family = ScalarPower{GridField::Constant(g.size(), b)};
    p.gamma = gamma;
    p.gamma0 = gamma;
    return p;
}

inline ProblemSpec make_power_coupled(const Grid& g, int m, double q, double a, double b_diag,
                                      double b, double gamma)
{
    ProblemSpec p;
    p.m = m;
    p.q.assign(static_cast<std::size_t>(m), q);
    p.a.assign(static_cast<std::size_t>(m), GridField::Constant(g.size(), a));
    p.family = PowerCoupled{std::vector<GridField>(static_cast<std::size_t>(m),
                                                   GridField::Constant(g.size(), b_diag)),
                            GridField::Constant(g.size(), b)};
    p.gamma = gamma;
    p.gamma0 = gamma;
    return p;
}

} // namespace ccfold
