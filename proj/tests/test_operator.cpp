#include "fixtures.hpp"

#include "ccfold/operator.hpp"
#include "ccfold/sublinear.hpp"

#include <gtest/gtest.h>

using namespace ccfold;
using namespace ccfold::testing;

namespace {

void expect_jacobian_matches_residual(const ProblemSpec& p, const Grid& g, const StateVector& s,
                                      double lambda, std::uint64_t seed)
{
    Uniform rng(seed);
    const double eps = 1e-6;
    const LinearOperator J = assemble_jacobian(p, g, s, lambda);
    for (int trial = 0; trial < 10; ++trial) {
        // direction scaled by the state keeps s +- eps*phi inside the cone
        Eigen::VectorXd phi(s.flat().size());
        for (Index k = 0; k < phi.size(); ++k) phi[k] = rng(-1.0, 1.0) * s.flat()[k];
        const StateVector sp(p.m, s.flat() + eps * phi), sm(p.m, s.flat() - eps * phi);
        const Eigen::VectorXd fd = (assemble_residual(p, g, sp, lambda).values.flat() -
                                    assemble_residual(p, g, sm, lambda).values.flat()) /
                                   (2 * eps);
        const Eigen::VectorXd Jphi = J.matrix * phi;
        EXPECT_LE((fd - Jphi).norm(), 1e-5 * (1.0 + Jphi.norm()));
    }
}

} // namespace

TEST(Operator, ResidualStencilArithmetic)
{
    const Grid g = build_grid_1d(1.0, 3);
    const ProblemSpec p = abc_scalar(g);
    const StateVector s(1, Eigen::VectorXd{{0.25, 0.5, 0.25}});
    const Residual r = assemble_residual(p, g, s, 1.0);
    EXPECT_NEAR(r.values(0, 1), 8.0 - std::sqrt(0.5) - 0.125, 1e-12);
    EXPECT_NEAR(r.values(0, 1), 7.16789, 1e-5);
    EXPECT_NEAR(r.values(0, 0), -0.5 - 0.015625, 1e-12);
    EXPECT_NEAR(r.norm, std::sqrt(0.25 * r.values.flat().squaredNorm()), 1e-14);
}

TEST(Operator, ZeroNodeIsConeViolation)
{
    const Grid g = build_grid_1d(1.0, 3);
    const ProblemSpec p = abc_scalar(g);
    const StateVector s(1, Eigen::VectorXd{{0.25, 0.0, 0.25}});
    try {
        (void)assemble_residual(p, g, s, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConeViolation);
    }
    EXPECT_THROW((void)assemble_jacobian(p, g, s, 1.0), Error);
}

TEST(Operator, BaselineSolvesLambdaZero)
{
    const Grid g = build_grid_1d(1.0, 63);
    const ProblemSpec p = abc_scalar(g);
    const StateVector w = baseline(p, g);
    EXPECT_LE(assemble_residual(p, g, w, 0.0).norm, 1e-10);
}

TEST(Operator, JacobianMatchesFiniteDifferences)
{
    const Grid g = build_grid_1d(1.0, 31);
    const ProblemSpec scalar = abc_scalar(g);
    expect_jacobian_matches_residual(scalar, g, baseline(scalar, g), 7.5, 1);

    const ProblemSpec sys = make_power_coupled(g, 2, 0.5, 1.0, 0.3, 1.0, 3.0);
    Uniform rng(3);
    const StateVector s = random_state(2, g.size(), rng, 0.05, 1.0);
    expect_jacobian_matches_residual(sys, g, s, 4.0, 2);

    const Grid g2 = build_grid(2, std::array{1.0, 2.0}, std::array{7, 9});
    const ProblemSpec p2 = make_power_coupled(g2, 2, 0.4, 1.5, 0.0, 2.0, 2.5);
    expect_jacobian_matches_residual(p2, g2, random_state(2, g2.size(), rng, 0.05, 1.0), 3.0, 4);
}

TEST(Operator, JacobianStructure)
{
    const Grid g = build_grid_1d(1.0, 15);
    const ProblemSpec scalar = abc_scalar(g);
    const StateVector w = baseline(scalar, g);
    const LinearOperator J0 = assemble_jacobian(scalar, g, w, 0.0);
    EXPECT_LE((Eigen::MatrixXd(J0.matrix) - Eigen::MatrixXd(J0.matrix).transpose()).norm(), 1e-12);
    const LinearOperator J1 = assemble_jacobian(scalar, g, w, 3.0);
    EXPECT_EQ((Eigen::MatrixXd(J1.matrix) - Eigen::MatrixXd(J1.matrix).transpose()).norm(), 0.0);
    EXPECT_EQ(J1.bandwidth, 1);

    const ProblemSpec sys = make_power_coupled(g, 2, 0.5, 1.0, 0.0, 1.0, 3.0);
    Uniform rng(8);
    const StateVector s = random_state(2, g.size(), rng, 0.1, 1.0);
    const Eigen::MatrixXd D = Eigen::MatrixXd(assemble_jacobian(sys, g, s, 2.0).matrix);
    const Index n = g.size();
    const Eigen::MatrixXd off = D.block(0, n, n, n);
    // -lambda * g_{1,u_2} sits on the diagonal of the off-diagonal block
    EXPECT_EQ((off - Eigen::MatrixXd(off.diagonal().asDiagonal())).norm(), 0.0);
    for (Index k = 0; k < n; ++k) {
        const double expect = -2.0 * 3.0 * s(1, k) * s(1, k);
        EXPECT_NEAR(off(k, k), expect, 1e-12);
        // F_u = ... - lambda * g_u: cooperative g means non-positive off-diagonal entries of F_u
        EXPECT_LE(off(k, k), 0.0);
    }
}

TEST(Operator, ConeMembership)
{
    const Grid g = build_grid_1d(1.0, 3);
    const StateVector s(1, Eigen::VectorXd{{0.25, 0.5, 0.25}});
    EXPECT_TRUE(cone_membership(g, s, 0.9));
    EXPECT_FALSE(cone_membership(g, s, 1.1));
    const StateVector zero(1, Eigen::VectorXd::Zero(3));
    for (double delta : {0.0, 0.5, 2.0}) EXPECT_FALSE(cone_membership(g, zero, delta));
    EXPECT_DOUBLE_EQ(cone_parameter(g, s), 1.0);
}

TEST(Operator, NewtonReachesBaselineFromEigenvector)
{
    const Grid g = build_grid_1d(1.0, 63);
    const ProblemSpec p = abc_scalar(g);
    GridField phi(g.size());
    for (Index k = 0; k < g.size(); ++k) phi[k] = 0.05 * std::sin(M_PI * g.coords()[k][0]);
    const NewtonResult r = newton_solve(p, g, StateVector(1, phi), 0.0);
    EXPECT_LE(r.residual, 1e-10);
    const BrezisOswaldResult fp = solve_brezis_oswald(p, g, 0);
    EXPECT_LE((r.state.comp(0) - fp.w).cwiseAbs().maxCoeff(), 1e-8);

    const NewtonResult again = newton_solve(p, g, r.state, 0.0);
    EXPECT_LE(again.iterations, 1);
    EXPECT_LE((again.state.flat() - r.state.flat()).norm(), 1e-10);
}

TEST(Operator, IntegralIdentityAtSolutions)
{
    const Grid g = build_grid_1d(1.0, 63);
    const ProblemSpec p = abc_scalar(g);
    for (double lambda : {0.0, 5.0, 20.0}) {
        const StateVector u = stable_solution(p, g, lambda);
        const double h1 = h1_pairing(g, u, u);
        const double conc = integrate(g, u.comp(0).unaryExpr([](double x) { return std::pow(x, 1.5); }));
        const double conv = pairing(g, eval_g(p, u), u);
        EXPECT_LE(std::abs(h1 - conc - lambda * conv), 1e-9 * (1.0 + h1));
    }
}

TEST(Operator, NewtonRespectsIterationCap)
{
    const Grid g = build_grid_1d(1.0, 31);
    const ProblemSpec p = abc_scalar(g);
    NewtonOptions o;
    o.max_iter = 1;
    o.tol = 1e-14;
    GridField phi(g.size());
    for (Index k = 0; k < g.size(); ++k) phi[k] = 0.05 * std::sin(M_PI * g.coords()[k][0]);
    try {
        (void)newton_solve(p, g, StateVector(1, phi), 0.0, o);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MaxIterations);
    }
}
