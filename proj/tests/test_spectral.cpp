#include "fixtures.hpp"

#include "ccfold/spectral.hpp"

#include <gtest/gtest.h>

#include <Eigen/SVD>

using namespace ccfold;
using namespace ccfold::testing;

namespace {

LinearOperator wrap(const SparseMatrix& A, int m)
{
    return LinearOperator{A, m, A.rows() / m, 0};
}

SparseMatrix block_diag2(const SparseMatrix& K)
{
    std::vector<Eigen::Triplet<double>> t;
    for (Index c = 0; c < K.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(K, c); it; ++it) {
            t.emplace_back(it.row(), it.col(), it.value());
            t.emplace_back(it.row() + K.rows(), it.col() + K.rows(), it.value());
        }
    SparseMatrix B(2 * K.rows(), 2 * K.rows());
    B.setFromTriplets(t.begin(), t.end());
    return B;
}

} // namespace

TEST(Spectral, StencilClosedForm)
{
    const Grid g = build_grid_1d(1.0, 3);
    const EigenPair e = smallest_eigenpair(wrap(g.stencil(), 1), g);
    EXPECT_NEAR(e.lambda1, 32.0 * (1.0 - std::cos(M_PI / 4.0)), 1e-10);
    EXPECT_NEAR(e.lambda1, 9.37258, 1e-5);
    EXPECT_NEAR(e.lambda1, dense_sym_eigenvalues(g.stencil())[0], 1e-10);
    EXPECT_NEAR(g.weight() * e.phi.flat().squaredNorm(), 1.0, 1e-12);
    EXPECT_GT(e.phi.flat().minCoeff(), 0.0);
}

TEST(Spectral, ShiftInvariance)
{
    const Grid g = build_grid_1d(1.0, 63);
    const ProblemSpec p = abc_scalar(g);
    const LinearOperator A = assemble_jacobian(p, g, stable_solution(p, g, 10.0), 10.0);
    const double base = smallest_eigenpair(A, g).lambda1;
    for (double c : {-50.0, 3.0, 1e3}) {
        SparseMatrix B = A.matrix;
        for (Index k = 0; k < B.rows(); ++k) B.coeffRef(k, k) -= c;
        EXPECT_NEAR(smallest_eigenpair(wrap(B, 1), g).lambda1, base - c, 1e-10 * (1.0 + std::abs(c)) + 1e-10);
    }
}

TEST(Spectral, RepeatedEigenvalueOfDecoupledBlocks)
{
    const Grid g = build_grid_1d(1.0, 40);
    const SparseMatrix B = block_diag2(g.stencil());
    const EigenPair e = smallest_eigenpair(wrap(B, 2), g);
    const Eigen::VectorXd dense = dense_sym_eigenvalues(B);
    EXPECT_NEAR(dense[0], dense[1], 1e-9 * dense[0]);
    EXPECT_NEAR(e.lambda1, dense[0], 1e-8);
    EXPECT_LE(e.residual, 1e-8);
}

TEST(Spectral, MatchesDenseOracleAndRandomRayleighQuotients)
{
    Uniform rng(5);
    const Grid g = build_grid_1d(1.0, 100);
    const ProblemSpec sys = make_power_coupled(g, 2, 0.5, 1.0, 0.5, 1.0, 3.0);
    const StateVector s = random_state(2, g.size(), rng, 0.05, 0.5);
    const LinearOperator A = assemble_jacobian(sys, g, s, 6.0);
    const EigenPair e = smallest_eigenpair(A, g);
    EXPECT_NEAR(e.lambda1, dense_sym_eigenvalues(A.matrix)[0], 1e-8 * (1.0 + std::abs(e.lambda1)));

    // every quadratic-form quotient sits above lambda_1
    double best = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 200; ++t) {
        Eigen::VectorXd phi(A.matrix.rows());
        for (Index k = 0; k < phi.size(); ++k) phi[k] = rng(-1.0, 1.0);
        best = std::min(best, phi.dot(A.matrix * phi) / phi.squaredNorm());
    }
    EXPECT_GE(best - e.lambda1, 0.0);
}

TEST(Spectral, NonsymmetricOperatorUsesSymmetricPart)
{
    Uniform rng(6);
    const Grid g = build_grid_1d(1.0, 30);
    ProblemSpec sys = make_power_coupled(g, 2, 0.5, 1.0, 0.0, 1.0, 3.0);
    const StateVector s = random_state(2, g.size(), rng, 0.05, 0.8);
    const LinearOperator A = assemble_jacobian(sys, g, s, 5.0);
    const Eigen::MatrixXd D = Eigen::MatrixXd(A.matrix);
    ASSERT_GT((D - D.transpose()).norm(), 1e-3);
    EXPECT_NEAR(smallest_eigenpair(A, g).lambda1, dense_sym_eigenvalues(A.matrix)[0], 1e-8);

    // principal eigenvalue of the full operator: compare with dense nonsymmetric eigenvalues
    const EigenPair pe = principal_eigenpair(A, g);
    Eigen::EigenSolver<Eigen::MatrixXd> es(D);
    double min_real = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < es.eigenvalues().size(); ++k)
        min_real = std::min(min_real, es.eigenvalues()[k].real());
    EXPECT_NEAR(pe.lambda1, min_real, 1e-7 * (1.0 + std::abs(min_real)));
    EXPECT_GT(pe.phi.flat().minCoeff(), 0.0);
    // symmetric infimum never exceeds the principal eigenvalue
    EXPECT_LE(smallest_eigenpair(A, g).lambda1, pe.lambda1 + 1e-8);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(D);
    const double smin = svd.singularValues().minCoeff();
    EXPECT_NEAR(smallest_singular_value(A.matrix), smin, 1e-8 * (1.0 + smin));
}

TEST(Spectral, BaselineIsStable)
{
    const Grid g = build_grid_1d(1.0, 63);
    const ProblemSpec p = abc_scalar(g);
    const StateVector w = baseline(p, g);
    const StabilityTag t = classify_stability(p, g, w, 0.0);
    EXPECT_GE(t.lambda1, -t.tol);
    EXPECT_EQ(t.kind, Stability::AsymptoticallyStable);
    const EigenPair e = smallest_eigenpair(assemble_jacobian(p, g, w, 0.0), g);
    EXPECT_GT(e.phi.flat().minCoeff(), 0.0);
}

TEST(Spectral, TagThresholds)
{
    EXPECT_EQ(tag_from_lambda1(1e-3, 1e-6).kind, Stability::AsymptoticallyStable);
    EXPECT_EQ(tag_from_lambda1(5e-7, 1e-6).kind, Stability::Marginal);
    EXPECT_EQ(tag_from_lambda1(-5e-7, 1e-6).kind, Stability::Marginal);
    EXPECT_EQ(tag_from_lambda1(-2e-6, 1e-6).kind, Stability::Unstable);
}

TEST(Spectral, MembershipOfBaselineAndStableSolutions)
{
    const Grid g = build_grid_1d(1.0, 63);
    const ProblemSpec p = abc_scalar(g);
    // tau = R(s, s) is exact only up to ||F|| ||s|| / |<g(s), s>|
    auto tau_bound = [&](const StateVector& s, double lambda) {
        const double den = rayleigh_extended(p, g, s, s).denominator;
        return assemble_residual(p, g, s, lambda).norm * l2_norm(g, s.flat()) / std::abs(den) + 1e-12;
    };
    const StateVector w = baseline(p, g);
    const Membership mw = membership_Ws(p, g, w);
    EXPECT_NEAR(mw.tau, 0.0, tau_bound(w, 0.0));
    EXPECT_LE(std::abs(mw.tau), 1e-8);
    EXPECT_TRUE(mw.member);
    EXPECT_TRUE(mw.strict);

    const StateVector u = stable_solution(p, g, 10.0);
    const Membership mu = membership_Ws(p, g, u);
    EXPECT_NEAR(mu.tau, 10.0, tau_bound(u, 10.0));
    EXPECT_NEAR(mu.tau, 10.0, 1e-8);
    EXPECT_TRUE(mu.member);
}
