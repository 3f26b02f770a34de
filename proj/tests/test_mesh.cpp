#include "ccfold/mesh.hpp"
#include "ccfold/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ccfold;

namespace {

Grid square(int n) { return build_grid(2, std::array{1.0, 1.0}, std::array{n, n}); }

// Dense symmetric eigendecomposition, independent of the library's solvers.
double dense_min_eig(const SparseMatrix& K)
{
    Eigen::MatrixXd A = Eigen::MatrixXd(K);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    return es.eigenvalues()[0];
}

} // namespace

TEST(Mesh, UnitIntervalThreeNodes)
{
    const Grid g = build_grid_1d(1.0, 3);
    EXPECT_EQ(g.size(), 3);
    EXPECT_DOUBLE_EQ(g.h(0), 0.25);
    EXPECT_DOUBLE_EQ(g.coords()[0][0], 0.25);
    EXPECT_DOUBLE_EQ(g.coords()[1][0], 0.5);
    EXPECT_DOUBLE_EQ(g.coords()[2][0], 0.75);
    EXPECT_DOUBLE_EQ(g.distance()[0], 0.25);
    EXPECT_DOUBLE_EQ(g.distance()[1], 0.5);
    EXPECT_DOUBLE_EQ(g.distance()[2], 0.25);
}

TEST(Mesh, UnitSquareCentre)
{
    const Grid g = square(3);
    EXPECT_EQ(g.size(), 9);
    EXPECT_DOUBLE_EQ(g.distance()[4], 0.5);
    EXPECT_EQ(g.center_node(), 4);
    EXPECT_DOUBLE_EQ(g.weight(), 0.0625);
}

TEST(Mesh, LongerInterval)
{
    const Grid g = build_grid_1d(2.0, 7);
    EXPECT_DOUBLE_EQ(g.h(0), 0.25);
    EXPECT_DOUBLE_EQ(g.distance()[0], 0.25);
    EXPECT_GT(g.distance().minCoeff(), 0.0);
}

TEST(Mesh, RejectsBadShapes)
{
    try {
        (void)build_grid(3, std::array{1.0, 1.0, 1.0}, std::array{3, 3, 3});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnsupportedDimension);
    }
    try {
        (void)build_grid_1d(1.0, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::GridTooCoarse);
    }
    const Grid g = build_grid_1d(1.0, 3);
    try {
        (void)laplacian_apply(g, GridField::Ones(4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeError);
    }
}

TEST(Mesh, LaplacianStencilArithmetic)
{
    const Grid g = build_grid_1d(1.0, 3);
    const GridField r = laplacian_apply(g, GridField{{1.0, 2.0, 1.0}});
    EXPECT_NEAR(r[0], 0.0, 1e-12);
    EXPECT_NEAR(r[1], 32.0, 1e-12);
    EXPECT_NEAR(r[2], 0.0, 1e-12);
    EXPECT_EQ(laplacian_apply(g, GridField::Zero(3)).norm(), 0.0);
}

TEST(Mesh, LaplacianFirstEigenvector)
{
    for (int n : {3, 15, 63}) {
        const Grid g = build_grid_1d(1.0, n);
        GridField f(n);
        for (int k = 0; k < n; ++k) f[k] = std::sin(M_PI * g.coords()[k][0]);
        const double h = g.h(0);
        const double lam = 2.0 * (1.0 - std::cos(M_PI * h)) / (h * h);
        EXPECT_NEAR(lam, dense_min_eig(g.stencil()), 1e-10 * lam);
        EXPECT_NEAR((laplacian_apply(g, f) - lam * f).norm(), 0.0, 1e-9 * lam);
        EXPECT_NEAR(g.stencil_lambda1(), lam, 1e-12 * lam);
    }
    const Grid g2 = square(9);
    EXPECT_NEAR(g2.stencil_lambda1(), dense_min_eig(g2.stencil()), 1e-10 * g2.stencil_lambda1());
}

TEST(Mesh, Quadrature)
{
    const Grid g = build_grid_1d(1.0, 3);
    EXPECT_DOUBLE_EQ(integrate(g, GridField{{1.0, 2.0, 1.0}}), 1.0);
    EXPECT_EQ(integrate(g, GridField::Zero(3)), 0.0);
    const Grid g7 = build_grid_1d(1.0, 7);
    EXPECT_NEAR(integrate(g7, g7.distance()), 0.25, g7.h(0) * g7.h(0));
}

TEST(Mesh, QuadratureSecondOrderOnSmoothIntegrand)
{
    // f vanishes at both ends with nonzero slope: the trapezoid error is
    // (h^2/12)(f'(1) - f'(0)) + O(h^4), so the observed order is 2.
    auto f = [](double x) { return x * (1.0 - x) * std::exp(x); };
    const double exact = 3.0 - std::exp(1.0);
    auto err = [&](int n) {
        const Grid g = build_grid_1d(1.0, n);
        GridField v(n);
        for (int k = 0; k < n; ++k) v[k] = f(g.coords()[k][0]);
        return std::abs(integrate(g, v) - exact);
    };
    const double e1 = err(15), e2 = err(31), e3 = err(63);
    EXPECT_NEAR(std::log2(e1 / e2), 2.0, 0.05);
    EXPECT_NEAR(std::log2(e2 / e3), 2.0, 0.05);
}

TEST(Mesh, InnerH1)
{
    const Grid g = build_grid_1d(1.0, 3);
    const GridField f{{0.25, 0.5, 0.25}};
    EXPECT_NEAR(inner_h1(g, f, f), 1.0, 1e-14);
    EXPECT_EQ(inner_h1(g, f, GridField::Zero(3)), 0.0);
}

TEST(Mesh, StencilSymmetryAndPositivity)
{
    Uniform rng(42);
    for (const Grid& g : {build_grid_1d(1.0, 31), square(11)}) {
        for (int trial = 0; trial < 50; ++trial) {
            GridField f1(g.size()), f2(g.size());
            for (Index k = 0; k < g.size(); ++k) {
                f1[k] = rng(-1.0, 1.0);
                f2[k] = rng(-1.0, 1.0);
            }
            const double a = inner_h1(g, f1, f2), b = inner_h1(g, f2, f1);
            EXPECT_LE(std::abs(a - b), 1e-12 * (1.0 + std::abs(a)));
            EXPECT_GT(inner_h1(g, f1, f1), 0.0);
        }
    }
}
