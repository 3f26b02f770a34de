#pragma once

// Shared problem setups for the test binaries.

#include "ccfold/model.hpp"
#include "ccfold/operator.hpp"
#include "ccfold/random.hpp"
#include "ccfold/sublinear.hpp"

#include <Eigen/Dense>

namespace ccfold::testing {

/// Scalar concave-convex model problem: q = 0.5, gamma = 3, a = b = 1 on (0,1).
inline ProblemSpec abc_scalar(const Grid& g) { return make_scalar_power(g, 0.5, 1.0, 1.0, 3.0); }

inline StateVector baseline(const ProblemSpec& p, const Grid& g)
{
    return baseline_state(p, g).w;
}

/// Natural-parameter Newton solve from the baseline in small lambda steps.
inline StateVector stable_solution(const ProblemSpec& p, const Grid& g, double lambda,
                                   int steps = 20)
{
    StateVector s = baseline(p, g);
    for (int k = 1; k <= steps; ++k) s = newton_solve(p, g, s, lambda * k / steps).state;
    return s;
}

inline StateVector random_state(int m, Index n, Uniform& rng, double lo, double hi)
{
    StateVector v(m, n);
    for (Index k = 0; k < v.flat().size(); ++k) v.flat()[k] = rng(lo, hi);
    return v;
}

/// Dense symmetric eigenvalues, independent of the library's iterative solvers.
inline Eigen::VectorXd dense_sym_eigenvalues(const SparseMatrix& A)
{
    const Eigen::MatrixXd D = Eigen::MatrixXd(A);
    const Eigen::MatrixXd S = 0.5 * (D + D.transpose());
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S).eigenvalues();
}

} // namespace ccfold::testing
