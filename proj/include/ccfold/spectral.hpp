#pragma once

// Principal eigenvalue of the linearization and stability classification.
//
// lambda_1 is the infimum of the quadratic form phi^T F_u phi / |phi|^2, i.e.
// the smallest eigenvalue of the symmetrized operator (F_u + F_u^T)/2. It is
// computed by shifted subspace inverse iteration with Rayleigh-Ritz
// extraction; the shift is a Gershgorin lower bound so the shifted matrix is
// SPD. The full nonsymmetric operator gets its own routines (principal
// eigenvalue, smallest singular value) for fold certificates.

#include "ccfold/error.hpp"
#include "ccfold/mesh.hpp"
#include "ccfold/model.hpp"
#include "ccfold/operator.hpp"
#include "ccfold/quotient.hpp"
#include "ccfold/random.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <string>

namespace ccfold {

struct EigenPair {
    double lambda1 = 0.0;
    StateVector phi; // int |phi|^2 = 1, positive at the node of max |phi|
    int iterations = 0;
    double residual = 0.0; // ||S phi - lambda1 phi|| / ||phi|| (Euclidean)
};

struct EigenOptions {
    int max_iter = 2000;
    /// Residual target relative to the Gershgorin scale of the operator.
    double rel_tol = 1e-12;
    int block = 6;
    std::uint64_t seed = 7;
};

namespace detail {

struct GershgorinBounds {
    double lower, upper;
};

inline GershgorinBounds gershgorin(const SparseMatrix& S)
{
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(S.rows());
    Eigen::VectorXd off = Eigen::VectorXd::Zero(S.rows());
    for (Index c = 0; c < S.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(S, c); it; ++it) {
            if (it.row() == it.col()) diag[it.row()] += it.value();
            else off[it.row()] += std::abs(it.value());
        }
    return {(diag - off).minCoeff(), (diag + off).maxCoeff()};
}

inline void sign_normalize(Eigen::VectorXd& x)
{
    Index k = 0;
    x.cwiseAbs().maxCoeff(&k);
    if (x[k] < 0.0) x = -x;
}

inline SparseMatrix symmetrized(const SparseMatrix& A)
{
    SparseMatrix At = A.transpose();
    SparseMatrix S = 0.5 * (A + At);
    S.makeCompressed();
    return S;
}

} // namespace detail

inline EigenPair smallest_eigenpair(const LinearOperator& A, const Grid& grid,
                                    const EigenOptions& opts = {})
{
    const SparseMatrix S = detail::symmetrized(A.matrix);
    const Index N = S.rows();
    const auto gb = detail::gershgorin(S);
    const double scale = std::max({std::abs(gb.lower), std::abs(gb.upper), 1.0});
    const double shift = gb.lower - 1e-3 * scale;

    SparseMatrix B = S;
    for (Index k = 0; k < N; ++k) B.coeffRef(k, k) -= shift;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(B);
    CCFOLD_THROW_IF(ldlt.info() != Eigen::Success, ErrorCode::EigenNonconvergence,
                    "shifted operator could not be factorized");

    const int p = static_cast<int>(std::min<Index>(opts.block, N));
    Uniform rng(opts.seed);
    Eigen::MatrixXd X(N, p);
    for (Index i = 0; i < N; ++i)
        for (int j = 0; j < p; ++j) X(i, j) = rng(-1.0, 1.0);
    X.col(0).setConstant(1.0); // principal eigenvectors of cooperative operators are positive
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    X = qr.householderQ() * Eigen::MatrixXd::Identity(N, p);

    const double tol = opts.rel_tol * scale;
    EigenPair out;
    for (int it = 1; it <= opts.max_iter; ++it) {
        Eigen::MatrixXd Y = ldlt.solve(X);
        Eigen::HouseholderQR<Eigen::MatrixXd> q2(Y);
        Y = q2.householderQ() * Eigen::MatrixXd::Identity(N, p);
        const Eigen::MatrixXd SY = S * Y;
        Eigen::MatrixXd H = Y.transpose() * SY;
        H = 0.5 * (H + H.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
        X = Y * es.eigenvectors();
        const double theta = es.eigenvalues()[0];
        const Eigen::VectorXd x = X.col(0);
        const double res = (S * x - theta * x).norm();
        out.lambda1 = theta;
        out.residual = res;
        out.iterations = it;
        if (res <= tol) {
            Eigen::VectorXd phi = x / (std::sqrt(grid.weight()) * x.norm());
            detail::sign_normalize(phi);
            out.phi = StateVector(A.m, std::move(phi));
            return out;
        }
    }
    throw Error(ErrorCode::EigenNonconvergence,
                "inverse iteration did not converge in " + std::to_string(opts.max_iter) +
                    " iterations (residual " + fmt_num(out.residual) + ")");
}

/// Eigenvalue of the full (possibly nonsymmetric) operator with smallest real
/// part, by shifted inverse power iteration. Real and simple for cooperative
/// irreducible couplings; returns the Rayleigh estimate and a positive vector.
inline EigenPair principal_eigenpair(const LinearOperator& A, const Grid& grid,
                                     const EigenOptions& opts = {})
{
    const Index N = A.matrix.rows();
    const auto gb = detail::gershgorin(A.matrix);
    const double scale = std::max({std::abs(gb.lower), std::abs(gb.upper), 1.0});
    const double shift = gb.lower - 1e-3 * scale;
    SparseMatrix B = A.matrix;
    for (Index k = 0; k < N; ++k) B.coeffRef(k, k) -= shift;
    Eigen::SparseLU<SparseMatrix> lu(B);
    CCFOLD_THROW_IF(lu.info() != Eigen::Success, ErrorCode::EigenNonconvergence,
                    "shifted operator could not be factorized");
    Eigen::VectorXd x = Eigen::VectorXd::Ones(N).normalized();
    EigenPair out;
    const double tol = opts.rel_tol * scale;
    for (int it = 1; it <= opts.max_iter; ++it) {
        x = Eigen::VectorXd(lu.solve(x));
        x.normalize();
        const Eigen::VectorXd Ax = A.matrix * x;
        const double theta = x.dot(Ax);
        out.lambda1 = theta;
        out.residual = (Ax - theta * x).norm();
        out.iterations = it;
        if (out.residual <= tol) {
            Eigen::VectorXd phi = x / std::sqrt(grid.weight());
            detail::sign_normalize(phi);
            out.phi = StateVector(A.m, std::move(phi));
            return out;
        }
    }
    throw Error(ErrorCode::EigenNonconvergence, "principal eigenvalue iteration did not converge");
}

/// sigma_min(A) by inverse iteration on A^T A. Zero when A is numerically singular.
inline double smallest_singular_value(const SparseMatrix& A, int max_iter = 500,
                                      double rel_tol = 1e-10)
{
    Eigen::SparseLU<SparseMatrix> lu(A);
    if (lu.info() != Eigen::Success) return 0.0;
    Eigen::VectorXd x = Eigen::VectorXd::Ones(A.rows()).normalized();
    double est = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd y = lu.solve(x);
        const Eigen::VectorXd z = lu.transpose().solve(y);
        const double nz = z.norm();
        if (!std::isfinite(nz) || nz == 0.0) return 0.0;
        const double next = 1.0 / std::sqrt(nz);
        x = z / nz;
        if (it > 0 && std::abs(next - est) <= rel_tol * next) return next;
        est = next;
    }
    return est;
}

// -- stability --------------------------------------------------------------

enum class Stability { AsymptoticallyStable, Marginal, Unstable };

inline const char* to_string(Stability s)
{
    switch (s) {
    case Stability::AsymptoticallyStable: return "asymptotically_stable";
    case Stability::Marginal: return "marginal";
    case Stability::Unstable: return "unstable";
    }
    return "unstable";
}

struct StabilityTag {
    Stability kind = Stability::Marginal;
    double lambda1 = 0.0;
    double tol = 0.0;
};

inline double default_stability_tol(const Grid& grid)
{
    return 1e-7 * (1.0 + std::abs(grid.stencil_lambda1()));
}

inline StabilityTag tag_from_lambda1(double lambda1, double tol)
{
    StabilityTag t{Stability::Marginal, lambda1, tol};
    if (lambda1 > tol) t.kind = Stability::AsymptoticallyStable;
    else if (lambda1 < -tol) t.kind = Stability::Unstable;
    return t;
}

/// Negative tol selects default_stability_tol(grid).
inline StabilityTag classify_stability(const ProblemSpec& p, const Grid& grid, const StateVector& s,
                                       double lambda, double tol = -1.0,
                                       const EigenOptions& opts = {})
{
    if (tol < 0.0) tol = default_stability_tol(grid);
    const EigenPair e = smallest_eigenpair(assemble_jacobian(p, grid, s, lambda), grid, opts);
    return tag_from_lambda1(e.lambda1, tol);
}

struct Membership {
    bool member = false; // lambda_1(F_u(u, tau)) >= -tol
    bool strict = false; // lambda_1(F_u(u, tau)) >  tol  (W_as)
    double tau = 0.0;    // R(u, u)
    double lambda1 = 0.0;
};

/// W_s / W_as membership with tau = R(u, u).
inline Membership membership_Ws(const ProblemSpec& p, const Grid& grid, const StateVector& s,
                                double tol = -1.0, const EigenOptions& opts = {})
{
    if (tol < 0.0) tol = default_stability_tol(grid);
    Membership m;
    m.tau = rayleigh_extended(p, grid, s, s).value;
    m.lambda1 = smallest_eigenpair(assemble_jacobian(p, grid, s, m.tau), grid, opts).lambda1;
    m.member = m.lambda1 >= -tol;
    m.strict = m.lambda1 > tol;
    return m;
}

} // namespace ccfold
