#pragma once

// Reference computations that share no code with the library: a dense
// 1D scalar solver parameterized by the center value, bisection on the sign
// of the smallest Jacobian eigenvalue, and a Richardson helper.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ccfold::oracle {

/// -u'' = a u^q + lambda (b1 u + c u^gamma) on (0, L), n interior nodes.
struct ScalarProblem {
    double L = 1.0;
    int n = 127;
    double q = 0.5, a = 1.0, b1 = 0.0, c = 1.0, gamma = 3.0;

    [[nodiscard]] double h() const { return L / (n + 1); }
    [[nodiscard]] int center() const { return n / 2; }
    [[nodiscard]] double gval(double u) const { return b1 * u + c * std::pow(u, gamma); }
    [[nodiscard]] double gder(double u) const { return b1 + c * gamma * std::pow(u, gamma - 1.0); }

    [[nodiscard]] Eigen::VectorXd residual(const Eigen::VectorXd& u, double lambda) const
    {
        const double h2 = h() * h();
        Eigen::VectorXd F(n);
        for (int k = 0; k < n; ++k) {
            const double left = k > 0 ? u[k - 1] : 0.0, right = k + 1 < n ? u[k + 1] : 0.0;
            F[k] = (2.0 * u[k] - left - right) / h2 - a * std::pow(u[k], q) - lambda * gval(u[k]);
        }
        return F;
    }

    [[nodiscard]] Eigen::MatrixXd jacobian(const Eigen::VectorXd& u, double lambda) const
    {
        const double h2 = h() * h();
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
        for (int k = 0; k < n; ++k) {
            J(k, k) = 2.0 / h2 - q * a * std::pow(u[k], q - 1.0) - lambda * gder(u[k]);
            if (k > 0) J(k, k - 1) = -1.0 / h2;
            if (k + 1 < n) J(k, k + 1) = -1.0 / h2;
        }
        return J;
    }

    /// Positive solution at lambda = 0 by monotone iteration from the top, then Newton.
    [[nodiscard]] Eigen::VectorXd baseline() const
    {
        const Eigen::MatrixXd K = jacobian(Eigen::VectorXd::Ones(n), 0.0) +
                                  q * a * Eigen::MatrixXd::Identity(n, n);
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(K);
        Eigen::VectorXd u = ldlt.solve(Eigen::VectorXd::Constant(n, a));
        const double top = std::max(1.0, std::pow(u.maxCoeff(), q / (1.0 - q)));
        u *= top;
        for (int it = 0; it < 200; ++it)
            u = ldlt.solve(u.unaryExpr([this](double x) { return a * std::pow(x, q); })).eval();
        for (int it = 0; it < 5; ++it) u -= jacobian(u, 0.0).partialPivLu().solve(residual(u, 0.0));
        return u;
    }

    /// Solves F(u, lambda) = 0, u(center) = mu by Newton from (u, lambda).
    void solve_at(double mu, Eigen::VectorXd& u, double& lambda) const
    {
        const int c0 = center();
        for (int it = 0; it < 60; ++it) {
            Eigen::VectorXd r(n + 1);
            r.head(n) = residual(u, lambda);
            r[n] = u[c0] - mu;
            if (r.head(n).norm() * std::sqrt(h()) < 1e-13 && std::abs(r[n]) < 1e-15 * mu && it > 1) return;
            Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 1, n + 1);
            A.topLeftCorner(n, n) = jacobian(u, lambda);
            for (int k = 0; k < n; ++k) A(k, n) = -gval(u[k]);
            A(n, c0) = 1.0;
            const Eigen::VectorXd d = A.partialPivLu().solve(-r);
            double t = 1.0;
            while ((u + t * d.head(n)).minCoeff() <= 0.0) t *= 0.5;
            u += t * d.head(n);
            lambda += t * d[n];
        }
        const double res = residual(u, lambda).norm() * std::sqrt(h());
        if (!(res < 1e-10)) throw std::runtime_error("center-value Newton did not converge");
    }

    [[nodiscard]] double lambda1(const Eigen::VectorXd& u, double lambda) const
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobian(u, lambda), Eigen::EigenvaluesOnly);
        return es.eigenvalues()[0];
    }
};

struct FoldEstimate {
    double lambda_star = 0.0;
    double mu_star = 0.0;
    Eigen::VectorXd state;
};

/// Bisection on mu for the sign of lambda_1 along the center-value family.
inline FoldEstimate bisect_fold(const ScalarProblem& P)
{
    Eigen::VectorXd u = P.baseline();
    double lambda = 0.0;
    double mu_lo = u[P.center()];
    Eigen::VectorXd u_lo = u;
    double l_lo = 0.0;
    double mu = mu_lo;
    for (int k = 0; k < 400; ++k) {
        mu *= 1.02;
        P.solve_at(mu, u, lambda);
        if (P.lambda1(u, lambda) < 0.0) break;
        mu_lo = mu;
        u_lo = u;
        l_lo = lambda;
        if (k == 399) throw std::runtime_error("lambda_1 never changed sign");
    }
    double mu_hi = mu;
    for (int it = 0; it < 200 && mu_hi - mu_lo > 1e-14 * mu_hi; ++it) {
        const double mid = 0.5 * (mu_lo + mu_hi);
        Eigen::VectorXd um = u_lo;
        double lm = l_lo;
        P.solve_at(mid, um, lm);
        if (P.lambda1(um, lm) >= 0.0) {
            mu_lo = mid;
            u_lo = um;
            l_lo = lm;
        } else {
            mu_hi = mid;
        }
    }
    return {l_lo, mu_lo, u_lo};
}

struct Richardson {
    double order = 0.0;     // observed, from three levels
    double value = 0.0;     // extrapolated with the observed order
    double error = 0.0;     // |value - finest|
};

/// Values on h, h/2, h/4 (coarse to fine).
inline Richardson richardson(double f1, double f2, double f3)
{
    Richardson r;
    r.order = std::log2(std::abs((f1 - f2) / (f2 - f3)));
    const double factor = std::pow(2.0, r.order) - 1.0;
    r.value = f3 + (f3 - f2) / factor;
    r.error = std::abs(r.value - f3);
    return r;
}

} // namespace ccfold::oracle
