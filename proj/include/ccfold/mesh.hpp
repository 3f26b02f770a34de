#pragma once

// Uniform finite-difference grids on an interval or rectangle, the
// Dirichlet stencil for -Laplacian, and the lumped quadrature that goes
// with it.

#include "ccfold/error.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace ccfold {

using Index = Eigen::Index;
using GridField = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Interior nodes of a uniform grid. Boundary values are implicitly zero.
/// Immutable after construction; node ordering in 2D is row-major (x fastest).
class Grid {
public:
    Grid() = default;

    Grid(int dim, std::span<const double> lengths, std::span<const int> n_per_axis)
    {
        CCFOLD_THROW_IF(dim != 1 && dim != 2, ErrorCode::UnsupportedDimension,
                        "grid dimension must be 1 or 2, got " + std::to_string(dim));
        CCFOLD_THROW_IF(static_cast<int>(lengths.size()) != dim ||
                            static_cast<int>(n_per_axis.size()) != dim,
                        ErrorCode::ShapeError, "need one length and one node count per axis");
        dim_ = dim;
        for (int k = 0; k < dim; ++k) {
            CCFOLD_THROW_IF(!(lengths[k] > 0.0) || !std::isfinite(lengths[k]),
                            ErrorCode::InvariantViolation, "domain lengths must be positive");
            CCFOLD_THROW_IF(n_per_axis[k] < 3, ErrorCode::GridTooCoarse,
                            "need at least 3 interior nodes per axis, got " +
                                std::to_string(n_per_axis[k]));
            lengths_[k] = lengths[k];
            n_[k] = n_per_axis[k];
            h_[k] = lengths[k] / (n_per_axis[k] + 1);
        }
        build_nodes();
        build_stencil();
    }

    [[nodiscard]] int dim() const noexcept { return dim_; }
    [[nodiscard]] Index size() const noexcept { return size_; }
    [[nodiscard]] double length(int axis) const { return lengths_.at(axis); }
    [[nodiscard]] int n(int axis) const { return n_.at(axis); }
    [[nodiscard]] double h(int axis) const { return h_.at(axis); }
    /// Quadrature weight of every interior node (product of spacings).
    [[nodiscard]] double weight() const noexcept { return weight_; }
    [[nodiscard]] const std::vector<std::array<double, 2>>& coords() const noexcept
    {
        return coords_;
    }
    /// Distance of each node to the boundary.
    [[nodiscard]] const GridField& distance() const noexcept { return d_; }
    /// Discrete -Laplacian with homogeneous Dirichlet closure.
    [[nodiscard]] const SparseMatrix& stencil() const noexcept { return stencil_; }

    /// Smallest eigenvalue of the stencil, closed form.
    [[nodiscard]] double stencil_lambda1() const noexcept
    {
        double s = 0.0;
        for (int k = 0; k < dim_; ++k)
            s += 2.0 * (1.0 - std::cos(M_PI * h_[k] / lengths_[k])) / (h_[k] * h_[k]);
        return s;
    }

    /// Index of the node closest to the domain centre.
    [[nodiscard]] Index center_node() const
    {
        Index best = 0;
        d_.maxCoeff(&best);
        return best;
    }

private:
    void build_nodes()
    {
        size_ = n_[0] * (dim_ == 2 ? n_[1] : 1);
        coords_.resize(static_cast<std::size_t>(size_));
        d_.resize(size_);
        const int ny = dim_ == 2 ? n_[1] : 1;
        for (int iy = 0; iy < ny; ++iy) {
            for (int ix = 0; ix < n_[0]; ++ix) {
                const Index k = static_cast<Index>(iy) * n_[0] + ix;
                const double x = (ix + 1) * h_[0];
                double dist = std::min(x, lengths_[0] - x);
                double y = 0.0;
                if (dim_ == 2) {
                    y = (iy + 1) * h_[1];
                    dist = std::min({dist, y, lengths_[1] - y});
                }
                coords_[static_cast<std::size_t>(k)] = {x, y};
                d_[k] = dist;
            }
        }
        weight_ = h_[0] * (dim_ == 2 ? h_[1] : 1.0);
    }

    void build_stencil()
    {
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(static_cast<std::size_t>(size_) * (1 + 2 * dim_));
        const int ny = dim_ == 2 ? n_[1] : 1;
        const double cx = 1.0 / (h_[0] * h_[0]);
        const double cy = dim_ == 2 ? 1.0 / (h_[1] * h_[1]) : 0.0;
        for (int iy = 0; iy < ny; ++iy) {
            for (int ix = 0; ix < n_[0]; ++ix) {
                const Index k = static_cast<Index>(iy) * n_[0] + ix;
                t.emplace_back(k, k, 2.0 * cx + 2.0 * cy);
                if (ix > 0) t.emplace_back(k, k - 1, -cx);
                if (ix + 1 < n_[0]) t.emplace_back(k, k + 1, -cx);
                if (dim_ == 2) {
                    if (iy > 0) t.emplace_back(k, k - n_[0], -cy);
                    if (iy + 1 < ny) t.emplace_back(k, k + n_[0], -cy);
                }
            }
        }
        stencil_.resize(size_, size_);
        stencil_.setFromTriplets(t.begin(), t.end());
        stencil_.makeCompressed();
    }

    int dim_ = 0;
    std::array<double, 2> lengths_{};
    std::array<int, 2> n_{};
    std::array<double, 2> h_{};
    Index size_ = 0;
    double weight_ = 0.0;
    std::vector<std::array<double, 2>> coords_;
    GridField d_;
    SparseMatrix stencil_;
};

inline Grid build_grid(int dim, std::span<const double> lengths, std::span<const int> n_per_axis)
{
    return Grid(dim, lengths, n_per_axis);
}

inline Grid build_grid_1d(double length, int n)
{
    const std::array<double, 1> l{length};
    const std::array<int, 1> nn{n};
    return Grid(1, l, nn);
}

inline void require_on_grid(const Grid& g, const GridField& f)
{
    CCFOLD_THROW_IF(f.size() != g.size(), ErrorCode::ShapeError,
                    "field has " + std::to_string(f.size()) + " entries, grid has " +
                        std::to_string(g.size()));
}

inline GridField laplacian_apply(const Grid& g, const GridField& f)
{
    require_on_grid(g, f);
    return g.stencil() * f;
}

inline double integrate(const Grid& g, const GridField& f)
{
    require_on_grid(g, f);
    return g.weight() * f.sum();
}

/// Dirichlet form: integral of grad f1 . grad f2, realized through the stencil.
inline double inner_h1(const Grid& g, const GridField& f1, const GridField& f2)
{
    require_on_grid(g, f1);
    require_on_grid(g, f2);
    return g.weight() * f2.dot(g.stencil() * f1);
}

inline double inner_l2(const Grid& g, const GridField& f1, const GridField& f2)
{
    require_on_grid(g, f1);
    require_on_grid(g, f2);
    return g.weight() * f1.dot(f2);
}

} // namespace ccfold
