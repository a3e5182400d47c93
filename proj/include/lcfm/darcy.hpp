#pragma once

#include <cstdint>
#include <vector>

#include "lcfm/rng.hpp"
#include "lcfm/tensor.hpp"

namespace lcfm {

// Steady Darcy flow on the unit square, cell-centred N x N grid:
//   -div(K grad p) = f_s,  zero flux on the boundary,  mean(p) = 0,
// with K = exp(G) for a truncated-KL sample G of the exponential-covariance
// Gaussian random field.
struct DarcyConfig {
    std::size_t grid = 64;          // N
    double r = 10.0;                // source magnitude
    double w = 0.125;               // source block side
    std::size_t kl_terms = 16;      // s
    double grf_mean = 1.0;
    double grf_lengthscale = 0.25;
    std::uint64_t seed = 0;
    // Source blocks: +r on [0, pos_side]^2, -r on [1-neg_side, 1]^2.
    // Negative values mean "use w".
    double source_pos_side = -1.0;
    double source_neg_side = -1.0;
    double cg_tol = 1e-10;

    void validate() const;
    double pos_side() const { return source_pos_side < 0 ? w : source_pos_side; }
    double neg_side() const { return source_neg_side < 0 ? w : source_neg_side; }
};

struct FieldPair {
    Matrix K;  // N x N, positive
    Matrix p;  // N x N, zero mean
};

// Leading eigenpairs of the covariance evaluated on the grid; eigenvalues
// non-increasing, eigenvectors orthonormal rows of length N^2.
struct GrfBasis {
    std::size_t grid = 0;
    std::vector<double> eigenvalues;
    Matrix eigenvectors;  // [s x N^2]
};

// Dense eigendecomposition for N <= 32; subspace iteration on the matrix-free
// covariance operator above that.
GrfBasis grf_basis(const DarcyConfig& cfg);

// One permeability field K = exp(mu + sum sqrt(lambda_i) theta_i phi_i).
Matrix sample_grf(const DarcyConfig& cfg, const GrfBasis& basis, Rng& rng);
// Convenience: builds the basis internally, draws from stream (seed, index).
Matrix sample_grf(const DarcyConfig& cfg, std::size_t index = 0);

// Piecewise-constant source term on the grid, adjusted to exact zero sum
// (Neumann compatibility).
Matrix darcy_source(const DarcyConfig& cfg);

// y = -div(K grad p) with the conservative 5-point flux stencil
// (arithmetic interface means), zero-flux boundaries.
Matrix apply_darcy_operator(const Matrix& K, const Matrix& p);

// Conjugate gradients with mean-zero projection; throws NumericError if the
// tolerance is not reached within the iteration cap. `source_override`
// replaces the configured f_s (it is projected to zero mean).
FieldPair solve_darcy(const Matrix& K, const DarcyConfig& cfg,
                      const Matrix* source_override = nullptr);

// [n x 2 N^2] rows of [K | p], sample i drawn from stream (seed, i).
Matrix generate_darcy_dataset(const DarcyConfig& cfg, std::size_t n);

}  // namespace lcfm
