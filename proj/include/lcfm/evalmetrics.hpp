#pragma once

#include <cstddef>
#include <vector>

#include "lcfm/darcy.hpp"
#include "lcfm/tensor.hpp"
#include "lcfm/triangle.hpp"

namespace lcfm {

// Debiased entropic 2-Wasserstein estimate with squared-Euclidean cost,
// epsilon = blur^2, epsilon-scaling warm start (one symmetric log-domain
// update per halving level), and an extra convergence loop at the target
// epsilon.
struct SinkhornConfig {
    double blur = 0.05;         // entropic length scale in data units
    std::size_t max_iters = 3;  // extra sweeps at the final epsilon
    double tol = 1e-4;          // sup-norm potential change for convergence
    bool debias = true;

    void validate() const;
};

struct SinkhornResult {
    double value = 0.0;  // sqrt of the clamped (debiased) divergence
    bool converged = true;
    std::size_t sweeps = 0;
};

SinkhornResult sinkhorn_w2_report(const Matrix& a, const Matrix& b,
                                  const SinkhornConfig& cfg = {});
double sinkhorn_w2(const Matrix& a, const Matrix& b, const SinkhornConfig& cfg = {});

// Same divergence in the normalization sample-quality tables usually report
// (cost 1/2 |x-y|^2, no square root): sinkhorn_w2(a, b)^2 / 2.
double sinkhorn_divergence(const Matrix& a, const Matrix& b, const SinkhornConfig& cfg = {});

// V-statistic estimates; MMDs are reported as sqrt of the clamped squared
// statistic. Both kernels share a median-heuristic bandwidth (median pairwise
// distance over the pooled points, strided down to at most 2048 of them).
struct KernelDistances {
    double energy = 0.0;
    double gaussian_mmd = 0.0;
    double laplacian_mmd = 0.0;
    double bandwidth = 0.0;
};

KernelDistances kernel_distances(const Matrix& a, const Matrix& b);

struct ModeCoverage {
    std::vector<std::size_t> counts;   // per joint mode cell
    std::vector<std::size_t> missing;  // cells with zero count
    double outside_fraction = 0.0;     // points outside every mode support
    std::size_t n = 0;
};

ModeCoverage mode_coverage(const Matrix& samples, const TriangleConfig& cfg);

// Spatially averaged squared PDE residual of a (K, p) pair in original units:
//   R = (1/N^2) sum (f_s + K p_xx + K_x p_x + K p_yy + K_y p_y)^2
// with central differences inside and one-sided second-order stencils on the
// frame. `source_override` replaces the configured f_s, as in solve_darcy.
double darcy_residual(const FieldPair& pair, const DarcyConfig& cfg,
                      const Matrix* source_override = nullptr);

struct ResidualReport {
    std::vector<double> per_sample;
    double mean = 0.0;
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
};

// Rows of [K | p] as produced by generate_darcy_dataset.
ResidualReport darcy_residual_report(const Matrix& pairs, const DarcyConfig& cfg);

}  // namespace lcfm
