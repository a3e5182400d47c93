#pragma once

#include <cstdint>
#include <vector>

#include "lcfm/tensor.hpp"

namespace lcfm {

// Diagonal-covariance Gaussian mixture.
struct GaussianMixture {
    Matrix means;                 // [M x d]
    Matrix variances;             // [M x d], > 0
    std::vector<double> weights;  // M entries, sum 1

    std::size_t components() const { return means.rows(); }
    std::size_t dim() const { return means.cols(); }
    void validate() const;

    // log N(x; mu_j, diag sigma_j^2) — no mixture weight.
    double component_log_density(std::size_t j, const double* x) const;
    double log_density(const double* x) const;
    double density(const double* x) const;
};

struct GmmFitConfig {
    std::size_t steps = 1500;
    std::size_t batch_size = 256;
    double lr = 0.05;
    std::uint64_t seed = 0;
    double variance_floor = 1e-6;
    std::size_t em_init_iters = 25;  // EM warm start before gradient descent
    std::size_t restarts = 6;        // seeded initializer restarts, best NLL wins
    std::size_t eval_every = 100;    // full-data NLL checkpoint cadence

    void validate() const;
};

// Cross-entropy fit: k-means++ seeding, optional EM warm start, then Adam on
// -E log q(x) through a logsumexp graph (weights via softmax, variances via
// exp with the configured floor). Returns the checkpoint with the lowest
// full-data NLL, so the result never regresses below the initializer.
GaussianMixture gmm_fit(const Matrix& data, std::size_t m_components,
                        const GmmFitConfig& cfg = {});

// -mean_x log q(x).
double gmm_nll(const GaussianMixture& g, const Matrix& data);

// argmax_j N(x; mu_j, Sigma_j), weights ignored; ties go to the lowest index.
std::size_t gmm_assign(const GaussianMixture& g, const double* x);
std::vector<std::size_t> gmm_assign_batch(const GaussianMixture& g, const Matrix& x);

// K ids from Categorical(w).
std::vector<std::size_t> gmm_sample_ids(const GaussianMixture& g, std::size_t k_draws,
                                        std::uint64_t seed);

}  // namespace lcfm
