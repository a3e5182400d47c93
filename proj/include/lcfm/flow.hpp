#pragma once

#include <cstdint>
#include <vector>

#include "lcfm/gmm.hpp"
#include "lcfm/nn.hpp"
#include "lcfm/rng.hpp"
#include "lcfm/tape.hpp"
#include "lcfm/tensor.hpp"
#include "lcfm/vae.hpp"

namespace lcfm {

struct PathConfig {
    double sigma = 0.0;  // path noise; 0 for the low-dim and Darcy setups
    void validate() const;
};

// xt = t*x1 + (1-t)*x0 + sigma*eps, rows paired with the [n x 1] t column.
Matrix sample_path_point(const Matrix& x0, const Matrix& x1, const Matrix& tcol,
                         double sigma, const Matrix& eps);

// u = x1 - x0, the straight-path target field (t-independent).
Matrix target_vector_field(const Matrix& x0, const Matrix& x1);

// General Gaussian-path conditional field: u_t(x) = (dsigma/sigma)(x - mu_t) + dmu_t.
Matrix gaussian_path_field(const Matrix& x, const Matrix& mu_t, const Matrix& dmu_t,
                           double sigma_t, double dsigma_t);

enum class CouplingKind { Independent, MinibatchOT, LatentConditioned };

struct Coupling {
    CouplingKind kind = CouplingKind::Independent;
    // LatentConditioned uses exactly one of these.
    const LatentEncoder* encoder = nullptr;
    const GaussianMixture* gmm = nullptr;
};

struct CoupledEndpoints {
    Matrix x0, x1;
    Matrix f;                      // encoder latents (empty otherwise)
    std::vector<std::size_t> ids;  // gmm cluster ids (empty otherwise)
};

// Independent: identity pairing. MinibatchOT: x1 rows re-paired by the exact
// squared-Euclidean assignment. LatentConditioned: identity pairing plus
// f ~ q(.|x1) or ids = gmm_assign(x1).
CoupledEndpoints couple(const Coupling& c, const Matrix& batch0, const Matrix& batch1,
                        Rng& rng);

// One training batch on the straight path.
struct CfmBatch {
    Matrix x0, x1;
    Matrix t;   // [n x 1]
    Matrix xt;  // t*x1 + (1-t)*x0 + sigma*eps
    Matrix u;   // x1 - x0
    Matrix f;   // optional net conditioning (one-hot ids or fixed latents)

    static CfmBatch make(Matrix x0, Matrix x1, Matrix t, double sigma, const Matrix& eps);
};

// Eq. 6-style regression loss: mean over the batch of ||v(xt, f?, t) - u||^2
// (sum over coordinates). Graph and plain forms share the arithmetic.
Tape::Id cfm_loss_graph(Tape& tp, VectorFieldNet& net, const CfmBatch& batch);
double cfm_loss(const VectorFieldNet& net, const CfmBatch& batch);

// Latent-conditioned loss: latents are reparameterized inside the graph so
// gradients reach the encoder head; adds beta * KL(q(f|x1) || N(0,I)).
// `encoder_input` defaults to x1; ablations may pass a different view.
Tape::Id latent_cfm_loss_graph(Tape& tp, VectorFieldNet& net, LatentEncoder& enc,
                               const CfmBatch& batch, const Matrix& eps_latent,
                               double beta, const Matrix* encoder_input = nullptr);
double latent_cfm_loss(const VectorFieldNet& net, const LatentEncoder& enc,
                       const CfmBatch& batch, const Matrix& eps_latent, double beta,
                       const Matrix* encoder_input = nullptr);

}  // namespace lcfm
