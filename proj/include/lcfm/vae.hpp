#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lcfm/nn.hpp"
#include "lcfm/rng.hpp"
#include "lcfm/tape.hpp"
#include "lcfm/tensor.hpp"

namespace lcfm {

struct EncoderConfig {
    std::size_t data_dim = 0;
    std::size_t latent_dim = 0;
    std::vector<std::size_t> hidden = {64, 64};  // trunk widths; last feeds the head
    Activation activation = Activation::Selu;
    double beta = 0.01;

    void validate() const;
};

// Gaussian encoder split into a trunk and a final linear head producing
// (mu, logsig). During pretraining everything trains; afterwards only the
// head is handed to the optimizer, so the trunk stays bit-identical. logsig
// is clamped to [-10, 10].
class LatentEncoder {
public:
    LatentEncoder() = default;
    LatentEncoder(EncoderConfig cfg, Rng& rng);

    // Graph forward: (mu, logsig), each [n x latent_dim].
    std::pair<Tape::Id, Tape::Id> encode_graph(Tape& tp, Tape::Id x);
    // Plain forward.
    std::pair<Matrix, Matrix> encode_stats(const Matrix& x1) const;
    // Reparameterized draw f = mu + exp(logsig) * eps, eps ~ N(0, I).
    Matrix encode_sample(const Matrix& x1, Rng& rng) const;

    NamedParams trunk_params(const std::string& prefix = "trunk.");
    NamedParams head_params(const std::string& prefix = "head.");
    NamedParams named_params(const std::string& prefix = "");

    const EncoderConfig& config() const { return cfg_; }
    std::size_t latent_dim() const { return cfg_.latent_dim; }
    double beta() const { return cfg_.beta; }

    Mlp trunk;  // data_dim -> hidden.back(), activation applied on top
    Mlp head;   // hidden.back() -> 2 * latent_dim, single linear layer

private:
    EncoderConfig cfg_;
};

// f = mu + exp(logsig) * eps, elementwise.
Matrix reparameterize(const Matrix& mu, const Matrix& logsig, const Matrix& eps);

// Mean over rows of 0.5 * sum_j (mu^2 + sigma^2 - 1 - log sigma^2).
double kl_to_standard_normal(const Matrix& mu, const Matrix& logsig);
// Same reduction as a graph node ([1 x 1]).
Tape::Id kl_graph(Tape& tp, Tape::Id mu, Tape::Id logsig);

struct VaeConfig {
    EncoderConfig encoder;
    std::vector<std::size_t> decoder_hidden = {64, 64};
    std::size_t steps = 3000;
    std::size_t batch_size = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

struct VaeModel {
    LatentEncoder encoder;
    Mlp decoder;  // latent_dim -> data_dim
    std::vector<double> loss_history;

    // Deterministic reconstruction through the posterior mean.
    Matrix reconstruct(const Matrix& x) const;
};

// Negative-ELBO pretraining: 0.5*||x - xhat||^2 + beta * KL, Adam.
VaeModel vae_pretrain(const Matrix& data, const VaeConfig& cfg);

}  // namespace lcfm
