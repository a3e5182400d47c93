#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lcfm/rng.hpp"
#include "lcfm/tape.hpp"
#include "lcfm/tensor.hpp"

namespace lcfm {

enum class Activation { Selu, Relu, Gelu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Elementwise activation, plain and graph forms (shared by composite models).
void apply_activation(Matrix& m, Activation a);
Tape::Id apply_activation(Tape& tp, Tape::Id x, Activation a);

struct MlpConfig {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<std::size_t> hidden_dims;  // empty => single linear layer
    Activation activation = Activation::Selu;
};

using NamedParams = std::vector<std::pair<std::string, Parameter*>>;

// Fully connected net: hidden layers with the configured activation, linear
// output. Weights use Kaiming-uniform fan-in init (bound 1/sqrt(fan_in)).
class Mlp {
public:
    Mlp() = default;
    Mlp(MlpConfig cfg, Rng& rng);

    // Graph forward; `inject` (when set) is added to the first pre-activation
    // (shape [n x hidden_dims[0]]).
    Tape::Id forward(Tape& tp, Tape::Id x, std::optional<Tape::Id> inject = {});
    // Inference path without graph bookkeeping; same arithmetic as forward.
    Matrix forward_plain(const Matrix& x, const Matrix* inject = nullptr) const;

    NamedParams named_params(const std::string& prefix);
    const MlpConfig& config() const { return cfg_; }
    std::size_t first_hidden_dim() const {
        return cfg_.hidden_dims.empty() ? cfg_.output_dim : cfg_.hidden_dims[0];
    }

    std::vector<Parameter> weights;
    std::vector<Parameter> biases;

private:
    MlpConfig cfg_;
};

struct VectorFieldConfig {
    std::size_t data_dim = 0;
    std::size_t latent_dim = 0;  // 0 => unconditional baseline net
    std::size_t hidden = 64;
    std::size_t depth = 3;
    Activation activation = Activation::Selu;
};

// v_theta(x, f, t): trunk MLP on [x, t] whose first hidden pre-activation
// receives a learned linear embedding of the latent feature f. With the
// embedding zeroed (or latent_dim 0) this is exactly the unconditional net.
class VectorFieldNet {
public:
    VectorFieldNet() = default;
    VectorFieldNet(VectorFieldConfig cfg, Rng& rng);

    // x: [n x d], tcol: [n x 1], f: [n x latent_dim] (ignored if latent_dim 0).
    Tape::Id forward(Tape& tp, Tape::Id x, Tape::Id tcol, std::optional<Tape::Id> f = {});
    Matrix forward_plain(const Matrix& x, const Matrix& tcol, const Matrix* f = nullptr) const;
    // Convenience: same t for the whole batch.
    Matrix forward_plain(const Matrix& x, double t, const Matrix* f = nullptr) const;

    NamedParams named_params(const std::string& prefix = "");
    const VectorFieldConfig& config() const { return cfg_; }

    Mlp trunk;
    Parameter embed;  // [latent_dim x hidden]

private:
    VectorFieldConfig cfg_;
};

// One-hot rows for categorical conditioning ids.
Matrix one_hot(const std::vector<std::size_t>& ids, std::size_t num_classes);

// True iff every entry is finite.
bool all_finite(const Matrix& m);

// Order-independent content checksum of a parameter list (FNV-1a over the
// raw f64 payload in declaration order).
std::uint64_t params_checksum(const NamedParams& params);

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Parameter*> params, AdamConfig cfg);

    void step();
    void zero_grad();
    long step_count() const { return step_count_; }

    // Checkpoint access: moments aligned with the construction-order params.
    const std::vector<Matrix>& first_moments() const { return m_; }
    const std::vector<Matrix>& second_moments() const { return v_; }
    void restore(const std::vector<Matrix>& m, const std::vector<Matrix>& v, long step_count);
    const std::vector<Parameter*>& params() const { return params_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Matrix> m_, v_;
    long step_count_ = 0;
    AdamConfig cfg_;
};

}  // namespace lcfm
