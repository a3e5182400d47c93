#include "lcfm/nn.hpp"

#include <cmath>

#include "lcfm/errors.hpp"

namespace lcfm {

Activation activation_from_string(const std::string& s) {
    if (s == "selu") return Activation::Selu;
    if (s == "relu") return Activation::Relu;
    if (s == "gelu") return Activation::Gelu;
    throw ConfigError("unknown activation '" + s + "' (expected selu|relu|gelu)");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Selu: return "selu";
        case Activation::Relu: return "relu";
        case Activation::Gelu: return "gelu";
    }
    throw ContractError("bad activation enum");
}

namespace {

Matrix init_uniform(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.uniform(-bound, bound);
    return m;
}

double selu_scalar(double x) {
    return x > 0.0 ? Tape::kSeluLambda * x : Tape::kSeluLambda * Tape::kSeluAlpha * std::expm1(x);
}

double gelu_scalar(double x) {
    return x * 0.5 * std::erfc(-x * 0.7071067811865475244);
}

}  // namespace

void apply_activation(Matrix& m, Activation a) {
    switch (a) {
        case Activation::Selu:
            for (std::size_t k = 0; k < m.size(); ++k) m[k] = selu_scalar(m[k]);
            return;
        case Activation::Relu:
            for (std::size_t k = 0; k < m.size(); ++k) m[k] = m[k] > 0.0 ? m[k] : 0.0;
            return;
        case Activation::Gelu:
            for (std::size_t k = 0; k < m.size(); ++k) m[k] = gelu_scalar(m[k]);
            return;
    }
}

Tape::Id apply_activation(Tape& tp, Tape::Id x, Activation a) {
    switch (a) {
        case Activation::Selu: return tp.selu(x);
        case Activation::Relu: return tp.relu(x);
        case Activation::Gelu: return tp.gelu(x);
    }
    throw ContractError("bad activation enum");
}

Mlp::Mlp(MlpConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (cfg_.input_dim == 0 || cfg_.output_dim == 0) {
        throw ConfigError("mlp dims must be positive");
    }
    for (std::size_t h : cfg_.hidden_dims) {
        if (h == 0) throw ConfigError("mlp hidden dims must be positive");
    }
    std::size_t fan_in = cfg_.input_dim;
    for (std::size_t h : cfg_.hidden_dims) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        weights.emplace_back(init_uniform(fan_in, h, bound, rng));
        biases.emplace_back(init_uniform(1, h, bound, rng));
        fan_in = h;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    weights.emplace_back(init_uniform(fan_in, cfg_.output_dim, bound, rng));
    biases.emplace_back(init_uniform(1, cfg_.output_dim, bound, rng));
}

Tape::Id Mlp::forward(Tape& tp, Tape::Id x, std::optional<Tape::Id> inject) {
    if (tp.value(x).cols() != cfg_.input_dim) {
        throw ContractError("mlp forward: input dim " + std::to_string(tp.value(x).cols()) +
                            " != " + std::to_string(cfg_.input_dim));
    }
    Tape::Id h = x;
    const std::size_t n_hidden = cfg_.hidden_dims.size();
    for (std::size_t l = 0; l < n_hidden; ++l) {
        Tape::Id pre = tp.add_rowvec(tp.matmul(h, tp.param(weights[l])), tp.param(biases[l]));
        if (l == 0 && inject) pre = tp.add(pre, *inject);
        h = apply_activation(tp, pre, cfg_.activation);
    }
    Tape::Id out =
        tp.add_rowvec(tp.matmul(h, tp.param(weights[n_hidden])), tp.param(biases[n_hidden]));
    if (n_hidden == 0 && inject) out = tp.add(out, *inject);
    return out;
}

Matrix Mlp::forward_plain(const Matrix& x, const Matrix* inject) const {
    if (x.cols() != cfg_.input_dim) {
        throw ContractError("mlp forward: input dim " + std::to_string(x.cols()) + " != " +
                            std::to_string(cfg_.input_dim));
    }
    Matrix h = x;
    const std::size_t n_hidden = cfg_.hidden_dims.size();
    for (std::size_t l = 0; l <= n_hidden; ++l) {
        Matrix pre = matmul(h, weights[l].value);
        const Matrix& b = biases[l].value;
        for (std::size_t i = 0; i < pre.rows(); ++i)
            for (std::size_t j = 0; j < pre.cols(); ++j) pre(i, j) += b[j];
        if (l == 0 && inject) {
            if (!inject->same_shape(pre)) throw ContractError("mlp inject: shape mismatch");
            for (std::size_t k = 0; k < pre.size(); ++k) pre[k] += (*inject)[k];
        }
        if (l < n_hidden) apply_activation(pre, cfg_.activation);
        h = std::move(pre);
    }
    return h;
}

NamedParams Mlp::named_params(const std::string& prefix) {
    NamedParams out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.emplace_back(prefix + "w" + std::to_string(l), &weights[l]);
        out.emplace_back(prefix + "b" + std::to_string(l), &biases[l]);
    }
    return out;
}

VectorFieldNet::VectorFieldNet(VectorFieldConfig cfg, Rng& rng) : cfg_(cfg) {
    MlpConfig mcfg;
    mcfg.input_dim = cfg.data_dim + 1;
    mcfg.output_dim = cfg.data_dim;
    mcfg.hidden_dims.assign(cfg.depth, cfg.hidden);
    mcfg.activation = cfg.activation;
    trunk = Mlp(mcfg, rng);
    if (cfg.latent_dim > 0) {
        if (cfg.depth == 0) throw ConfigError("latent embedding requires a hidden layer");
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
        embed = Parameter(Matrix(cfg.latent_dim, cfg.hidden));
        for (std::size_t k = 0; k < embed.value.size(); ++k)
            embed.value[k] = rng.uniform(-bound, bound);
    }
}

Tape::Id VectorFieldNet::forward(Tape& tp, Tape::Id x, Tape::Id tcol, std::optional<Tape::Id> f) {
    Tape::Id xt = tp.concat_cols({x, tcol});
    std::optional<Tape::Id> inject;
    if (f && cfg_.latent_dim > 0) {
        if (tp.value(*f).cols() != cfg_.latent_dim) {
            throw ContractError("latent dim mismatch: got " +
                                std::to_string(tp.value(*f).cols()));
        }
        inject = tp.matmul(*f, tp.param(embed));
    }
    return trunk.forward(tp, xt, inject);
}

Matrix VectorFieldNet::forward_plain(const Matrix& x, const Matrix& tcol, const Matrix* f) const {
    if (tcol.rows() != x.rows() || tcol.cols() != 1) {
        throw ContractError("forward: t column must be [n x 1]");
    }
    Matrix xt(x.rows(), x.cols() + 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) xt(i, j) = x(i, j);
        xt(i, x.cols()) = tcol[i];
    }
    if (f && cfg_.latent_dim > 0) {
        if (f->cols() != cfg_.latent_dim) throw ContractError("latent dim mismatch");
        Matrix inject = matmul(*f, embed.value);
        return trunk.forward_plain(xt, &inject);
    }
    return trunk.forward_plain(xt);
}

Matrix VectorFieldNet::forward_plain(const Matrix& x, double t, const Matrix* f) const {
    Matrix tcol(x.rows(), 1, t);
    return forward_plain(x, tcol, f);
}

NamedParams VectorFieldNet::named_params(const std::string& prefix) {
    NamedParams out = trunk.named_params(prefix + "trunk.");
    if (cfg_.latent_dim > 0) out.emplace_back(prefix + "embed", &embed);
    return out;
}

Matrix one_hot(const std::vector<std::size_t>& ids, std::size_t num_classes) {
    Matrix m(ids.size(), num_classes);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= num_classes) throw ContractError("one_hot: id out of range");
        m(i, ids[i]) = 1.0;
    }
    return m;
}

bool all_finite(const Matrix& m) {
    for (std::size_t k = 0; k < m.size(); ++k) {
        if (!std::isfinite(m[k])) return false;
    }
    return true;
}

std::uint64_t params_checksum(const NamedParams& params) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    auto mix_bytes = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, p] : params) {
        mix_bytes(name.data(), name.size());
        mix_bytes(p->value.data(), p->value.size() * sizeof(double));
    }
    return h;
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0 || cfg_.beta1 <= 0 || cfg_.beta1 >= 1 || cfg_.beta2 <= 0 ||
        cfg_.beta2 >= 1 || cfg_.eps <= 0) {
        throw ConfigError("invalid adam config");
    }
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (!p.grad.same_shape(p.value)) throw ContractError("adam: missing grad");
        Matrix& m = m_[k];
        Matrix& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.value[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->grad.fill(0.0);
}

void Adam::restore(const std::vector<Matrix>& m, const std::vector<Matrix>& v, long step_count) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
        throw ContractError("adam restore: moment count mismatch");
    }
    m_ = m;
    v_ = v;
    step_count_ = step_count;
}

}  // namespace lcfm
