#include "lcfm/vae.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lcfm/errors.hpp"

namespace lcfm {

namespace {
constexpr double kLogSigLo = -10.0;
constexpr double kLogSigHi = 10.0;
}  // namespace

void EncoderConfig::validate() const {
    if (data_dim == 0 || latent_dim == 0) throw ConfigError("encoder dims must be positive");
    if (hidden.empty()) throw ConfigError("encoder needs at least one hidden layer");
    for (std::size_t h : hidden) {
        if (h == 0) throw ConfigError("encoder hidden width must be positive");
    }
    if (beta < 0.0) throw ConfigError("encoder beta must be >= 0");
}

LatentEncoder::LatentEncoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    MlpConfig trunk_cfg;
    trunk_cfg.input_dim = cfg_.data_dim;
    trunk_cfg.output_dim = cfg_.hidden.back();
    trunk_cfg.hidden_dims.assign(cfg_.hidden.begin(), cfg_.hidden.end() - 1);
    trunk_cfg.activation = cfg_.activation;
    trunk = Mlp(trunk_cfg, rng);

    MlpConfig head_cfg;
    head_cfg.input_dim = cfg_.hidden.back();
    head_cfg.output_dim = 2 * cfg_.latent_dim;
    head_cfg.activation = cfg_.activation;
    head = Mlp(head_cfg, rng);
}

std::pair<Tape::Id, Tape::Id> LatentEncoder::encode_graph(Tape& tp, Tape::Id x) {
    Tape::Id feat = apply_activation(tp, trunk.forward(tp, x), cfg_.activation);
    Tape::Id out = head.forward(tp, feat);
    Tape::Id mu = tp.slice_cols(out, 0, cfg_.latent_dim);
    Tape::Id logsig = tp.clamp(tp.slice_cols(out, cfg_.latent_dim, 2 * cfg_.latent_dim),
                               kLogSigLo, kLogSigHi);
    return {mu, logsig};
}

std::pair<Matrix, Matrix> LatentEncoder::encode_stats(const Matrix& x1) const {
    if (x1.cols() != cfg_.data_dim) {
        throw ContractError("encode: expected " + std::to_string(cfg_.data_dim) +
                            " columns, got " + std::to_string(x1.cols()));
    }
    Matrix feat = trunk.forward_plain(x1);
    apply_activation(feat, cfg_.activation);
    Matrix out = head.forward_plain(feat);
    const std::size_t k = cfg_.latent_dim;
    Matrix mu(x1.rows(), k), logsig(x1.rows(), k);
    for (std::size_t i = 0; i < x1.rows(); ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            mu(i, j) = out(i, j);
            logsig(i, j) = std::clamp(out(i, k + j), kLogSigLo, kLogSigHi);
        }
    }
    return {mu, logsig};
}

Matrix LatentEncoder::encode_sample(const Matrix& x1, Rng& rng) const {
    auto [mu, logsig] = encode_stats(x1);
    Matrix eps(mu.rows(), mu.cols());
    rng.fill_normal(eps.values());
    return reparameterize(mu, logsig, eps);
}

NamedParams LatentEncoder::trunk_params(const std::string& prefix) {
    return trunk.named_params(prefix);
}

NamedParams LatentEncoder::head_params(const std::string& prefix) {
    return head.named_params(prefix);
}

NamedParams LatentEncoder::named_params(const std::string& prefix) {
    NamedParams all = trunk_params(prefix + "trunk.");
    for (auto& p : head_params(prefix + "head.")) all.push_back(std::move(p));
    return all;
}

Matrix reparameterize(const Matrix& mu, const Matrix& logsig, const Matrix& eps) {
    if (!mu.same_shape(logsig) || !mu.same_shape(eps)) {
        throw ContractError("reparameterize: shape mismatch");
    }
    Matrix f = mu;
    for (std::size_t k = 0; k < f.size(); ++k) f[k] += std::exp(logsig[k]) * eps[k];
    return f;
}

double kl_to_standard_normal(const Matrix& mu, const Matrix& logsig) {
    if (!mu.same_shape(logsig)) throw ContractError("kl: shape mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
        acc += mu[k] * mu[k] + std::exp(2.0 * logsig[k]) - 1.0 - 2.0 * logsig[k];
    }
    return 0.5 * acc / static_cast<double>(mu.rows());
}

Tape::Id kl_graph(Tape& tp, Tape::Id mu, Tape::Id logsig) {
    const double inv_rows = 1.0 / static_cast<double>(tp.value(mu).rows());
    Tape::Id sig2 = tp.exp(tp.scale(logsig, 2.0));
    Tape::Id rest = tp.add_scalar(tp.sub(sig2, tp.scale(logsig, 2.0)), -1.0);
    Tape::Id term = tp.add(tp.square(mu), rest);
    return tp.scale(tp.sum_all(term), 0.5 * inv_rows);
}

void VaeConfig::validate() const {
    encoder.validate();
    if (steps == 0 || batch_size == 0) throw ConfigError("vae steps/batch must be positive");
    if (lr <= 0.0) throw ConfigError("vae lr must be > 0");
}

Matrix VaeModel::reconstruct(const Matrix& x) const {
    auto [mu, logsig] = encoder.encode_stats(x);
    (void)logsig;
    return decoder.forward_plain(mu);
}

VaeModel vae_pretrain(const Matrix& data, const VaeConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw ContractError("vae_pretrain: empty data");
    if (data.cols() != cfg.encoder.data_dim) {
        throw ContractError("vae_pretrain: data dim mismatch");
    }

    Rng init_rng = Rng::derive(cfg.seed, 0);
    VaeModel model;
    model.encoder = LatentEncoder(cfg.encoder, init_rng);
    MlpConfig dec_cfg;
    dec_cfg.input_dim = cfg.encoder.latent_dim;
    dec_cfg.output_dim = cfg.encoder.data_dim;
    dec_cfg.hidden_dims = cfg.decoder_hidden;
    dec_cfg.activation = cfg.encoder.activation;
    model.decoder = Mlp(dec_cfg, init_rng);

    std::vector<Parameter*> params;
    for (auto& [name, p] : model.encoder.named_params()) params.push_back(p);
    for (auto& [name, p] : model.decoder.named_params("dec.")) params.push_back(p);
    Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

    const std::size_t n = data.rows();
    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t k = cfg.encoder.latent_dim;
    Tape tp;
    model.loss_history.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Rng rng = Rng::derive(cfg.seed, 1 + step);
        Matrix x(batch, data.cols());
        for (std::size_t i = 0; i < batch; ++i) x.set_row(i, data.row(rng.index(n)));
        Matrix eps(batch, k);
        rng.fill_normal(eps.values());

        tp.clear();
        Tape::Id xc = tp.constant(x);
        auto [mu, logsig] = model.encoder.encode_graph(tp, xc);
        Tape::Id f = tp.add(mu, tp.mul(tp.exp(logsig), tp.constant(eps)));
        Tape::Id xhat = model.decoder.forward(tp, f);
        Tape::Id recon = tp.scale(tp.sum_all(tp.square(tp.sub(xc, xhat))),
                                  0.5 / static_cast<double>(batch));
        Tape::Id loss = tp.add(recon, tp.scale(kl_graph(tp, mu, logsig), cfg.encoder.beta));
        const double loss_val = tp.value(loss)[0];
        if (!std::isfinite(loss_val)) {
            throw TrainingError("vae loss diverged", static_cast<long>(step));
        }
        opt.zero_grad();
        tp.backward(loss);
        opt.step();
        model.loss_history.push_back(loss_val);
    }
    return model;
}

}  // namespace lcfm
