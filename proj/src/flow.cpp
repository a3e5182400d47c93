#include "lcfm/flow.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "lcfm/assignment.hpp"
#include "lcfm/errors.hpp"

namespace lcfm {

void PathConfig::validate() const {
    if (sigma < 0.0) throw ConfigError("path sigma must be >= 0");
}

Matrix sample_path_point(const Matrix& x0, const Matrix& x1, const Matrix& tcol,
                         double sigma, const Matrix& eps) {
    if (!x0.same_shape(x1) || !x0.same_shape(eps)) {
        throw ContractError("sample_path_point: endpoint/eps shape mismatch");
    }
    if (tcol.rows() != x0.rows() || tcol.cols() != 1) {
        throw ContractError("sample_path_point: t must be [n x 1]");
    }
    if (sigma < 0.0) throw ContractError("sample_path_point: sigma must be >= 0");
    Matrix xt(x0.rows(), x0.cols());
    for (std::size_t i = 0; i < x0.rows(); ++i) {
        const double t = tcol[i];
        if (!(t >= 0.0 && t <= 1.0)) {
            throw ContractError("sample_path_point: t=" + std::to_string(t) +
                                " outside [0,1]");
        }
        for (std::size_t j = 0; j < x0.cols(); ++j) {
            xt(i, j) = t * x1(i, j) + (1.0 - t) * x0(i, j) + sigma * eps(i, j);
        }
    }
    return xt;
}

Matrix target_vector_field(const Matrix& x0, const Matrix& x1) {
    if (!x0.same_shape(x1)) throw ContractError("target_vector_field: shape mismatch");
    Matrix u = x1;
    for (std::size_t k = 0; k < u.size(); ++k) u[k] -= x0[k];
    return u;
}

Matrix gaussian_path_field(const Matrix& x, const Matrix& mu_t, const Matrix& dmu_t,
                           double sigma_t, double dsigma_t) {
    if (!x.same_shape(mu_t) || !x.same_shape(dmu_t)) {
        throw ContractError("gaussian_path_field: shape mismatch");
    }
    if (sigma_t <= 0.0) throw ContractError("gaussian_path_field: sigma_t must be > 0");
    const double ratio = dsigma_t / sigma_t;
    Matrix u(x.rows(), x.cols());
    for (std::size_t k = 0; k < x.size(); ++k) {
        u[k] = ratio * (x[k] - mu_t[k]) + dmu_t[k];
    }
    return u;
}

CoupledEndpoints couple(const Coupling& c, const Matrix& batch0, const Matrix& batch1,
                        Rng& rng) {
    if (batch0.rows() != batch1.rows() || batch0.cols() != batch1.cols()) {
        throw ContractError("couple: batch shape mismatch");
    }
    if (batch0.empty()) throw ContractError("couple: empty batch");
    CoupledEndpoints out;
    out.x0 = batch0;
    out.x1 = batch1;
    switch (c.kind) {
        case CouplingKind::Independent:
            return out;
        case CouplingKind::MinibatchOT: {
            const std::size_t n = batch0.rows(), d = batch0.cols();
            Matrix cost(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t a = 0; a < d; ++a) {
                        const double diff = batch0(i, a) - batch1(j, a);
                        acc += diff * diff;
                    }
                    cost(i, j) = acc;
                }
            }
            const std::vector<std::size_t> perm = solve_assignment(cost);
            for (std::size_t i = 0; i < n; ++i) out.x1.set_row(i, batch1.row(perm[i]));
            return out;
        }
        case CouplingKind::LatentConditioned: {
            if ((c.encoder == nullptr) == (c.gmm == nullptr)) {
                throw ContractError("couple: latent coupling needs encoder xor gmm");
            }
            if (c.encoder != nullptr) {
                out.f = c.encoder->encode_sample(batch1, rng);
            } else {
                out.ids = gmm_assign_batch(*c.gmm, batch1);
            }
            return out;
        }
    }
    throw ContractError("couple: bad coupling kind");
}

CfmBatch CfmBatch::make(Matrix x0, Matrix x1, Matrix t, double sigma, const Matrix& eps) {
    CfmBatch b;
    b.xt = sample_path_point(x0, x1, t, sigma, eps);
    b.u = target_vector_field(x0, x1);
    b.x0 = std::move(x0);
    b.x1 = std::move(x1);
    b.t = std::move(t);
    return b;
}

namespace {

const Matrix* batch_conditioning(const CfmBatch& batch) {
    return batch.f.empty() ? nullptr : &batch.f;
}

double mean_squared_residual(const Matrix& v, const Matrix& u) {
    double acc = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        const double diff = v[k] - u[k];
        acc += diff * diff;
    }
    return acc / static_cast<double>(v.rows());
}

}  // namespace

Tape::Id cfm_loss_graph(Tape& tp, VectorFieldNet& net, const CfmBatch& batch) {
    Tape::Id xt = tp.constant(batch.xt);
    Tape::Id tcol = tp.constant(batch.t);
    std::optional<Tape::Id> f;
    if (const Matrix* cond = batch_conditioning(batch)) f = tp.constant(*cond);
    Tape::Id v = net.forward(tp, xt, tcol, f);
    Tape::Id resid = tp.square(tp.sub(v, tp.constant(batch.u)));
    return tp.scale(tp.sum_all(resid), 1.0 / static_cast<double>(batch.u.rows()));
}

double cfm_loss(const VectorFieldNet& net, const CfmBatch& batch) {
    Matrix v = net.forward_plain(batch.xt, batch.t, batch_conditioning(batch));
    return mean_squared_residual(v, batch.u);
}

Tape::Id latent_cfm_loss_graph(Tape& tp, VectorFieldNet& net, LatentEncoder& enc,
                               const CfmBatch& batch, const Matrix& eps_latent,
                               double beta, const Matrix* encoder_input) {
    if (beta < 0.0) throw ContractError("latent_cfm_loss: beta must be >= 0");
    const Matrix& enc_in = encoder_input ? *encoder_input : batch.x1;
    if (eps_latent.rows() != batch.x1.rows() || eps_latent.cols() != enc.latent_dim()) {
        throw ContractError("latent_cfm_loss: eps shape mismatch");
    }
    auto [mu, logsig] = enc.encode_graph(tp, tp.constant(enc_in));
    Tape::Id f = tp.add(mu, tp.mul(tp.exp(logsig), tp.constant(eps_latent)));
    Tape::Id v = net.forward(tp, tp.constant(batch.xt), tp.constant(batch.t), f);
    Tape::Id resid = tp.square(tp.sub(v, tp.constant(batch.u)));
    Tape::Id fit = tp.scale(tp.sum_all(resid), 1.0 / static_cast<double>(batch.u.rows()));
    if (beta == 0.0) return fit;
    return tp.add(fit, tp.scale(kl_graph(tp, mu, logsig), beta));
}

double latent_cfm_loss(const VectorFieldNet& net, const LatentEncoder& enc,
                       const CfmBatch& batch, const Matrix& eps_latent, double beta,
                       const Matrix* encoder_input) {
    if (beta < 0.0) throw ContractError("latent_cfm_loss: beta must be >= 0");
    const Matrix& enc_in = encoder_input ? *encoder_input : batch.x1;
    auto [mu, logsig] = enc.encode_stats(enc_in);
    Matrix f = reparameterize(mu, logsig, eps_latent);
    Matrix v = net.forward_plain(batch.xt, batch.t, &f);
    double loss = mean_squared_residual(v, batch.u);
    if (beta > 0.0) loss += beta * kl_to_standard_normal(mu, logsig);
    return loss;
}

}  // namespace lcfm
