#include "lcfm/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>

#include "lcfm/errors.hpp"
#include "lcfm/nn.hpp"
#include "lcfm/rng.hpp"
#include "lcfm/tape.hpp"

namespace lcfm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

void GaussianMixture::validate() const {
    if (means.empty() || !means.same_shape(variances)) {
        throw ContractError("gmm: means/variances shape mismatch");
    }
    if (weights.size() != components()) throw ContractError("gmm: weight count mismatch");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ContractError("gmm: negative weight");
        sum += w;
    }
    if (std::fabs(sum - 1.0) > 1e-12) throw ContractError("gmm: weights do not sum to 1");
    for (std::size_t k = 0; k < variances.size(); ++k) {
        if (!(variances[k] > 0.0)) throw ContractError("gmm: nonpositive variance");
    }
}

double GaussianMixture::component_log_density(std::size_t j, const double* x) const {
    double acc = 0.0;
    for (std::size_t a = 0; a < dim(); ++a) {
        const double diff = x[a] - means(j, a);
        acc += diff * diff / variances(j, a) + std::log(variances(j, a)) + kLog2Pi;
    }
    return -0.5 * acc;
}

double GaussianMixture::log_density(const double* x) const {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(components());
    for (std::size_t j = 0; j < components(); ++j) {
        terms[j] = weights[j] > 0.0
                       ? std::log(weights[j]) + component_log_density(j, x)
                       : -std::numeric_limits<double>::infinity();
        best = std::max(best, terms[j]);
    }
    if (!std::isfinite(best)) return best;
    double s = 0.0;
    for (double t : terms) s += std::exp(t - best);
    return best + std::log(s);
}

double GaussianMixture::density(const double* x) const { return std::exp(log_density(x)); }

void GmmFitConfig::validate() const {
    if (steps == 0 && em_init_iters == 0) throw ConfigError("gmm: no training configured");
    if (batch_size == 0) throw ConfigError("gmm: batch_size must be positive");
    if (lr <= 0.0) throw ConfigError("gmm: lr must be > 0");
    if (variance_floor <= 0.0) throw ConfigError("gmm: variance floor must be > 0");
    if (restarts == 0) throw ConfigError("gmm: need at least one restart");
    if (eval_every == 0) throw ConfigError("gmm: eval_every must be positive");
}

namespace {

// Greedy k-means++ seeding: each new center is the best of several
// distance-squared–weighted candidates, judged by the resulting potential.
std::vector<std::size_t> kmeanspp_centers(const Matrix& data, std::size_t m, Rng& rng) {
    const std::size_t n = data.rows(), d = data.cols();
    const std::size_t trials =
        2 + static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(m) + 1.0)));
    auto sq_dist = [&](std::size_t i, std::size_t j) {
        double acc = 0.0;
        const double* x = data.data() + i * d;
        const double* y = data.data() + j * d;
        for (std::size_t a = 0; a < d; ++a) acc += (x[a] - y[a]) * (x[a] - y[a]);
        return acc;
    };

    std::vector<std::size_t> centers;
    centers.push_back(rng.index(n));
    std::vector<double> dist2(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dist2[i] = sq_dist(i, centers[0]);
        total += dist2[i];
    }
    while (centers.size() < m) {
        std::size_t best_pick = 0;
        double best_total = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < trials; ++t) {
            double u = rng.uniform() * total;
            std::size_t pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                u -= dist2[i];
                if (u <= 0.0) {
                    pick = i;
                    break;
                }
            }
            double cand_total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                cand_total += std::min(dist2[i], sq_dist(i, pick));
            }
            if (cand_total < best_total) {
                best_total = cand_total;
                best_pick = pick;
            }
        }
        centers.push_back(best_pick);
        total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dist2[i] = std::min(dist2[i], sq_dist(i, best_pick));
            total += dist2[i];
        }
    }
    return centers;
}

GaussianMixture init_model(const Matrix& data, std::size_t m, const GmmFitConfig& cfg,
                           std::size_t restart) {
    const std::size_t n = data.rows(), d = data.cols();
    Rng rng = Rng::derive(cfg.seed, 0xA000 + restart);
    GaussianMixture g;
    g.means = Matrix(m, d);
    g.variances = Matrix(m, d);
    g.weights.assign(m, 1.0 / static_cast<double>(m));

    const std::vector<std::size_t> centers = kmeanspp_centers(data, m, rng);
    for (std::size_t j = 0; j < m; ++j) g.means.set_row(j, data.row(centers[j]));

    // Lloyd iterations give crisp clusters, so EM starts with tight,
    // per-cluster variances instead of the global spread.
    std::vector<std::size_t> assign(n, 0);
    for (int it = 0; it < 10; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = data.data() + i * d;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < m; ++j) {
                double acc = 0.0;
                for (std::size_t a = 0; a < d; ++a) {
                    const double diff = x[a] - g.means(j, a);
                    acc += diff * diff;
                }
                if (acc < best) {
                    best = acc;
                    assign[i] = j;
                }
            }
        }
        Matrix sums(m, d);
        std::vector<std::size_t> counts(m, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (std::size_t a = 0; a < d; ++a) sums(assign[i], a) += data(i, a);
        }
        for (std::size_t j = 0; j < m; ++j) {
            if (counts[j] == 0) continue;
            for (std::size_t a = 0; a < d; ++a) {
                g.means(j, a) = sums(j, a) / static_cast<double>(counts[j]);
            }
        }
    }

    Matrix var_sums(m, d);
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ++counts[assign[i]];
        for (std::size_t a = 0; a < d; ++a) {
            const double diff = data(i, a) - g.means(assign[i], a);
            var_sums(assign[i], a) += diff * diff;
        }
    }
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t a = 0; a < d; ++a) {
            const double var = counts[j] > 1
                                   ? var_sums(j, a) / static_cast<double>(counts[j])
                                   : 1.0;
            g.variances(j, a) = std::max(var, cfg.variance_floor);
        }
        g.weights[j] = std::max(static_cast<double>(counts[j]), 1.0) /
                       static_cast<double>(n);
    }
    double wsum = 0.0;
    for (double w : g.weights) wsum += w;
    for (double& w : g.weights) w /= wsum;
    return g;
}

void em_iterate(GaussianMixture& g, const Matrix& data, std::size_t iters, double floor) {
    const std::size_t n = data.rows(), d = data.cols(), m = g.components();
    Matrix resp(n, m);
    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = data.data() + i * d;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < m; ++j) {
                resp(i, j) = (g.weights[j] > 0.0 ? std::log(g.weights[j]) : -1e300) +
                             g.component_log_density(j, x);
                best = std::max(best, resp(i, j));
            }
            double z = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                resp(i, j) = std::exp(resp(i, j) - best);
                z += resp(i, j);
            }
            for (std::size_t j = 0; j < m; ++j) resp(i, j) /= z;
        }
        for (std::size_t j = 0; j < m; ++j) {
            double nj = 0.0;
            for (std::size_t i = 0; i < n; ++i) nj += resp(i, j);
            if (nj <= 0.0) continue;  // dead component keeps its parameters
            for (std::size_t a = 0; a < d; ++a) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += resp(i, j) * data(i, a);
                g.means(j, a) = s / nj;
            }
            for (std::size_t a = 0; a < d; ++a) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double diff = data(i, a) - g.means(j, a);
                    s += resp(i, j) * diff * diff;
                }
                g.variances(j, a) = std::max(s / nj, floor);
            }
            g.weights[j] = nj / static_cast<double>(n);
        }
        double wsum = 0.0;
        for (double w : g.weights) wsum += w;
        for (double& w : g.weights) w /= wsum;
    }
}

}  // namespace

double gmm_nll(const GaussianMixture& g, const Matrix& data) {
    if (data.cols() != g.dim()) throw ContractError("gmm_nll: dim mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        acc += g.log_density(data.data() + i * g.dim());
    }
    return -acc / static_cast<double>(data.rows());
}

GaussianMixture gmm_fit(const Matrix& data, std::size_t m_components,
                        const GmmFitConfig& cfg) {
    cfg.validate();
    if (m_components == 0) throw ConfigError("gmm: need at least one component");
    if (data.rows() < 2 * m_components) {
        throw ContractError("gmm: need at least 2*M data points");
    }
    const std::size_t d = data.cols(), m = m_components;
    const double logvar_lo = std::log(cfg.variance_floor);
    const double logvar_hi = 20.0;

    GaussianMixture g;
    double g_nll = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
        GaussianMixture cand = init_model(data, m, cfg, r);
        em_iterate(cand, data, cfg.em_init_iters, cfg.variance_floor);
        const double nll = gmm_nll(cand, data);
        if (nll < g_nll) {
            g_nll = nll;
            g = std::move(cand);
        }
    }

    // Gradient phase on the softmax/exp parameterization.
    std::vector<Parameter> mean_p, logvar_p;
    mean_p.reserve(m);
    logvar_p.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        Matrix mu(1, d), lv(1, d);
        for (std::size_t a = 0; a < d; ++a) {
            mu[a] = g.means(j, a);
            lv[a] = std::log(g.variances(j, a));
        }
        mean_p.emplace_back(std::move(mu));
        logvar_p.emplace_back(std::move(lv));
    }
    Matrix logits(1, m);
    for (std::size_t j = 0; j < m; ++j) logits[j] = std::log(std::max(g.weights[j], 1e-300));
    Parameter logit_p(std::move(logits));

    auto snapshot = [&]() {
        GaussianMixture s;
        s.means = Matrix(m, d);
        s.variances = Matrix(m, d);
        s.weights.assign(m, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t a = 0; a < d; ++a) {
                s.means(j, a) = mean_p[j].value[a];
                const double lv = std::clamp(logvar_p[j].value[a], logvar_lo, logvar_hi);
                s.variances(j, a) = std::exp(lv);
            }
        }
        double z = 0.0, mx = *std::max_element(logit_p.value.values().begin(),
                                               logit_p.value.values().end());
        for (std::size_t j = 0; j < m; ++j) {
            s.weights[j] = std::exp(logit_p.value[j] - mx);
            z += s.weights[j];
        }
        for (double& w : s.weights) w /= z;
        return s;
    };

    std::vector<Parameter*> params;
    for (std::size_t j = 0; j < m; ++j) {
        params.push_back(&mean_p[j]);
        params.push_back(&logvar_p[j]);
    }
    params.push_back(&logit_p);
    Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

    GaussianMixture best = snapshot();
    double best_nll = gmm_nll(best, data);

    const std::size_t batch = std::min(cfg.batch_size, data.rows());
    Tape tp;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Rng rng = Rng::derive(cfg.seed, 1 + step);
        Matrix x(batch, d);
        for (std::size_t i = 0; i < batch; ++i) x.set_row(i, data.row(rng.index(data.rows())));

        tp.clear();
        Tape::Id xc = tp.constant(std::move(x));
        Tape::Id logit_id = tp.param(logit_p);
        Tape::Id log_w = tp.add_colvec(logit_id, tp.neg(tp.logsumexp_cols(logit_id)));
        std::vector<Tape::Id> cols;
        cols.reserve(m);
        for (std::size_t j = 0; j < m; ++j) {
            Tape::Id mu = tp.param(mean_p[j]);
            Tape::Id lv = tp.clamp(tp.param(logvar_p[j]), logvar_lo, logvar_hi);
            Tape::Id diff = tp.add_rowvec(xc, tp.neg(mu));
            Tape::Id quad = tp.mul_rowvec(tp.square(diff), tp.exp(tp.neg(lv)));
            Tape::Id s = tp.scale(tp.sum_cols(quad), -0.5);
            Tape::Id c = tp.add(
                tp.scale(tp.add_scalar(tp.sum_all(lv), static_cast<double>(d) * kLog2Pi),
                         -0.5),
                tp.slice_cols(log_w, j, j + 1));
            cols.push_back(tp.add_rowvec(s, c));
        }
        Tape::Id nll = tp.neg(tp.mean_all(tp.logsumexp_cols(tp.concat_cols(cols))));
        const double nll_val = tp.value(nll)[0];
        if (!std::isfinite(nll_val)) {
            throw TrainingError("gmm loss diverged", static_cast<long>(step));
        }
        opt.zero_grad();
        tp.backward(nll);
        opt.step();

        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
            GaussianMixture cur = snapshot();
            const double nll_full = gmm_nll(cur, data);
            if (nll_full < best_nll) {
                best_nll = nll_full;
                best = std::move(cur);
            }
        }
    }

    bool floored = false;
    for (std::size_t k = 0; k < best.variances.size(); ++k) {
        if (best.variances[k] <= cfg.variance_floor * (1.0 + 1e-9)) floored = true;
    }
    if (floored) {
        std::cerr << "gmm_fit: variance floor engaged (possible component collapse)\n";
    }
    best.validate();
    return best;
}

std::size_t gmm_assign(const GaussianMixture& g, const double* x) {
    std::size_t arg = 0;
    double best = g.component_log_density(0, x);
    for (std::size_t j = 1; j < g.components(); ++j) {
        const double v = g.component_log_density(j, x);
        if (v > best) {
            best = v;
            arg = j;
        }
    }
    return arg;
}

std::vector<std::size_t> gmm_assign_batch(const GaussianMixture& g, const Matrix& x) {
    if (x.cols() != g.dim()) throw ContractError("gmm_assign: dim mismatch");
    std::vector<std::size_t> ids(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) ids[i] = gmm_assign(g, x.data() + i * g.dim());
    return ids;
}

std::vector<std::size_t> gmm_sample_ids(const GaussianMixture& g, std::size_t k_draws,
                                        std::uint64_t seed) {
    g.validate();
    std::vector<double> cdf(g.weights.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < g.weights.size(); ++j) {
        acc += g.weights[j];
        cdf[j] = acc;
    }
    cdf.back() = 1.0;
    std::vector<std::size_t> ids(k_draws);
    Rng rng(seed);
    for (std::size_t i = 0; i < k_draws; ++i) {
        const double u = rng.uniform();
        std::size_t j = 0;
        while (j + 1 < cdf.size() && u >= cdf[j]) ++j;
        ids[i] = j;
    }
    return ids;
}

}  // namespace lcfm
