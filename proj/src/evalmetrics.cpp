#include "lcfm/evalmetrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

#include "lcfm/errors.hpp"

namespace lcfm {
namespace {

// exp with ~1e-9 relative accuracy; branch-free so the Sinkhorn inner loops
// vectorize. Only called on max-shifted arguments (x <= 0), where values
// below exp(-700) ~ 1e-304 cannot influence any sum that includes exp(0).
inline double fast_exp(double x) {
    x = std::max(x, -700.0);
    double t = x * 1.4426950408889634;  // x / ln 2
    // Round to nearest int via the 2^52 + 2^51 shifter; |t| < 2^31 here.
    double tk = t + 6755399441055744.0;
    std::int64_t shifted;
    std::memcpy(&shifted, &tk, sizeof shifted);
    std::int64_t ki = std::int32_t(shifted);  // low 32 bits, sign-extended
    double k = double(ki);
    double r = x - k * 0.6931471805599453;  // Cody-Waite split of ln 2
    r -= k * 2.3190468138462996e-17;
    double p = 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    std::int64_t bits;
    std::memcpy(&bits, &p, sizeof bits);
    bits += ki << 52;
    std::memcpy(&p, &bits, sizeof p);
    return p;
}

struct Cloud {
    const double* pts;
    const double* sqnorm;
    std::size_t n, d;
};

// out_i = -eps (log(1/cols.n) + LSE_j((g_j - |r_i - c_j|^2) / eps))
void lse_update(const Cloud& rows, const Cloud& cols, const std::vector<double>& g,
                double eps, std::vector<double>& out, std::vector<double>& scratch) {
    const double inv_eps = 1.0 / eps;
    const double log_w = -std::log(double(cols.n));
    const std::size_t m = cols.n;
    const double* cp = cols.pts;
    const double* cn = cols.sqnorm;
    const double* gp = g.data();
    scratch.resize(m);
    double* sc = scratch.data();
    for (std::size_t i = 0; i < rows.n; ++i) {
        const double* ri = rows.pts + i * rows.d;
        const double ni = rows.sqnorm[i];
        double mx = -std::numeric_limits<double>::infinity();
        // d = 1 and d = 2 dominate; keeping their inner loops free of the
        // dimension loop lets them vectorize.
        if (rows.d == 1) {
            const double r0 = ri[0];
            for (std::size_t j = 0; j < m; ++j) {
                double v = (gp[j] - (ni + cn[j] - 2.0 * r0 * cp[j])) * inv_eps;
                sc[j] = v;
                mx = std::max(mx, v);
            }
        } else if (rows.d == 2) {
            const double r0 = ri[0], r1 = ri[1];
            for (std::size_t j = 0; j < m; ++j) {
                double dot = r0 * cp[2 * j] + r1 * cp[2 * j + 1];
                double v = (gp[j] - (ni + cn[j] - 2.0 * dot)) * inv_eps;
                sc[j] = v;
                mx = std::max(mx, v);
            }
        } else {
            for (std::size_t j = 0; j < m; ++j) {
                const double* cj = cp + j * cols.d;
                double dot = 0.0;
                for (std::size_t k = 0; k < rows.d; ++k) dot += ri[k] * cj[k];
                double v = (gp[j] - (ni + cn[j] - 2.0 * dot)) * inv_eps;
                sc[j] = v;
                mx = std::max(mx, v);
            }
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) sum += fast_exp(sc[j] - mx);
        out[i] = -eps * (log_w + mx + std::log(sum));
    }
}

std::vector<double> row_sqnorms(const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < m.cols(); ++k) s += m(i, k) * m(i, k);
        out[i] = s;
    }
    return out;
}

// Squared diameter bound of the union cloud: per-dim range, summed.
double squared_scale(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) {
        double lo = a(0, k), hi = a(0, k);
        for (std::size_t i = 0; i < a.rows(); ++i) {
            lo = std::min(lo, a(i, k));
            hi = std::max(hi, a(i, k));
        }
        for (std::size_t i = 0; i < b.rows(); ++i) {
            lo = std::min(lo, b(i, k));
            hi = std::max(hi, b(i, k));
        }
        s += (hi - lo) * (hi - lo);
    }
    return s;
}

std::vector<double> epsilon_schedule(double scale_sq, double eps_target) {
    std::vector<double> eps;
    double e = std::max(scale_sq, eps_target);
    while (e > eps_target) {
        eps.push_back(e);
        e *= 0.5;
    }
    eps.push_back(eps_target);
    return eps;
}

struct OtSolution {
    std::vector<double> f, g;
    bool converged = true;
    std::size_t sweeps = 0;
};

OtSolution solve_ot(const Cloud& ca, const Cloud& cb, const std::vector<double>& eps_levels,
                    std::size_t max_iters, double tol) {
    OtSolution sol;
    sol.f.assign(ca.n, 0.0);
    sol.g.assign(cb.n, 0.0);
    std::vector<double> tf(ca.n), tg(cb.n), scratch;
    auto sweep = [&](double eps) {
        lse_update(ca, cb, sol.g, eps, tf, scratch);
        lse_update(cb, ca, sol.f, eps, tg, scratch);
        // Convergence watches both potentials so (a, b) and (b, a) runs stop
        // after identical sweep counts (exact symmetry of the estimate).
        double change = 0.0;
        for (std::size_t i = 0; i < ca.n; ++i) {
            double nf = 0.5 * (sol.f[i] + tf[i]);
            change = std::max(change, std::abs(nf - sol.f[i]));
            sol.f[i] = nf;
        }
        for (std::size_t j = 0; j < cb.n; ++j) {
            double ng = 0.5 * (sol.g[j] + tg[j]);
            change = std::max(change, std::abs(ng - sol.g[j]));
            sol.g[j] = ng;
        }
        ++sol.sweeps;
        return change;
    };
    for (double eps : eps_levels) sweep(eps);
    double eps = eps_levels.back();
    sol.converged = false;
    for (std::size_t it = 0; it < max_iters; ++it) {
        if (sweep(eps) <= tol) {
            sol.converged = true;
            break;
        }
    }
    return sol;
}

// Self-transport potential of one cloud (f = g = p by symmetry).
std::vector<double> solve_self(const Cloud& c, const std::vector<double>& eps_levels,
                               std::size_t max_iters, double tol) {
    std::vector<double> p(c.n, 0.0), tp(c.n), scratch;
    auto sweep = [&](double eps) {
        lse_update(c, c, p, eps, tp, scratch);
        double change = 0.0;
        for (std::size_t i = 0; i < c.n; ++i) {
            double np = 0.5 * (p[i] + tp[i]);
            change = std::max(change, std::abs(np - p[i]));
            p[i] = np;
        }
        return change;
    };
    for (double eps : eps_levels) sweep(eps);
    double eps = eps_levels.back();
    for (std::size_t it = 0; it < max_iters; ++it)
        if (sweep(eps) <= tol) break;
    return p;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    double pos = q * double(sorted.size() - 1);
    std::size_t lo = std::size_t(pos);
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double w = pos - double(lo);
    return sorted[lo] * (1.0 - w) + sorted[hi] * w;
}

}  // namespace

void SinkhornConfig::validate() const {
    if (!(blur > 0.0)) throw ConfigError("sinkhorn blur must be positive");
    if (!(tol > 0.0)) throw ConfigError("sinkhorn tol must be positive");
}

SinkhornResult sinkhorn_w2_report(const Matrix& a, const Matrix& b, const SinkhornConfig& cfg) {
    cfg.validate();
    if (a.rows() == 0 || b.rows() == 0) throw ContractError("sinkhorn_w2 needs nonempty batches");
    if (a.cols() != b.cols())
        throw ContractError("sinkhorn_w2 dimension mismatch: " + a.shape_str() + " vs " +
                            b.shape_str());

    std::vector<double> na = row_sqnorms(a), nb = row_sqnorms(b);
    Cloud ca{a.data(), na.data(), a.rows(), a.cols()};
    Cloud cb{b.data(), nb.data(), b.rows(), b.cols()};
    const double eps_target = cfg.blur * cfg.blur;
    std::vector<double> levels = epsilon_schedule(squared_scale(a, b), eps_target);

    OtSolution ab = solve_ot(ca, cb, levels, cfg.max_iters, cfg.tol);
    SinkhornResult res;
    res.converged = ab.converged;
    res.sweeps = ab.sweeps;

    double s = 0.0;
    if (cfg.debias) {
        std::vector<double> pa = solve_self(ca, levels, cfg.max_iters, cfg.tol);
        std::vector<double> pb = solve_self(cb, levels, cfg.max_iters, cfg.tol);
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < ca.n; ++i) sa += ab.f[i] - pa[i];
        for (std::size_t j = 0; j < cb.n; ++j) sb += ab.g[j] - pb[j];
        s = sa / double(ca.n) + sb / double(cb.n);
    } else {
        double sa = 0.0, sb = 0.0;
        for (double v : ab.f) sa += v;
        for (double v : ab.g) sb += v;
        s = sa / double(ca.n) + sb / double(cb.n);
    }
    res.value = std::sqrt(std::max(0.0, s));
    return res;
}

double sinkhorn_w2(const Matrix& a, const Matrix& b, const SinkhornConfig& cfg) {
    return sinkhorn_w2_report(a, b, cfg).value;
}

double sinkhorn_divergence(const Matrix& a, const Matrix& b, const SinkhornConfig& cfg) {
    double v = sinkhorn_w2(a, b, cfg);
    return 0.5 * v * v;
}

KernelDistances kernel_distances(const Matrix& a, const Matrix& b) {
    if (a.rows() == 0 || b.rows() == 0)
        throw ContractError("kernel_distances needs nonempty batches");
    if (a.cols() != b.cols())
        throw ContractError("kernel_distances dimension mismatch: " + a.shape_str() + " vs " +
                            b.shape_str());
    const std::size_t d = a.cols();
    auto dist = [&](const Matrix& x, std::size_t i, const Matrix& y, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            double diff = x(i, k) - y(j, k);
            s += diff * diff;
        }
        return std::sqrt(s);
    };

    // Median-heuristic bandwidth over the pooled cloud (strided subsample).
    const std::size_t total = a.rows() + b.rows();
    const std::size_t cap = 2048;
    const std::size_t stride = (total + cap - 1) / cap;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < total; i += stride) pool.push_back(i);
    auto pooled = [&](std::size_t idx, std::size_t k) {
        return idx < a.rows() ? a(idx, k) : b(idx - a.rows(), k);
    };
    std::vector<double> dists;
    dists.reserve(pool.size() * (pool.size() - 1) / 2);
    for (std::size_t u = 0; u < pool.size(); ++u)
        for (std::size_t v = u + 1; v < pool.size(); ++v) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                double diff = pooled(pool[u], k) - pooled(pool[v], k);
                s += diff * diff;
            }
            dists.push_back(std::sqrt(s));
        }
    double bandwidth = 1.0;
    if (!dists.empty()) {
        std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
        bandwidth = dists[dists.size() / 2];
    }
    if (bandwidth <= 0.0) bandwidth = 1.0;

    auto stats = [&](const Matrix& x, const Matrix& y) {
        // mean distance, mean gaussian kernel, mean laplacian kernel
        double sd = 0.0, sg = 0.0, sl = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < y.rows(); ++j) {
                double r = dist(x, i, y, j);
                sd += r;
                sg += fast_exp(-r * r / (2.0 * bandwidth * bandwidth));
                sl += fast_exp(-r / bandwidth);
            }
        double m = double(x.rows()) * double(y.rows());
        return std::array<double, 3>{sd / m, sg / m, sl / m};
    };
    auto saa = stats(a, a);
    auto sbb = stats(b, b);
    auto sab = stats(a, b);

    KernelDistances out;
    out.bandwidth = bandwidth;
    out.energy = 2.0 * sab[0] - saa[0] - sbb[0];
    out.gaussian_mmd = std::sqrt(std::max(0.0, saa[1] + sbb[1] - 2.0 * sab[1]));
    out.laplacian_mmd = std::sqrt(std::max(0.0, saa[2] + sbb[2] - 2.0 * sab[2]));
    return out;
}

ModeCoverage mode_coverage(const Matrix& samples, const TriangleConfig& cfg) {
    cfg.validate();
    if (samples.rows() > 0 && samples.cols() != cfg.d)
        throw ContractError("mode_coverage expects " + std::to_string(cfg.d) + " columns");
    ModeCoverage out;
    out.counts.assign(cfg.n_modes(), 0);
    out.n = samples.rows();
    std::size_t outside = 0;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        const double* x = samples.data() + i * samples.cols();
        ++out.counts[triangle_mode_cell(cfg, x)];
        if (!triangle_in_support(cfg, x)) ++outside;
    }
    for (std::size_t c = 0; c < out.counts.size(); ++c)
        if (out.counts[c] == 0) out.missing.push_back(c);
    out.outside_fraction = out.n == 0 ? 0.0 : double(outside) / double(out.n);
    return out;
}

double darcy_residual(const FieldPair& pair, const DarcyConfig& cfg,
                      const Matrix* source_override) {
    const std::size_t n = cfg.grid;
    if (pair.K.rows() != n || pair.K.cols() != n || pair.p.rows() != n || pair.p.cols() != n)
        throw ContractError("darcy_residual expects " + std::to_string(n) + "x" +
                            std::to_string(n) + " fields, got K " + pair.K.shape_str() +
                            ", p " + pair.p.shape_str());
    if (n < 4) throw ContractError("darcy_residual needs grid >= 4 for one-sided stencils");
    const double h = 1.0 / double(n);
    Matrix f = source_override ? *source_override : darcy_source(cfg);
    if (f.rows() != n || f.cols() != n)
        throw ContractError("darcy_residual source override must be " + std::to_string(n) + "x" +
                            std::to_string(n));

    // value, first and second derivative along one axis at index i of row v.
    auto d1 = [&](auto at, std::size_t i) {
        if (i == 0) return (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
        if (i == n - 1) return (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h);
        return (at(i + 1) - at(i - 1)) / (2.0 * h);
    };
    auto d2 = [&](auto at, std::size_t i) {
        if (i == 0) return (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) / (h * h);
        if (i == n - 1)
            return (2.0 * at(n - 1) - 5.0 * at(n - 2) + 4.0 * at(n - 3) - at(n - 4)) / (h * h);
        return (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h);
    };

    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            auto k_row = [&](std::size_t jj) { return pair.K(i, jj); };
            auto k_col = [&](std::size_t ii) { return pair.K(ii, j); };
            auto p_row = [&](std::size_t jj) { return pair.p(i, jj); };
            auto p_col = [&](std::size_t ii) { return pair.p(ii, j); };
            double r = f(i, j) + pair.K(i, j) * (d2(p_row, j) + d2(p_col, i)) +
                       d1(k_row, j) * d1(p_row, j) + d1(k_col, i) * d1(p_col, i);
            sum += r * r;
        }
    }
    return sum / double(n * n);
}

ResidualReport darcy_residual_report(const Matrix& pairs, const DarcyConfig& cfg) {
    const std::size_t n = cfg.grid;
    const std::size_t cells = n * n;
    if (pairs.cols() != 2 * cells)
        throw ContractError("darcy_residual_report expects rows of [K | p] with " +
                            std::to_string(2 * cells) + " columns");
    ResidualReport rep;
    rep.per_sample.reserve(pairs.rows());
    FieldPair pair{Matrix(n, n), Matrix(n, n)};
    for (std::size_t r = 0; r < pairs.rows(); ++r) {
        const double* row = pairs.data() + r * pairs.cols();
        std::copy(row, row + cells, pair.K.data());
        std::copy(row + cells, row + 2 * cells, pair.p.data());
        rep.per_sample.push_back(darcy_residual(pair, cfg));
    }
    std::vector<double> sorted = rep.per_sample;
    std::sort(sorted.begin(), sorted.end());
    double total = 0.0;
    for (double v : sorted) total += v;
    rep.mean = sorted.empty() ? 0.0 : total / double(sorted.size());
    rep.median = quantile_sorted(sorted, 0.5);
    rep.q25 = quantile_sorted(sorted, 0.25);
    rep.q75 = quantile_sorted(sorted, 0.75);
    return rep;
}

}  // namespace lcfm
