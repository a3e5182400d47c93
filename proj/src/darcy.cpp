#include "lcfm/darcy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "lcfm/errors.hpp"

namespace lcfm {

void DarcyConfig::validate() const {
    if (grid < 8) throw ConfigError("darcy: grid must be >= 8");
    if (r <= 0) throw ConfigError("darcy: r must be > 0");
    if (w <= 0 || w >= 0.5) throw ConfigError("darcy: w must lie in (0, 0.5)");
    if (kl_terms > grid * grid) throw ConfigError("darcy: kl_terms exceeds grid size");
    if (grf_lengthscale <= 0) throw ConfigError("darcy: lengthscale must be > 0");
    if (pos_side() <= 0 || pos_side() >= 0.5 || neg_side() <= 0 || neg_side() >= 0.5) {
        throw ConfigError("darcy: source block sides must lie in (0, 0.5)");
    }
}

namespace {

// Kernel value by grid offset; distances only depend on |di|, |dj|.
std::vector<double> kernel_table(std::size_t n, double l) {
    std::vector<double> table(n * n);
    const double h = 1.0 / static_cast<double>(n);
    for (std::size_t di = 0; di < n; ++di)
        for (std::size_t dj = 0; dj < n; ++dj) {
            const double dx = static_cast<double>(di) * h;
            const double dy = static_cast<double>(dj) * h;
            table[di * n + dj] = std::exp(-std::sqrt(dx * dx + dy * dy) / l);
        }
    return table;
}

void canonical_sign(Matrix& vecs) {
    for (std::size_t i = 0; i < vecs.rows(); ++i) {
        std::size_t arg = 0;
        double best = 0.0;
        for (std::size_t j = 0; j < vecs.cols(); ++j) {
            if (std::fabs(vecs(i, j)) > best) {
                best = std::fabs(vecs(i, j));
                arg = j;
            }
        }
        if (vecs(i, arg) < 0.0) {
            for (std::size_t j = 0; j < vecs.cols(); ++j) vecs(i, j) = -vecs(i, j);
        }
    }
}

GrfBasis dense_basis(const DarcyConfig& cfg) {
    const std::size_t n = cfg.grid;
    const std::size_t m = n * n;
    const std::vector<double> table = kernel_table(n, cfg.grf_lengthscale);
    Eigen::MatrixXd cov(m, m);
    for (std::size_t a = 0; a < m; ++a) {
        const std::size_t ai = a / n, aj = a % n;
        for (std::size_t b = a; b < m; ++b) {
            const std::size_t bi = b / n, bj = b % n;
            const std::size_t di = ai > bi ? ai - bi : bi - ai;
            const std::size_t dj = aj > bj ? aj - bj : bj - aj;
            const double v = table[di * n + dj];
            cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
            cov(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("grf eigendecomposition failed");

    GrfBasis basis;
    basis.grid = n;
    basis.eigenvalues.resize(cfg.kl_terms);
    basis.eigenvectors = Matrix(cfg.kl_terms, m);
    // Eigen returns ascending order; take the top kl_terms, descending.
    for (std::size_t i = 0; i < cfg.kl_terms; ++i) {
        const auto src = static_cast<Eigen::Index>(m - 1 - i);
        basis.eigenvalues[i] = eig.eigenvalues()(src);
        for (std::size_t j = 0; j < m; ++j) {
            basis.eigenvectors(i, j) = eig.eigenvectors()(static_cast<Eigen::Index>(j), src);
        }
    }
    canonical_sign(basis.eigenvectors);
    return basis;
}

// Block subspace iteration with a matrix-free covariance product.
GrfBasis iterative_basis(const DarcyConfig& cfg) {
    const std::size_t n = cfg.grid;
    const std::size_t m = n * n;
    const std::size_t want = cfg.kl_terms;
    const std::size_t block = std::min(m, want + 8);
    const std::vector<double> table = kernel_table(n, cfg.grf_lengthscale);

    auto cov_apply = [&](const Eigen::MatrixXd& x) {
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), x.cols());
        for (std::size_t a = 0; a < m; ++a) {
            const std::size_t ai = a / n, aj = a % n;
            for (std::size_t b = 0; b < m; ++b) {
                const std::size_t bi = b / n, bj = b % n;
                const std::size_t di = ai > bi ? ai - bi : bi - ai;
                const std::size_t dj = aj > bj ? aj - bj : bj - aj;
                const double k = table[di * n + dj];
                y.row(static_cast<Eigen::Index>(a)) +=
                    k * x.row(static_cast<Eigen::Index>(b));
            }
        }
        return y;
    };

    Rng rng = Rng::derive(0x6b7a5u, 17);  // basis init is fixed, not data-seeded
    Eigen::MatrixXd x(m, block);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::VectorXd prev = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(block));
    Eigen::MatrixXd y;
    for (int iter = 0; iter < 300; ++iter) {
        x = Eigen::HouseholderQR<Eigen::MatrixXd>(x).householderQ() *
            Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m),
                                      static_cast<Eigen::Index>(block));
        y = cov_apply(x);
        Eigen::VectorXd estimates = (x.transpose() * y).diagonal();
        const double rel = (estimates - prev).cwiseAbs().maxCoeff() /
                           std::max(estimates.cwiseAbs().maxCoeff(), 1e-300);
        prev = estimates;
        x = y;
        if (iter > 4 && rel < 1e-11) break;
    }
    // Rayleigh-Ritz on the converged subspace.
    x = Eigen::HouseholderQR<Eigen::MatrixXd>(x).householderQ() *
        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m),
                                  static_cast<Eigen::Index>(block));
    y = cov_apply(x);
    Eigen::MatrixXd small = x.transpose() * y;
    small = 0.5 * (small + small.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(small);
    if (eig.info() != Eigen::Success) throw NumericError("grf subspace eigensolve failed");
    Eigen::MatrixXd ritz = x * eig.eigenvectors();

    GrfBasis basis;
    basis.grid = n;
    basis.eigenvalues.resize(want);
    basis.eigenvectors = Matrix(want, m);
    for (std::size_t i = 0; i < want; ++i) {
        const auto src = static_cast<Eigen::Index>(block - 1 - i);
        basis.eigenvalues[i] = eig.eigenvalues()(src);
        for (std::size_t j = 0; j < m; ++j) {
            basis.eigenvectors(i, j) = ritz(static_cast<Eigen::Index>(j), src);
        }
    }
    canonical_sign(basis.eigenvectors);
    return basis;
}

}  // namespace

GrfBasis grf_basis(const DarcyConfig& cfg) {
    cfg.validate();
    return cfg.grid <= 32 ? dense_basis(cfg) : iterative_basis(cfg);
}

Matrix sample_grf(const DarcyConfig& cfg, const GrfBasis& basis, Rng& rng) {
    const std::size_t n = cfg.grid;
    if (basis.grid != n) throw ContractError("grf basis grid mismatch");
    Matrix field(n, n, cfg.grf_mean);
    for (std::size_t i = 0; i < basis.eigenvalues.size(); ++i) {
        const double amp = std::sqrt(std::max(basis.eigenvalues[i], 0.0)) * rng.normal();
        const double* phi = basis.eigenvectors.data() + i * n * n;
        for (std::size_t a = 0; a < n * n; ++a) field[a] += amp * phi[a];
    }
    for (std::size_t a = 0; a < n * n; ++a) field[a] = std::exp(field[a]);
    return field;
}

Matrix sample_grf(const DarcyConfig& cfg, std::size_t index) {
    const GrfBasis basis = grf_basis(cfg);
    Rng rng = Rng::derive(cfg.seed, index);
    return sample_grf(cfg, basis, rng);
}

Matrix darcy_source(const DarcyConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.grid;
    const double h = 1.0 / static_cast<double>(n);
    Matrix f(n, n);
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x2 = (static_cast<double>(i) + 0.5) * h;
        for (std::size_t j = 0; j < n; ++j) {
            const double x1 = (static_cast<double>(j) + 0.5) * h;
            if (x1 <= cfg.pos_side() && x2 <= cfg.pos_side()) {
                f(i, j) = cfg.r;
                ++n_pos;
            } else if (x1 >= 1.0 - cfg.neg_side() && x2 >= 1.0 - cfg.neg_side()) {
                f(i, j) = -cfg.r;
                ++n_neg;
            }
        }
    }
    if (n_pos == 0 || n_neg == 0) throw ConfigError("darcy: source blocks cover no cells");
    // Balance the blocks exactly so the Neumann problem is solvable.
    if (n_pos != n_neg) {
        const double scale = static_cast<double>(n_pos) / static_cast<double>(n_neg);
        for (std::size_t a = 0; a < f.size(); ++a)
            if (f[a] < 0.0) f[a] *= scale;
    }
    return f;
}

Matrix apply_darcy_operator(const Matrix& K, const Matrix& p) {
    if (!K.same_shape(p) || K.rows() != K.cols()) {
        throw ContractError("darcy operator: K and p must be square and same shape");
    }
    const std::size_t n = K.rows();
    const double inv_h2 = static_cast<double>(n) * static_cast<double>(n);
    Matrix y(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            if (j + 1 < n) acc += 0.5 * (K(i, j) + K(i, j + 1)) * (p(i, j) - p(i, j + 1));
            if (j > 0) acc += 0.5 * (K(i, j) + K(i, j - 1)) * (p(i, j) - p(i, j - 1));
            if (i + 1 < n) acc += 0.5 * (K(i, j) + K(i + 1, j)) * (p(i, j) - p(i + 1, j));
            if (i > 0) acc += 0.5 * (K(i, j) + K(i - 1, j)) * (p(i, j) - p(i - 1, j));
            y(i, j) = acc * inv_h2;
        }
    }
    return y;
}

namespace {

void project_mean_zero(Matrix& v) {
    double mean = 0.0;
    for (std::size_t a = 0; a < v.size(); ++a) mean += v[a];
    mean /= static_cast<double>(v.size());
    for (std::size_t a = 0; a < v.size(); ++a) v[a] -= mean;
}

double dot(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

}  // namespace

FieldPair solve_darcy(const Matrix& K, const DarcyConfig& cfg,
                      const Matrix* source_override) {
    cfg.validate();
    const std::size_t n = cfg.grid;
    if (K.rows() != n || K.cols() != n) throw ContractError("solve_darcy: K shape mismatch");
    for (std::size_t a = 0; a < K.size(); ++a) {
        if (!(K[a] > 0.0)) throw ContractError("solve_darcy: K must be positive");
    }
    Matrix f = source_override ? *source_override : darcy_source(cfg);
    if (!f.same_shape(K)) throw ContractError("solve_darcy: source shape mismatch");
    project_mean_zero(f);

    // Jacobi-preconditioned CG on the mean-zero subspace.
    Matrix diag(n, n);
    {
        Matrix unit(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double inv_h2 = static_cast<double>(n) * static_cast<double>(n);
                double d = 0.0;
                if (j + 1 < n) d += 0.5 * (K(i, j) + K(i, j + 1));
                if (j > 0) d += 0.5 * (K(i, j) + K(i, j - 1));
                if (i + 1 < n) d += 0.5 * (K(i, j) + K(i + 1, j));
                if (i > 0) d += 0.5 * (K(i, j) + K(i - 1, j));
                diag(i, j) = d * inv_h2;
            }
    }

    Matrix p(n, n);
    Matrix r = f;
    Matrix z = r;
    for (std::size_t a = 0; a < z.size(); ++a) z[a] /= diag[a];
    project_mean_zero(z);
    Matrix d = z;
    double rz = dot(r, z);
    const double f_norm = std::sqrt(dot(f, f));
    if (f_norm == 0.0) return {K, p};

    const std::size_t max_iters = 20 * n * n;
    for (std::size_t it = 0; it < max_iters; ++it) {
        Matrix ad = apply_darcy_operator(K, d);
        const double alpha = rz / dot(d, ad);
        for (std::size_t a = 0; a < p.size(); ++a) p[a] += alpha * d[a];
        for (std::size_t a = 0; a < r.size(); ++a) r[a] -= alpha * ad[a];
        if (std::sqrt(dot(r, r)) / f_norm <= cfg.cg_tol) {
            project_mean_zero(p);
            return {K, p};
        }
        z = r;
        for (std::size_t a = 0; a < z.size(); ++a) z[a] /= diag[a];
        project_mean_zero(z);
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t a = 0; a < d.size(); ++a) d[a] = z[a] + beta * d[a];
    }
    throw NumericError("darcy CG did not converge within " + std::to_string(max_iters) +
                       " iterations");
}

Matrix generate_darcy_dataset(const DarcyConfig& cfg, std::size_t n) {
    cfg.validate();
    if (n == 0) throw ContractError("generate_darcy_dataset: n must be > 0");
    const GrfBasis basis = grf_basis(cfg);
    const std::size_t m = cfg.grid * cfg.grid;
    Matrix out(n, 2 * m);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::derive(cfg.seed, i);
        const Matrix K = sample_grf(cfg, basis, rng);
        const FieldPair pair = solve_darcy(K, cfg);
        for (std::size_t a = 0; a < m; ++a) out(i, a) = pair.K[a];
        for (std::size_t a = 0; a < m; ++a) out(i, m + a) = pair.p[a];
    }
    return out;
}

}  // namespace lcfm
