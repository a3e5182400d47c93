#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "lcfm/darcy.hpp"
#include "lcfm/errors.hpp"
#include "lcfm/triangle.hpp"

using namespace lcfm;

TEST_CASE("triangle ground truth has k^d modes") {
    TriangleConfig cfg;
    cfg.k = 4;
    cfg.d = 2;
    CHECK(cfg.n_modes() == 16);
}

TEST_CASE("k=1 samples are unimodal and inside the single support") {
    TriangleConfig cfg;
    cfg.k = 1;
    cfg.d = 2;
    cfg.seed = 5;
    Matrix s = sample_triangle(cfg, 2000);
    for (std::size_t i = 0; i < s.rows(); ++i) {
        CHECK(triangle_mode_cell(cfg, s.data() + i * 2) == 0);
        CHECK(triangle_in_support(cfg, s.data() + i * 2));
    }
}

TEST_CASE("uniform weights spread 100k samples at 6.25% per cell") {
    TriangleConfig cfg;
    cfg.seed = 11;
    const std::size_t n = 100000;
    Matrix s = sample_triangle(cfg, n);
    std::vector<std::size_t> counts(cfg.n_modes(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[triangle_mode_cell(cfg, s.data() + i * 2)];
    for (std::size_t c = 0; c < counts.size(); ++c) {
        const double freq = static_cast<double>(counts[c]) / static_cast<double>(n);
        CHECK(freq == doctest::Approx(0.0625).epsilon(0.08));  // 6.25% +- 0.5%pt
        CHECK(std::fabs(freq - 0.0625) <= 0.005);
    }
}

TEST_CASE("all samples lie in the union of mode supports") {
    for (std::size_t preset = 0; preset < kTriangleWeightPresets; ++preset) {
        TriangleConfig cfg;
        cfg.weights = triangle_weight_preset(preset, 4);
        cfg.seed = 100 + preset;
        Matrix s = sample_triangle(cfg, 5000);
        std::size_t outside = 0;
        for (std::size_t i = 0; i < s.rows(); ++i) {
            if (!triangle_in_support(cfg, s.data() + i * 2)) ++outside;
        }
        CHECK(outside == 0);
    }
}

TEST_CASE("nonuniform weights are respected") {
    TriangleConfig cfg;
    cfg.weights = {0.4, 0.3, 0.2, 0.1};
    cfg.d = 1;
    cfg.seed = 3;
    const std::size_t n = 200000;
    Matrix s = sample_triangle(cfg, n);
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[triangle_mode_cell(cfg, s.data() + i)];
    for (std::size_t m = 0; m < 4; ++m) {
        const double freq = static_cast<double>(counts[m]) / static_cast<double>(n);
        CHECK(std::fabs(freq - cfg.weights[m]) <= 0.005);
    }
}

TEST_CASE("invalid weights are rejected") {
    TriangleConfig cfg;
    cfg.weights = {0.5, 0.5, 0.1, -0.1};
    CHECK_THROWS_AS(sample_triangle(cfg, 10), ConfigError);
    cfg.weights = {0.3, 0.3, 0.3, 0.3};
    CHECK_THROWS_AS(sample_triangle(cfg, 10), ConfigError);
    cfg.weights = {0.5, 0.5};
    CHECK_THROWS_AS(sample_triangle(cfg, 10), ConfigError);
}

TEST_CASE("seeded regeneration is byte-identical, prefixes included") {
    TriangleConfig cfg;
    cfg.seed = 77;
    Matrix a = sample_triangle(cfg, 1000);
    Matrix b = sample_triangle(cfg, 1000);
    Matrix prefix = sample_triangle(cfg, 100);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
    for (std::size_t k = 0; k < prefix.size(); ++k) CHECK(prefix[k] == a[k]);
}

TEST_CASE("triangle density integrates to one") {
    TriangleConfig cfg;
    cfg.weights = triangle_weight_preset(3, 4);
    // Midpoint rule over the support bounding box.
    const double lo = cfg.center(0) - cfg.width, hi = cfg.center(3) + cfg.width;
    const std::size_t g = 600;
    const double step = (hi - lo) / static_cast<double>(g);
    double integral = 0.0;
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < g; ++j) {
            const double x[2] = {lo + (i + 0.5) * step, lo + (j + 0.5) * step};
            integral += triangle_density(cfg, x) * step * step;
        }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("cell weights multiply per-dim weights") {
    TriangleConfig cfg;
    cfg.weights = {0.4, 0.3, 0.2, 0.1};
    // cell id = m0 + 4*m1
    CHECK(triangle_cell_weight(cfg, 0) == doctest::Approx(0.16));
    CHECK(triangle_cell_weight(cfg, 1 + 4 * 3) == doctest::Approx(0.3 * 0.1));
    double total = 0.0;
    for (std::size_t c = 0; c < 16; ++c) total += triangle_cell_weight(cfg, c);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("grf with zero kl terms is the constant exp(mean) field") {
    DarcyConfig cfg;
    cfg.grid = 16;
    cfg.kl_terms = 0;
    cfg.grf_mean = 0.7;
    Matrix k = sample_grf(cfg, 0);
    for (std::size_t a = 0; a < k.size(); ++a)
        CHECK(k[a] == doctest::Approx(std::exp(0.7)).epsilon(1e-12));
}

TEST_CASE("grf eigenvalues are non-increasing and positive") {
    DarcyConfig cfg;
    cfg.grid = 16;
    GrfBasis basis = grf_basis(cfg);
    REQUIRE(basis.eigenvalues.size() == 16);
    for (std::size_t i = 0; i + 1 < basis.eigenvalues.size(); ++i) {
        CHECK(basis.eigenvalues[i] >= basis.eigenvalues[i + 1]);
    }
    CHECK(basis.eigenvalues.back() > 0.0);
    // Rows orthonormal.
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (std::size_t a = 0; a < basis.eigenvectors.cols(); ++a)
                dot += basis.eigenvectors(i, a) * basis.eigenvectors(j, a);
            CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
        }
}

TEST_CASE("monte carlo log-permeability variance matches the spectral sum") {
    DarcyConfig cfg;
    cfg.grid = 16;
    cfg.grf_mean = 0.0;
    cfg.seed = 9;
    GrfBasis basis = grf_basis(cfg);
    const std::size_t m = cfg.grid * cfg.grid;
    double spectral = 0.0;
    for (double l : basis.eigenvalues) spectral += l / static_cast<double>(m);

    const std::size_t draws = 2000;
    std::vector<double> sum(m, 0.0), sum2(m, 0.0);
    for (std::size_t i = 0; i < draws; ++i) {
        Rng rng = Rng::derive(cfg.seed, i);
        Matrix k = sample_grf(cfg, basis, rng);
        for (std::size_t a = 0; a < m; ++a) {
            const double g = std::log(k[a]);
            sum[a] += g;
            sum2[a] += g * g;
        }
    }
    double mean_var = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
        const double mu = sum[a] / draws;
        mean_var += sum2[a] / draws - mu * mu;
    }
    mean_var /= static_cast<double>(m);
    CHECK(mean_var == doctest::Approx(spectral).epsilon(0.10));
}

TEST_CASE("iterative eigenpair extraction satisfies the eigen equation") {
    DarcyConfig cfg;
    cfg.grid = 36;  // forces the matrix-free path
    cfg.kl_terms = 8;
    GrfBasis basis = grf_basis(cfg);
    const std::size_t n = cfg.grid, m = n * n;
    const double h = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i + 1 < basis.eigenvalues.size(); ++i)
        CHECK(basis.eigenvalues[i] >= basis.eigenvalues[i + 1]);
    // Residual || C v - lambda v || should be small for the leading pairs.
    for (std::size_t e = 0; e < 3; ++e) {
        std::vector<double> cv(m, 0.0);
        for (std::size_t a = 0; a < m; ++a) {
            const double ax = static_cast<double>(a % n) * h;
            const double ay = static_cast<double>(a / n) * h;
            for (std::size_t b = 0; b < m; ++b) {
                const double bx = static_cast<double>(b % n) * h;
                const double by = static_cast<double>(b / n) * h;
                const double dist = std::hypot(ax - bx, ay - by);
                cv[a] += std::exp(-dist / cfg.grf_lengthscale) * basis.eigenvectors(e, b);
            }
        }
        double resid = 0.0;
        for (std::size_t a = 0; a < m; ++a) {
            const double r = cv[a] - basis.eigenvalues[e] * basis.eigenvectors(e, a);
            resid += r * r;
        }
        CHECK(std::sqrt(resid) <= 1e-6 * basis.eigenvalues[e]);
    }
}

TEST_CASE("darcy source blocks are balanced and sized by w") {
    DarcyConfig cfg;
    cfg.grid = 32;
    Matrix f = darcy_source(cfg);
    double total = 0.0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t a = 0; a < f.size(); ++a) {
        total += f[a];
        if (f[a] > 0) ++pos;
        if (f[a] < 0) ++neg;
    }
    CHECK(std::fabs(total) <= 1e-12);
    CHECK(pos == 16);  // (w*N)^2 = 4^2 cells
    CHECK(neg == 16);
    CHECK(f(0, 0) == 10.0);
    CHECK(f(31, 31) == -10.0);
}

TEST_CASE("zero source yields the zero pressure field") {
    DarcyConfig cfg;
    cfg.grid = 16;
    Matrix K = sample_grf(cfg, 1);
    Matrix zero(16, 16);
    FieldPair pair = solve_darcy(K, cfg, &zero);
    for (std::size_t a = 0; a < pair.p.size(); ++a) CHECK(pair.p[a] == 0.0);
}

TEST_CASE("constant permeability reduces to a scaled dense poisson solve") {
    DarcyConfig cfg;
    cfg.grid = 16;
    const std::size_t n = cfg.grid, m = n * n;
    const double kconst = 2.5;
    Matrix K(n, n, kconst);
    FieldPair pair = solve_darcy(K, cfg);

    // Independent dense solve: unit Laplacian, rank completed with the
    // all-ones projector, then scaled by 1/kconst.
    Matrix f = darcy_source(cfg);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
    Matrix ones_k(n, n, 1.0);
    for (std::size_t col = 0; col < m; ++col) {
        Matrix unit(n, n);
        unit[col] = 1.0;
        Matrix au = apply_darcy_operator(ones_k, unit);
        for (std::size_t row = 0; row < m; ++row)
            a(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) = au[row];
    }
    a += Eigen::MatrixXd::Constant(m, m, 1.0 / static_cast<double>(m));
    Eigen::VectorXd rhs(m);
    for (std::size_t i = 0; i < m; ++i) rhs(static_cast<Eigen::Index>(i)) = f[i];
    Eigen::VectorXd sol = a.ldlt().solve(rhs);
    sol.array() -= sol.mean();

    double max_diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        max_diff = std::max(max_diff,
                            std::fabs(pair.p[i] - sol(static_cast<Eigen::Index>(i)) / kconst));
        scale = std::max(scale, std::fabs(pair.p[i]));
    }
    CHECK(max_diff <= 1e-8 * std::max(scale, 1.0));
}

TEST_CASE("solved pressure has zero mean and conserves mass") {
    DarcyConfig cfg;
    cfg.grid = 16;
    cfg.seed = 4;
    Matrix K = sample_grf(cfg, 2);
    FieldPair pair = solve_darcy(K, cfg);

    double mean_p = 0.0;
    for (std::size_t a = 0; a < pair.p.size(); ++a) mean_p += pair.p[a];
    mean_p /= static_cast<double>(pair.p.size());
    CHECK(std::fabs(mean_p) < 1e-8);

    // Discrete conservation: sum of -div(K grad p) equals sum of f_s.
    Matrix ap = apply_darcy_operator(pair.K, pair.p);
    Matrix f = darcy_source(cfg);
    double sum_ap = 0.0, sum_f = 0.0, stencil_scale = 0.0;
    for (std::size_t a = 0; a < ap.size(); ++a) {
        sum_ap += ap[a];
        sum_f += f[a];
        stencil_scale = std::max(stencil_scale, std::fabs(ap[a]));
    }
    CHECK(std::fabs(sum_ap - sum_f) <= 1e-8 * std::max(stencil_scale, 1.0));

    // The solve itself is tight: ||Ap - f|| small.
    double resid = 0.0, fnorm = 0.0;
    for (std::size_t a = 0; a < ap.size(); ++a) {
        resid += (ap[a] - f[a]) * (ap[a] - f[a]);
        fnorm += f[a] * f[a];
    }
    CHECK(std::sqrt(resid / fnorm) <= 1e-9);
}

TEST_CASE("positivity of K is enforced") {
    DarcyConfig cfg;
    cfg.grid = 16;
    Matrix K(16, 16, 1.0);
    K(3, 3) = 0.0;
    CHECK_THROWS_AS(solve_darcy(K, cfg), ContractError);
}

TEST_CASE("darcy dataset regenerates byte-identically with zero-mean pressure") {
    DarcyConfig cfg;
    cfg.grid = 16;
    cfg.seed = 21;
    Matrix a = generate_darcy_dataset(cfg, 3);
    Matrix b = generate_darcy_dataset(cfg, 3);
    REQUIRE(a.same_shape(b));
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
    const std::size_t m = cfg.grid * cfg.grid;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double mean_p = 0.0;
        for (std::size_t j = 0; j < m; ++j) mean_p += a(i, m + j);
        CHECK(std::fabs(mean_p / m) < 1e-8);
        for (std::size_t j = 0; j < m; ++j) CHECK(a(i, j) > 0.0);  // K positive
    }
}

TEST_CASE("standardize round trips and validates") {
    Matrix data(50, 8);
    Rng rng(31);
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = 3.0 + 2.0 * rng.normal();
    Matrix orig = data;
    ChannelStats st = compute_channel_stats(data, 2);
    standardize_inplace(data, st);
    // Standardized channels have mean 0, sd 1.
    ChannelStats post = compute_channel_stats(data, 2);
    CHECK(post.mean[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(post.stddev[1] == doctest::Approx(1.0).epsilon(1e-9));
    unstandardize_inplace(data, st);
    for (std::size_t k = 0; k < data.size(); ++k)
        CHECK(std::fabs(data[k] - orig[k]) <= 1e-12 * std::max(1.0, std::fabs(orig[k])));
}

TEST_CASE("paper standardization constants are accepted as overrides") {
    ChannelStats st;
    st.mean = {1.1491, 0.0};
    st.stddev = {7.8154, 0.0823};
    st.channel_width = 4;
    Matrix data(2, 8, 1.1491);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j) data(i, 4 + j) = 0.0823;
    standardize_inplace(data, st);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(data(i, j) == doctest::Approx(0.0));
            CHECK(data(i, 4 + j) == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("constant channel is rejected") {
    Matrix data(10, 4, 3.0);
    CHECK_THROWS_AS(compute_channel_stats(data, 1), ConfigError);
}
