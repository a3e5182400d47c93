#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lcfm/errors.hpp"
#include "lcfm/evalmetrics.hpp"
#include "lcfm/pipeline.hpp"
#include "lcfm/triangle.hpp"

using namespace lcfm;

namespace {

struct TriangleData {
    TriangleConfig cfg;
    Matrix train, test;
};

// Uniform-weight 16-mode triangle, 50/50 split.
TriangleData triangle_data(std::size_t n_total = 40000, std::uint64_t seed = 11) {
    TriangleData d;
    d.cfg.k = 4;
    d.cfg.d = 2;
    d.cfg.seed = seed;
    Matrix all = sample_triangle(d.cfg, n_total);
    const std::size_t half = n_total / 2;
    d.train = Matrix(half, 2);
    d.test = Matrix(half, 2);
    for (std::size_t i = 0; i < half; ++i) {
        d.train.set_row(i, all.row(i));
        d.test.set_row(i, all.row(half + i));
    }
    return d;
}

double column_mean(const Matrix& m, std::size_t c) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, c);
    return s / double(m.rows());
}

double column_var(const Matrix& m, std::size_t c) {
    const double mu = column_mean(m, c);
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += (m(i, c) - mu) * (m(i, c) - mu);
    return s / double(m.rows() - 1);
}

// Mean per-dimension variance, averaged over columns.
double mean_var(const Matrix& m) {
    double v = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) v += column_var(m, c);
    return v / double(m.cols());
}

std::string temp_dir(const std::string& stem) {
    auto p = std::filesystem::temp_directory_path() / stem;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("train config validation and method strings") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.batch = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.method = Method::LatentCFM_GMM;
    cfg.gmm_components = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.method = Method::LatentCFM_VAE;
    cfg.latent_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    for (Method m : kAllMethods) CHECK(method_from_string(to_string(m)) == m);
    CHECK(method_from_string("otcfm") == Method::OTCFM);
    CHECK_THROWS_AS(method_from_string("diffusion"), ConfigError);
    for (VrfmView v : {VrfmView::X1Time, VrfmView::FullPath})
        CHECK(vrfm_view_from_string(to_string(v)) == v);

    // json round trip keeps every field.
    cfg = TrainConfig{};
    cfg.method = Method::VRFM_ablation;
    cfg.steps = 123;
    cfg.lr = 3e-4;
    cfg.activation = Activation::Gelu;
    cfg.vrfm_view = VrfmView::FullPath;
    cfg.encoder_hidden = {8, 16};
    nlohmann::json j = cfg;
    TrainConfig back = j.get<TrainConfig>();
    CHECK(nlohmann::json(back) == j);
}

TEST_CASE("zero training steps return an initialized model and no metric rows") {
    TriangleData d = triangle_data(2000);
    TrainConfig cfg;
    cfg.method = Method::ICFM;
    cfg.steps = 0;
    cfg.eval_every = 10;
    cfg.hidden = 16;
    TrainResult res = train(cfg, d.train);
    CHECK(res.record.metrics.empty());
    CHECK(res.record.final_step == 0);
    SampleConfig sc;
    sc.seed = 4;
    Matrix s = sample(res.bundle, 8, sc);
    CHECK(s.rows() == 8);
    CHECK(all_finite(s));
}

TEST_CASE("paired triangle runs reproduce the table-one ordering" * doctest::timeout(1200)) {
    TriangleData d = triangle_data(100000);
    Matrix held(8192, 2);
    for (std::size_t i = 0; i < held.rows(); ++i) held.set_row(i, d.test.row(i));

    auto run = [&](Method m) {
        TrainConfig cfg;
        cfg.method = m;
        cfg.steps = 30000;
        cfg.batch = 128;
        cfg.lr = 2e-4;
        cfg.hidden = 128;
        cfg.depth = 3;
        cfg.activation = Activation::Gelu;
        cfg.seed = 7;
        cfg.eval_every = 5000;
        TrainOptions opt;
        opt.eval_hook = make_w2_hook(held, 8192, &d.train);
        return train(cfg, d.train, opt);
    };
    TrainResult icfm = run(Method::ICFM);
    TrainResult gmm = run(Method::LatentCFM_GMM);

    auto series = [](const RunRecord& r, const std::string& name) {
        std::map<std::size_t, double> out;
        for (const MetricRow& row : r.metrics)
            if (row.metric == name) out[row.step] = row.value;
        return out;
    };
    auto w2_icfm = series(icfm.record, "w2");
    auto w2_gmm = series(gmm.record, "w2");
    REQUIRE(w2_icfm.size() == 6);
    REQUIRE(w2_gmm.size() == 6);

    // Metric rows arrive in strictly increasing step order per metric.
    for (const TrainResult* r : {&icfm, &gmm}) {
        std::map<std::string, std::size_t> last;
        for (const MetricRow& row : r->record.metrics) {
            auto it = last.find(row.metric);
            if (it != last.end()) CHECK(row.step > it->second);
            last[row.metric] = row.step;
        }
    }

    const double icfm_final = w2_icfm.at(30000);
    const double gmm_final = w2_gmm.at(30000);
    MESSAGE("held-out w2: icfm ", icfm_final, ", latent-cfm-gmm ", gmm_final);
    CHECK(icfm_final > 0.005);
    CHECK(icfm_final < 0.03);
    CHECK(gmm_final <= icfm_final);
    // The conditioned run dominates the baseline at every checkpoint.
    for (auto& [step, value] : w2_gmm)
        if (step >= 5000) CHECK(value <= w2_icfm.at(step));

    // All 16 modes carry at least 1% of 10^4 samples; the baseline's coverage
    // is reported but not asserted.
    SampleConfig sc;
    sc.seed = 99;
    Matrix gs = sample(gmm.bundle, 10000, sc, &d.train);
    ModeCoverage gcov = mode_coverage(gs, d.cfg);
    CHECK(gcov.missing.empty());
    std::size_t min_count = gs.rows();
    for (std::size_t c : gcov.counts) min_count = std::min(min_count, c);
    CHECK(min_count >= 100);
    Matrix is = sample(icfm.bundle, 10000, sc, &d.train);
    ModeCoverage icov = mode_coverage(is, d.cfg);
    std::size_t imin = is.rows();
    for (std::size_t c : icov.counts) imin = std::min(imin, c);
    MESSAGE("icfm coverage at n=10^4: min mode count ", imin, ", missing ",
            icov.missing.size());

    // Seeded sampling is deterministic, down to a single draw.
    sc.seed = 123;
    Matrix one_a = sample(gmm.bundle, 1, sc, &d.train);
    Matrix one_b = sample(gmm.bundle, 1, sc, &d.train);
    REQUIRE(one_a.rows() == 1);
    for (std::size_t k = 0; k < one_a.size(); ++k) CHECK(one_a[k] == one_b[k]);
}

TEST_CASE("proposition one: closed-form latent transport reproduces the mixture") {
    // 1-d two-Gaussian target; latent = fitted 2-component GMM; per-component
    // field is the exact Gaussian-path solution, so only the latent-model fit
    // and Monte Carlo noise separate samples from ground truth.
    const double w0 = 0.65, m0 = 3.0, v0 = 1.44;
    const double m1 = -2.0, v1 = 0.49;
    Rng rng(71);
    Matrix data(20000, 1);
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const bool first = rng.uniform() < w0;
        data[i] = first ? m0 + std::sqrt(v0) * rng.normal() : m1 + std::sqrt(v1) * rng.normal();
    }
    GaussianMixture g = gmm_fit(data, 2);
    // Order components by mean so indices match the ground truth.
    std::size_t j0 = g.means(0, 0) > g.means(1, 0) ? 0 : 1, j1 = 1 - j0;

    const std::size_t n = 30000;
    std::vector<std::size_t> ids = gmm_sample_ids(g, n, 72);
    Matrix x0(n, 1);
    Rng draw(73);
    draw.fill_normal(x0.values());

    SolverConfig sc;
    sc.scheme = SolverScheme::Rk4;
    sc.steps = 64;
    Matrix out(n, 1);
    std::vector<std::size_t> counts(2, 0);
    for (std::size_t j : {j0, j1}) {
        const double mj = g.means(j, 0), vj = g.variances(j, 0);
        auto field = [&](const Matrix& x, double t) {
            // u(x, t) for N(t mu, t^2 v + (1-t)^2): the conditional-expectation
            // field E[x1 - x0 | x_t = x].
            const double st2 = t * t * vj + (1.0 - t) * (1.0 - t);
            const double coef = (t * vj - (1.0 - t)) / st2;
            Matrix u(x.rows(), 1);
            for (std::size_t i = 0; i < x.rows(); ++i)
                u(i, 0) = mj + coef * (x(i, 0) - t * mj);
            return u;
        };
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < n; ++i)
            if (ids[i] == j) rows.push_back(i);
        counts[j == j0 ? 0 : 1] = rows.size();
        Matrix x0j(rows.size(), 1);
        for (std::size_t r = 0; r < rows.size(); ++r) x0j(r, 0) = x0(rows[r], 0);
        Matrix end = integrate(field, x0j, sc).end();
        for (std::size_t r = 0; r < rows.size(); ++r) out(rows[r], 0) = end(r, 0);

        // Per-component transported statistics against the generating truth.
        const double truth_m = j == j0 ? m0 : m1;
        const double truth_v = j == j0 ? v0 : v1;
        double mean = 0.0;
        for (std::size_t r = 0; r < end.rows(); ++r) mean += end(r, 0);
        mean /= double(end.rows());
        double var = 0.0;
        for (std::size_t r = 0; r < end.rows(); ++r)
            var += (end(r, 0) - mean) * (end(r, 0) - mean);
        var /= double(end.rows() - 1);
        CHECK(std::abs(mean - truth_m) <= 0.03 * std::abs(truth_m));
        CHECK(std::abs(var - truth_v) <= 0.03 * truth_v);
    }
    const double w_hat = double(counts[0]) / double(n);
    CHECK(std::abs(w_hat - w0) <= 0.02);
    CHECK(all_finite(out));
}

TEST_CASE("vae variant freezes the trunk and conditions its samples" *
          doctest::timeout(600)) {
    TriangleData d = triangle_data(40000);
    TrainConfig cfg;
    cfg.method = Method::LatentCFM_VAE;
    cfg.steps = 4000;
    cfg.vae_pretrain_steps = 3000;
    cfg.hidden = 64;
    cfg.activation = Activation::Gelu;
    cfg.seed = 21;
    TrainOptions opt;
    opt.checkpoint_dir = temp_dir("lcfm_vae_trunk");
    opt.checkpoint_every = 2000;
    TrainResult res = train(cfg, d.train, opt);
    REQUIRE(res.record.checkpoint_paths.size() == 2);

    // The pretrained trunk never moves during flow training; the stochastic
    // head does.
    Checkpoint mid = load_checkpoint(res.record.checkpoint_paths[0]);
    Checkpoint fin = load_checkpoint(res.record.checkpoint_paths[1]);
    CHECK(params_checksum(mid.bundle.encoder.trunk_params()) ==
          params_checksum(fin.bundle.encoder.trunk_params()));
    CHECK(params_checksum(mid.bundle.encoder.head_params()) !=
          params_checksum(fin.bundle.encoder.head_params()));
    CHECK(mid.step == 2000);
    CHECK(fin.step == 4000);

    // Conditioning on one latent collapses the sample spread: the
    // within-condition variance sits far below the 16-mode total.
    SampleConfig sc;
    sc.seed = 31;
    Matrix uncond = sample(res.bundle, 600, sc, &d.train);
    Matrix x1 = Matrix::from_rows({{3.0, 3.0}});
    Rng erng(77);
    Matrix f = res.bundle.encoder.encode_sample(x1, erng);
    sc.seed = 32;
    Matrix cond = sample_conditioned(res.bundle, f, 600, sc);
    CHECK(all_finite(cond));
    CHECK(mean_var(cond) < 0.2 * mean_var(uncond));

    // compose_sample wires two encoder draws through the corrector chain.
    ComposeConfig cc;
    cc.seed = 41;
    cc.steps = 100;
    Matrix xa = Matrix::from_rows({{3.0, 3.0}});
    Matrix xb = Matrix::from_rows({{3.0, 1.0}});
    Matrix composed = compose_sample(res.bundle, xa, xb, 200, cc);
    CHECK(composed.rows() == 200);
    CHECK(composed.cols() == 2);
    CHECK(all_finite(composed));

    // Composition is defined for encoder bundles only.
    TrainConfig icfg;
    icfg.method = Method::ICFM;
    icfg.steps = 0;
    icfg.hidden = 16;
    TrainResult icfm = train(icfg, d.train);
    CHECK_THROWS_AS(compose_sample(icfm.bundle, xa, xb, 4, cc), ContractError);
}

TEST_CASE("vrfm ablation trains with either encoder view") {
    TriangleData d = triangle_data(8000);
    for (VrfmView view : {VrfmView::X1Time, VrfmView::FullPath}) {
        CAPTURE(to_string(view));
        TrainConfig cfg;
        cfg.method = Method::VRFM_ablation;
        cfg.steps = 600;
        cfg.hidden = 32;
        cfg.encoder_hidden = {32, 32};
        cfg.vrfm_view = view;
        cfg.seed = 3;
        TrainResult res = train(cfg, d.train);
        SampleConfig sc;
        sc.seed = 8;
        // Inference draws the latent from the prior: no pool needed.
        Matrix s = sample(res.bundle, 64, sc);
        CHECK(s.rows() == 64);
        CHECK(all_finite(s));
    }
}

TEST_CASE("diverging loss aborts with the last good checkpoint") {
    TriangleData d = triangle_data(2000);
    TrainConfig cfg;
    cfg.method = Method::ICFM;
    cfg.steps = 50;
    cfg.hidden = 16;
    cfg.lr = 1e80;  // overflows the forward pass within a step
    TrainOptions opt;
    opt.checkpoint_dir = temp_dir("lcfm_abort");
    long failed_step = -1;
    try {
        train(cfg, d.train, opt);
    } catch (const TrainingError& e) {
        failed_step = e.step;
    }
    REQUIRE(failed_step >= 0);
    const std::string abort_path = opt.checkpoint_dir + "/abort.lcfm";
    REQUIRE(std::filesystem::exists(abort_path));
    Checkpoint ck = load_checkpoint(abort_path);
    CHECK(ck.step == std::size_t(failed_step));
    for (auto& [name, p] : ck.bundle.net.named_params()) CHECK(all_finite(p->value));
}

TEST_CASE("resume replays the uninterrupted run bit-exactly") {
    TriangleData d = triangle_data(4000);
    TrainConfig cfg;
    cfg.method = Method::ICFM;
    cfg.steps = 400;
    cfg.hidden = 32;
    cfg.eval_every = 100;
    cfg.seed = 17;

    TrainOptions full_opt;
    full_opt.checkpoint_dir = temp_dir("lcfm_resume_full");
    full_opt.checkpoint_every = 200;
    TrainResult full = train(cfg, d.train, full_opt);

    TrainOptions resume_opt;
    resume_opt.checkpoint_dir = temp_dir("lcfm_resume_half");
    resume_opt.resume_from = full_opt.checkpoint_dir + "/step_00000200.lcfm";
    TrainResult resumed = train(cfg, d.train, resume_opt);

    CHECK(params_checksum(full.bundle.net.named_params()) ==
          params_checksum(resumed.bundle.net.named_params()));

    // The resumed record is the tail of the full record, value-identical.
    std::vector<MetricRow> tail;
    for (const MetricRow& r : full.record.metrics)
        if (r.step > 200) tail.push_back(r);
    REQUIRE(tail.size() == resumed.record.metrics.size());
    for (std::size_t i = 0; i < tail.size(); ++i) {
        CHECK(tail[i].step == resumed.record.metrics[i].step);
        CHECK(tail[i].metric == resumed.record.metrics[i].metric);
        CHECK(tail[i].value == resumed.record.metrics[i].value);
    }

    // Resuming under a different configuration is refused.
    TrainConfig other = cfg;
    other.lr = 1e-3;
    CHECK_THROWS_AS(train(other, d.train, resume_opt), ConfigError);
}

TEST_CASE("compose chain matches the product oracle and reduces to the plain sampler") {
    // Exact conditional field for the Gaussian path onto N(f, 1): the product
    // of two unit-variance conditionals has variance sigma_t^2 / 2.
    PathSchedule sched = PathSchedule::linear();
    auto field = [](const Matrix& x, double t, const Matrix& f) {
        const double st2 = t * t + (1.0 - t) * (1.0 - t);
        const double coef = (t - (1.0 - t)) / st2;
        Matrix u(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t c = 0; c < x.cols(); ++c)
                u(i, c) = f(0, c) + coef * (x(i, c) - t * f(0, c));
        return u;
    };

    const std::size_t n = 4000;
    Matrix x_init(n, 1);
    Rng rng(55);
    rng.fill_normal(x_init.values());

    ComposeConfig cc;
    cc.steps = 200;
    cc.t0 = 1e-2;
    cc.t1 = 0.99;
    cc.langevin_steps = 2;
    cc.langevin_eps = 0.15;
    cc.seed = 56;
    Matrix fa = Matrix::from_rows({{1.0}});
    Matrix out = compose_chain(field, {fa, fa}, x_init, cc);

    const double st2 = cc.t1 * cc.t1 + (1.0 - cc.t1) * (1.0 - cc.t1);
    const double target_var = st2 / 2.0;
    const double got_mean = column_mean(out, 0), got_var = column_var(out, 0);
    MESSAGE("product variance ", got_var, " vs closed form ", target_var);
    CHECK(std::abs(got_var - target_var) <= 0.10 * target_var);
    CHECK(std::abs(got_mean - cc.t1 * 1.0) < 0.05);

    // One condition, no corrector, full window: identical to plain Euler
    // integration of the conditional field.
    ComposeConfig plain;
    plain.steps = 64;
    plain.t0 = 0.0;
    plain.t1 = 1.0;
    plain.langevin_steps = 0;
    Matrix x_small(64, 1);
    rng.fill_normal(x_small.values());
    Matrix via_chain = compose_chain(field, {fa}, x_small, plain);
    SolverConfig sc;
    sc.scheme = SolverScheme::Euler;
    sc.steps = 64;
    Matrix via_integrate =
        integrate([&](const Matrix& x, double t) { return field(x, t, fa); }, x_small, sc).end();
    REQUIRE(via_chain.rows() == via_integrate.rows());
    for (std::size_t k = 0; k < via_chain.size(); ++k) CHECK(via_chain[k] == via_integrate[k]);

    // Config contracts.
    ComposeConfig bad = cc;
    bad.t1 = 1.0;
    CHECK_THROWS_AS(compose_chain(field, {fa}, x_small, bad), ConfigError);
    bad = cc;
    bad.t0 = 0.99;
    bad.t1 = 0.5;
    CHECK_THROWS_AS(compose_chain(field, {fa}, x_small, bad), ConfigError);
    CHECK_THROWS_AS(compose_chain(field, {}, x_small, cc), ContractError);
}

TEST_CASE("beta sweep: held-out KL is monotone non-increasing in beta" *
          doctest::timeout(900)) {
    TriangleData d = triangle_data(40000);
    TrainConfig base;
    base.method = Method::LatentCFM_VAE;
    base.steps = 2500;
    base.vae_pretrain_steps = 4000;
    base.hidden = 64;
    base.seed = 13;
    Matrix held(4000, 2);
    for (std::size_t i = 0; i < held.rows(); ++i) held.set_row(i, d.test.row(i));

    std::vector<double> betas{1e-3, 1e-2, 1e-1, 1.0};
    std::vector<BetaSweepRow> rows = sweep_beta(base, d.train, held, betas);
    REQUIRE(rows.size() == betas.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].beta == betas[i]);
        CHECK(std::isfinite(rows[i].final_loss));
        CHECK(rows[i].test_kl >= 0.0);
    }
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].test_kl <= rows[i - 1].test_kl);

    CHECK_THROWS_AS(sweep_beta(base, d.train, held, {}), ConfigError);
}
