// lcfm: data generation, training, sampling, composition, and evaluation for
// latent-conditioned flow matching experiments. JSON configs with flag
// overrides (flags win); every run directory gets config.json, metrics.csv,
// checkpoints/, and a hash-stamped manifest.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lcfm/darcy.hpp"
#include "lcfm/errors.hpp"
#include "lcfm/evalmetrics.hpp"
#include "lcfm/pipeline.hpp"
#include "lcfm/runio.hpp"
#include "lcfm/serialize.hpp"
#include "lcfm/triangle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lcfm;

namespace {

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t pos = 0;
        double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw ConfigError("bad number in list: '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("empty number list: '" + s + "'");
    return out;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("bad json in " + path + ": " + e.what());
    }
    return j;
}

json stats_to_json(const ChannelStats& s) {
    return json{{"mean", s.mean}, {"stddev", s.stddev}, {"channel_width", s.channel_width}};
}

ChannelStats stats_from_json(const json& j) {
    ChannelStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("stddev").get<std::vector<double>>();
    s.channel_width = j.at("channel_width").get<std::size_t>();
    return s;
}

std::string join_args(int argc, char** argv) {
    std::string cmd;
    for (int i = 0; i < argc; ++i) {
        if (i) cmd += ' ';
        cmd += argv[i];
    }
    return cmd;
}

// ---- data ------------------------------------------------------------

struct GenTriangleArgs {
    std::string out;
    std::size_t k = 4, d = 2, n = 100000;
    std::uint64_t seed = 1;
    int preset = -1;
    std::string weights;
    double spacing = 2.0, width = 0.6;
};

TriangleConfig triangle_config(const GenTriangleArgs& a) {
    TriangleConfig tc;
    tc.k = a.k;
    tc.d = a.d;
    tc.spacing = a.spacing;
    tc.width = a.width;
    tc.seed = a.seed;
    if (!a.weights.empty()) tc.weights = parse_double_list(a.weights);
    else if (a.preset >= 0) tc.weights = triangle_weight_preset(std::size_t(a.preset), a.k);
    tc.validate();
    return tc;
}

json triangle_meta(const TriangleConfig& tc) {
    return json{{"k", tc.k},         {"d", tc.d},         {"weights", tc.effective_weights()},
                {"spacing", tc.spacing}, {"width", tc.width}, {"seed", tc.seed}};
}

int run_gen_triangle(const GenTriangleArgs& a) {
    TriangleConfig tc = triangle_config(a);
    Matrix all = sample_triangle(tc, a.n);
    const std::size_t n_train = a.n / 2, n_test = a.n - n_train;
    Matrix tr(n_train, tc.d), te(n_test, tc.d);
    for (std::size_t i = 0; i < n_train; ++i) tr.set_row(i, all.row(i));
    for (std::size_t i = 0; i < n_test; ++i) te.set_row(i, all.row(n_train + i));
    json meta{{"kind", "dataset"}, {"data", "triangle"}, {"config", triangle_meta(tc)}};
    meta["split"] = "train";
    save_dataset(a.out + "_train.lcfm", tr, meta);
    meta["split"] = "test";
    save_dataset(a.out + "_test.lcfm", te, meta);
    std::printf("wrote %s_train.lcfm (%zu x %zu) and %s_test.lcfm (%zu x %zu)\n", a.out.c_str(),
                tr.rows(), tr.cols(), a.out.c_str(), te.rows(), te.cols());
    return 0;
}

struct GenDarcyArgs {
    std::string out;
    std::size_t grid = 32, n = 2000, kl_terms = 16;
    std::uint64_t seed = 1;
    double r = 10.0, w = 0.125, lengthscale = 0.25, grf_mean = 1.0;
};

DarcyConfig darcy_config_from(const GenDarcyArgs& a) {
    DarcyConfig dc;
    dc.grid = a.grid;
    dc.r = a.r;
    dc.w = a.w;
    dc.kl_terms = a.kl_terms;
    dc.grf_lengthscale = a.lengthscale;
    dc.grf_mean = a.grf_mean;
    dc.seed = a.seed;
    dc.validate();
    return dc;
}

json darcy_meta(const DarcyConfig& dc) {
    return json{{"grid", dc.grid},
                {"r", dc.r},
                {"w", dc.w},
                {"kl_terms", dc.kl_terms},
                {"grf_lengthscale", dc.grf_lengthscale},
                {"grf_mean", dc.grf_mean},
                {"seed", dc.seed}};
}

DarcyConfig darcy_config_from_meta(const json& meta) {
    DarcyConfig dc;
    dc.grid = meta.at("grid").get<std::size_t>();
    dc.r = meta.value("r", dc.r);
    dc.w = meta.value("w", dc.w);
    dc.kl_terms = meta.value("kl_terms", dc.kl_terms);
    dc.grf_lengthscale = meta.value("grf_lengthscale", dc.grf_lengthscale);
    dc.grf_mean = meta.value("grf_mean", dc.grf_mean);
    dc.seed = meta.value("seed", dc.seed);
    return dc;
}

int run_gen_darcy(const GenDarcyArgs& a) {
    DarcyConfig dc = darcy_config_from(a);
    Matrix all = generate_darcy_dataset(dc, a.n);
    const std::size_t n_train = a.n / 2, n_test = a.n - n_train;
    Matrix tr(n_train, all.cols()), te(n_test, all.cols());
    for (std::size_t i = 0; i < n_train; ++i) tr.set_row(i, all.row(i));
    for (std::size_t i = 0; i < n_test; ++i) te.set_row(i, all.row(n_train + i));
    // Fields stay in original units; the training-half standardization stats
    // ride in both headers so downstream stages share one transform.
    ChannelStats stats = compute_channel_stats(tr, 2);
    json meta{{"kind", "dataset"},
              {"data", "darcy"},
              {"config", darcy_meta(dc)},
              {"stats", stats_to_json(stats)}};
    meta["split"] = "train";
    save_dataset(a.out + "_train.lcfm", tr, meta);
    meta["split"] = "test";
    save_dataset(a.out + "_test.lcfm", te, meta);
    std::printf("wrote %s_train.lcfm (%zu x %zu) and %s_test.lcfm (%zu x %zu)\n", a.out.c_str(),
                tr.rows(), tr.cols(), a.out.c_str(), te.rows(), te.cols());
    return 0;
}

// ---- train / sweep-beta ----------------------------------------------

// Flag overrides applied on top of --config; only flags the user passed win.
struct TrainFlags {
    std::string config, data, test, run;
    std::string method, activation, vrfm_view;
    std::size_t steps = 0, batch = 0, latent_dim = 0, gmm_components = 0, eval_every = 0;
    std::size_t hidden = 0, depth = 0, vae_pretrain_steps = 0;
    double lr = 0, beta = 0, sigma = 0;
    std::uint64_t seed = 0;
    std::size_t eval_n = 8192, checkpoint_every = 0;
    std::string resume;
    std::string betas;  // sweep-beta only

    CLI::Option *o_method = nullptr, *o_steps = nullptr, *o_batch = nullptr, *o_lr = nullptr,
                *o_beta = nullptr, *o_latent_dim = nullptr, *o_gmm = nullptr, *o_seed = nullptr,
                *o_eval_every = nullptr, *o_hidden = nullptr, *o_depth = nullptr,
                *o_activation = nullptr, *o_sigma = nullptr, *o_vrfm_view = nullptr,
                *o_pretrain = nullptr;

    void add_common(CLI::App* cmd) {
        cmd->add_option("--config", config, "json config file (flags override it)");
        cmd->add_option("--data", data, "training dataset file")->required();
        cmd->add_option("--test", test, "held-out dataset file");
        cmd->add_option("--run", run, "run directory")->required();
        o_method = cmd->add_option("--method", method,
                                   "icfm | ot-cfm | latent-cfm-vae | latent-cfm-gmm | vrfm");
        o_steps = cmd->add_option("--steps", steps, "training steps");
        o_batch = cmd->add_option("--batch", batch, "batch size");
        o_lr = cmd->add_option("--lr", lr, "adam learning rate");
        o_beta = cmd->add_option("--beta", beta, "kl weight");
        o_latent_dim = cmd->add_option("--latent-dim", latent_dim, "encoder latent size");
        o_gmm = cmd->add_option("--gmm-components", gmm_components, "mixture size");
        o_seed = cmd->add_option("--seed", seed, "run seed");
        o_eval_every = cmd->add_option("--eval-every", eval_every, "metric cadence in steps");
        o_hidden = cmd->add_option("--hidden", hidden, "vector-field net width");
        o_depth = cmd->add_option("--depth", depth, "vector-field net hidden layers");
        o_activation = cmd->add_option("--activation", activation, "selu | relu | gelu");
        o_sigma = cmd->add_option("--sigma", sigma, "path noise");
        o_vrfm_view = cmd->add_option("--vrfm-view", vrfm_view, "x1-t | full-path");
        o_pretrain = cmd->add_option("--vae-pretrain-steps", vae_pretrain_steps,
                                     "encoder pretraining steps");
        cmd->add_option("--eval-n", eval_n, "held-out metric sample count");
    }

    TrainConfig merged() const {
        TrainConfig cfg;
        if (!config.empty()) {
            json j = load_json_file(config);
            // Accept a bare TrainConfig or a run-directory config.json.
            if (j.contains("train")) j = j.at("train");
            cfg = j.get<TrainConfig>();
        }
        if (*o_method) cfg.method = method_from_string(method);
        if (*o_steps) cfg.steps = steps;
        if (*o_batch) cfg.batch = batch;
        if (*o_lr) cfg.lr = lr;
        if (*o_beta) cfg.beta = beta;
        if (*o_latent_dim) cfg.latent_dim = latent_dim;
        if (*o_gmm) cfg.gmm_components = gmm_components;
        if (*o_seed) cfg.seed = seed;
        if (*o_eval_every) cfg.eval_every = eval_every;
        if (*o_hidden) cfg.hidden = hidden;
        if (*o_depth) cfg.depth = depth;
        if (*o_activation) cfg.activation = activation_from_string(activation);
        if (*o_sigma) cfg.sigma = sigma;
        if (*o_vrfm_view) cfg.vrfm_view = vrfm_view_from_string(vrfm_view);
        if (*o_pretrain) cfg.vae_pretrain_steps = vae_pretrain_steps;
        cfg.validate();
        return cfg;
    }
};

// Dataset plus the standardization transform its file prescribes (identity
// when the header carries no stats). Models train and sample in the
// standardized space; files stay in original units.
struct LoadedData {
    Matrix data;
    json meta;
    std::optional<ChannelStats> stats;
};

LoadedData load_standardized(const std::string& path) {
    LoadedData d;
    d.data = load_dataset(path, &d.meta);
    if (d.meta.contains("stats")) {
        d.stats = stats_from_json(d.meta.at("stats"));
        standardize_inplace(d.data, *d.stats);
    }
    return d;
}

int run_train(const TrainFlags& f, const std::string& command) {
    TrainConfig cfg = f.merged();
    LoadedData train_set = load_standardized(f.data);

    TrainOptions opt;
    opt.checkpoint_every = f.checkpoint_every;
    opt.resume_from = f.resume;
    if (train_set.stats) opt.extra_meta = json{{"stats", stats_to_json(*train_set.stats)}};

    Matrix test_set;
    if (!f.test.empty()) {
        json test_meta;
        test_set = load_dataset(f.test, &test_meta);
        if (train_set.stats) standardize_inplace(test_set, *train_set.stats);
        opt.eval_hook = make_w2_hook(test_set, f.eval_n, &train_set.data);
        if (cfg.eval_every == 0) cfg.eval_every = cfg.steps;
    }

    json run_cfg{{"train", cfg}, {"data", f.data}, {"eval_n", f.eval_n}};
    if (!f.test.empty()) run_cfg["test"] = f.test;
    if (train_set.stats) run_cfg["stats"] = stats_to_json(*train_set.stats);
    RunPaths paths = init_run_dir(f.run, run_cfg);
    opt.checkpoint_dir = paths.checkpoints_dir;

    TrainResult res = train(cfg, train_set.data, opt);
    write_metrics_csv(paths.metrics_csv, res.record.metrics, cfg.seed, to_string(cfg.method));

    std::vector<std::string> artifacts{paths.config_json, paths.metrics_csv};
    artifacts.insert(artifacts.end(), res.record.checkpoint_paths.begin(),
                     res.record.checkpoint_paths.end());
    write_manifest(paths, command, run_cfg, artifacts);
    std::printf("trained %s for %zu steps in %.1fs; run dir %s\n",
                to_string(cfg.method).c_str(), res.record.final_step, res.record.wall_seconds,
                f.run.c_str());
    return 0;
}

int run_sweep_beta(const TrainFlags& f, const std::string& command) {
    TrainConfig base = f.merged();
    std::vector<double> betas = parse_double_list(f.betas);
    LoadedData train_set = load_standardized(f.data);
    json test_meta;
    Matrix test_set = load_dataset(f.test, &test_meta);
    if (train_set.stats) standardize_inplace(test_set, *train_set.stats);

    json run_cfg{{"train", base}, {"data", f.data}, {"test", f.test}, {"betas", betas}};
    RunPaths paths = init_run_dir(f.run, run_cfg);

    std::vector<BetaSweepRow> rows = sweep_beta(base, train_set.data, test_set, betas);
    std::string sweep_csv = (fs::path(f.run) / "sweep.csv").string();
    write_beta_csv(sweep_csv, rows);
    write_manifest(paths, command, run_cfg, {paths.config_json, sweep_csv});
    std::printf("swept %zu betas; wrote %s\n", rows.size(), sweep_csv.c_str());
    return 0;
}

// ---- sample / compose -------------------------------------------------

struct SampleArgs {
    std::string checkpoint, out, data, traj;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::string solver = "dopri5";
    std::size_t solver_steps = 100;
    double rtol = 1e-5, atol = 1e-5;
    std::size_t traj_n = 64, snapshots = 9;
};

SampleConfig sample_config(const SampleArgs& a) {
    SampleConfig sc;
    sc.solver.scheme = solver_scheme_from_string(a.solver);
    sc.solver.steps = a.solver_steps;
    sc.solver.rtol = a.rtol;
    sc.solver.atol = a.atol;
    sc.seed = a.seed;
    sc.validate();
    return sc;
}

int run_sample(const SampleArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    SampleConfig sc = sample_config(a);
    std::optional<ChannelStats> stats;
    if (ck.extra.contains("stats")) stats = stats_from_json(ck.extra.at("stats"));

    Matrix pool;
    const Matrix* pool_ptr = nullptr;
    if (!a.data.empty()) {
        json meta;
        pool = load_dataset(a.data, &meta);
        if (stats) standardize_inplace(pool, *stats);
        pool_ptr = &pool;
    }

    Matrix samples = sample(ck.bundle, a.n, sc, pool_ptr);
    if (stats) unstandardize_inplace(samples, *stats);
    json meta{{"kind", "samples"},
              {"method", to_string(ck.bundle.method)},
              {"checkpoint_step", ck.step},
              {"seed", a.seed},
              {"solver", a.solver}};
    save_dataset(a.out, samples, meta);

    if (!a.traj.empty()) {
        Trajectory traj = sample_trajectories(ck.bundle, a.traj_n, sc, a.snapshots, pool_ptr);
        if (stats)
            for (Matrix& state : traj.states) unstandardize_inplace(state, *stats);
        write_traj_csv(a.traj, traj);
    }
    std::printf("wrote %zu samples to %s\n", samples.rows(), a.out.c_str());
    return 0;
}

struct ComposeArgs {
    std::string checkpoint, out, a, b;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::size_t steps = 200, langevin_steps = 2;
    double t0 = 1e-2, t1 = 0.99, langevin_eps = 0.08;
};

int run_compose(const ComposeArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    std::optional<ChannelStats> stats;
    if (ck.extra.contains("stats")) stats = stats_from_json(ck.extra.at("stats"));

    auto parse_point = [&](const std::string& s, const char* which) {
        std::vector<double> v = parse_double_list(s);
        if (v.size() != ck.bundle.data_dim)
            throw ConfigError(std::string(which) + " point has " + std::to_string(v.size()) +
                              " coords, model expects " + std::to_string(ck.bundle.data_dim));
        Matrix m(1, v.size());
        for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
        if (stats) standardize_inplace(m, *stats);
        return m;
    };
    Matrix xa = parse_point(a.a, "--a");
    Matrix xb = parse_point(a.b, "--b");

    ComposeConfig cc;
    cc.steps = a.steps;
    cc.t0 = a.t0;
    cc.t1 = a.t1;
    cc.langevin_steps = a.langevin_steps;
    cc.langevin_eps = a.langevin_eps;
    cc.seed = a.seed;
    cc.validate();

    Matrix samples = compose_sample(ck.bundle, xa, xb, a.n, cc);
    if (stats) unstandardize_inplace(samples, *stats);
    json meta{{"kind", "samples"},
              {"method", to_string(ck.bundle.method)},
              {"composed", true},
              {"seed", a.seed}};
    save_dataset(a.out, samples, meta);
    std::printf("wrote %zu composed samples to %s\n", samples.rows(), a.out.c_str());
    return 0;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
    std::string metric, a, b, out = "eval.csv";
    double blur = 0.05;
    std::size_t max_n = 0;
    // triangle config for coverage
    std::size_t k = 4, d = 2;
    int preset = -1;
    std::string weights;
    double spacing = 2.0, width = 0.6;
    // darcy overrides for residual (header config wins unless flags passed)
    CLI::Option* o_grid = nullptr;
    std::size_t grid = 32;
};

Matrix trim_rows(Matrix m, std::size_t cap) {
    if (cap == 0 || m.rows() <= cap) return m;
    Matrix out(cap, m.cols());
    for (std::size_t i = 0; i < cap; ++i) out.set_row(i, m.row(i));
    return out;
}

// Append rows to an eval csv, keeping earlier invocations' rows.
void append_eval_rows(const std::string& path, std::vector<EvalRow> rows) {
    std::vector<EvalRow> all;
    std::ifstream in(path);
    if (in) {
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            EvalRow r;
            std::string field;
            std::getline(ss, r.metric, ',');
            std::getline(ss, field, ',');
            r.value = std::stod(field);
            std::getline(ss, field, ',');
            r.n_a = std::stoull(field);
            std::getline(ss, field, ',');
            r.n_b = std::stoull(field);
            std::getline(ss, r.config_hash, ',');
            all.push_back(r);
        }
    }
    all.insert(all.end(), rows.begin(), rows.end());
    write_eval_csv(path, all);
}

int run_eval(const EvalArgs& a) {
    json meta_a, meta_b;
    Matrix xa = load_dataset(a.a, &meta_a);
    Matrix xb;
    if (!a.b.empty()) xb = load_dataset(a.b, &meta_b);
    xa = trim_rows(std::move(xa), a.max_n);
    xb = trim_rows(std::move(xb), a.max_n);

    json cfg_json{{"metric", a.metric}, {"a", a.a}, {"b", a.b}, {"blur", a.blur},
                  {"max_n", a.max_n}};
    const std::string hash = config_hash(cfg_json);
    std::vector<EvalRow> rows;
    auto push = [&](const std::string& name, double value, std::size_t n_b) {
        rows.push_back({name, value, xa.rows(), n_b, hash});
    };

    if (a.metric == "w2") {
        if (xb.empty()) throw ConfigError("eval w2 needs --b");
        SinkhornConfig sc;
        sc.blur = a.blur;
        SinkhornResult r = sinkhorn_w2_report(xa, xb, sc);
        if (!r.converged)
            std::fprintf(stderr, "warning: sinkhorn potentials still moving after %zu sweeps\n",
                         r.sweeps);
        push("w2", r.value * r.value / 2.0, xb.rows());
    } else if (a.metric == "energy") {
        if (xb.empty()) throw ConfigError("eval energy needs --b");
        KernelDistances kd = kernel_distances(xa, xb);
        push("energy", kd.energy, xb.rows());
        push("gaussian_mmd", kd.gaussian_mmd, xb.rows());
        push("laplacian_mmd", kd.laplacian_mmd, xb.rows());
    } else if (a.metric == "coverage") {
        GenTriangleArgs ta;
        ta.k = a.k;
        ta.d = a.d;
        ta.preset = a.preset;
        ta.weights = a.weights;
        ta.spacing = a.spacing;
        ta.width = a.width;
        TriangleConfig tc = triangle_config(ta);
        ModeCoverage mc = mode_coverage(xa, tc);
        std::size_t min_count = xa.rows();
        for (std::size_t c : mc.counts) min_count = std::min(min_count, c);
        push("coverage_min_frac", double(min_count) / double(mc.n), 0);
        push("coverage_missing", double(mc.missing.size()), 0);
        push("coverage_outside_frac", mc.outside_fraction, 0);
    } else if (a.metric == "residual") {
        DarcyConfig dc;
        if (meta_a.contains("config") && meta_a.value("data", "") == "darcy")
            dc = darcy_config_from_meta(meta_a.at("config"));
        else if (meta_b.contains("config") && meta_b.value("data", "") == "darcy")
            dc = darcy_config_from_meta(meta_b.at("config"));
        if (*a.o_grid) dc.grid = a.grid;
        dc.validate();
        ResidualReport rr = darcy_residual_report(xa, dc);
        push("residual_median", rr.median, 0);
        push("residual_mean", rr.mean, 0);
        push("residual_q25", rr.q25, 0);
        push("residual_q75", rr.q75, 0);
    } else {
        throw ConfigError("unknown metric '" + a.metric +
                          "' (w2, energy, coverage, residual)");
    }

    append_eval_rows(a.out, rows);
    for (const EvalRow& r : rows)
        std::printf("%s = %s\n", r.metric.c_str(), format_double(r.value).c_str());
    return 0;
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
    std::vector<std::string> runs;
    std::string metric = "w2";
    std::string out;
    std::string samples;  // histogram mode
    std::size_t bins = 50;
    CLI::Option* o_grid = nullptr;
    std::size_t grid = 32;
};

int run_report(const ReportArgs& a) {
    if (!a.samples.empty()) {
        json meta;
        Matrix pairs = load_dataset(a.samples, &meta);
        DarcyConfig dc;
        if (meta.contains("config") && meta.value("data", "") == "darcy")
            dc = darcy_config_from_meta(meta.at("config"));
        if (*a.o_grid) dc.grid = a.grid;
        dc.validate();
        ResidualReport rr = darcy_residual_report(pairs, dc);
        write_histogram_csv(a.out, rr.per_sample, a.bins);
        std::printf("wrote %zu-bin log-residual histogram to %s\n", a.bins, a.out.c_str());
        return 0;
    }

    if (a.runs.empty()) throw ConfigError("report needs --run directories or --samples");
    std::ostringstream os;
    os << "step,value,seed,method\n";
    std::size_t n_series = 0;
    for (const std::string& run : a.runs) {
        RunPaths paths = RunPaths::at(run);
        std::uint64_t seed = 0;
        std::string method;
        std::vector<MetricRow> rows;
        try {
            rows = read_metrics_csv(paths.metrics_csv, &seed, &method);
        } catch (const IoError& e) {
            std::fprintf(stderr, "warning: %s\n", e.what());
            continue;
        }
        std::size_t n_rows = 0;
        for (const MetricRow& r : rows)
            if (r.metric == a.metric) {
                os << r.step << ',' << format_double(r.value) << ',' << seed << ',' << method
                   << '\n';
                ++n_rows;
            }
        if (n_rows == 0)
            std::fprintf(stderr, "warning: %s has no '%s' rows\n", paths.metrics_csv.c_str(),
                         a.metric.c_str());
        else
            ++n_series;
    }
    write_text_atomic(a.out, os.str());
    std::printf("wrote %zu series to %s\n", n_series, a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-conditioned flow matching experiments"};
    app.require_subcommand(1);

    CLI::App* data = app.add_subcommand("data", "dataset generation");
    data->require_subcommand(1);

    GenTriangleArgs gt;
    CLI::App* gen_tri = data->add_subcommand("gen-triangle", "k^d-mode triangle mixture");
    gen_tri->add_option("--out", gt.out, "output path prefix")->required();
    gen_tri->add_option("--k", gt.k, "modes per dimension");
    gen_tri->add_option("--d", gt.d, "dimensions");
    gen_tri->add_option("--n", gt.n, "total samples (split 50/50 train/test)");
    gen_tri->add_option("--seed", gt.seed, "sampling seed");
    gen_tri->add_option("--preset", gt.preset, "weight preset index (0..4)");
    gen_tri->add_option("--weights", gt.weights, "explicit per-mode weights, comma separated");
    gen_tri->add_option("--spacing", gt.spacing, "mode center spacing");
    gen_tri->add_option("--width", gt.width, "triangular half-width");

    GenDarcyArgs gd;
    CLI::App* gen_darcy = data->add_subcommand("gen-darcy", "darcy flow (K, p) pairs");
    gen_darcy->add_option("--out", gd.out, "output path prefix")->required();
    gen_darcy->add_option("--grid", gd.grid, "grid resolution N");
    gen_darcy->add_option("--n", gd.n, "total pairs (split 50/50 train/test)");
    gen_darcy->add_option("--seed", gd.seed, "sampling seed");
    gen_darcy->add_option("--kl-terms", gd.kl_terms, "karhunen-loeve truncation");
    gen_darcy->add_option("--r", gd.r, "source magnitude");
    gen_darcy->add_option("--w", gd.w, "source block side");
    gen_darcy->add_option("--lengthscale", gd.lengthscale, "grf correlation length");
    gen_darcy->add_option("--grf-mean", gd.grf_mean, "log-permeability mean");

    TrainFlags tf;
    CLI::App* train_cmd = app.add_subcommand("train", "flow matching training run");
    tf.add_common(train_cmd);
    train_cmd->add_option("--checkpoint-every", tf.checkpoint_every,
                          "periodic checkpoint cadence (0 = final only)");
    train_cmd->add_option("--resume", tf.resume, "checkpoint to resume from");

    TrainFlags sf;
    CLI::App* sweep_cmd = app.add_subcommand("sweep-beta", "kl-weight sweep (vae variant)");
    sf.add_common(sweep_cmd);
    sweep_cmd->get_option("--test")->required();
    sweep_cmd->add_option("--betas", sf.betas, "comma-separated kl weights")->required();

    SampleArgs sa;
    CLI::App* sample_cmd = app.add_subcommand("sample", "generate from a checkpoint");
    sample_cmd->add_option("--checkpoint", sa.checkpoint, "checkpoint file")->required();
    sample_cmd->add_option("--out", sa.out, "samples output file")->required();
    sample_cmd->add_option("--n", sa.n, "sample count")->required();
    sample_cmd->add_option("--seed", sa.seed, "sampling seed");
    sample_cmd->add_option("--solver", sa.solver, "euler | rk4 | dopri5");
    sample_cmd->add_option("--solver-steps", sa.solver_steps, "fixed-scheme step count");
    sample_cmd->add_option("--rtol", sa.rtol, "dopri5 relative tolerance");
    sample_cmd->add_option("--atol", sa.atol, "dopri5 absolute tolerance");
    sample_cmd->add_option("--data", sa.data, "training set (vae conditioning pool)");
    sample_cmd->add_option("--traj", sa.traj, "trajectory csv output");
    sample_cmd->add_option("--traj-n", sa.traj_n, "trajectories to record");
    sample_cmd->add_option("--snapshots", sa.snapshots, "states per trajectory");

    ComposeArgs ca;
    CLI::App* compose_cmd = app.add_subcommand("compose", "product-of-conditionals sampling");
    compose_cmd->add_option("--checkpoint", ca.checkpoint, "vae-variant checkpoint")->required();
    compose_cmd->add_option("--out", ca.out, "samples output file")->required();
    compose_cmd->add_option("--a", ca.a, "first conditioning point, comma separated")->required();
    compose_cmd->add_option("--b", ca.b, "second conditioning point")->required();
    compose_cmd->add_option("--n", ca.n, "sample count")->required();
    compose_cmd->add_option("--seed", ca.seed, "sampling seed");
    compose_cmd->add_option("--steps", ca.steps, "euler predictor steps");
    compose_cmd->add_option("--t0", ca.t0, "integration start time");
    compose_cmd->add_option("--t1", ca.t1, "integration end time (< 1)");
    compose_cmd->add_option("--langevin-steps", ca.langevin_steps, "corrector steps per level");
    compose_cmd->add_option("--langevin-eps", ca.langevin_eps, "corrector step scale");

    EvalArgs ea;
    CLI::App* eval_cmd = app.add_subcommand("eval", "sample-quality metrics");
    eval_cmd->add_option("--metric", ea.metric, "w2 | energy | coverage | residual")->required();
    eval_cmd->add_option("--a", ea.a, "samples file")->required();
    eval_cmd->add_option("--b", ea.b, "reference file (w2 / energy)");
    eval_cmd->add_option("--out", ea.out, "eval csv (appended)");
    eval_cmd->add_option("--blur", ea.blur, "sinkhorn blur");
    eval_cmd->add_option("--max-n", ea.max_n, "row cap per side (0 = all)");
    eval_cmd->add_option("--k", ea.k, "coverage: modes per dimension");
    eval_cmd->add_option("--d", ea.d, "coverage: dimensions");
    eval_cmd->add_option("--preset", ea.preset, "coverage: weight preset");
    eval_cmd->add_option("--weights", ea.weights, "coverage: explicit weights");
    eval_cmd->add_option("--spacing", ea.spacing, "coverage: mode spacing");
    eval_cmd->add_option("--width", ea.width, "coverage: triangular half-width");
    ea.o_grid = eval_cmd->add_option("--grid", ea.grid, "residual: grid resolution override");

    ReportArgs ra;
    CLI::App* report_cmd = app.add_subcommand("report", "plot-data tables from runs");
    report_cmd->add_option("--run", ra.runs, "run directories (repeatable)");
    report_cmd->add_option("--metric", ra.metric, "metric series to extract");
    report_cmd->add_option("--out", ra.out, "output csv")->required();
    report_cmd->add_option("--samples", ra.samples, "darcy samples file (histogram mode)");
    report_cmd->add_option("--bins", ra.bins, "histogram bins");
    ra.o_grid = report_cmd->add_option("--grid", ra.grid, "histogram: grid resolution override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        json err{{"error", {{"type", "config"}, {"message", e.what()}}}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 2;
    }

    const std::string command = join_args(argc, argv);
    try {
        if (data->got_subcommand(gen_tri)) return run_gen_triangle(gt);
        if (data->got_subcommand(gen_darcy)) return run_gen_darcy(gd);
        if (app.got_subcommand(train_cmd)) return run_train(tf, command);
        if (app.got_subcommand(sweep_cmd)) return run_sweep_beta(sf, command);
        if (app.got_subcommand(sample_cmd)) return run_sample(sa);
        if (app.got_subcommand(compose_cmd)) return run_compose(ca);
        if (app.got_subcommand(eval_cmd)) return run_eval(ea);
        if (app.got_subcommand(report_cmd)) return run_report(ra);
        throw ConfigError("no subcommand");
    } catch (const ConfigError& e) {
        json err{{"error", {{"type", "config"}, {"message", e.what()}}}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 2;
    } catch (const ContractError& e) {
        json err{{"error", {{"type", "config"}, {"message", e.what()}}}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 2;
    } catch (const std::exception& e) {
        json err{{"error", {{"type", "runtime"}, {"message", e.what()}}}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 1;
    }
}
