#include "lcfm/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <utility>

#include "lcfm/errors.hpp"
#include "lcfm/serialize.hpp"

namespace lcfm {

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) {
    return Rng::derive(seed, tag).next_u64();
}

// Reserved stream tags; training step s uses stream 1 + s.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kVaeStream = 0xD0000001ull;
constexpr std::uint64_t kGmmStream = 0xD0000002ull;

Matrix hconcat(const std::vector<const Matrix*>& parts) {
    std::size_t cols = 0;
    for (const Matrix* p : parts) cols += p->cols();
    Matrix out(parts[0]->rows(), cols);
    std::size_t at = 0;
    for (const Matrix* p : parts) {
        for (std::size_t i = 0; i < p->rows(); ++i)
            for (std::size_t j = 0; j < p->cols(); ++j) out(i, at + j) = (*p)(i, j);
        at += p->cols();
    }
    return out;
}

std::size_t encoder_input_dim(const TrainConfig& cfg, std::size_t data_dim) {
    if (cfg.method != Method::VRFM_ablation) return data_dim;
    return cfg.vrfm_view == VrfmView::X1Time ? data_dim + 1 : 3 * data_dim + 1;
}

std::size_t net_latent_dim(const TrainConfig& cfg) {
    switch (cfg.method) {
        case Method::LatentCFM_GMM: return cfg.gmm_components;
        case Method::LatentCFM_VAE:
        case Method::VRFM_ablation: return cfg.latent_dim;
        default: return 0;
    }
}

bool uses_encoder(Method m) {
    return m == Method::LatentCFM_VAE || m == Method::VRFM_ablation;
}

// Net and encoder skeletons with the init-stream weights; latent models are
// filled in afterwards (pretraining, fit, checkpoint, or injected).
ModelBundle build_bundle(const TrainConfig& cfg, std::size_t data_dim) {
    ModelBundle b;
    b.method = cfg.method;
    b.cfg = cfg;
    b.data_dim = data_dim;
    Rng init = Rng::derive(cfg.seed, kInitStream);
    VectorFieldConfig vf;
    vf.data_dim = data_dim;
    vf.latent_dim = net_latent_dim(cfg);
    vf.hidden = cfg.hidden;
    vf.depth = cfg.depth;
    vf.activation = cfg.activation;
    b.net = VectorFieldNet(vf, init);
    if (uses_encoder(cfg.method)) {
        EncoderConfig ec;
        ec.data_dim = encoder_input_dim(cfg, data_dim);
        ec.latent_dim = cfg.latent_dim;
        ec.hidden = cfg.encoder_hidden;
        ec.beta = cfg.beta;
        b.encoder = LatentEncoder(ec, init);
    }
    return b;
}

void assign_named(const NamedParams& dst, const std::map<std::string, Matrix>& src,
                  const std::string& path) {
    for (auto& [name, p] : dst) {
        auto it = src.find(name);
        if (it == src.end()) throw IoError("checkpoint missing tensor '" + name + "': " + path);
        if (!p->value.same_shape(it->second))
            throw IoError("checkpoint tensor shape mismatch '" + name + "': " + path);
        p->value = it->second;
    }
}

std::string checkpoint_path(const std::string& dir, const std::string& stem) {
    return (std::filesystem::path(dir) / (stem + ".lcfm")).string();
}

}  // namespace

Method method_from_string(const std::string& s) {
    if (s == "icfm") return Method::ICFM;
    if (s == "ot-cfm" || s == "otcfm") return Method::OTCFM;
    if (s == "latent-cfm-vae") return Method::LatentCFM_VAE;
    if (s == "latent-cfm-gmm") return Method::LatentCFM_GMM;
    if (s == "vrfm") return Method::VRFM_ablation;
    throw ConfigError("unknown method: " + s);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::ICFM: return "icfm";
        case Method::OTCFM: return "ot-cfm";
        case Method::LatentCFM_VAE: return "latent-cfm-vae";
        case Method::LatentCFM_GMM: return "latent-cfm-gmm";
        case Method::VRFM_ablation: return "vrfm";
    }
    throw ConfigError("unknown method enum");
}

VrfmView vrfm_view_from_string(const std::string& s) {
    if (s == "x1-t") return VrfmView::X1Time;
    if (s == "full-path") return VrfmView::FullPath;
    throw ConfigError("unknown vrfm view: " + s);
}

std::string to_string(VrfmView v) {
    return v == VrfmView::X1Time ? "x1-t" : "full-path";
}

void TrainConfig::validate() const {
    if (batch == 0) throw ConfigError("train: batch must be positive");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (!(beta >= 0.0)) throw ConfigError("train: beta must be nonnegative");
    if (!(sigma >= 0.0)) throw ConfigError("train: sigma must be nonnegative");
    if (hidden == 0 || depth == 0) throw ConfigError("train: net dims must be positive");
    if (uses_encoder(method)) {
        if (latent_dim == 0) throw ConfigError("train: latent_dim must be positive");
        if (encoder_hidden.empty()) throw ConfigError("train: encoder_hidden empty");
    }
    if (method == Method::LatentCFM_GMM && gmm_components == 0)
        throw ConfigError("train: gmm_components must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"method", to_string(c.method)},
                       {"steps", c.steps},
                       {"batch", c.batch},
                       {"lr", c.lr},
                       {"beta", c.beta},
                       {"latent_dim", c.latent_dim},
                       {"gmm_components", c.gmm_components},
                       {"seed", c.seed},
                       {"eval_every", c.eval_every},
                       {"hidden", c.hidden},
                       {"depth", c.depth},
                       {"activation", to_string(c.activation)},
                       {"sigma", c.sigma},
                       {"vrfm_view", to_string(c.vrfm_view)},
                       {"vae_pretrain_steps", c.vae_pretrain_steps},
                       {"encoder_hidden", c.encoder_hidden}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.method = method_from_string(j.value("method", to_string(d.method)));
    c.steps = j.value("steps", d.steps);
    c.batch = j.value("batch", d.batch);
    c.lr = j.value("lr", d.lr);
    c.beta = j.value("beta", d.beta);
    c.latent_dim = j.value("latent_dim", d.latent_dim);
    c.gmm_components = j.value("gmm_components", d.gmm_components);
    c.seed = j.value("seed", d.seed);
    c.eval_every = j.value("eval_every", d.eval_every);
    c.hidden = j.value("hidden", d.hidden);
    c.depth = j.value("depth", d.depth);
    c.activation = activation_from_string(j.value("activation", to_string(d.activation)));
    c.sigma = j.value("sigma", d.sigma);
    c.vrfm_view = vrfm_view_from_string(j.value("vrfm_view", to_string(d.vrfm_view)));
    c.vae_pretrain_steps = j.value("vae_pretrain_steps", d.vae_pretrain_steps);
    c.encoder_hidden = j.value("encoder_hidden", d.encoder_hidden);
}

std::vector<Parameter*> trainable_params(ModelBundle& bundle) {
    std::vector<Parameter*> out;
    for (auto& [name, p] : bundle.net.named_params("net.")) out.push_back(p);
    if (bundle.method == Method::LatentCFM_VAE) {
        // Pretrained trunk stays frozen; only the head keeps adapting.
        for (auto& [name, p] : bundle.encoder.head_params("enc.head.")) out.push_back(p);
    } else if (bundle.method == Method::VRFM_ablation) {
        for (auto& [name, p] : bundle.encoder.named_params("enc.")) out.push_back(p);
    }
    return out;
}

void save_checkpoint(const std::string& path, const ModelBundle& bundle, std::size_t step,
                     const Adam* opt, const nlohmann::json& extra) {
    ModelBundle& b = const_cast<ModelBundle&>(bundle);  // named_params is non-const
    std::vector<std::pair<std::string, const Matrix*>> tensors;
    for (auto& [name, p] : b.net.named_params("net.")) tensors.emplace_back(name, &p->value);
    if (uses_encoder(b.method))
        for (auto& [name, p] : b.encoder.named_params("enc."))
            tensors.emplace_back(name, &p->value);
    Matrix gmm_w;
    if (b.method == Method::LatentCFM_GMM) {
        gmm_w = Matrix(b.gmm.weights.size(), 1);
        for (std::size_t i = 0; i < b.gmm.weights.size(); ++i) gmm_w(i, 0) = b.gmm.weights[i];
        tensors.emplace_back("gmm.means", &b.gmm.means);
        tensors.emplace_back("gmm.variances", &b.gmm.variances);
        tensors.emplace_back("gmm.weights", &gmm_w);
    }
    std::vector<Matrix> moments;  // keep alive until written
    std::size_t adam_count = 0;
    if (opt != nullptr) {
        adam_count = opt->first_moments().size();
        moments.reserve(2 * adam_count);
        char name[32];
        for (std::size_t i = 0; i < adam_count; ++i) {
            moments.push_back(opt->first_moments()[i]);
            std::snprintf(name, sizeof name, "adam.m.%04zu", i);
            tensors.emplace_back(name, &moments.back());
        }
        for (std::size_t i = 0; i < adam_count; ++i) {
            moments.push_back(opt->second_moments()[i]);
            std::snprintf(name, sizeof name, "adam.v.%04zu", i);
            tensors.emplace_back(name, &moments.back());
        }
    }
    nlohmann::json meta{{"kind", "checkpoint"},
                        {"step", step},
                        {"cfg", bundle.cfg},
                        {"data_dim", bundle.data_dim},
                        {"adam_count", adam_count},
                        {"adam_steps", opt != nullptr ? opt->step_count() : 0}};
    if (!extra.is_null()) meta["extra"] = extra;
    save_tensors(path, tensors, meta);
}

Checkpoint load_checkpoint(const std::string& path) {
    nlohmann::json meta;
    std::map<std::string, Matrix> tensors = load_tensors(path, &meta);
    if (meta.value("kind", "") != "checkpoint")
        throw IoError("not a checkpoint file: " + path);
    Checkpoint ck;
    ck.step = meta.at("step").get<std::size_t>();
    ck.adam_steps = meta.value("adam_steps", 0L);
    ck.extra = meta.value("extra", nlohmann::json());
    TrainConfig cfg = meta.at("cfg").get<TrainConfig>();
    ck.bundle = build_bundle(cfg, meta.at("data_dim").get<std::size_t>());
    assign_named(ck.bundle.net.named_params("net."), tensors, path);
    if (uses_encoder(cfg.method))
        assign_named(ck.bundle.encoder.named_params("enc."), tensors, path);
    if (cfg.method == Method::LatentCFM_GMM) {
        for (const char* key : {"gmm.means", "gmm.variances", "gmm.weights"})
            if (tensors.find(key) == tensors.end())
                throw IoError(std::string("checkpoint missing tensor '") + key + "': " + path);
        ck.bundle.gmm.means = tensors.at("gmm.means");
        ck.bundle.gmm.variances = tensors.at("gmm.variances");
        const Matrix& w = tensors.at("gmm.weights");
        ck.bundle.gmm.weights.assign(w.data(), w.data() + w.size());
        ck.bundle.gmm.validate();
    }
    const std::size_t adam_count = meta.value("adam_count", std::size_t{0});
    char name[32];
    for (std::size_t i = 0; i < adam_count; ++i) {
        std::snprintf(name, sizeof name, "adam.m.%04zu", i);
        ck.adam_m.push_back(tensors.at(name));
        std::snprintf(name, sizeof name, "adam.v.%04zu", i);
        ck.adam_v.push_back(tensors.at(name));
    }
    return ck;
}

TrainResult train(const TrainConfig& cfg, const Matrix& train_data, const TrainOptions& opt) {
    cfg.validate();
    if (train_data.empty()) throw ContractError("train: empty dataset");
    const auto t_start = std::chrono::steady_clock::now();
    const std::size_t d = train_data.cols();
    const std::size_t n = train_data.rows();

    ModelBundle bundle;
    std::size_t start_step = 0;
    double loss_accum = 0.0;
    std::size_t loss_count = 0;
    std::vector<Matrix> resume_m, resume_v;
    long resume_adam_steps = 0;
    if (!opt.resume_from.empty()) {
        Checkpoint ck = load_checkpoint(opt.resume_from);
        nlohmann::json want = cfg, have = ck.bundle.cfg;
        if (want.dump() != have.dump())
            throw ConfigError("resume: checkpoint config differs from requested config");
        if (ck.bundle.data_dim != d) throw ContractError("resume: data dim mismatch");
        bundle = std::move(ck.bundle);
        start_step = ck.step;
        if (!ck.extra.is_null()) {
            loss_accum = ck.extra.value("loss_accum", 0.0);
            loss_count = ck.extra.value("loss_count", std::size_t{0});
        }
        resume_m = std::move(ck.adam_m);
        resume_v = std::move(ck.adam_v);
        resume_adam_steps = ck.adam_steps;
    } else {
        bundle = build_bundle(cfg, d);
        if (cfg.method == Method::LatentCFM_VAE) {
            if (opt.pretrained_encoder != nullptr) {
                const LatentEncoder& e = *opt.pretrained_encoder;
                if (e.config().data_dim != d || e.latent_dim() != cfg.latent_dim)
                    throw ContractError("train: pretrained encoder dims mismatch");
                bundle.encoder = e;
            } else {
                VaeConfig vc;
                vc.encoder = bundle.encoder.config();
                vc.decoder_hidden = cfg.encoder_hidden;
                vc.steps = cfg.vae_pretrain_steps;
                vc.batch_size = cfg.batch;
                vc.seed = sub_seed(cfg.seed, kVaeStream);
                bundle.encoder = vae_pretrain(train_data, vc).encoder;
            }
        } else if (cfg.method == Method::LatentCFM_GMM) {
            if (opt.pretrained_gmm != nullptr) {
                if (opt.pretrained_gmm->dim() != d ||
                    opt.pretrained_gmm->components() != cfg.gmm_components)
                    throw ContractError("train: pretrained gmm dims mismatch");
                bundle.gmm = *opt.pretrained_gmm;
            } else {
                GmmFitConfig gc;
                gc.seed = sub_seed(cfg.seed, kGmmStream);
                bundle.gmm = gmm_fit(train_data, cfg.gmm_components, gc);
            }
        }
    }

    Adam adam(trainable_params(bundle), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    if (!opt.resume_from.empty()) {
        if (resume_m.size() != adam.params().size())
            throw IoError("resume: optimizer state size mismatch");
        adam.restore(resume_m, resume_v, resume_adam_steps);
    }

    RunRecord record;
    record.final_step = cfg.steps;
    if (!opt.checkpoint_dir.empty())
        std::filesystem::create_directories(opt.checkpoint_dir);

    auto emit_checkpoint = [&](std::size_t step, const std::string& stem) {
        if (opt.checkpoint_dir.empty()) return;
        nlohmann::json extra{{"loss_accum", loss_accum}, {"loss_count", loss_count}};
        if (opt.extra_meta.is_object()) extra.update(opt.extra_meta);
        std::string path = checkpoint_path(opt.checkpoint_dir, stem);
        save_checkpoint(path, bundle, step, &adam, extra);
        record.checkpoint_paths.push_back(path);
    };
    auto emit_eval = [&](std::size_t step) {
        record.metrics.push_back({step, "loss", loss_count ? loss_accum / double(loss_count) : 0.0});
        loss_accum = 0.0;
        loss_count = 0;
        if (opt.eval_hook)
            for (auto& [name, value] : opt.eval_hook(bundle, step))
                record.metrics.push_back({step, name, value});
    };

    Tape tp;
    for (std::size_t step = start_step; step < cfg.steps; ++step) {
        Rng rng = Rng::derive(cfg.seed, 1 + step);
        Matrix x1(cfg.batch, d);
        for (std::size_t i = 0; i < cfg.batch; ++i) x1.set_row(i, train_data.row(rng.index(n)));
        Matrix x0(cfg.batch, d);
        rng.fill_normal(x0.values());
        Matrix tcol(cfg.batch, 1);
        for (std::size_t i = 0; i < cfg.batch; ++i) tcol(i, 0) = rng.uniform();
        Matrix eps(cfg.batch, d);
        rng.fill_normal(eps.values());

        if (cfg.method == Method::OTCFM) {
            Coupling c;
            c.kind = CouplingKind::MinibatchOT;
            CoupledEndpoints ce = couple(c, x0, x1, rng);
            x0 = std::move(ce.x0);
            x1 = std::move(ce.x1);
        }
        CfmBatch batch = CfmBatch::make(std::move(x0), std::move(x1), tcol, cfg.sigma, eps);

        tp.clear();
        Tape::Id loss;
        if (cfg.method == Method::LatentCFM_VAE || cfg.method == Method::VRFM_ablation) {
            Matrix eps_latent(cfg.batch, cfg.latent_dim);
            rng.fill_normal(eps_latent.values());
            if (cfg.method == Method::LatentCFM_VAE) {
                loss = latent_cfm_loss_graph(tp, bundle.net, bundle.encoder, batch, eps_latent,
                                             cfg.beta);
            } else {
                Matrix view = cfg.vrfm_view == VrfmView::X1Time
                                  ? hconcat({&batch.x1, &batch.t})
                                  : hconcat({&batch.x0, &batch.x1, &batch.xt, &batch.t});
                loss = latent_cfm_loss_graph(tp, bundle.net, bundle.encoder, batch, eps_latent,
                                             cfg.beta, &view);
            }
        } else {
            if (cfg.method == Method::LatentCFM_GMM)
                batch.f = one_hot(gmm_assign_batch(bundle.gmm, batch.x1), cfg.gmm_components);
            loss = cfm_loss_graph(tp, bundle.net, batch);
        }

        const double loss_val = tp.value(loss)[0];
        if (!std::isfinite(loss_val)) {
            emit_checkpoint(step, "abort");
            throw TrainingError("flow loss diverged", static_cast<long>(step));
        }
        adam.zero_grad();
        tp.backward(loss);
        adam.step();
        loss_accum += loss_val;
        ++loss_count;

        const std::size_t done = step + 1;
        if (cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.steps))
            emit_eval(done);
        if (opt.checkpoint_every > 0 && done % opt.checkpoint_every == 0 && done != cfg.steps) {
            char stem[32];
            std::snprintf(stem, sizeof stem, "step_%08zu", done);
            emit_checkpoint(done, stem);
        }
    }
    emit_checkpoint(cfg.steps, "final");

    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(bundle), std::move(record)};
}

void SampleConfig::validate() const { solver.validate(); }

namespace {

Matrix draw_latents(const ModelBundle& bundle, std::size_t n, Rng& rng,
                    const Matrix* train_pool) {
    switch (bundle.method) {
        case Method::LatentCFM_VAE: {
            if (train_pool == nullptr || train_pool->empty())
                throw ContractError("sample: the VAE variant needs a conditioning pool");
            if (train_pool->cols() != bundle.data_dim)
                throw ContractError("sample: pool dim mismatch");
            const std::size_t pool = train_pool->rows();
            Matrix x1(n, bundle.data_dim);
            if (n <= pool) {
                std::vector<std::size_t> ids = rng.indices_without_replacement(pool, n);
                for (std::size_t i = 0; i < n; ++i) x1.set_row(i, train_pool->row(ids[i]));
            } else {  // pool exhausted: fall back to draws with replacement
                for (std::size_t i = 0; i < n; ++i) x1.set_row(i, train_pool->row(rng.index(pool)));
            }
            return bundle.encoder.encode_sample(x1, rng);
        }
        case Method::LatentCFM_GMM: {
            std::vector<std::size_t> ids = gmm_sample_ids(bundle.gmm, n, rng.next_u64());
            return one_hot(ids, bundle.cfg.gmm_components);
        }
        case Method::VRFM_ablation: {  // latent from the prior
            Matrix f(n, bundle.cfg.latent_dim);
            rng.fill_normal(f.values());
            return f;
        }
        default: return Matrix();
    }
}

Trajectory integrate_with_latent(const ModelBundle& b, const Matrix& x0, const Matrix& f,
                                 const SolverConfig& solver) {
    FieldFn field = [&](const Matrix& x, double t) {
        return b.net.forward_plain(x, t, f.empty() ? nullptr : &f);
    };
    return integrate(field, x0, solver);
}

}  // namespace

Matrix sample(const ModelBundle& bundle, std::size_t n, const SampleConfig& cfg,
              const Matrix* train_pool) {
    cfg.validate();
    if (n == 0) return Matrix(0, bundle.data_dim);
    Rng rng(cfg.seed);
    Matrix f = draw_latents(bundle, n, rng, train_pool);
    Matrix x0(n, bundle.data_dim);
    rng.fill_normal(x0.values());
    return integrate_with_latent(bundle, x0, f, cfg.solver).end();
}

Trajectory sample_trajectories(const ModelBundle& bundle, std::size_t n, const SampleConfig& cfg,
                               std::size_t snapshots, const Matrix* train_pool) {
    cfg.validate();
    if (n == 0) throw ContractError("sample_trajectories: n must be positive");
    Rng rng(cfg.seed);
    Matrix f = draw_latents(bundle, n, rng, train_pool);
    Matrix x0(n, bundle.data_dim);
    rng.fill_normal(x0.values());
    SolverConfig sv = cfg.solver;
    sv.snapshots = snapshots;
    return integrate_with_latent(bundle, x0, f, sv);
}

Matrix sample_conditioned(const ModelBundle& bundle, const Matrix& f, std::size_t n,
                          const SampleConfig& cfg) {
    cfg.validate();
    if (bundle.net.config().latent_dim == 0)
        throw ContractError("sample_conditioned: unconditional model");
    if (f.cols() != bundle.net.config().latent_dim)
        throw ContractError("sample_conditioned: latent dim mismatch");
    if (f.rows() != 1 && f.rows() != n)
        throw ContractError("sample_conditioned: f must have 1 or n rows");
    Matrix fn = f;
    if (f.rows() == 1 && n != 1) {
        fn = Matrix(n, f.cols());
        for (std::size_t i = 0; i < n; ++i) fn.set_row(i, f);
    }
    Rng rng(cfg.seed);
    Matrix x0(n, bundle.data_dim);
    rng.fill_normal(x0.values());
    return integrate_with_latent(bundle, x0, fn, cfg.solver).end();
}

void ComposeConfig::validate() const {
    if (steps == 0) throw ConfigError("compose: steps must be positive");
    if (!(t0 >= 0.0 && t0 < t1 && t1 <= 1.0)) throw ConfigError("compose: need 0 <= t0 < t1 <= 1");
    if (langevin_steps > 0 && t1 >= 1.0)
        throw ConfigError("compose: the corrector needs t1 < 1");
    if (!(langevin_eps >= 0.0)) throw ConfigError("compose: langevin_eps must be nonnegative");
}

Matrix compose_chain(const ConditionedFieldFn& field, const std::vector<Matrix>& conditions,
                     const Matrix& x_init, const ComposeConfig& cfg, const PathSchedule& sched) {
    cfg.validate();
    if (conditions.empty()) throw ContractError("compose_chain: no conditions");
    std::vector<const Matrix*> cond;
    cond.reserve(conditions.size());
    for (const Matrix& c : conditions) cond.push_back(&c);

    auto t_at = [&](std::size_t k) {
        double w = double(k) / double(cfg.steps);
        return cfg.t0 * (1.0 - w) + cfg.t1 * w;  // exact endpoints
    };
    Rng rng(cfg.seed);
    Matrix x = x_init;
    const double n_cond = double(conditions.size());
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        const double t = t_at(k);
        const double h = t_at(k + 1) - t;
        Matrix v = composed_field(field, x, t, cond, sched);
        double* xd = x.data();
        const double* vd = v.data();
        for (std::size_t i = 0; i < x.values().size(); ++i) xd[i] += h * vd[i];
        if (cfg.langevin_steps > 0) {
            const double tn = t_at(k + 1);
            const double a = sched.a(tn), b = sched.b(tn);
            ScoreFn score = [&](const Matrix& y) {
                Matrix s(y.rows(), y.cols(), 0.0);
                for (const Matrix* c : cond) {
                    Matrix vi = field(y, tn, *c);
                    for (std::size_t i = 0; i < s.values().size(); ++i) s.values()[i] += vi.values()[i];
                }
                for (std::size_t i = 0; i < s.values().size(); ++i)
                    s.values()[i] = (s.values()[i] - n_cond * a * y.values()[i]) / b;
                return s;
            };
            const double sig = sched.sigma(tn);
            const double eps = cfg.langevin_eps * sig * sig;
            x = langevin_correct(score, std::move(x), cfg.langevin_steps, eps, eps, rng);
        }
    }
    return x;
}

Matrix compose_sample(const ModelBundle& bundle, const Matrix& x1_a, const Matrix& x1_b,
                      std::size_t n, const ComposeConfig& cfg) {
    cfg.validate();
    if (bundle.method != Method::LatentCFM_VAE)
        throw ContractError("compose_sample: VAE-variant bundles only");
    if (x1_a.rows() != 1 || x1_b.rows() != 1 || x1_a.cols() != bundle.data_dim ||
        x1_b.cols() != bundle.data_dim)
        throw ContractError("compose_sample: conditioning points must be [1 x d]");
    Rng rng(cfg.seed);
    auto broadcast = [&](const Matrix& row) {
        Matrix m(n, row.cols());
        for (std::size_t i = 0; i < n; ++i) m.set_row(i, row);
        return m;
    };
    Matrix f_a = bundle.encoder.encode_sample(broadcast(x1_a), rng);
    Matrix f_b = bundle.encoder.encode_sample(broadcast(x1_b), rng);
    Matrix x0(n, bundle.data_dim);
    rng.fill_normal(x0.values());
    ConditionedFieldFn field = [&](const Matrix& x, double t, const Matrix& f) {
        return bundle.net.forward_plain(x, t, &f);
    };
    ComposeConfig chain_cfg = cfg;
    chain_cfg.seed = rng.next_u64();  // decorrelate from the draws above
    return compose_chain(field, {std::move(f_a), std::move(f_b)}, x0, chain_cfg);
}

EvalHook make_w2_hook(Matrix held_out, std::size_t n_eval, const Matrix* train_pool,
                      SinkhornConfig sink, SolverConfig solver, std::uint64_t seed) {
    if (held_out.empty()) throw ContractError("make_w2_hook: empty held-out set");
    if (n_eval == 0) throw ConfigError("make_w2_hook: n_eval must be positive");
    if (held_out.rows() > n_eval) {
        Matrix trimmed(n_eval, held_out.cols());
        for (std::size_t i = 0; i < n_eval; ++i) trimmed.set_row(i, held_out.row(i));
        held_out = std::move(trimmed);
    }
    return [held_out = std::move(held_out), n_eval, train_pool, sink, solver,
            seed](const ModelBundle& b, std::size_t step) {
        SampleConfig sc;
        sc.solver = solver;
        sc.seed = sub_seed(seed, step);
        Matrix gen = sample(b, n_eval, sc, train_pool);
        double w2 = sinkhorn_divergence(gen, held_out, sink);
        return std::vector<std::pair<std::string, double>>{{"w2", w2}};
    };
}

std::vector<BetaSweepRow> sweep_beta(TrainConfig base, const Matrix& train_data,
                                     const Matrix& held_out, const std::vector<double>& betas,
                                     const TrainOptions& opt) {
    if (betas.empty()) throw ConfigError("sweep_beta: no betas");
    if (held_out.empty() || held_out.cols() != train_data.cols())
        throw ContractError("sweep_beta: bad held-out set");
    base.method = Method::LatentCFM_VAE;
    if (base.eval_every == 0) base.eval_every = base.steps;
    base.validate();

    // One shared pretrained encoder: the sweep isolates the flow-stage beta.
    LatentEncoder shared;
    const LatentEncoder* enc = opt.pretrained_encoder;
    if (enc == nullptr) {
        VaeConfig vc;
        EncoderConfig ec;
        ec.data_dim = train_data.cols();
        ec.latent_dim = base.latent_dim;
        ec.hidden = base.encoder_hidden;
        ec.beta = base.beta;
        vc.encoder = ec;
        vc.decoder_hidden = base.encoder_hidden;
        vc.steps = base.vae_pretrain_steps;
        vc.batch_size = base.batch;
        vc.seed = sub_seed(base.seed, kVaeStream);
        shared = vae_pretrain(train_data, vc).encoder;
        enc = &shared;
    }
    std::vector<BetaSweepRow> rows;
    rows.reserve(betas.size());
    for (double beta : betas) {
        TrainConfig cfg = base;
        cfg.beta = beta;
        TrainOptions o = opt;
        o.pretrained_encoder = enc;
        o.checkpoint_dir.clear();
        TrainResult r = train(cfg, train_data, o);
        BetaSweepRow row;
        row.beta = beta;
        auto [mu, logsig] = r.bundle.encoder.encode_stats(held_out);
        row.test_kl = kl_to_standard_normal(mu, logsig);
        for (auto it = r.record.metrics.rbegin(); it != r.record.metrics.rend(); ++it)
            if (it->metric == "loss") {
                row.final_loss = it->value;
                break;
            }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace lcfm
