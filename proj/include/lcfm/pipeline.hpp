#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcfm/evalmetrics.hpp"
#include "lcfm/flow.hpp"
#include "lcfm/gmm.hpp"
#include "lcfm/nn.hpp"
#include "lcfm/solvers.hpp"
#include "lcfm/triangle.hpp"
#include "lcfm/vae.hpp"

namespace lcfm {

enum class Method { ICFM, OTCFM, LatentCFM_VAE, LatentCFM_GMM, VRFM_ablation };

Method method_from_string(const std::string& s);
std::string to_string(Method m);
inline constexpr Method kAllMethods[] = {Method::ICFM, Method::OTCFM,
                                         Method::LatentCFM_VAE, Method::LatentCFM_GMM,
                                         Method::VRFM_ablation};

// Which view the VRFM ablation's encoder sees: [x1, t] or [x0, x1, xt, t].
enum class VrfmView { X1Time, FullPath };
VrfmView vrfm_view_from_string(const std::string& s);
std::string to_string(VrfmView v);

struct TrainConfig {
    Method method = Method::ICFM;
    std::size_t steps = 30000;
    std::size_t batch = 128;
    double lr = 2e-4;
    double beta = 1e-2;              // KL weight (VAE / VRFM variants)
    std::size_t latent_dim = 2;      // encoder latent size (VAE / VRFM)
    std::size_t gmm_components = 16; // mixture size (GMM variant)
    std::uint64_t seed = 0;
    std::size_t eval_every = 0;      // 0 => no eval-hook rows
    std::size_t hidden = 64;         // vector-field net width
    std::size_t depth = 3;           // vector-field net hidden layers
    Activation activation = Activation::Selu;  // vector-field net activation
    double sigma = 0.0;              // path noise
    VrfmView vrfm_view = VrfmView::X1Time;
    // Encoder pretraining (VAE variant); ignored when a pretrained encoder
    // is supplied through TrainOptions.
    std::size_t vae_pretrain_steps = 20000;
    std::vector<std::size_t> encoder_hidden = {64, 64};

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Everything sampling needs. Only the members the method uses are populated.
struct ModelBundle {
    Method method = Method::ICFM;
    VectorFieldNet net;
    LatentEncoder encoder;  // VAE / VRFM variants
    GaussianMixture gmm;    // GMM variant
    TrainConfig cfg;
    std::size_t data_dim = 0;
};

struct MetricRow {
    std::size_t step = 0;
    std::string metric;
    double value = 0.0;
};

struct RunRecord {
    std::vector<MetricRow> metrics;  // strictly increasing step per metric
    std::vector<std::string> checkpoint_paths;
    double wall_seconds = 0.0;
    std::size_t final_step = 0;
};

// Per-eval metric hook: called with frozen parameters at eval_every steps;
// returns (metric name, value) pairs appended to the record.
using EvalHook =
    std::function<std::vector<std::pair<std::string, double>>(const ModelBundle&, std::size_t)>;

struct TrainOptions {
    std::string checkpoint_dir;        // empty => no checkpoint files
    std::size_t checkpoint_every = 0;  // 0 => final checkpoint only (if dir set)
    std::string resume_from;           // checkpoint path
    const LatentEncoder* pretrained_encoder = nullptr;  // skip VAE pretraining
    const GaussianMixture* pretrained_gmm = nullptr;    // skip the GMM fit
    EvalHook eval_hook;
    nlohmann::json extra_meta;  // merged into every checkpoint's extra block
};

struct TrainResult {
    ModelBundle bundle;
    RunRecord record;
};

// Full training pipeline: latent-model preparation (VAE pretrain / GMM fit),
// then `cfg.steps` flow-matching steps with Adam. Every random draw at step s
// comes from the stream (seed, 1+s), so resuming from a checkpoint replays
// the uninterrupted run bit-exactly. A non-finite loss aborts with
// TrainingError after writing an abort checkpoint (when a directory is set).
TrainResult train(const TrainConfig& cfg, const Matrix& train_data,
                  const TrainOptions& opt = {});

// Checkpoint files: model tensors + Adam moments + config, one container.
void save_checkpoint(const std::string& path, const ModelBundle& bundle,
                     std::size_t step, const Adam* opt = nullptr,
                     const nlohmann::json& extra = {});
struct Checkpoint {
    ModelBundle bundle;
    std::size_t step = 0;
    std::vector<Matrix> adam_m, adam_v;
    long adam_steps = 0;
    nlohmann::json extra;
};
Checkpoint load_checkpoint(const std::string& path);

// Parameters the optimizer owns for this method (vector-field net always;
// encoder head for VAE, whole encoder for VRFM).
std::vector<Parameter*> trainable_params(ModelBundle& bundle);

struct SampleConfig {
    SolverConfig solver;
    std::uint64_t seed = 0;

    void validate() const;
};

// Unconditional generation (Algorithms A.2 / A.4): x0 ~ N(0, I), latent per
// method (VAE: posterior draws at training points; GMM: Categorical(w) ids;
// VRFM: prior draws; baselines: none), latent fixed along each trajectory.
// The VAE variant draws its n conditioning points from `train_pool` without
// replacement (with replacement once n exceeds the pool).
Matrix sample(const ModelBundle& bundle, std::size_t n, const SampleConfig& cfg,
              const Matrix* train_pool = nullptr);

// Same solver path with a caller-fixed conditioning matrix f ([1 x k]
// broadcast, or [n x k]).
Matrix sample_conditioned(const ModelBundle& bundle, const Matrix& f, std::size_t n,
                          const SampleConfig& cfg);

// sample() with the intermediate states kept: identical draws, trajectory
// recorded at `snapshots` roughly even times.
Trajectory sample_trajectories(const ModelBundle& bundle, std::size_t n, const SampleConfig& cfg,
                               std::size_t snapshots, const Matrix* train_pool = nullptr);

struct ComposeConfig {
    std::size_t steps = 200;         // Euler predictor steps
    double t0 = 1e-2;
    double t1 = 0.99;                // < 1 so the corrector's score exists
    std::size_t langevin_steps = 2;  // 0 => predictor only
    double langevin_eps = 0.08;      // step scale; per-level eps = this * sigma(t)^2
    std::uint64_t seed = 0;

    void validate() const;
};

// Predictor-corrector chain over a product of conditionals: Euler steps on
// the composed field (1-n) a_t x + sum_i v(x, t, f_i), each followed by
// Langevin steps along the composed score. Exposed on a raw field so exact
// closed-form models can drive it.
Matrix compose_chain(const ConditionedFieldFn& field, const std::vector<Matrix>& conditions,
                     const Matrix& x_init, const ComposeConfig& cfg,
                     const PathSchedule& sched = PathSchedule::linear());

// Product of two feature-conditioned models: f_a ~ q(.|x1_a), f_b ~ q(.|x1_b),
// chain initialized from N(0, I). VAE-variant bundles only.
Matrix compose_sample(const ModelBundle& bundle, const Matrix& x1_a, const Matrix& x1_b,
                      std::size_t n, const ComposeConfig& cfg);

// Ready-made eval hook for 2d runs: samples `n_eval` points and reports the
// debiased Sinkhorn divergence against `held_out` as metric "w2".
EvalHook make_w2_hook(Matrix held_out, std::size_t n_eval, const Matrix* train_pool,
                      SinkhornConfig sink = {}, SolverConfig solver = {},
                      std::uint64_t seed = 0x57A75EEDull);

struct BetaSweepRow {
    double beta = 0.0;
    double test_kl = 0.0;    // mean KL(q(f|x) || N(0,I)) over held-out rows
    double final_loss = 0.0; // trailing-window training loss
};

// Trains the VAE variant once per beta (shared pretrained encoder, same seed)
// and measures the held-out KL term of each final encoder.
std::vector<BetaSweepRow> sweep_beta(TrainConfig base, const Matrix& train_data,
                                     const Matrix& held_out, const std::vector<double>& betas,
                                     const TrainOptions& opt = {});

}  // namespace lcfm
