#include "lcfm/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lcfm/errors.hpp"

namespace lcfm {
namespace {

void check_field_output(const Matrix& k, const Matrix& x, double t) {
    if (!k.same_shape(x))
        throw ContractError("field output shape " + k.shape_str() + " != state shape " +
                            x.shape_str());
    for (double v : k.values())
        if (!std::isfinite(v))
            throw NumericError("field returned non-finite value at t=" + std::to_string(t));
}

void axpy(Matrix& y, double a, const Matrix& x) {
    double* yd = y.data();
    const double* xd = x.data();
    for (std::size_t i = 0; i < y.values().size(); ++i) yd[i] += a * xd[i];
}

// Snapshot bookkeeping: record `snapshots` states at roughly even times,
// first and last always included.
struct Recorder {
    double t0, t1;
    std::size_t snapshots;
    Trajectory traj;

    Recorder(double t0, double t1, std::size_t snapshots, const Matrix& x0)
        : t0(t0), t1(t1), snapshots(snapshots) {
        traj.times.push_back(t0);
        traj.states.push_back(x0);
    }

    double next_target() const {
        std::size_t j = traj.times.size();  // index of next snapshot to take
        return t0 * (1.0 - double(j) / double(snapshots - 1)) +
               t1 * (double(j) / double(snapshots - 1));
    }

    void offer(double t, const Matrix& x, bool final_step) {
        if (final_step) {
            traj.times.push_back(t1);
            traj.states.push_back(x);
            return;
        }
        if (traj.times.size() + 1 >= snapshots) return;  // keep room for the endpoint
        if (t >= next_target() - 1e-15) {
            traj.times.push_back(t);
            traj.states.push_back(x);
        }
    }
};

Trajectory integrate_fixed(const FieldFn& field, const Matrix& x0, double t0, double t1,
                           const SolverConfig& cfg) {
    const std::size_t n = cfg.steps;
    auto t_at = [&](std::size_t k) {
        double w = double(k) / double(n);
        return t0 * (1.0 - w) + t1 * w;  // exact endpoints
    };
    Recorder rec(t0, t1, cfg.snapshots, x0);
    Matrix x = x0;
    for (std::size_t k = 0; k < n; ++k) {
        double t = t_at(k);
        double h = t_at(k + 1) - t;
        if (cfg.scheme == SolverScheme::Euler) {
            Matrix k1 = field(x, t);
            check_field_output(k1, x, t);
            axpy(x, h, k1);
        } else {  // classic RK4
            Matrix k1 = field(x, t);
            check_field_output(k1, x, t);
            Matrix x2 = x;
            axpy(x2, 0.5 * h, k1);
            Matrix k2 = field(x2, t + 0.5 * h);
            check_field_output(k2, x, t);
            Matrix x3 = x;
            axpy(x3, 0.5 * h, k2);
            Matrix k3 = field(x3, t + 0.5 * h);
            check_field_output(k3, x, t);
            Matrix x4 = x;
            axpy(x4, h, k3);
            Matrix k4 = field(x4, t + h);
            check_field_output(k4, x, t);
            axpy(x, h / 6.0, k1);
            axpy(x, h / 3.0, k2);
            axpy(x, h / 3.0, k3);
            axpy(x, h / 6.0, k4);
        }
        rec.offer(t_at(k + 1), x, k + 1 == n);
    }
    return std::move(rec.traj);
}

// Dormand-Prince 5(4) coefficients.
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double kB5[7] = {35.0 / 384,      0.0,        500.0 / 1113, 125.0 / 192,
                           -2187.0 / 6784, 11.0 / 84,  0.0};
constexpr double kErr[7] = {71.0 / 57600,       0.0,         -71.0 / 16695, 71.0 / 1920,
                            -17253.0 / 339200, 22.0 / 525,  -1.0 / 40};

Trajectory integrate_dopri5(const FieldFn& field, const Matrix& x0, double t0, double t1,
                            const SolverConfig& cfg) {
    Recorder rec(t0, t1, cfg.snapshots, x0);
    Matrix x = x0;
    const std::size_t m = x.values().size();
    double t = t0;
    double h = (t1 - t0) * 0.01;
    double err_prev = 1.0;
    double facmax = 5.0;
    std::size_t attempts = 0;
    bool done = false;
    while (!done) {
        if (++attempts > cfg.max_steps)
            throw NumericError("dopri5 exceeded max_steps=" + std::to_string(cfg.max_steps) +
                               " at t=" + std::to_string(t) + ", h=" + std::to_string(h));
        bool last = (t + h >= t1);
        if (last) h = t1 - t;

        Matrix k[7];
        for (int s = 0; s < 7; ++s) {
            Matrix xs = x;
            for (int j = 0; j < s; ++j)
                if (kA[s][j] != 0.0) axpy(xs, h * kA[s][j], k[j]);
            k[s] = field(xs, t + kC[s] * h);
            check_field_output(k[s], x, t + kC[s] * h);
        }
        Matrix x_new = x;
        for (int s = 0; s < 7; ++s)
            if (kB5[s] != 0.0) axpy(x_new, h * kB5[s], k[s]);

        double err_sq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double e = 0.0;
            for (int s = 0; s < 7; ++s)
                if (kErr[s] != 0.0) e += kErr[s] * k[s].values()[i];
            e *= h;
            double sc =
                cfg.atol + cfg.rtol * std::max(std::abs(x.values()[i]), std::abs(x_new.values()[i]));
            err_sq += (e / sc) * (e / sc);
        }
        double err = std::sqrt(err_sq / double(m));

        if (err <= 1.0) {
            t = last ? t1 : t + h;
            x = std::move(x_new);
            rec.offer(t, x, last);
            done = last;
            double e = std::max(err, 1e-10);
            double fac = 0.9 * std::pow(e, -0.7 / 5.0) * std::pow(err_prev, 0.4 / 5.0);
            h *= std::clamp(fac, 0.2, facmax);
            err_prev = e;
            facmax = 5.0;
        } else {
            h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
            facmax = 1.0;  // no growth right after a rejection
        }
    }
    return std::move(rec.traj);
}

}  // namespace

SolverScheme solver_scheme_from_string(const std::string& s) {
    if (s == "euler") return SolverScheme::Euler;
    if (s == "rk4") return SolverScheme::Rk4;
    if (s == "dopri5") return SolverScheme::Dopri5;
    throw ConfigError("unknown solver scheme '" + s + "' (euler, rk4, dopri5)");
}

std::string to_string(SolverScheme s) {
    switch (s) {
        case SolverScheme::Euler: return "euler";
        case SolverScheme::Rk4: return "rk4";
        default: return "dopri5";
    }
}

void SolverConfig::validate() const {
    if (scheme != SolverScheme::Dopri5 && steps == 0)
        throw ConfigError("fixed-step solver needs steps >= 1");
    if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("rtol and atol must be positive");
    if (max_steps == 0) throw ConfigError("max_steps must be >= 1");
    if (snapshots < 2) throw ConfigError("snapshots must be >= 2 (both endpoints)");
}

Trajectory integrate(const FieldFn& field, const Matrix& x0, const SolverConfig& cfg) {
    return integrate_between(field, x0, 0.0, 1.0, cfg);
}

Trajectory integrate_between(const FieldFn& field, const Matrix& x0, double t0, double t1,
                             const SolverConfig& cfg) {
    cfg.validate();
    if (!(t0 < t1)) throw ContractError("integration needs t0 < t1");
    if (cfg.scheme == SolverScheme::Dopri5) return integrate_dopri5(field, x0, t0, t1, cfg);
    return integrate_fixed(field, x0, t0, t1, cfg);
}

PathSchedule PathSchedule::linear() {
    PathSchedule s;
    s.alpha = [](double t) { return t; };
    s.dalpha = [](double) { return 1.0; };
    s.sigma = [](double t) { return 1.0 - t; };
    s.dsigma = [](double) { return -1.0; };
    return s;
}

double PathSchedule::a(double t) const {
    double al = alpha(t);
    if (al == 0.0)
        throw NumericError("path schedule singular: alpha(t)=0 at t=" + std::to_string(t));
    return dalpha(t) / al;
}

double PathSchedule::b(double t) const {
    double al = alpha(t);
    if (al == 0.0)
        throw NumericError("path schedule singular: alpha(t)=0 at t=" + std::to_string(t));
    return (dalpha(t) * sigma(t) - al * dsigma(t)) * sigma(t) / al;
}

Matrix vector_field_to_score(const Matrix& v, const Matrix& x, double t,
                             const PathSchedule& sched) {
    if (!v.same_shape(x))
        throw ContractError("score conversion: v " + v.shape_str() + " vs x " + x.shape_str());
    double a = sched.a(t);
    double b = sched.b(t);
    if (b == 0.0)
        throw ContractError("score undefined: b_t=0 at t=" + std::to_string(t));
    Matrix s = v;
    double* sd = s.data();
    const double* xd = x.data();
    for (std::size_t i = 0; i < s.values().size(); ++i) sd[i] = (sd[i] - a * xd[i]) / b;
    return s;
}

Matrix score_to_vector_field(const Matrix& score, const Matrix& x, double t,
                             const PathSchedule& sched) {
    if (!score.same_shape(x))
        throw ContractError("field conversion: score " + score.shape_str() + " vs x " +
                            x.shape_str());
    double a = sched.a(t);
    double b = sched.b(t);
    Matrix v = x;
    double* vd = v.data();
    const double* sd = score.data();
    for (std::size_t i = 0; i < v.values().size(); ++i) vd[i] = a * vd[i] + b * sd[i];
    return v;
}

Matrix composed_field(const ConditionedFieldFn& v, const Matrix& x, double t,
                      const std::vector<const Matrix*>& conditions,
                      const PathSchedule& sched) {
    if (conditions.empty()) throw ContractError("composed_field needs at least one condition");
    Matrix out(x.rows(), x.cols());
    for (const Matrix* f : conditions) {
        Matrix vi = v(x, t, *f);
        check_field_output(vi, x, t);
        axpy(out, 1.0, vi);
    }
    if (conditions.size() > 1) axpy(out, (1.0 - double(conditions.size())) * sched.a(t), x);
    return out;
}

Matrix composed_field(const ConditionedFieldFn& v, const Matrix& x, double t,
                      const Matrix& f1, const Matrix& f2, const PathSchedule& sched) {
    return composed_field(v, x, t, {&f1, &f2}, sched);
}

Matrix langevin_correct(const ScoreFn& score, Matrix x, std::size_t n_steps,
                        double eps_drift, double eps_diff, Rng& rng) {
    if (eps_drift < 0.0 || eps_diff < 0.0)
        throw ConfigError("langevin step sizes must be non-negative");
    const std::size_t m = x.values().size();
    std::vector<double> z(m);
    double noise_scale = std::sqrt(2.0 * eps_diff);
    for (std::size_t step = 0; step < n_steps; ++step) {
        Matrix s = score(x);
        check_field_output(s, x, 0.0);
        axpy(x, eps_drift, s);
        if (noise_scale > 0.0) {
            rng.fill_normal(z);
            double* xd = x.data();
            for (std::size_t i = 0; i < m; ++i) xd[i] += noise_scale * z[i];
        }
    }
    return x;
}

Matrix langevin_correct(const ScoreFn& score, Matrix x, std::size_t n_steps,
                        double eps_drift, double eps_diff, std::uint64_t seed) {
    Rng rng(seed);
    return langevin_correct(score, std::move(x), n_steps, eps_drift, eps_diff, rng);
}

}  // namespace lcfm
