#pragma once

#include <functional>
#include <vector>

#include "lcfm/rng.hpp"
#include "lcfm/tensor.hpp"

namespace lcfm {

enum class SolverScheme { Euler, Rk4, Dopri5 };

SolverScheme solver_scheme_from_string(const std::string& s);
std::string to_string(SolverScheme s);

struct SolverConfig {
    SolverScheme scheme = SolverScheme::Dopri5;
    std::size_t steps = 100;  // fixed-step schemes: h = interval / steps
    double rtol = 1e-5;
    double atol = 1e-5;
    std::size_t max_steps = 100000;  // adaptive attempt cap
    std::size_t snapshots = 2;       // recorded states, both endpoints included

    void validate() const;
};

struct Trajectory {
    std::vector<double> times;   // strictly increasing, t0 first, t1 last
    std::vector<Matrix> states;  // states[0] == initial condition
    const Matrix& end() const { return states.back(); }
};

using FieldFn = std::function<Matrix(const Matrix& x, double t)>;

// Batch ODE integration of dx/dt = field(x, t) over [0, 1].
Trajectory integrate(const FieldFn& field, const Matrix& x0, const SolverConfig& cfg);
// Sub-interval form (compositional sampling trims both endpoints).
Trajectory integrate_between(const FieldFn& field, const Matrix& x0, double t0, double t1,
                             const SolverConfig& cfg);

// Gaussian-path schedule x_t = alpha_t x1 + sigma_t x0. Score and vector
// field exchange through a_t = alpha'/alpha and
// b_t = (alpha' sigma - alpha sigma') sigma / alpha.
struct PathSchedule {
    std::function<double(double)> alpha, dalpha, sigma, dsigma;

    // alpha = t, sigma = 1 - t (a_t = 1/t, b_t = (1-t)/t).
    static PathSchedule linear();

    double a(double t) const;  // throws NumericError at alpha(t) = 0
    double b(double t) const;
};

// score = (v - a_t x) / b_t; throws ContractError where b_t = 0.
Matrix vector_field_to_score(const Matrix& v, const Matrix& x, double t,
                             const PathSchedule& sched);
// v = a_t x + b_t score.
Matrix score_to_vector_field(const Matrix& score, const Matrix& x, double t,
                             const PathSchedule& sched);

using ConditionedFieldFn =
    std::function<Matrix(const Matrix& x, double t, const Matrix& f)>;

// (1-n) a_t x + sum_i v(x, f_i, t) for n conditions; equals the field whose
// score is the sum of the conditional scores. One condition returns the plain
// field evaluation (the a_t terms cancel exactly).
Matrix composed_field(const ConditionedFieldFn& v, const Matrix& x, double t,
                      const std::vector<const Matrix*>& conditions,
                      const PathSchedule& sched);
// Two-condition convenience form.
Matrix composed_field(const ConditionedFieldFn& v, const Matrix& x, double t,
                      const Matrix& f1, const Matrix& f2, const PathSchedule& sched);

using ScoreFn = std::function<Matrix(const Matrix& x)>;

// n_steps iterations of x <- x + eps_drift * score(x) + sqrt(2 eps_diff) z.
Matrix langevin_correct(const ScoreFn& score, Matrix x, std::size_t n_steps,
                        double eps_drift, double eps_diff, Rng& rng);
Matrix langevin_correct(const ScoreFn& score, Matrix x, std::size_t n_steps,
                        double eps_drift, double eps_diff, std::uint64_t seed);

}  // namespace lcfm
