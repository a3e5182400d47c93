#include "lcfm/triangle.hpp"

#include <cmath>
#include <string>

#include "lcfm/errors.hpp"
#include "lcfm/rng.hpp"

namespace lcfm {

void TriangleConfig::validate() const {
    if (k < 1) throw ConfigError("triangle: k must be >= 1");
    if (d < 1) throw ConfigError("triangle: d must be >= 1");
    if (spacing <= 0 || width <= 0) throw ConfigError("triangle: spacing/width must be > 0");
    if (!weights.empty()) {
        if (weights.size() != k) {
            throw ConfigError("triangle: expected " + std::to_string(k) + " weights, got " +
                              std::to_string(weights.size()));
        }
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw ConfigError("triangle: negative weight");
            sum += w;
        }
        if (std::fabs(sum - 1.0) > 1e-12) {
            throw ConfigError("triangle: weights sum to " + std::to_string(sum) + ", not 1");
        }
    }
}

std::vector<double> TriangleConfig::effective_weights() const {
    if (!weights.empty()) return weights;
    return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

double TriangleConfig::center(std::size_t mode) const {
    return (static_cast<double>(mode) - 0.5 * static_cast<double>(k - 1)) * spacing;
}

std::size_t TriangleConfig::n_modes() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < d; ++i) n *= k;
    return n;
}

std::vector<double> triangle_weight_preset(std::size_t index, std::size_t k) {
    if (k != 4) throw ConfigError("weight presets are defined for k=4");
    static const double presets[kTriangleWeightPresets][4] = {
        {0.25, 0.25, 0.25, 0.25},
        {0.40, 0.30, 0.20, 0.10},
        {0.10, 0.20, 0.30, 0.40},
        {0.35, 0.15, 0.35, 0.15},
        {0.15, 0.40, 0.10, 0.35},
    };
    if (index >= kTriangleWeightPresets) throw ConfigError("preset index out of range");
    return {presets[index], presets[index] + 4};
}

Matrix sample_triangle(const TriangleConfig& cfg, std::size_t n) {
    cfg.validate();
    if (n == 0) throw ContractError("sample_triangle: n must be > 0");
    const std::vector<double> w = cfg.effective_weights();
    std::vector<double> cdf(cfg.k);
    double acc = 0.0;
    for (std::size_t m = 0; m < cfg.k; ++m) {
        acc += w[m];
        cdf[m] = acc;
    }
    cdf[cfg.k - 1] = 1.0;

    Matrix out(n, cfg.d);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::derive(cfg.seed, i);
        for (std::size_t j = 0; j < cfg.d; ++j) {
            const double u = rng.uniform();
            std::size_t m = 0;
            while (m + 1 < cfg.k && u >= cdf[m]) ++m;
            const double u1 = rng.uniform();
            const double u2 = rng.uniform();
            out(i, j) = cfg.center(m) + cfg.width * (u1 + u2 - 1.0);
        }
    }
    return out;
}

namespace {

std::size_t nearest_mode_1d(const TriangleConfig& cfg, double x) {
    const double pos = x / cfg.spacing + 0.5 * static_cast<double>(cfg.k - 1);
    const double r = std::round(pos);
    if (r <= 0.0) return 0;
    const auto m = static_cast<std::size_t>(r);
    return m >= cfg.k ? cfg.k - 1 : m;
}

}  // namespace

std::size_t triangle_mode_cell(const TriangleConfig& cfg, const double* x) {
    std::size_t cell = 0;
    std::size_t stride = 1;
    for (std::size_t j = 0; j < cfg.d; ++j) {
        cell += nearest_mode_1d(cfg, x[j]) * stride;
        stride *= cfg.k;
    }
    return cell;
}

bool triangle_in_support(const TriangleConfig& cfg, const double* x) {
    for (std::size_t j = 0; j < cfg.d; ++j) {
        const std::size_t m = nearest_mode_1d(cfg, x[j]);
        if (std::fabs(x[j] - cfg.center(m)) > cfg.width) return false;
    }
    return true;
}

double triangle_density(const TriangleConfig& cfg, const double* x) {
    const std::vector<double> w = cfg.effective_weights();
    double dens = 1.0;
    for (std::size_t j = 0; j < cfg.d; ++j) {
        double dim_dens = 0.0;
        for (std::size_t m = 0; m < cfg.k; ++m) {
            const double u = std::fabs(x[j] - cfg.center(m)) / cfg.width;
            if (u < 1.0) dim_dens += w[m] * (1.0 - u) / cfg.width;
        }
        dens *= dim_dens;
    }
    return dens;
}

double triangle_cell_weight(const TriangleConfig& cfg, std::size_t cell) {
    const std::vector<double> w = cfg.effective_weights();
    double prob = 1.0;
    for (std::size_t j = 0; j < cfg.d; ++j) {
        prob *= w[cell % cfg.k];
        cell /= cfg.k;
    }
    return prob;
}

ChannelStats compute_channel_stats(const Matrix& data, std::size_t n_channels) {
    if (n_channels == 0 || data.cols() % n_channels != 0) {
        throw ContractError("channel count must divide columns");
    }
    const std::size_t width = data.cols() / n_channels;
    ChannelStats st;
    st.channel_width = width;
    st.mean.resize(n_channels);
    st.stddev.resize(n_channels);
    for (std::size_t c = 0; c < n_channels; ++c) {
        double sum = 0.0, sum2 = 0.0;
        const std::size_t count = data.rows() * width;
        for (std::size_t i = 0; i < data.rows(); ++i) {
            for (std::size_t j = 0; j < width; ++j) {
                const double v = data(i, c * width + j);
                sum += v;
                sum2 += v * v;
            }
        }
        const double mean = sum / static_cast<double>(count);
        const double var = sum2 / static_cast<double>(count) - mean * mean;
        st.mean[c] = mean;
        st.stddev[c] = std::sqrt(std::max(var, 0.0));
        if (st.stddev[c] <= 0.0) {
            throw ConfigError("standardize: channel " + std::to_string(c) +
                              " has zero variance");
        }
    }
    return st;
}

void standardize_inplace(Matrix& data, const ChannelStats& stats) {
    const std::size_t width = stats.channel_width;
    if (width == 0 || data.cols() != width * stats.mean.size()) {
        throw ContractError("standardize: stats do not match data shape");
    }
    for (std::size_t c = 0; c < stats.mean.size(); ++c) {
        if (stats.stddev[c] <= 0.0) throw ConfigError("standardize: zero sigma");
        const double inv = 1.0 / stats.stddev[c];
        for (std::size_t i = 0; i < data.rows(); ++i)
            for (std::size_t j = 0; j < width; ++j) {
                double& v = data(i, c * width + j);
                v = (v - stats.mean[c]) * inv;
            }
    }
}

void unstandardize_inplace(Matrix& data, const ChannelStats& stats) {
    const std::size_t width = stats.channel_width;
    if (width == 0 || data.cols() != width * stats.mean.size()) {
        throw ContractError("standardize: stats do not match data shape");
    }
    for (std::size_t c = 0; c < stats.mean.size(); ++c) {
        for (std::size_t i = 0; i < data.rows(); ++i)
            for (std::size_t j = 0; j < width; ++j) {
                double& v = data(i, c * width + j);
                v = v * stats.stddev[c] + stats.mean[c];
            }
    }
}

}  // namespace lcfm
