#pragma once

#include <cstdint>
#include <vector>

#include "lcfm/tensor.hpp"

namespace lcfm {

// d-fold product of a k-mode 1-d triangular mixture. Mode m sits at
// (m - (k-1)/2) * spacing with a symmetric triangular density of half-width
// `width`; the same per-dim weight vector applies to every dimension, giving
// k^d joint modes.
struct TriangleConfig {
    std::size_t k = 4;
    std::size_t d = 2;
    std::vector<double> weights;  // empty => uniform; else k entries, sum 1
    double spacing = 2.0;
    double width = 0.6;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<double> effective_weights() const;
    double center(std::size_t mode) const;
    std::size_t n_modes() const;  // k^d
};

// Five fixed weight presets standing in for "random data density shapes".
std::vector<double> triangle_weight_preset(std::size_t index, std::size_t k);
inline constexpr std::size_t kTriangleWeightPresets = 5;

// n i.i.d. draws; sample i is generated from the stream (seed, i), so any
// contiguous regeneration is byte-identical.
Matrix sample_triangle(const TriangleConfig& cfg, std::size_t n);

// Joint mode cell of the nearest mode centers, id = sum_dim m_dim * k^dim.
std::size_t triangle_mode_cell(const TriangleConfig& cfg, const double* x);
// True if every coordinate lies inside its nearest mode's support.
bool triangle_in_support(const TriangleConfig& cfg, const double* x);

// Exact ground-truth density / joint mode weight.
double triangle_density(const TriangleConfig& cfg, const double* x);
double triangle_cell_weight(const TriangleConfig& cfg, std::size_t cell);

// Per-channel standardization. Stats hold one (mean, std) per channel where
// channels partition the columns into equal blocks.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::size_t channel_width = 0;
};

ChannelStats compute_channel_stats(const Matrix& data, std::size_t n_channels);
void standardize_inplace(Matrix& data, const ChannelStats& stats);
void unstandardize_inplace(Matrix& data, const ChannelStats& stats);

}  // namespace lcfm
