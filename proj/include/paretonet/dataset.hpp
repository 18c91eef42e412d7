// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "paretonet/common.hpp"
#include "paretonet/rng.hpp"

namespace paretonet {

/// Synthetic 1-D classification task standing in for a large-scale image set.
/// Class c is a fixed base frequency plus its first harmonic, random phases,
/// additive Gaussian noise. Balanced and regenerated deterministically from
/// the seed.
struct SyntheticDataset {
    int n_classes = 0;
    int resolution = 0;  // native sequence length (the maximum resolution)
    std::vector<std::vector<double>> train_x;
    std::vector<int> train_y;
    std::vector<std::vector<double>> val_x;
    std::vector<int> val_y;
};

namespace detail {

inline std::vector<double> synth_example(Rng& rng, int c, int length) {
    // Fundamentals spaced so each class stays below Nyquist after the
    // coarsest resolution subsampling; harmonics may alias, which is what
    // makes low resolutions genuinely harder.
    const double f = 1.0 + 0.9 * c;
    const double phi1 = rng.uniform(0.0, 6.283185307179586);
    const double phi2 = rng.uniform(0.0, 6.283185307179586);
    std::vector<double> x(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        const double t = (i + 0.5) / length;
        x[static_cast<std::size_t>(i)] = std::sin(6.283185307179586 * f * t + phi1) +
                                         0.25 * std::sin(6.283185307179586 * 2.0 * f * t + phi2) +
                                         0.1 * rng.normal();
    }
    return x;
}

}  // namespace detail

inline SyntheticDataset gen_dataset(std::uint64_t seed, int n_train, int n_val,
                                    int n_classes, int max_resolution) {
    if (n_classes < 2) throw config_error("gen_dataset: n_classes must be >= 2");
    if (n_train < 1 || n_val < 1) throw config_error("gen_dataset: empty split");
    SyntheticDataset ds;
    ds.n_classes = n_classes;
    ds.resolution = max_resolution;
    Rng rng(child_seed(seed, 0x64617461));
    ds.train_x.reserve(static_cast<std::size_t>(n_train));
    for (int i = 0; i < n_train; ++i) {
        const int c = i % n_classes;  // exactly balanced when divisible
        ds.train_x.push_back(detail::synth_example(rng, c, max_resolution));
        ds.train_y.push_back(c);
    }
    ds.val_x.reserve(static_cast<std::size_t>(n_val));
    for (int i = 0; i < n_val; ++i) {
        const int c = i % n_classes;
        ds.val_x.push_back(detail::synth_example(rng, c, max_resolution));
        ds.val_y.push_back(c);
    }
    return ds;
}

/// Resolution is pure input subsampling: index j of the reduced sequence maps
/// to floor(j * L_full / L_target) of the native one.
inline std::vector<int> subsample_indices(int full_length, int target_length) {
    if (target_length < 1 || target_length > full_length)
        throw config_error("subsample: target length out of range");
    std::vector<int> idx(static_cast<std::size_t>(target_length));
    for (int j = 0; j < target_length; ++j)
        idx[static_cast<std::size_t>(j)] =
            static_cast<int>((static_cast<std::int64_t>(j) * full_length) / target_length);
    return idx;
}

}  // namespace paretonet
