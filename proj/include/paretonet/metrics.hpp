// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "paretonet/common.hpp"

namespace paretonet {

/// Fractional (average) ranks, ties averaged.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 && sbb == 0.0) return 1.0;
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

/// Spearman rho: Pearson correlation of average ranks.
inline double spearman_rho(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size() || pred.size() < 2)
        throw config_error("spearman: need two series of equal length >= 2");
    return pearson(average_ranks(pred), average_ranks(truth));
}

/// Kendall tau-b (tie corrected).
inline double kendall_tau_b(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size() || pred.size() < 2)
        throw config_error("kendall: need two series of equal length >= 2");
    const std::size_t n = pred.size();
    long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = pred[i] - pred[j];
            const double dy = truth[i] - truth[j];
            if (dx == 0.0 && dy == 0.0) continue;
            if (dx == 0.0) {
                ++ties_x;
            } else if (dy == 0.0) {
                ++ties_y;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    const double n0 = 0.5 * static_cast<double>(n) * (static_cast<double>(n) - 1.0);
    double tx = 0.0, ty = 0.0;
    {
        // Tie correction needs per-group counts, not just tied pairs.
        auto tie_pairs = [](const std::vector<double>& v) {
            std::vector<double> s(v);
            std::sort(s.begin(), s.end());
            double pairs = 0.0;
            std::size_t i = 0;
            while (i < s.size()) {
                std::size_t j = i;
                while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
                const double t = static_cast<double>(j - i + 1);
                pairs += 0.5 * t * (t - 1.0);
                i = j + 1;
            }
            return pairs;
        };
        tx = tie_pairs(pred);
        ty = tie_pairs(truth);
    }
    const double denom = std::sqrt((n0 - tx) * (n0 - ty));
    if (denom == 0.0) return 0.0;
    return (static_cast<double>(concordant) - static_cast<double>(discordant)) / denom;
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw config_error("rmse: need two series of equal length >= 1");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        s += d * d;
    }
    return std::sqrt(s / pred.size());
}

struct RankMetrics {
    double rho = 0.0;
    double tau = 0.0;
    double rmse = 0.0;
};

inline RankMetrics rank_metrics(const std::vector<double>& pred,
                                const std::vector<double>& truth) {
    RankMetrics m;
    m.rho = spearman_rho(pred, truth);
    m.tau = kendall_tau_b(pred, truth);
    m.rmse = paretonet::rmse(pred, truth);
    return m;
}

}  // namespace paretonet
