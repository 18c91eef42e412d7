// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "paretonet/common.hpp"
#include "paretonet/latsim.hpp"
#include "paretonet/linalg.hpp"
#include "paretonet/metrics.hpp"
#include "paretonet/rng.hpp"
#include "paretonet/space.hpp"

namespace paretonet {

/// Architecture features for the predictors: each gene index scaled to [0,1]
/// by its choice count (single-choice genes map to 0).
inline std::vector<double> encode_features(const SpaceSpec& spec, const ArchEncoding& a) {
    validate_encoding(spec, a);
    std::vector<double> x(static_cast<std::size_t>(spec.genome_length()));
    for (int g = 0; g < spec.genome_length(); ++g) {
        const int n = spec.n_choices(g);
        x[static_cast<std::size_t>(g)] =
            n > 1 ? static_cast<double>(a.genes[static_cast<std::size_t>(g)]) / (n - 1) : 0.0;
    }
    return x;
}

enum class SurrogateKind { mlp, cart, rbf, gp };

inline std::string to_string(SurrogateKind k) {
    switch (k) {
        case SurrogateKind::mlp: return "mlp";
        case SurrogateKind::cart: return "cart";
        case SurrogateKind::rbf: return "rbf";
        default: return "gp";
    }
}

inline SurrogateKind surrogate_kind_from(const std::string& s) {
    if (s == "mlp") return SurrogateKind::mlp;
    if (s == "cart") return SurrogateKind::cart;
    if (s == "rbf") return SurrogateKind::rbf;
    if (s == "gp") return SurrogateKind::gp;
    throw config_error("unknown surrogate kind '" + s + "'");
}

/// Hyperparameters; the defaults are the shipped configuration and every
/// field is config-overridable.
struct SurrogateHyper {
    // MLP
    int mlp_hidden = 64;
    int mlp_epochs = 500;
    double mlp_lr = 0.05;
    double mlp_momentum = 0.9;
    // CART
    int cart_max_depth = 12;
    int cart_min_leaf = 5;
    // RBF
    double rbf_ridge = 1e-8;
    // GP
    std::vector<double> gp_length_factors = {0.25, 0.5, 1.0, 2.0};
    std::vector<double> gp_noises = {1e-6, 1e-4, 1e-2};
};

namespace detail {

inline double sq_dist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        const double x = a[i] - b[i];
        s += x * x;
    }
    return s;
}

/// Median pairwise Euclidean distance of the training inputs.
inline double median_distance(const std::vector<std::vector<double>>& X) {
    std::vector<double> d;
    d.reserve(X.size() * (X.size() - 1) / 2);
    const int dim = static_cast<int>(X[0].size());
    for (std::size_t i = 0; i < X.size(); ++i)
        for (std::size_t j = i + 1; j < X.size(); ++j)
            d.push_back(std::sqrt(sq_dist(X[i].data(), X[j].data(), dim)));
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    const double m = d[d.size() / 2];
    return m > 0.0 ? m : 1.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model states
// ---------------------------------------------------------------------------

struct MlpState {
    int dim = 0, hidden = 0;
    std::vector<double> w1, b1, w2, b2, w3;  // [h][d], [h], [h][h], [h], [h]
    double b3 = 0.0;
    double y_mean = 0.0, y_std = 1.0;
};

struct CartNode {
    int feature = -1;        // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;      // leaf mean
};

struct CartState {
    int dim = 0;
    std::vector<CartNode> nodes;  // node 0 is the root
};

struct RbfState {
    int dim = 0;
    std::vector<std::vector<double>> centers;
    std::vector<double> weights;
    double sigma = 1.0;
    double y_mean = 0.0;
};

struct GpState {
    int dim = 0;
    std::vector<std::vector<double>> X;
    std::vector<double> alpha;
    double length_scale = 1.0;
    double noise = 1e-6;
    double y_mean = 0.0, y_std = 1.0;
};

struct FittedSurrogate {
    SurrogateKind kind = SurrogateKind::rbf;
    int dim = 0;
    int n_train = 0;
    std::uint64_t seed = 0;
    std::string device;
    std::string data_hash;
    MlpState mlp;
    CartState cart;
    RbfState rbf;
    GpState gp;
};

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

namespace detail {

inline MlpState fit_mlp(const std::vector<std::vector<double>>& X,
                        const std::vector<double>& y, const SurrogateHyper& h,
                        std::uint64_t seed) {
    const int n = static_cast<int>(X.size());
    const int d = static_cast<int>(X[0].size());
    const int hd = h.mlp_hidden;
    MlpState m;
    m.dim = d;
    m.hidden = hd;
    m.y_mean = 0.0;
    for (double v : y) m.y_mean += v;
    m.y_mean /= n;
    double var = 0.0;
    for (double v : y) var += (v - m.y_mean) * (v - m.y_mean);
    m.y_std = std::sqrt(var / n);
    if (m.y_std <= 0.0) m.y_std = 1.0;
    std::vector<double> t(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = (y[static_cast<std::size_t>(i)] - m.y_mean) / m.y_std;

    Rng rng(child_seed(seed, 0x6d6c70));
    m.w1.resize(static_cast<std::size_t>(hd) * d);
    m.b1.assign(static_cast<std::size_t>(hd), 0.0);
    m.w2.resize(static_cast<std::size_t>(hd) * hd);
    m.b2.assign(static_cast<std::size_t>(hd), 0.0);
    m.w3.resize(static_cast<std::size_t>(hd));
    for (auto& w : m.w1) w = rng.normal(0.0, std::sqrt(2.0 / d));
    for (auto& w : m.w2) w = rng.normal(0.0, std::sqrt(2.0 / hd));
    for (auto& w : m.w3) w = rng.normal(0.0, std::sqrt(1.0 / hd));

    // Full-batch gradient descent with momentum on the MSE.
    std::vector<double> a1(static_cast<std::size_t>(n) * hd), a2(static_cast<std::size_t>(n) * hd);
    std::vector<double> pred(static_cast<std::size_t>(n));
    std::vector<double> vw1(m.w1.size(), 0.0), vb1(m.b1.size(), 0.0);
    std::vector<double> vw2(m.w2.size(), 0.0), vb2(m.b2.size(), 0.0);
    std::vector<double> vw3(m.w3.size(), 0.0);
    double vb3 = 0.0;
    std::vector<double> gw1(m.w1.size()), gb1(m.b1.size()), gw2(m.w2.size()), gb2(m.b2.size()),
        gw3(m.w3.size());
    std::vector<double> d1(static_cast<std::size_t>(n) * hd), d2(static_cast<std::size_t>(n) * hd);
    for (int epoch = 0; epoch < h.mlp_epochs; ++epoch) {
        for (int i = 0; i < n; ++i) {
            const double* xi = X[static_cast<std::size_t>(i)].data();
            double* a1i = a1.data() + static_cast<std::size_t>(i) * hd;
            for (int j = 0; j < hd; ++j) {
                double s = m.b1[static_cast<std::size_t>(j)];
                const double* w = m.w1.data() + static_cast<std::size_t>(j) * d;
                for (int k = 0; k < d; ++k) s += w[k] * xi[k];
                a1i[j] = s > 0.0 ? s : 0.0;
            }
            double* a2i = a2.data() + static_cast<std::size_t>(i) * hd;
            for (int j = 0; j < hd; ++j) {
                double s = m.b2[static_cast<std::size_t>(j)];
                const double* w = m.w2.data() + static_cast<std::size_t>(j) * hd;
                for (int k = 0; k < hd; ++k) s += w[k] * a1i[k];
                a2i[j] = s > 0.0 ? s : 0.0;
            }
            double s = m.b3;
            for (int j = 0; j < hd; ++j) s += m.w3[static_cast<std::size_t>(j)] * a2i[j];
            pred[static_cast<std::size_t>(i)] = s;
        }
        std::fill(gw1.begin(), gw1.end(), 0.0);
        std::fill(gb1.begin(), gb1.end(), 0.0);
        std::fill(gw2.begin(), gw2.end(), 0.0);
        std::fill(gb2.begin(), gb2.end(), 0.0);
        std::fill(gw3.begin(), gw3.end(), 0.0);
        double gb3 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double e = 2.0 * (pred[static_cast<std::size_t>(i)] - t[static_cast<std::size_t>(i)]) / n;
            const double* a2i = a2.data() + static_cast<std::size_t>(i) * hd;
            const double* a1i = a1.data() + static_cast<std::size_t>(i) * hd;
            double* d2i = d2.data() + static_cast<std::size_t>(i) * hd;
            for (int j = 0; j < hd; ++j) {
                gw3[static_cast<std::size_t>(j)] += e * a2i[j];
                d2i[j] = a2i[j] > 0.0 ? e * m.w3[static_cast<std::size_t>(j)] : 0.0;
            }
            gb3 += e;
            double* d1i = d1.data() + static_cast<std::size_t>(i) * hd;
            for (int j = 0; j < hd; ++j) d1i[j] = 0.0;
            for (int j = 0; j < hd; ++j) {
                const double dj = d2i[j];
                if (dj == 0.0) continue;
                gb2[static_cast<std::size_t>(j)] += dj;
                double* w2j = m.w2.data() + static_cast<std::size_t>(j) * hd;
                double* gw2j = gw2.data() + static_cast<std::size_t>(j) * hd;
                for (int k = 0; k < hd; ++k) {
                    gw2j[k] += dj * a1i[k];
                    d1i[k] += dj * w2j[k];
                }
            }
            const double* xi = X[static_cast<std::size_t>(i)].data();
            for (int j = 0; j < hd; ++j) {
                const double dj = a1i[j] > 0.0 ? d1i[j] : 0.0;
                if (dj == 0.0) continue;
                gb1[static_cast<std::size_t>(j)] += dj;
                double* gw1j = gw1.data() + static_cast<std::size_t>(j) * d;
                for (int k = 0; k < d; ++k) gw1j[k] += dj * xi[k];
            }
        }
        auto upd = [&](std::vector<double>& w, std::vector<double>& v,
                       const std::vector<double>& g) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                v[i] = h.mlp_momentum * v[i] + g[i];
                w[i] -= h.mlp_lr * v[i];
            }
        };
        upd(m.w1, vw1, gw1);
        upd(m.b1, vb1, gb1);
        upd(m.w2, vw2, gw2);
        upd(m.b2, vb2, gb2);
        upd(m.w3, vw3, gw3);
        vb3 = h.mlp_momentum * vb3 + gb3;
        m.b3 -= h.mlp_lr * vb3;
    }
    return m;
}

inline double predict_mlp(const MlpState& m, const std::vector<double>& x) {
    std::vector<double> a1(static_cast<std::size_t>(m.hidden)), a2(static_cast<std::size_t>(m.hidden));
    for (int j = 0; j < m.hidden; ++j) {
        double s = m.b1[static_cast<std::size_t>(j)];
        const double* w = m.w1.data() + static_cast<std::size_t>(j) * m.dim;
        for (int k = 0; k < m.dim; ++k) s += w[k] * x[static_cast<std::size_t>(k)];
        a1[static_cast<std::size_t>(j)] = s > 0.0 ? s : 0.0;
    }
    for (int j = 0; j < m.hidden; ++j) {
        double s = m.b2[static_cast<std::size_t>(j)];
        const double* w = m.w2.data() + static_cast<std::size_t>(j) * m.hidden;
        for (int k = 0; k < m.hidden; ++k) s += w[k] * a1[static_cast<std::size_t>(k)];
        a2[static_cast<std::size_t>(j)] = s > 0.0 ? s : 0.0;
    }
    double s = m.b3;
    for (int j = 0; j < m.hidden; ++j) s += m.w3[static_cast<std::size_t>(j)] * a2[static_cast<std::size_t>(j)];
    return s * m.y_std + m.y_mean;
}

/// Greedy variance-reduction splits; leaves predict the mean of their
/// training targets. Deterministic tie-break: lowest feature, lowest
/// threshold.
inline int build_cart(CartState& tree, const std::vector<std::vector<double>>& X,
                      const std::vector<double>& y, std::vector<int>& idx, int begin,
                      int end, int depth, const SurrogateHyper& h) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double mean = 0.0;
    for (int i = begin; i < end; ++i) mean += y[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    mean /= (end - begin);
    tree.nodes[static_cast<std::size_t>(node_id)].value = mean;
    const int n = end - begin;
    if (depth >= h.cart_max_depth || n < 2 * h.cart_min_leaf) return node_id;

    double base_sse = 0.0;
    for (int i = begin; i < end; ++i) {
        const double v = y[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        base_sse += (v - mean) * (v - mean);
    }
    int best_f = -1;
    double best_thr = 0.0, best_sse = base_sse;
    std::vector<std::pair<double, double>> fv(static_cast<std::size_t>(n));  // (feature, target)
    for (int f = 0; f < tree.dim; ++f) {
        for (int i = 0; i < n; ++i) {
            const int ex = idx[static_cast<std::size_t>(begin + i)];
            fv[static_cast<std::size_t>(i)] = {X[static_cast<std::size_t>(ex)][static_cast<std::size_t>(f)],
                                               y[static_cast<std::size_t>(ex)]};
        }
        std::sort(fv.begin(), fv.end());
        double left_sum = 0.0, left_sq = 0.0;
        double total_sum = 0.0, total_sq = 0.0;
        for (const auto& p : fv) {
            total_sum += p.second;
            total_sq += p.second * p.second;
        }
        for (int i = 0; i < n - 1; ++i) {
            left_sum += fv[static_cast<std::size_t>(i)].second;
            left_sq += fv[static_cast<std::size_t>(i)].second * fv[static_cast<std::size_t>(i)].second;
            if (fv[static_cast<std::size_t>(i)].first == fv[static_cast<std::size_t>(i + 1)].first)
                continue;  // no threshold between equal values
            const int nl = i + 1, nr = n - nl;
            if (nl < h.cart_min_leaf || nr < h.cart_min_leaf) continue;
            const double right_sum = total_sum - left_sum;
            const double right_sq = total_sq - left_sq;
            const double sse = (left_sq - left_sum * left_sum / nl) +
                               (right_sq - right_sum * right_sum / nr);
            if (sse < best_sse - 1e-12) {
                best_sse = sse;
                best_f = f;
                best_thr = 0.5 * (fv[static_cast<std::size_t>(i)].first +
                                  fv[static_cast<std::size_t>(i + 1)].first);
            }
        }
    }
    if (best_f < 0) return node_id;
    const auto mid = std::stable_partition(
        idx.begin() + begin, idx.begin() + end, [&](int ex) {
            return X[static_cast<std::size_t>(ex)][static_cast<std::size_t>(best_f)] <= best_thr;
        });
    const int split = static_cast<int>(mid - idx.begin());
    if (split == begin || split == end) return node_id;
    tree.nodes[static_cast<std::size_t>(node_id)].feature = best_f;
    tree.nodes[static_cast<std::size_t>(node_id)].threshold = best_thr;
    const int l = build_cart(tree, X, y, idx, begin, split, depth + 1, h);
    const int r = build_cart(tree, X, y, idx, split, end, depth + 1, h);
    tree.nodes[static_cast<std::size_t>(node_id)].left = l;
    tree.nodes[static_cast<std::size_t>(node_id)].right = r;
    return node_id;
}

inline double predict_cart(const CartState& t, const std::vector<double>& x) {
    int cur = 0;
    while (t.nodes[static_cast<std::size_t>(cur)].feature >= 0) {
        const auto& nd = t.nodes[static_cast<std::size_t>(cur)];
        cur = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return t.nodes[static_cast<std::size_t>(cur)].value;
}

inline std::vector<double> solve_spd_with_retry(std::vector<double> K, int n,
                                                const std::vector<double>& rhs,
                                                double ridge, const char* what) {
    std::vector<double> A = K;
    for (int i = 0; i < n; ++i) A[static_cast<std::size_t>(i) * n + i] += ridge;
    if (cholesky_inplace(A, n)) return cholesky_solve(A, n, rhs);
    // Singular system: increase the ridge once, then give up.
    A = K;
    for (int i = 0; i < n; ++i) A[static_cast<std::size_t>(i) * n + i] += ridge * 1e6;
    if (cholesky_inplace(A, n)) return cholesky_solve(A, n, rhs);
    throw numeric_error(std::string(what) + ": kernel system is singular");
}

inline RbfState fit_rbf(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                        const SurrogateHyper& h) {
    const int n = static_cast<int>(X.size());
    const int d = static_cast<int>(X[0].size());
    RbfState m;
    m.dim = d;
    m.centers = X;
    m.sigma = median_distance(X);
    m.y_mean = 0.0;
    for (double v : y) m.y_mean += v;
    m.y_mean /= n;
    std::vector<double> K(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double r2 = sq_dist(X[static_cast<std::size_t>(i)].data(),
                                      X[static_cast<std::size_t>(j)].data(), d);
            K[static_cast<std::size_t>(i) * n + j] = std::exp(-r2 / (m.sigma * m.sigma));
        }
    std::vector<double> rhs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) rhs[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] - m.y_mean;
    m.weights = solve_spd_with_retry(K, n, rhs, h.rbf_ridge, "rbf");
    return m;
}

inline double predict_rbf(const RbfState& m, const std::vector<double>& x) {
    double s = m.y_mean;
    for (std::size_t i = 0; i < m.centers.size(); ++i) {
        const double r2 = sq_dist(m.centers[i].data(), x.data(), m.dim);
        s += m.weights[i] * std::exp(-r2 / (m.sigma * m.sigma));
    }
    return s;
}

/// Squared-exponential GP; length-scale and noise chosen by log marginal
/// likelihood on the training set over a small grid around the median
/// distance heuristic.
inline GpState fit_gp(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                      const SurrogateHyper& h) {
    const int n = static_cast<int>(X.size());
    const int d = static_cast<int>(X[0].size());
    GpState m;
    m.dim = d;
    m.X = X;
    m.y_mean = 0.0;
    for (double v : y) m.y_mean += v;
    m.y_mean /= n;
    double var = 0.0;
    for (double v : y) var += (v - m.y_mean) * (v - m.y_mean);
    m.y_std = std::sqrt(var / n);
    if (m.y_std <= 0.0) m.y_std = 1.0;
    std::vector<double> t(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = (y[static_cast<std::size_t>(i)] - m.y_mean) / m.y_std;

    const double sigma_med = median_distance(X);
    std::vector<double> d2(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            d2[static_cast<std::size_t>(i) * n + j] = sq_dist(
                X[static_cast<std::size_t>(i)].data(), X[static_cast<std::size_t>(j)].data(), d);

    double best_lml = -std::numeric_limits<double>::infinity();
    std::vector<double> K(static_cast<std::size_t>(n) * n);
    for (double lf : h.gp_length_factors) {
        const double ell = lf * sigma_med;
        for (double noise : h.gp_noises) {
            for (std::size_t i = 0; i < K.size(); ++i)
                K[i] = std::exp(-0.5 * d2[i] / (ell * ell));
            std::vector<double> A = K;
            for (int i = 0; i < n; ++i) A[static_cast<std::size_t>(i) * n + i] += noise;
            if (!cholesky_inplace(A, n)) continue;
            const std::vector<double> alpha = cholesky_solve(A, n, t);
            double lml = 0.0;
            for (int i = 0; i < n; ++i) {
                lml -= 0.5 * t[static_cast<std::size_t>(i)] * alpha[static_cast<std::size_t>(i)];
                lml -= std::log(A[static_cast<std::size_t>(i) * n + i]);
            }
            lml -= 0.5 * n * std::log(6.283185307179586);
            if (lml > best_lml) {
                best_lml = lml;
                m.length_scale = ell;
                m.noise = noise;
                m.alpha = alpha;
            }
        }
    }
    if (m.alpha.empty()) {
        // Every grid point failed; fall back to the retry path for a clear error.
        for (std::size_t i = 0; i < K.size(); ++i)
            K[i] = std::exp(-0.5 * d2[i] / (sigma_med * sigma_med));
        m.length_scale = sigma_med;
        m.noise = h.gp_noises.back();
        m.alpha = solve_spd_with_retry(K, n, t, m.noise, "gp");
    }
    return m;
}

inline double predict_gp(const GpState& m, const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.X.size(); ++i) {
        const double r2 = sq_dist(m.X[i].data(), x.data(), m.dim);
        s += m.alpha[i] * std::exp(-0.5 * r2 / (m.length_scale * m.length_scale));
    }
    return s * m.y_std + m.y_mean;
}

}  // namespace detail

inline FittedSurrogate fit(SurrogateKind kind, const std::vector<std::vector<double>>& X,
                           const std::vector<double>& y,
                           const SurrogateHyper& hyper = SurrogateHyper{},
                           std::uint64_t seed = 0) {
    if (X.size() != y.size()) throw config_error("fit: |X| != |y|");
    const std::size_t min_n = (kind == SurrogateKind::cart || kind == SurrogateKind::mlp) ? 10 : 2;
    if (X.size() < min_n)
        throw config_error("fit: need at least " + std::to_string(min_n) + " samples for " +
                           to_string(kind));
    FittedSurrogate f;
    f.kind = kind;
    f.dim = static_cast<int>(X[0].size());
    f.n_train = static_cast<int>(X.size());
    f.seed = seed;
    {
        std::uint64_t hsh = 0xcbf29ce484222325ULL;
        for (std::size_t i = 0; i < X.size(); ++i) {
            hsh = fnv1a64(X[i].data(), X[i].size() * sizeof(double), hsh);
            hsh = fnv1a64(&y[i], sizeof(double), hsh);
        }
        f.data_hash = to_hex(hsh);
    }
    switch (kind) {
        case SurrogateKind::mlp:
            f.mlp = detail::fit_mlp(X, y, hyper, seed);
            break;
        case SurrogateKind::cart: {
            f.cart.dim = f.dim;
            std::vector<int> idx(X.size());
            for (std::size_t i = 0; i < X.size(); ++i) idx[i] = static_cast<int>(i);
            detail::build_cart(f.cart, X, y, idx, 0, static_cast<int>(X.size()), 0, hyper);
            break;
        }
        case SurrogateKind::rbf:
            f.rbf = detail::fit_rbf(X, y, hyper);
            break;
        case SurrogateKind::gp:
            f.gp = detail::fit_gp(X, y, hyper);
            break;
    }
    return f;
}

inline double predict(const FittedSurrogate& f, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != f.dim)
        throw config_error("predict: feature dimension " + std::to_string(x.size()) +
                           " != model dimension " + std::to_string(f.dim));
    switch (f.kind) {
        case SurrogateKind::mlp: return detail::predict_mlp(f.mlp, x);
        case SurrogateKind::cart: return detail::predict_cart(f.cart, x);
        case SurrogateKind::rbf: return detail::predict_rbf(f.rbf, x);
        default: return detail::predict_gp(f.gp, x);
    }
}

// ---------------------------------------------------------------------------
// Per-device datasets, splits, sweeps, selection
// ---------------------------------------------------------------------------

struct DeviceRegression {
    std::string device;
    std::vector<std::vector<double>> X;
    std::vector<double> y;
};

inline std::vector<DeviceRegression> regression_by_device(
    const SpaceSpec& spec, const std::vector<LatencySample>& samples) {
    std::map<std::string, DeviceRegression> by;
    for (const auto& s : samples) {
        auto& r = by[s.device];
        r.device = s.device;
        r.X.push_back(encode_features(spec, s.genes));
        r.y.push_back(s.latency_ms);
    }
    std::vector<DeviceRegression> out;
    for (auto& [k, v] : by) out.push_back(std::move(v));
    return out;
}

struct TrainTestSplit {
    std::vector<std::vector<double>> x_train, x_test;
    std::vector<double> y_train, y_test;
};

/// Deterministic shuffled 80/20 split; the held-out 20% stays fixed for all
/// sweep sizes.
inline TrainTestSplit split_80_20(const DeviceRegression& r, std::uint64_t seed) {
    const int n = static_cast<int>(r.X.size());
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(child_seed(seed, 0x73706c6974));
    rng.shuffle(idx);
    const int n_train = n - n / 5;
    TrainTestSplit s;
    for (int i = 0; i < n; ++i) {
        const int ex = idx[static_cast<std::size_t>(i)];
        if (i < n_train) {
            s.x_train.push_back(r.X[static_cast<std::size_t>(ex)]);
            s.y_train.push_back(r.y[static_cast<std::size_t>(ex)]);
        } else {
            s.x_test.push_back(r.X[static_cast<std::size_t>(ex)]);
            s.y_test.push_back(r.y[static_cast<std::size_t>(ex)]);
        }
    }
    return s;
}

inline RankMetrics held_out_metrics(const FittedSurrogate& f, const TrainTestSplit& s) {
    std::vector<double> pred;
    pred.reserve(s.x_test.size());
    for (const auto& x : s.x_test) pred.push_back(predict(f, x));
    return rank_metrics(pred, s.y_test);
}

struct SweepRow {
    std::string device;
    SurrogateKind kind = SurrogateKind::rbf;
    int size = 0;
    std::uint64_t seed = 0;
    double rho = 0.0, tau = 0.0, rmse = 0.0;
};

/// Subsample the train split at each size, fit, score on the fixed held-out
/// set; one row per (kind, size, seed).
inline std::vector<SweepRow> sample_efficiency_sweep(const DeviceRegression& reg,
                                                     const std::vector<int>& sizes,
                                                     int n_seeds, std::uint64_t split_seed,
                                                     const SurrogateHyper& hyper = SurrogateHyper{}) {
    const TrainTestSplit split = split_80_20(reg, split_seed);
    const int n_train = static_cast<int>(split.x_train.size());
    std::vector<SweepRow> rows;
    const SurrogateKind kinds[] = {SurrogateKind::mlp, SurrogateKind::cart,
                                   SurrogateKind::rbf, SurrogateKind::gp};
    for (int size : sizes) {
        if (size < 1 || size > n_train)
            throw config_error("sweep: size " + std::to_string(size) +
                               " outside (0, " + std::to_string(n_train) + "]");
        for (int sd = 0; sd < n_seeds; ++sd) {
            std::vector<int> idx(static_cast<std::size_t>(n_train));
            for (int i = 0; i < n_train; ++i) idx[static_cast<std::size_t>(i)] = i;
            Rng rng(child_seed(split_seed, 0x737562 + 1000 * static_cast<std::uint64_t>(sd) + static_cast<std::uint64_t>(size)));
            rng.shuffle(idx);
            std::vector<std::vector<double>> xs;
            std::vector<double> ys;
            for (int i = 0; i < size; ++i) {
                xs.push_back(split.x_train[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
                ys.push_back(split.y_train[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
            }
            for (SurrogateKind k : kinds) {
                const FittedSurrogate f = fit(k, xs, ys, hyper, static_cast<std::uint64_t>(sd));
                std::vector<double> pred;
                pred.reserve(split.x_test.size());
                for (const auto& x : split.x_test) pred.push_back(predict(f, x));
                const RankMetrics m = rank_metrics(pred, split.y_test);
                rows.push_back({reg.device, k, size, static_cast<std::uint64_t>(sd), m.rho,
                                m.tau, m.rmse});
            }
        }
    }
    return rows;
}

/// Fits all four kinds on the 80% split and returns the kind with the best
/// held-out Spearman rho (ties: higher tau, then lower rmse).
inline SurrogateKind select_best(const DeviceRegression& reg, std::uint64_t seed,
                                 const SurrogateHyper& hyper = SurrogateHyper{}) {
    if (reg.X.size() < 100)
        throw config_error("select_best: need at least 100 rows per device");
    const TrainTestSplit split = split_80_20(reg, seed);
    SurrogateKind best = SurrogateKind::mlp;
    RankMetrics best_m{-2.0, -2.0, std::numeric_limits<double>::infinity()};
    for (SurrogateKind k : {SurrogateKind::mlp, SurrogateKind::cart, SurrogateKind::rbf,
                            SurrogateKind::gp}) {
        const FittedSurrogate f = fit(k, split.x_train, split.y_train, hyper, seed);
        const RankMetrics m = held_out_metrics(f, split);
        const bool better = m.rho > best_m.rho ||
                            (m.rho == best_m.rho && m.tau > best_m.tau) ||
                            (m.rho == best_m.rho && m.tau == best_m.tau && m.rmse < best_m.rmse);
        if (better) {
            best = k;
            best_m = m;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json surrogate_to_json(const FittedSurrogate& f) {
    nlohmann::json j;
    j["kind"] = to_string(f.kind);
    j["dim"] = f.dim;
    j["n_train"] = f.n_train;
    j["seed"] = f.seed;
    j["device"] = f.device;
    j["data_hash"] = f.data_hash;
    switch (f.kind) {
        case SurrogateKind::mlp:
            j["state"] = {{"hidden", f.mlp.hidden}, {"w1", f.mlp.w1}, {"b1", f.mlp.b1},
                          {"w2", f.mlp.w2},         {"b2", f.mlp.b2}, {"w3", f.mlp.w3},
                          {"b3", f.mlp.b3},         {"y_mean", f.mlp.y_mean},
                          {"y_std", f.mlp.y_std}};
            break;
        case SurrogateKind::cart: {
            nlohmann::json nodes = nlohmann::json::array();
            for (const auto& nd : f.cart.nodes)
                nodes.push_back({{"f", nd.feature},
                                 {"t", nd.threshold},
                                 {"l", nd.left},
                                 {"r", nd.right},
                                 {"v", nd.value}});
            j["state"] = {{"nodes", nodes}};
            break;
        }
        case SurrogateKind::rbf:
            j["state"] = {{"centers", f.rbf.centers},
                          {"weights", f.rbf.weights},
                          {"sigma", f.rbf.sigma},
                          {"y_mean", f.rbf.y_mean}};
            break;
        case SurrogateKind::gp:
            j["state"] = {{"X", f.gp.X},           {"alpha", f.gp.alpha},
                          {"length_scale", f.gp.length_scale}, {"noise", f.gp.noise},
                          {"y_mean", f.gp.y_mean}, {"y_std", f.gp.y_std}};
            break;
    }
    return j;
}

inline FittedSurrogate surrogate_from_json(const nlohmann::json& j) {
    FittedSurrogate f;
    try {
        f.kind = surrogate_kind_from(j.at("kind").get<std::string>());
        f.dim = j.at("dim").get<int>();
        f.n_train = j.at("n_train").get<int>();
        f.seed = j.at("seed").get<std::uint64_t>();
        f.device = j.at("device").get<std::string>();
        f.data_hash = j.at("data_hash").get<std::string>();
        const auto& s = j.at("state");
        switch (f.kind) {
            case SurrogateKind::mlp:
                f.mlp.dim = f.dim;
                f.mlp.hidden = s.at("hidden").get<int>();
                f.mlp.w1 = s.at("w1").get<std::vector<double>>();
                f.mlp.b1 = s.at("b1").get<std::vector<double>>();
                f.mlp.w2 = s.at("w2").get<std::vector<double>>();
                f.mlp.b2 = s.at("b2").get<std::vector<double>>();
                f.mlp.w3 = s.at("w3").get<std::vector<double>>();
                f.mlp.b3 = s.at("b3").get<double>();
                f.mlp.y_mean = s.at("y_mean").get<double>();
                f.mlp.y_std = s.at("y_std").get<double>();
                break;
            case SurrogateKind::cart: {
                f.cart.dim = f.dim;
                for (const auto& nj : s.at("nodes")) {
                    CartNode nd;
                    nd.feature = nj.at("f").get<int>();
                    nd.threshold = nj.at("t").get<double>();
                    nd.left = nj.at("l").get<int>();
                    nd.right = nj.at("r").get<int>();
                    nd.value = nj.at("v").get<double>();
                    f.cart.nodes.push_back(nd);
                }
                break;
            }
            case SurrogateKind::rbf:
                f.rbf.dim = f.dim;
                f.rbf.centers = s.at("centers").get<std::vector<std::vector<double>>>();
                f.rbf.weights = s.at("weights").get<std::vector<double>>();
                f.rbf.sigma = s.at("sigma").get<double>();
                f.rbf.y_mean = s.at("y_mean").get<double>();
                break;
            case SurrogateKind::gp:
                f.gp.dim = f.dim;
                f.gp.X = s.at("X").get<std::vector<std::vector<double>>>();
                f.gp.alpha = s.at("alpha").get<std::vector<double>>();
                f.gp.length_scale = s.at("length_scale").get<double>();
                f.gp.noise = s.at("noise").get<double>();
                f.gp.y_mean = s.at("y_mean").get<double>();
                f.gp.y_std = s.at("y_std").get<double>();
                break;
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("surrogate model: malformed JSON: ") + e.what());
    }
    return f;
}

}  // namespace paretonet
