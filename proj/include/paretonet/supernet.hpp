// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "paretonet/common.hpp"
#include "paretonet/dataset.hpp"
#include "paretonet/distill.hpp"
#include "paretonet/linalg.hpp"
#include "paretonet/rng.hpp"
#include "paretonet/space.hpp"
#include "paretonet/tensor.hpp"

namespace paretonet {

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

/// Maximal tensor ids for one inverted-residual block position.
struct BlockShape {
    int c_in_max = 0, c_out_max = 0, hidden_max = 0, se_max = 0, k_max = 0, stride = 1;
    bool use_se = false;
    int exp_w = -1, exp_b = -1, dw_w = -1, dw_b = -1;
    int se_r_w = -1, se_r_b = -1, se_e_w = -1, se_e_b = -1;
    int proj_w = -1, proj_b = -1;
};

/// The shared weight store: every subnet's weights are slices of these
/// maximal tensors. Tensor order is fixed and defines both the serialization
/// layout and the gradient summation order.
struct SupernetParams {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    std::vector<bool> bias_flag;
    std::unordered_map<std::string, int> by_name;

    int stem_w = -1, stem_b = -1;
    int head_w = -1, head_b = -1;
    int cls_w = -1, cls_b = -1;
    std::vector<std::vector<BlockShape>> blocks;  // [stage][block]
    int stem_max = 0, head_max = 0, last_stage_max = 0, n_classes = 0;

    std::int64_t total_params() const {
        std::int64_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }

    int add(const std::string& name, std::vector<int> shape, bool is_bias) {
        names.push_back(name);
        tensors.emplace_back(std::move(shape));
        bias_flag.push_back(is_bias);
        by_name[name] = static_cast<int>(tensors.size()) - 1;
        return static_cast<int>(tensors.size()) - 1;
    }
};

inline int se_dim_for(int hidden) { return std::max(1, hidden / 4); }

/// Allocates the maximal tensors and draws weights from a zero-mean normal
/// with variance 2/fan_in for layers feeding rectifiers (1/fan_in for the
/// gate, projection and classifier layers). Biases start at zero.
inline SupernetParams init_supernet(const SpaceSpec& spec, std::uint64_t seed) {
    validate_space(spec);
    SupernetParams p;
    p.stem_max = spec.stem_widths.back();
    p.head_max = spec.head_widths.back();
    p.n_classes = spec.n_classes;
    p.last_stage_max = spec.stages.back().widths.back();

    p.stem_w = p.add("stem.w", {p.stem_max, 1}, false);
    p.stem_b = p.add("stem.b", {p.stem_max}, true);
    int c_prev_max = p.stem_max;
    for (int s = 0; s < static_cast<int>(spec.stages.size()); ++s) {
        const auto& st = spec.stages[static_cast<std::size_t>(s)];
        std::vector<BlockShape> stage_blocks;
        for (int b = 0; b < st.depths.back(); ++b) {
            BlockShape bs;
            bs.c_in_max = (b == 0) ? c_prev_max : st.widths.back();
            bs.c_out_max = st.widths.back();
            bs.hidden_max = st.expands.back() * bs.c_in_max;
            bs.k_max = st.kernels.back();
            bs.stride = (b == 0) ? st.stride : 1;
            bs.use_se = st.use_se;
            bs.se_max = st.use_se ? se_dim_for(bs.hidden_max) : 0;
            const std::string pre =
                "s" + std::to_string(s + 1) + ".b" + std::to_string(b + 1) + ".";
            bs.exp_w = p.add(pre + "exp.w", {bs.hidden_max, bs.c_in_max}, false);
            bs.exp_b = p.add(pre + "exp.b", {bs.hidden_max}, true);
            bs.dw_w = p.add(pre + "dw.w", {bs.hidden_max, bs.k_max}, false);
            bs.dw_b = p.add(pre + "dw.b", {bs.hidden_max}, true);
            if (bs.use_se) {
                bs.se_r_w = p.add(pre + "se.r.w", {bs.se_max, bs.hidden_max}, false);
                bs.se_r_b = p.add(pre + "se.r.b", {bs.se_max}, true);
                bs.se_e_w = p.add(pre + "se.e.w", {bs.hidden_max, bs.se_max}, false);
                bs.se_e_b = p.add(pre + "se.e.b", {bs.hidden_max}, true);
            }
            bs.proj_w = p.add(pre + "proj.w", {bs.c_out_max, bs.hidden_max}, false);
            bs.proj_b = p.add(pre + "proj.b", {bs.c_out_max}, true);
            stage_blocks.push_back(bs);
        }
        p.blocks.push_back(std::move(stage_blocks));
        c_prev_max = st.widths.back();
    }
    p.head_w = p.add("head.w", {p.head_max, p.last_stage_max}, false);
    p.head_b = p.add("head.b", {p.head_max}, true);
    p.cls_w = p.add("cls.w", {p.n_classes, p.head_max}, false);
    p.cls_b = p.add("cls.b", {p.n_classes}, true);

    // Rectifier-fed tensors get He scaling on their (maximal) fan-in. The
    // projection layers are scaled for the smallest fan-in any subnet slices
    // out of them; otherwise thin subnets start with activations attenuated
    // by the product of all slice fractions and train far too slowly.
    Rng rng(child_seed(seed, 0x696e6974));
    std::vector<double> stddev(p.tensors.size(), 0.0);
    for (int id = 0; id < static_cast<int>(p.tensors.size()); ++id) {
        if (p.bias_flag[static_cast<std::size_t>(id)]) continue;
        const Tensor& t = p.tensors[static_cast<std::size_t>(id)];
        const std::string& n = p.names[static_cast<std::size_t>(id)];
        const bool feeds_rectifier = n == "stem.w" || n == "head.w" ||
                                     n.find("exp.w") != std::string::npos ||
                                     n.find("dw.w") != std::string::npos ||
                                     n.find("se.r.w") != std::string::npos;
        stddev[static_cast<std::size_t>(id)] = std::sqrt((feeds_rectifier ? 2.0 : 1.0) / t.cols());
    }
    int prev_min = spec.stem_widths.front();
    for (int s = 0; s < static_cast<int>(spec.stages.size()); ++s) {
        const auto& st = spec.stages[static_cast<std::size_t>(s)];
        for (int b = 0; b < st.depths.back(); ++b) {
            const int c_in_min = (b == 0) ? prev_min : st.widths.front();
            const int hidden_min = std::max(1, st.expands.front() * c_in_min);
            const int proj_id = p.blocks[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)].proj_w;
            stddev[static_cast<std::size_t>(proj_id)] = std::sqrt(1.0 / hidden_min);
        }
        prev_min = st.widths.front();
    }
    stddev[static_cast<std::size_t>(p.cls_w)] = std::sqrt(1.0 / spec.head_widths.front());
    for (int id = 0; id < static_cast<int>(p.tensors.size()); ++id) {
        if (p.bias_flag[static_cast<std::size_t>(id)]) continue;
        for (auto& x : p.tensors[static_cast<std::size_t>(id)].v)
            x = rng.normal(0.0, stddev[static_cast<std::size_t>(id)]);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Subnet views (slice plans)
// ---------------------------------------------------------------------------

struct BlockView {
    int stage = 0, block = 0;  // indices into SupernetParams::blocks
    int c_in = 0, c_out = 0, hidden = 0, se_dim = 0, kernel = 0, k_off = 0, stride = 1;
    bool use_se = false;
    bool residual = false;
};

/// Slice plan: widths and expansions take leading channels, kernels the
/// central taps of the maximal kernel, depth the first blocks of each stage.
struct SubnetView {
    ArchEncoding arch;
    ArchConfig cfg;
    std::vector<BlockView> blocks;  // active blocks, network order
    std::vector<Box> plan;          // per tensor id; empty box = unused
    std::int64_t n_params = 0;
};

inline SubnetView make_view(const SpaceSpec& spec, const SupernetParams& params,
                            const ArchEncoding& arch) {
    SubnetView v;
    v.arch = arch;
    v.cfg = decode(spec, arch);  // validates the encoding
    v.plan.assign(params.tensors.size(), Box{});
    auto box1 = [&](int id, int n) {
        v.plan[static_cast<std::size_t>(id)] = Box{{{0, n}}};
    };
    auto box2 = [&](int id, int r, int c0, int c1) {
        v.plan[static_cast<std::size_t>(id)] = Box{{{0, r}, {c0, c1}}};
    };
    box2(params.stem_w, v.cfg.stem_width, 0, 1);
    box1(params.stem_b, v.cfg.stem_width);
    int c_prev = v.cfg.stem_width;
    for (int s = 0; s < static_cast<int>(spec.stages.size()); ++s) {
        const auto& cs = v.cfg.stages[static_cast<std::size_t>(s)];
        for (int b = 0; b < cs.depth; ++b) {
            const BlockShape& bs = params.blocks[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)];
            BlockView bv;
            bv.stage = s;
            bv.block = b;
            bv.c_in = (b == 0) ? c_prev : cs.width;
            bv.c_out = cs.width;
            bv.hidden = cs.expand * bv.c_in;
            bv.kernel = cs.kernel;
            bv.k_off = (bs.k_max - cs.kernel) / 2;  // central taps
            bv.stride = bs.stride;
            bv.use_se = bs.use_se;
            bv.se_dim = bs.use_se ? se_dim_for(bv.hidden) : 0;
            bv.residual = (bv.stride == 1 && bv.c_in == bv.c_out);
            box2(bs.exp_w, bv.hidden, 0, bv.c_in);
            box1(bs.exp_b, bv.hidden);
            v.plan[static_cast<std::size_t>(bs.dw_w)] =
                Box{{{0, bv.hidden}, {bv.k_off, bv.k_off + bv.kernel}}};
            box1(bs.dw_b, bv.hidden);
            if (bv.use_se) {
                box2(bs.se_r_w, bv.se_dim, 0, bv.hidden);
                box1(bs.se_r_b, bv.se_dim);
                box2(bs.se_e_w, bv.hidden, 0, bv.se_dim);
                box1(bs.se_e_b, bv.hidden);
            }
            box2(bs.proj_w, bv.c_out, 0, bv.hidden);
            box1(bs.proj_b, bv.c_out);
            v.blocks.push_back(bv);
        }
        c_prev = cs.width;
    }
    box2(params.head_w, v.cfg.head_width, 0, c_prev);
    box1(params.head_b, v.cfg.head_width);
    box2(params.cls_w, params.n_classes, 0, v.cfg.head_width);
    box1(params.cls_b, params.n_classes);
    for (const auto& bx : v.plan) v.n_params += bx.volume();
    return v;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct Grads {
    std::vector<Tensor> t;  // aligned with SupernetParams::tensors
};

inline Grads make_grads(const SupernetParams& p) {
    Grads g;
    g.t.reserve(p.tensors.size());
    for (const auto& t : p.tensors) g.t.emplace_back(t.shape);
    return g;
}

struct BlockCacheEntry {
    Act a1;                      // post-rectifier expand output (length L_in)
    Act a2;                      // post-rectifier depthwise output (length L_out)
    std::vector<double> pooled;  // [hidden*B], SE only
    std::vector<double> r;       // [se*B]
    std::vector<double> gate;    // [hidden*B]
};

struct ForwardCache {
    ArchEncoding arch;
    Act input;               // (1, B, resolution)
    std::vector<Act> acts;   // acts[0] = stem output; acts[i+1] = block i output
    std::vector<BlockCacheEntry> blocks;
    Act head;                // post-rectifier head activation
    std::vector<double> pooled_head;  // [head_width*B]
    Logits logits;
    // Smallest |pre-activation| seen at any rectifier, maintained when
    // track_margin is set. Gradient checks use it to reject inputs that sit
    // on a rectifier kink.
    bool track_margin = false;
    double min_relu_margin = 0.0;
};

namespace detail {

inline void pointwise_fwd(const Tensor& W, const Tensor& bias, int co, int ci,
                          const Act& x, Act& y) {
    y = Act(co, x.batch, x.length);
    const int n = y.row_len();
    for (int o = 0; o < co; ++o) {
        double* r = y.row(o);
        const double bo = bias.at(o);
        for (int j = 0; j < n; ++j) r[j] = bo;
    }
    gemm_acc(co, n, ci, W.data(), W.cols(), 1, x.data(), x.row_len(), y.data(), n);
}

inline void relu_inplace(Act& a) {
    for (auto& x : a.v) x = x > 0.0 ? x : 0.0;
}

inline int conv_out_len(int l, int stride) { return (l + stride - 1) / stride; }

inline void depthwise_fwd(const Tensor& W, const Tensor& bias, const BlockView& bv,
                          const Act& x, Act& y) {
    const int lo = conv_out_len(x.length, bv.stride);
    y = Act(bv.hidden, x.batch, lo);
    const int pad = (bv.kernel - 1) / 2;
    for (int c = 0; c < bv.hidden; ++c) {
        const double* w = W.data() + static_cast<std::size_t>(c) * W.cols() + bv.k_off;
        const double bc = bias.at(c);
        for (int b = 0; b < x.batch; ++b) {
            const double* xs = x.seq(c, b);
            double* ys = y.seq(c, b);
            for (int i = 0; i < lo; ++i) {
                double acc = bc;
                const int base = i * bv.stride - pad;
                for (int t = 0; t < bv.kernel; ++t) {
                    const int p = base + t;
                    if (p >= 0 && p < x.length) acc += w[t] * xs[p];
                }
                ys[i] = acc;
            }
        }
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void note_margin(double* margin, const double* v, std::size_t n) {
    if (!margin) return;
    double m = *margin;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::fabs(v[i]);
        if (a < m) m = a;
    }
    *margin = m;
}

/// Squeeze-and-excite: global average pool, reduce FC + rectifier, expand FC
/// + logistic gate, channel-wise scale. Fills cache entries and scales `a`
/// in place.
inline void se_fwd(const SupernetParams& p, const BlockShape& bs, const BlockView& bv,
                   Act& a, BlockCacheEntry& e, double* margin) {
    const int B = a.batch, L = a.length, H = bv.hidden, S = bv.se_dim;
    e.pooled.assign(static_cast<std::size_t>(H) * B, 0.0);
    for (int c = 0; c < H; ++c)
        for (int b = 0; b < B; ++b) {
            const double* xs = a.seq(c, b);
            double s = 0.0;
            for (int i = 0; i < L; ++i) s += xs[i];
            e.pooled[static_cast<std::size_t>(c) * B + b] = s / L;
        }
    const Tensor& wr = p.tensors[static_cast<std::size_t>(bs.se_r_w)];
    const Tensor& br = p.tensors[static_cast<std::size_t>(bs.se_r_b)];
    e.r.assign(static_cast<std::size_t>(S) * B, 0.0);
    for (int j = 0; j < S; ++j)
        for (int b = 0; b < B; ++b) e.r[static_cast<std::size_t>(j) * B + b] = br.at(j);
    gemm_acc(S, B, H, wr.data(), wr.cols(), 1, e.pooled.data(), B, e.r.data(), B);
    note_margin(margin, e.r.data(), e.r.size());
    for (auto& x : e.r) x = x > 0.0 ? x : 0.0;
    const Tensor& we = p.tensors[static_cast<std::size_t>(bs.se_e_w)];
    const Tensor& be = p.tensors[static_cast<std::size_t>(bs.se_e_b)];
    e.gate.assign(static_cast<std::size_t>(H) * B, 0.0);
    for (int c = 0; c < H; ++c)
        for (int b = 0; b < B; ++b) e.gate[static_cast<std::size_t>(c) * B + b] = be.at(c);
    gemm_acc(H, B, S, we.data(), we.cols(), 1, e.r.data(), B, e.gate.data(), B);
    for (auto& x : e.gate) x = sigmoid(x);
    for (int c = 0; c < H; ++c)
        for (int b = 0; b < B; ++b) {
            const double g = e.gate[static_cast<std::size_t>(c) * B + b];
            double* xs = a.seq(c, b);
            for (int i = 0; i < L; ++i) xs[i] *= g;
        }
}

}  // namespace detail

/// Runs the subnet through the shared weights. `input` must already be at the
/// view's resolution (channels = 1). The cache keeps everything backward
/// needs.
inline const Logits& forward(const SupernetParams& params, const SubnetView& view,
                             const Act& input, ForwardCache& cache) {
    if (input.channels != 1 || input.length != view.cfg.resolution)
        throw config_error("forward: input resolution " + std::to_string(input.length) +
                           " does not match view resolution " +
                           std::to_string(view.cfg.resolution));
    const int B = input.batch;
    cache.arch = view.arch;
    cache.input = input;
    cache.acts.clear();
    cache.blocks.clear();
    cache.min_relu_margin = std::numeric_limits<double>::infinity();
    double* margin = cache.track_margin ? &cache.min_relu_margin : nullptr;

    Act cur;
    detail::pointwise_fwd(params.tensors[static_cast<std::size_t>(params.stem_w)],
                          params.tensors[static_cast<std::size_t>(params.stem_b)],
                          view.cfg.stem_width, 1, input, cur);
    detail::note_margin(margin, cur.v.data(), cur.v.size());
    detail::relu_inplace(cur);
    cache.acts.push_back(cur);

    for (const BlockView& bv : view.blocks) {
        const BlockShape& bs =
            params.blocks[static_cast<std::size_t>(bv.stage)][static_cast<std::size_t>(bv.block)];
        BlockCacheEntry e;
        const Act& x = cache.acts.back();
        Act a1;
        detail::pointwise_fwd(params.tensors[static_cast<std::size_t>(bs.exp_w)],
                              params.tensors[static_cast<std::size_t>(bs.exp_b)],
                              bv.hidden, bv.c_in, x, a1);
        detail::note_margin(margin, a1.v.data(), a1.v.size());
        detail::relu_inplace(a1);
        Act a2;
        detail::depthwise_fwd(params.tensors[static_cast<std::size_t>(bs.dw_w)],
                              params.tensors[static_cast<std::size_t>(bs.dw_b)], bv, a1, a2);
        detail::note_margin(margin, a2.v.data(), a2.v.size());
        detail::relu_inplace(a2);
        e.a1 = std::move(a1);
        e.a2 = a2;  // keep pre-gate copy; a2 is scaled in place below
        if (bv.use_se) detail::se_fwd(params, bs, bv, a2, e, margin);
        Act y;
        detail::pointwise_fwd(params.tensors[static_cast<std::size_t>(bs.proj_w)],
                              params.tensors[static_cast<std::size_t>(bs.proj_b)],
                              bv.c_out, bv.hidden, a2, y);
        if (bv.residual) {
            const double* xs = x.v.data();
            double* ys = y.v.data();
            for (std::size_t i = 0; i < y.v.size(); ++i) ys[i] += xs[i];
        }
        cache.blocks.push_back(std::move(e));
        cache.acts.push_back(std::move(y));
    }

    Act head;
    detail::pointwise_fwd(params.tensors[static_cast<std::size_t>(params.head_w)],
                          params.tensors[static_cast<std::size_t>(params.head_b)],
                          view.cfg.head_width, view.cfg.stages.back().width,
                          cache.acts.back(), head);
    detail::note_margin(margin, head.v.data(), head.v.size());
    detail::relu_inplace(head);
    cache.head = std::move(head);

    const int ch = view.cfg.head_width, L = cache.head.length;
    cache.pooled_head.assign(static_cast<std::size_t>(ch) * B, 0.0);
    for (int c = 0; c < ch; ++c)
        for (int b = 0; b < B; ++b) {
            const double* xs = cache.head.seq(c, b);
            double s = 0.0;
            for (int i = 0; i < L; ++i) s += xs[i];
            cache.pooled_head[static_cast<std::size_t>(c) * B + b] = s / L;
        }
    const Tensor& wc = params.tensors[static_cast<std::size_t>(params.cls_w)];
    const Tensor& bc = params.tensors[static_cast<std::size_t>(params.cls_b)];
    cache.logits = Logits(B, params.n_classes);
    for (int b = 0; b < B; ++b) {
        double* row = cache.logits.row(b);
        for (int c = 0; c < params.n_classes; ++c) {
            double s = bc.at(c);
            const double* w = wc.data() + static_cast<std::size_t>(c) * wc.cols();
            for (int j = 0; j < ch; ++j)
                s += w[j] * cache.pooled_head[static_cast<std::size_t>(j) * B + b];
            row[c] = s;
        }
    }
    return cache.logits;
}

namespace detail {

inline void pointwise_bwd(const Tensor& W, int co, int ci, const Act& x, const Act& dy,
                          Tensor& dW, Tensor& db, Act& dx) {
    const int n = dy.row_len();
    for (int o = 0; o < co; ++o) {
        const double* r = dy.row(o);
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += r[j];
        db.at(o) += s;
    }
    gemm_nt_acc(co, ci, n, dy.data(), n, x.data(), n, dW.data(), dW.cols());
    dx = Act(ci, dy.batch, dy.length);
    gemm_acc(ci, n, co, W.data(), 1, W.cols(), dy.data(), n, dx.data(), n);
}

inline void depthwise_bwd(const Tensor& W, const BlockView& bv, const Act& x,
                          const Act& dy, Tensor& dW, Tensor& db, Act& dx) {
    const int pad = (bv.kernel - 1) / 2;
    dx = Act(bv.hidden, x.batch, x.length);
    for (int c = 0; c < bv.hidden; ++c) {
        const double* w = W.data() + static_cast<std::size_t>(c) * W.cols() + bv.k_off;
        double* gw = dW.data() + static_cast<std::size_t>(c) * dW.cols() + bv.k_off;
        double gb = 0.0;
        for (int b = 0; b < x.batch; ++b) {
            const double* xs = x.seq(c, b);
            const double* dys = dy.seq(c, b);
            double* dxs = dx.seq(c, b);
            for (int i = 0; i < dy.length; ++i) {
                const double d = dys[i];
                if (d == 0.0) continue;
                gb += d;
                const int base = i * bv.stride - pad;
                for (int t = 0; t < bv.kernel; ++t) {
                    const int p = base + t;
                    if (p >= 0 && p < x.length) {
                        gw[t] += d * xs[p];
                        dxs[p] += d * w[t];
                    }
                }
            }
        }
        db.at(c) += gb;
    }
}

}  // namespace detail

/// Backpropagates dlogits through the cached forward pass, accumulating into
/// `grads`. Gradients land only on coordinates inside the view's slice plan;
/// everything else is untouched.
inline void backward_into(const SupernetParams& params, const SubnetView& view,
                          const ForwardCache& cache, const Logits& dlogits,
                          Grads& grads) {
    if (!(cache.arch == view.arch))
        throw config_error("backward: cache does not match the view (stale cache)");
    const int B = cache.input.batch;
    const int ch = view.cfg.head_width;

    // Classifier.
    Tensor& d_wc = grads.t[static_cast<std::size_t>(params.cls_w)];
    Tensor& d_bc = grads.t[static_cast<std::size_t>(params.cls_b)];
    const Tensor& wc = params.tensors[static_cast<std::size_t>(params.cls_w)];
    std::vector<double> dpooled(static_cast<std::size_t>(ch) * B, 0.0);
    for (int b = 0; b < B; ++b) {
        const double* dl = dlogits.row(b);
        for (int c = 0; c < params.n_classes; ++c) {
            const double d = dl[c];
            if (d == 0.0) continue;
            d_bc.at(c) += d;
            double* gw = d_wc.data() + static_cast<std::size_t>(c) * d_wc.cols();
            const double* w = wc.data() + static_cast<std::size_t>(c) * wc.cols();
            for (int j = 0; j < ch; ++j) {
                gw[j] += d * cache.pooled_head[static_cast<std::size_t>(j) * B + b];
                dpooled[static_cast<std::size_t>(j) * B + b] += d * w[j];
            }
        }
    }

    // Head GAP + rectifier.
    const int lh = cache.head.length;
    Act dhead(ch, B, lh);
    for (int c = 0; c < ch; ++c)
        for (int b = 0; b < B; ++b) {
            const double g = dpooled[static_cast<std::size_t>(c) * B + b] / lh;
            const double* hs = cache.head.seq(c, b);
            double* ds = dhead.seq(c, b);
            for (int i = 0; i < lh; ++i) ds[i] = hs[i] > 0.0 ? g : 0.0;
        }

    // Head pointwise.
    Act dcur;
    detail::pointwise_bwd(params.tensors[static_cast<std::size_t>(params.head_w)], ch,
                          view.cfg.stages.back().width, cache.acts.back(), dhead,
                          grads.t[static_cast<std::size_t>(params.head_w)],
                          grads.t[static_cast<std::size_t>(params.head_b)], dcur);

    // Blocks in reverse.
    for (int bi = static_cast<int>(view.blocks.size()) - 1; bi >= 0; --bi) {
        const BlockView& bv = view.blocks[static_cast<std::size_t>(bi)];
        const BlockShape& bs =
            params.blocks[static_cast<std::size_t>(bv.stage)][static_cast<std::size_t>(bv.block)];
        const BlockCacheEntry& e = cache.blocks[static_cast<std::size_t>(bi)];
        const Act& x_in = cache.acts[static_cast<std::size_t>(bi)];
        const Act& dy = dcur;
        const int lo = e.a2.length;

        // Projection input z = a2 (*) gate, recomputed where needed.
        Act z = e.a2;
        if (bv.use_se) {
            for (int c = 0; c < bv.hidden; ++c)
                for (int b = 0; b < B; ++b) {
                    const double g = e.gate[static_cast<std::size_t>(c) * B + b];
                    double* zs = z.seq(c, b);
                    for (int i = 0; i < lo; ++i) zs[i] *= g;
                }
        }
        Act dz;
        detail::pointwise_bwd(params.tensors[static_cast<std::size_t>(bs.proj_w)], bv.c_out,
                              bv.hidden, z, dy,
                              grads.t[static_cast<std::size_t>(bs.proj_w)],
                              grads.t[static_cast<std::size_t>(bs.proj_b)], dz);

        Act da2(bv.hidden, B, lo);
        if (bv.use_se) {
            const int S = bv.se_dim, H = bv.hidden;
            std::vector<double> dgate(static_cast<std::size_t>(H) * B, 0.0);
            for (int c = 0; c < H; ++c)
                for (int b = 0; b < B; ++b) {
                    const double g = e.gate[static_cast<std::size_t>(c) * B + b];
                    const double* dzs = dz.seq(c, b);
                    const double* as = e.a2.seq(c, b);
                    double* das = da2.seq(c, b);
                    double acc = 0.0;
                    for (int i = 0; i < lo; ++i) {
                        das[i] = dzs[i] * g;
                        acc += dzs[i] * as[i];
                    }
                    dgate[static_cast<std::size_t>(c) * B + b] = acc;
                }
            // Gate pre-activation.
            std::vector<double> dv(static_cast<std::size_t>(H) * B);
            for (std::size_t i = 0; i < dv.size(); ++i) {
                const double g = e.gate[i];
                dv[i] = dgate[i] * g * (1.0 - g);
            }
            const Tensor& we = params.tensors[static_cast<std::size_t>(bs.se_e_w)];
            Tensor& d_we = grads.t[static_cast<std::size_t>(bs.se_e_w)];
            Tensor& d_be = grads.t[static_cast<std::size_t>(bs.se_e_b)];
            for (int c = 0; c < H; ++c) {
                double s = 0.0;
                for (int b = 0; b < B; ++b) s += dv[static_cast<std::size_t>(c) * B + b];
                d_be.at(c) += s;
            }
            gemm_nt_acc(H, S, B, dv.data(), B, e.r.data(), B, d_we.data(), d_we.cols());
            std::vector<double> dr(static_cast<std::size_t>(S) * B, 0.0);
            gemm_acc(S, B, H, we.data(), 1, we.cols(), dv.data(), B, dr.data(), B);
            for (std::size_t i = 0; i < dr.size(); ++i)
                if (e.r[i] <= 0.0) dr[i] = 0.0;
            const Tensor& wr = params.tensors[static_cast<std::size_t>(bs.se_r_w)];
            Tensor& d_wr = grads.t[static_cast<std::size_t>(bs.se_r_w)];
            Tensor& d_br = grads.t[static_cast<std::size_t>(bs.se_r_b)];
            for (int j = 0; j < S; ++j) {
                double s = 0.0;
                for (int b = 0; b < B; ++b) s += dr[static_cast<std::size_t>(j) * B + b];
                d_br.at(j) += s;
            }
            gemm_nt_acc(S, H, B, dr.data(), B, e.pooled.data(), B, d_wr.data(), d_wr.cols());
            std::vector<double> dpool(static_cast<std::size_t>(H) * B, 0.0);
            gemm_acc(H, B, S, wr.data(), 1, wr.cols(), dr.data(), B, dpool.data(), B);
            for (int c = 0; c < H; ++c)
                for (int b = 0; b < B; ++b) {
                    const double g = dpool[static_cast<std::size_t>(c) * B + b] / lo;
                    double* das = da2.seq(c, b);
                    for (int i = 0; i < lo; ++i) das[i] += g;
                }
        } else {
            da2 = dz;
        }
        // Depthwise rectifier mask.
        for (std::size_t i = 0; i < da2.v.size(); ++i)
            if (e.a2.v[i] <= 0.0) da2.v[i] = 0.0;

        Act da1;
        detail::depthwise_bwd(params.tensors[static_cast<std::size_t>(bs.dw_w)], bv, e.a1,
                              da2, grads.t[static_cast<std::size_t>(bs.dw_w)],
                              grads.t[static_cast<std::size_t>(bs.dw_b)], da1);
        for (std::size_t i = 0; i < da1.v.size(); ++i)
            if (e.a1.v[i] <= 0.0) da1.v[i] = 0.0;

        Act dx;
        detail::pointwise_bwd(params.tensors[static_cast<std::size_t>(bs.exp_w)], bv.hidden,
                              bv.c_in, x_in, da1,
                              grads.t[static_cast<std::size_t>(bs.exp_w)],
                              grads.t[static_cast<std::size_t>(bs.exp_b)], dx);
        if (bv.residual) {
            for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];
        }
        dcur = std::move(dx);
    }

    // Stem.
    for (std::size_t i = 0; i < dcur.v.size(); ++i)
        if (cache.acts[0].v[i] <= 0.0) dcur.v[i] = 0.0;
    Act dinput;
    detail::pointwise_bwd(params.tensors[static_cast<std::size_t>(params.stem_w)],
                          view.cfg.stem_width, 1, cache.input, dcur,
                          grads.t[static_cast<std::size_t>(params.stem_w)],
                          grads.t[static_cast<std::size_t>(params.stem_b)], dinput);
}

inline Grads backward(const SupernetParams& params, const SubnetView& view,
                      const ForwardCache& cache, const Logits& dlogits) {
    Grads g = make_grads(params);
    backward_into(params, view, cache, dlogits, g);
    return g;
}

// ---------------------------------------------------------------------------
// Input preparation and evaluation
// ---------------------------------------------------------------------------

/// Packs dataset rows into a single-channel activation at the target
/// resolution (uniform subsampling of the native sequence).
inline Act build_input(const std::vector<std::vector<double>>& rows,
                       const std::vector<int>& indices, int native_len, int target_len) {
    const std::vector<int> sub = subsample_indices(native_len, target_len);
    Act a(1, static_cast<int>(indices.size()), target_len);
    for (int b = 0; b < a.batch; ++b) {
        const auto& src = rows[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])];
        double* dst = a.seq(0, b);
        for (int j = 0; j < target_len; ++j)
            dst[j] = src[static_cast<std::size_t>(sub[static_cast<std::size_t>(j)])];
    }
    return a;
}

/// Top-1 accuracy of the subnet with inherited (sliced) weights on the
/// validation split; no finetuning.
inline double evaluate(const SpaceSpec& spec, const SupernetParams& params,
                       const ArchEncoding& arch, const SyntheticDataset& ds) {
    if (ds.val_x.empty()) throw config_error("evaluate: empty validation set");
    const SubnetView view = make_view(spec, params, arch);
    const int n = static_cast<int>(ds.val_x.size());
    constexpr int kChunk = 256;
    int correct = 0;
    ForwardCache cache;
    for (int at = 0; at < n; at += kChunk) {
        const int b = std::min(kChunk, n - at);
        std::vector<int> idx(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i) idx[static_cast<std::size_t>(i)] = at + i;
        const Act input = build_input(ds.val_x, idx, ds.resolution, view.cfg.resolution);
        const Logits& lg = forward(params, view, input, cache);
        for (int i = 0; i < b; ++i) {
            const double* row = lg.row(i);
            int best = 0;
            for (int c = 1; c < lg.classes; ++c)
                if (row[c] > row[best]) best = c;
            if (best == ds.val_y[static_cast<std::size_t>(at + i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / n;
}

}  // namespace paretonet
