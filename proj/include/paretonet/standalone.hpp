// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "paretonet/common.hpp"
#include "paretonet/dataset.hpp"
#include "paretonet/distill.hpp"
#include "paretonet/rng.hpp"
#include "paretonet/space.hpp"
#include "paretonet/supernet.hpp"

namespace paretonet {

// A dense copy of one subnet with its own straightforward per-example forward
// and backward. Deliberately written without the shared-weight machinery so
// the two paths can check each other.

struct StandaloneBlock {
    int c_in = 0, c_out = 0, hidden = 0, se_dim = 0, kernel = 0, stride = 1;
    bool use_se = false, residual = false;
    std::vector<double> exp_w, exp_b;   // [hidden][c_in], [hidden]
    std::vector<double> dw_w, dw_b;     // [hidden][kernel], [hidden]
    std::vector<double> se_r_w, se_r_b; // [se][hidden], [se]
    std::vector<double> se_e_w, se_e_b; // [hidden][se], [hidden]
    std::vector<double> proj_w, proj_b; // [c_out][hidden], [c_out]
};

struct StandaloneNet {
    int resolution = 0, stem_width = 0, head_width = 0, n_classes = 0;
    std::vector<double> stem_w, stem_b;
    std::vector<StandaloneBlock> blocks;
    std::vector<double> head_w, head_b;  // [head][last_width], [head]
    std::vector<double> cls_w, cls_b;    // [classes][head], [classes]
    int last_width = 0;

    std::int64_t param_count() const {
        std::int64_t n = static_cast<std::int64_t>(stem_w.size() + stem_b.size() +
                                                   head_w.size() + head_b.size() +
                                                   cls_w.size() + cls_b.size());
        for (const auto& b : blocks)
            n += static_cast<std::int64_t>(b.exp_w.size() + b.exp_b.size() + b.dw_w.size() +
                                           b.dw_b.size() + b.se_r_w.size() + b.se_r_b.size() +
                                           b.se_e_w.size() + b.se_e_b.size() +
                                           b.proj_w.size() + b.proj_b.size());
        return n;
    }
};

/// Copies the sliced weights of `view` out of the shared store into a dense
/// standalone network.
inline StandaloneNet slice_standalone(const SupernetParams& params, const SubnetView& view) {
    StandaloneNet net;
    net.resolution = view.cfg.resolution;
    net.stem_width = view.cfg.stem_width;
    net.head_width = view.cfg.head_width;
    net.n_classes = params.n_classes;
    net.last_width = view.cfg.stages.back().width;

    auto copy2 = [&](int id, int rows, int col_begin, int col_end) {
        const Tensor& t = params.tensors[static_cast<std::size_t>(id)];
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(rows) * (col_end - col_begin));
        for (int r = 0; r < rows; ++r)
            for (int c = col_begin; c < col_end; ++c) out.push_back(t.at(r, c));
        return out;
    };
    auto copy1 = [&](int id, int n) {
        const Tensor& t = params.tensors[static_cast<std::size_t>(id)];
        return std::vector<double>(t.v.begin(), t.v.begin() + n);
    };

    net.stem_w = copy2(params.stem_w, net.stem_width, 0, 1);
    net.stem_b = copy1(params.stem_b, net.stem_width);
    for (const BlockView& bv : view.blocks) {
        const BlockShape& bs =
            params.blocks[static_cast<std::size_t>(bv.stage)][static_cast<std::size_t>(bv.block)];
        StandaloneBlock b;
        b.c_in = bv.c_in;
        b.c_out = bv.c_out;
        b.hidden = bv.hidden;
        b.se_dim = bv.se_dim;
        b.kernel = bv.kernel;
        b.stride = bv.stride;
        b.use_se = bv.use_se;
        b.residual = bv.residual;
        b.exp_w = copy2(bs.exp_w, b.hidden, 0, b.c_in);
        b.exp_b = copy1(bs.exp_b, b.hidden);
        b.dw_w = copy2(bs.dw_w, b.hidden, bv.k_off, bv.k_off + b.kernel);
        b.dw_b = copy1(bs.dw_b, b.hidden);
        if (b.use_se) {
            b.se_r_w = copy2(bs.se_r_w, b.se_dim, 0, b.hidden);
            b.se_r_b = copy1(bs.se_r_b, b.se_dim);
            b.se_e_w = copy2(bs.se_e_w, b.hidden, 0, b.se_dim);
            b.se_e_b = copy1(bs.se_e_b, b.hidden);
        }
        b.proj_w = copy2(bs.proj_w, b.c_out, 0, b.hidden);
        b.proj_b = copy1(bs.proj_b, b.c_out);
        net.blocks.push_back(std::move(b));
    }
    net.head_w = copy2(params.head_w, net.head_width, 0, net.last_width);
    net.head_b = copy1(params.head_b, net.head_width);
    net.cls_w = copy2(params.cls_w, net.n_classes, 0, net.head_width);
    net.cls_b = copy1(params.cls_b, net.n_classes);
    return net;
}

namespace sa {

// Per-example activations for the standalone path: plain [channels][length]
// buffers.

struct BlockTrace {
    std::vector<double> x;   // block input
    std::vector<double> a1;  // post-rectifier expand
    std::vector<double> a2;  // post-rectifier depthwise (pre-gate)
    std::vector<double> pooled, r, gate;
    int l_in = 0, l_out = 0;
};

struct Trace {
    std::vector<double> input;
    std::vector<double> stem;
    std::vector<BlockTrace> blocks;
    std::vector<double> head_in;  // last block output (or stem when no blocks)
    std::vector<double> head;
    std::vector<double> pooled_head;
    int head_len = 0;
};

inline std::vector<double> dense(const std::vector<double>& w, const std::vector<double>& b,
                                 int rows, int cols, const std::vector<double>& x, int len) {
    // x is [cols][len]; returns [rows][len].
    std::vector<double> y(static_cast<std::size_t>(rows) * len);
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < len; ++i) {
            double s = b[static_cast<std::size_t>(r)];
            for (int c = 0; c < cols; ++c)
                s += w[static_cast<std::size_t>(r) * cols + c] *
                     x[static_cast<std::size_t>(c) * len + i];
            y[static_cast<std::size_t>(r) * len + i] = s;
        }
    return y;
}

inline void relu(std::vector<double>& v) {
    for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

}  // namespace sa

/// Forward for a single example (length = net.resolution). Fills `trace` for
/// backward when non-null.
inline std::vector<double> standalone_forward(const StandaloneNet& net,
                                              const std::vector<double>& x,
                                              sa::Trace* trace) {
    if (static_cast<int>(x.size()) != net.resolution)
        throw config_error("standalone_forward: wrong input length");
    sa::Trace local;
    sa::Trace& tr = trace ? *trace : local;
    tr.input = x;
    int len = net.resolution;
    tr.stem = sa::dense(net.stem_w, net.stem_b, net.stem_width, 1, x, len);
    sa::relu(tr.stem);
    std::vector<double> cur = tr.stem;
    int cur_c = net.stem_width;
    tr.blocks.clear();
    for (const auto& b : net.blocks) {
        sa::BlockTrace bt;
        bt.x = cur;
        bt.l_in = len;
        bt.a1 = sa::dense(b.exp_w, b.exp_b, b.hidden, b.c_in, cur, len);
        sa::relu(bt.a1);
        const int lo = (len + b.stride - 1) / b.stride;
        bt.l_out = lo;
        const int pad = (b.kernel - 1) / 2;
        bt.a2.assign(static_cast<std::size_t>(b.hidden) * lo, 0.0);
        for (int c = 0; c < b.hidden; ++c)
            for (int i = 0; i < lo; ++i) {
                double s = b.dw_b[static_cast<std::size_t>(c)];
                for (int t = 0; t < b.kernel; ++t) {
                    const int p = i * b.stride + t - pad;
                    if (p >= 0 && p < len)
                        s += b.dw_w[static_cast<std::size_t>(c) * b.kernel + t] *
                             bt.a1[static_cast<std::size_t>(c) * len + p];
                }
                bt.a2[static_cast<std::size_t>(c) * lo + i] = s;
            }
        sa::relu(bt.a2);
        std::vector<double> z = bt.a2;
        if (b.use_se) {
            bt.pooled.assign(static_cast<std::size_t>(b.hidden), 0.0);
            for (int c = 0; c < b.hidden; ++c) {
                double s = 0.0;
                for (int i = 0; i < lo; ++i) s += bt.a2[static_cast<std::size_t>(c) * lo + i];
                bt.pooled[static_cast<std::size_t>(c)] = s / lo;
            }
            bt.r = sa::dense(b.se_r_w, b.se_r_b, b.se_dim, b.hidden, bt.pooled, 1);
            sa::relu(bt.r);
            bt.gate = sa::dense(b.se_e_w, b.se_e_b, b.hidden, b.se_dim, bt.r, 1);
            for (auto& g : bt.gate) g = 1.0 / (1.0 + std::exp(-g));
            for (int c = 0; c < b.hidden; ++c)
                for (int i = 0; i < lo; ++i)
                    z[static_cast<std::size_t>(c) * lo + i] *= bt.gate[static_cast<std::size_t>(c)];
        }
        std::vector<double> y = sa::dense(b.proj_w, b.proj_b, b.c_out, b.hidden, z, lo);
        if (b.residual)
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += cur[i];
        tr.blocks.push_back(std::move(bt));
        cur = std::move(y);
        cur_c = b.c_out;
        len = lo;
    }
    tr.head_in = cur;
    tr.head = sa::dense(net.head_w, net.head_b, net.head_width, cur_c, cur, len);
    sa::relu(tr.head);
    tr.head_len = len;
    tr.pooled_head.assign(static_cast<std::size_t>(net.head_width), 0.0);
    for (int c = 0; c < net.head_width; ++c) {
        double s = 0.0;
        for (int i = 0; i < len; ++i) s += tr.head[static_cast<std::size_t>(c) * len + i];
        tr.pooled_head[static_cast<std::size_t>(c)] = s / len;
    }
    std::vector<double> logits(static_cast<std::size_t>(net.n_classes));
    for (int c = 0; c < net.n_classes; ++c) {
        double s = net.cls_b[static_cast<std::size_t>(c)];
        for (int j = 0; j < net.head_width; ++j)
            s += net.cls_w[static_cast<std::size_t>(c) * net.head_width + j] *
                 tr.pooled_head[static_cast<std::size_t>(j)];
        logits[static_cast<std::size_t>(c)] = s;
    }
    return logits;
}

/// Gradient buffers mirroring StandaloneNet's parameters.
struct StandaloneGrads {
    StandaloneNet g;  // same shapes, zeroed
};

inline StandaloneNet zeros_like(const StandaloneNet& net) {
    StandaloneNet z = net;
    auto clr = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    clr(z.stem_w);
    clr(z.stem_b);
    for (auto& b : z.blocks) {
        clr(b.exp_w);
        clr(b.exp_b);
        clr(b.dw_w);
        clr(b.dw_b);
        clr(b.se_r_w);
        clr(b.se_r_b);
        clr(b.se_e_w);
        clr(b.se_e_b);
        clr(b.proj_w);
        clr(b.proj_b);
    }
    clr(z.head_w);
    clr(z.head_b);
    clr(z.cls_w);
    clr(z.cls_b);
    return z;
}

/// Per-example backward; accumulates into `g`.
inline void standalone_backward(const StandaloneNet& net, const sa::Trace& tr,
                                const std::vector<double>& dlogits, StandaloneNet& g) {
    const int hw = net.head_width, len = tr.head_len;
    std::vector<double> dpool(static_cast<std::size_t>(hw), 0.0);
    for (int c = 0; c < net.n_classes; ++c) {
        const double d = dlogits[static_cast<std::size_t>(c)];
        g.cls_b[static_cast<std::size_t>(c)] += d;
        for (int j = 0; j < hw; ++j) {
            g.cls_w[static_cast<std::size_t>(c) * hw + j] +=
                d * tr.pooled_head[static_cast<std::size_t>(j)];
            dpool[static_cast<std::size_t>(j)] +=
                d * net.cls_w[static_cast<std::size_t>(c) * hw + j];
        }
    }
    std::vector<double> dhead(static_cast<std::size_t>(hw) * len);
    for (int c = 0; c < hw; ++c)
        for (int i = 0; i < len; ++i)
            dhead[static_cast<std::size_t>(c) * len + i] =
                tr.head[static_cast<std::size_t>(c) * len + i] > 0.0
                    ? dpool[static_cast<std::size_t>(c)] / len
                    : 0.0;
    // Head dense backward.
    const std::vector<double>& head_input = tr.head_in;
    const int last_c = net.blocks.empty() ? net.stem_width : net.blocks.back().c_out;
    std::vector<double> dcur(static_cast<std::size_t>(last_c) * len, 0.0);
    for (int r = 0; r < hw; ++r)
        for (int i = 0; i < len; ++i) {
            const double d = dhead[static_cast<std::size_t>(r) * len + i];
            if (d == 0.0) continue;
            g.head_b[static_cast<std::size_t>(r)] += d;
            for (int c = 0; c < last_c; ++c) {
                g.head_w[static_cast<std::size_t>(r) * last_c + c] +=
                    d * head_input[static_cast<std::size_t>(c) * len + i];
                dcur[static_cast<std::size_t>(c) * len + i] +=
                    d * net.head_w[static_cast<std::size_t>(r) * last_c + c];
            }
        }

    for (int bi = static_cast<int>(net.blocks.size()) - 1; bi >= 0; --bi) {
        const auto& b = net.blocks[static_cast<std::size_t>(bi)];
        const auto& bt = tr.blocks[static_cast<std::size_t>(bi)];
        auto& gb = g.blocks[static_cast<std::size_t>(bi)];
        const int lo = bt.l_out, li = bt.l_in;
        // Project backward; input was z = a2 (*) gate.
        std::vector<double> z = bt.a2;
        if (b.use_se)
            for (int c = 0; c < b.hidden; ++c)
                for (int i = 0; i < lo; ++i)
                    z[static_cast<std::size_t>(c) * lo + i] *= bt.gate[static_cast<std::size_t>(c)];
        std::vector<double> dz(static_cast<std::size_t>(b.hidden) * lo, 0.0);
        for (int r = 0; r < b.c_out; ++r)
            for (int i = 0; i < lo; ++i) {
                const double d = dcur[static_cast<std::size_t>(r) * lo + i];
                if (d == 0.0) continue;
                gb.proj_b[static_cast<std::size_t>(r)] += d;
                for (int c = 0; c < b.hidden; ++c) {
                    gb.proj_w[static_cast<std::size_t>(r) * b.hidden + c] +=
                        d * z[static_cast<std::size_t>(c) * lo + i];
                    dz[static_cast<std::size_t>(c) * lo + i] +=
                        d * b.proj_w[static_cast<std::size_t>(r) * b.hidden + c];
                }
            }
        std::vector<double> da2(static_cast<std::size_t>(b.hidden) * lo, 0.0);
        if (b.use_se) {
            std::vector<double> dgate(static_cast<std::size_t>(b.hidden), 0.0);
            for (int c = 0; c < b.hidden; ++c) {
                const double gv = bt.gate[static_cast<std::size_t>(c)];
                double acc = 0.0;
                for (int i = 0; i < lo; ++i) {
                    da2[static_cast<std::size_t>(c) * lo + i] =
                        dz[static_cast<std::size_t>(c) * lo + i] * gv;
                    acc += dz[static_cast<std::size_t>(c) * lo + i] *
                           bt.a2[static_cast<std::size_t>(c) * lo + i];
                }
                dgate[static_cast<std::size_t>(c)] = acc;
            }
            std::vector<double> dv(static_cast<std::size_t>(b.hidden));
            for (int c = 0; c < b.hidden; ++c) {
                const double gv = bt.gate[static_cast<std::size_t>(c)];
                dv[static_cast<std::size_t>(c)] = dgate[static_cast<std::size_t>(c)] * gv * (1.0 - gv);
            }
            std::vector<double> dr(static_cast<std::size_t>(b.se_dim), 0.0);
            for (int c = 0; c < b.hidden; ++c) {
                const double d = dv[static_cast<std::size_t>(c)];
                gb.se_e_b[static_cast<std::size_t>(c)] += d;
                for (int j = 0; j < b.se_dim; ++j) {
                    gb.se_e_w[static_cast<std::size_t>(c) * b.se_dim + j] +=
                        d * bt.r[static_cast<std::size_t>(j)];
                    dr[static_cast<std::size_t>(j)] +=
                        d * b.se_e_w[static_cast<std::size_t>(c) * b.se_dim + j];
                }
            }
            for (int j = 0; j < b.se_dim; ++j)
                if (bt.r[static_cast<std::size_t>(j)] <= 0.0) dr[static_cast<std::size_t>(j)] = 0.0;
            std::vector<double> dpooled(static_cast<std::size_t>(b.hidden), 0.0);
            for (int j = 0; j < b.se_dim; ++j) {
                const double d = dr[static_cast<std::size_t>(j)];
                gb.se_r_b[static_cast<std::size_t>(j)] += d;
                for (int c = 0; c < b.hidden; ++c) {
                    gb.se_r_w[static_cast<std::size_t>(j) * b.hidden + c] +=
                        d * bt.pooled[static_cast<std::size_t>(c)];
                    dpooled[static_cast<std::size_t>(c)] +=
                        d * b.se_r_w[static_cast<std::size_t>(j) * b.hidden + c];
                }
            }
            for (int c = 0; c < b.hidden; ++c)
                for (int i = 0; i < lo; ++i)
                    da2[static_cast<std::size_t>(c) * lo + i] +=
                        dpooled[static_cast<std::size_t>(c)] / lo;
        } else {
            da2 = dz;
        }
        for (std::size_t i = 0; i < da2.size(); ++i)
            if (bt.a2[i] <= 0.0) da2[i] = 0.0;
        // Depthwise backward.
        const int pad = (b.kernel - 1) / 2;
        std::vector<double> da1(static_cast<std::size_t>(b.hidden) * li, 0.0);
        for (int c = 0; c < b.hidden; ++c)
            for (int i = 0; i < lo; ++i) {
                const double d = da2[static_cast<std::size_t>(c) * lo + i];
                if (d == 0.0) continue;
                gb.dw_b[static_cast<std::size_t>(c)] += d;
                for (int t = 0; t < b.kernel; ++t) {
                    const int p = i * b.stride + t - pad;
                    if (p >= 0 && p < li) {
                        gb.dw_w[static_cast<std::size_t>(c) * b.kernel + t] +=
                            d * bt.a1[static_cast<std::size_t>(c) * li + p];
                        da1[static_cast<std::size_t>(c) * li + p] +=
                            d * b.dw_w[static_cast<std::size_t>(c) * b.kernel + t];
                    }
                }
            }
        for (std::size_t i = 0; i < da1.size(); ++i)
            if (bt.a1[i] <= 0.0) da1[i] = 0.0;
        // Expand backward.
        std::vector<double> dx(static_cast<std::size_t>(b.c_in) * li, 0.0);
        for (int r = 0; r < b.hidden; ++r)
            for (int i = 0; i < li; ++i) {
                const double d = da1[static_cast<std::size_t>(r) * li + i];
                if (d == 0.0) continue;
                gb.exp_b[static_cast<std::size_t>(r)] += d;
                for (int c = 0; c < b.c_in; ++c) {
                    gb.exp_w[static_cast<std::size_t>(r) * b.c_in + c] +=
                        d * bt.x[static_cast<std::size_t>(c) * li + i];
                    dx[static_cast<std::size_t>(c) * li + i] +=
                        d * b.exp_w[static_cast<std::size_t>(r) * b.c_in + c];
                }
            }
        if (b.residual)
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dcur[i];
        dcur = std::move(dx);
    }
    // Stem.
    for (std::size_t i = 0; i < dcur.size(); ++i)
        if (tr.stem[i] <= 0.0) dcur[i] = 0.0;
    const int l0 = net.resolution;
    for (int r = 0; r < net.stem_width; ++r)
        for (int i = 0; i < l0; ++i) {
            const double d = dcur[static_cast<std::size_t>(r) * l0 + i];
            if (d == 0.0) continue;
            g.stem_b[static_cast<std::size_t>(r)] += d;
            g.stem_w[static_cast<std::size_t>(r)] += d * tr.input[static_cast<std::size_t>(i)];
        }
}

/// Clones the sliced weights and trains the copy for `steps` minibatches of
/// size `batch` with plain SGD + momentum on the training split; the shared
/// store is untouched. Returns validation accuracy of the tuned copy.
inline double finetune(const SpaceSpec& spec, const SupernetParams& params,
                       const ArchEncoding& arch, const SyntheticDataset& ds, int steps,
                       double lr, int batch = 128, std::uint64_t seed = 1) {
    const SubnetView view = make_view(spec, params, arch);
    StandaloneNet net = slice_standalone(params, view);
    StandaloneNet vel = zeros_like(net);
    Rng rng(child_seed(seed, 0x66696e65));
    const std::vector<int> sub = subsample_indices(ds.resolution, net.resolution);
    const double momentum = 0.9;
    std::vector<double> x(static_cast<std::size_t>(net.resolution));
    for (int step = 0; step < steps; ++step) {
        StandaloneNet g = zeros_like(net);
        for (int b = 0; b < batch; ++b) {
            const int i = static_cast<int>(rng.uniform_index(ds.train_x.size()));
            for (int j = 0; j < net.resolution; ++j)
                x[static_cast<std::size_t>(j)] =
                    ds.train_x[static_cast<std::size_t>(i)][static_cast<std::size_t>(
                        sub[static_cast<std::size_t>(j)])];
            sa::Trace tr;
            const std::vector<double> logits = standalone_forward(net, x, &tr);
            Logits lg(1, net.n_classes);
            std::copy(logits.begin(), logits.end(), lg.v.begin());
            const LossGrad ce = softmax_xent(lg, {ds.train_y[static_cast<std::size_t>(i)]});
            std::vector<double> dl(ce.dlogits);
            for (auto& d : dl) d /= batch;  // mean over the minibatch
            standalone_backward(net, tr, dl, g);
        }
        auto upd = [&](std::vector<double>& w, std::vector<double>& v,
                       const std::vector<double>& gr) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                v[i] = momentum * v[i] + gr[i];
                w[i] -= lr * v[i];
            }
        };
        upd(net.stem_w, vel.stem_w, g.stem_w);
        upd(net.stem_b, vel.stem_b, g.stem_b);
        for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
            auto& nb = net.blocks[bi];
            auto& vb = vel.blocks[bi];
            auto& gb = g.blocks[bi];
            upd(nb.exp_w, vb.exp_w, gb.exp_w);
            upd(nb.exp_b, vb.exp_b, gb.exp_b);
            upd(nb.dw_w, vb.dw_w, gb.dw_w);
            upd(nb.dw_b, vb.dw_b, gb.dw_b);
            upd(nb.se_r_w, vb.se_r_w, gb.se_r_w);
            upd(nb.se_r_b, vb.se_r_b, gb.se_r_b);
            upd(nb.se_e_w, vb.se_e_w, gb.se_e_w);
            upd(nb.se_e_b, vb.se_e_b, gb.se_e_b);
            upd(nb.proj_w, vb.proj_w, gb.proj_w);
            upd(nb.proj_b, vb.proj_b, gb.proj_b);
        }
        upd(net.head_w, vel.head_w, g.head_w);
        upd(net.head_b, vel.head_b, g.head_b);
        upd(net.cls_w, vel.cls_w, g.cls_w);
        upd(net.cls_b, vel.cls_b, g.cls_b);
    }
    // Validation accuracy of the tuned standalone copy.
    int correct = 0;
    for (std::size_t i = 0; i < ds.val_x.size(); ++i) {
        for (int j = 0; j < net.resolution; ++j)
            x[static_cast<std::size_t>(j)] =
                ds.val_x[i][static_cast<std::size_t>(sub[static_cast<std::size_t>(j)])];
        const std::vector<double> logits = standalone_forward(net, x, nullptr);
        int best = 0;
        for (int c = 1; c < net.n_classes; ++c)
            if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)])
                best = c;
        if (best == ds.val_y[i]) ++correct;
    }
    return static_cast<double>(correct) / ds.val_x.size();
}

}  // namespace paretonet
