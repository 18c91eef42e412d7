// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "paretonet/common.hpp"

namespace paretonet {

/// Batch of prediction logits, row-major [batch][classes].
struct Logits {
    int batch = 0;
    int classes = 0;
    std::vector<double> v;

    Logits() = default;
    Logits(int b, int c) : batch(b), classes(c), v(static_cast<std::size_t>(b) * c, 0.0) {}

    double* row(int b) { return v.data() + static_cast<std::size_t>(b) * classes; }
    const double* row(int b) const {
        return v.data() + static_cast<std::size_t>(b) * classes;
    }
};

enum class DistillLoss { kd, dkd };
enum class DistillMode { inplace, smd };

/// Direction of the KL in the plain distillation pair. `as_written` puts the
/// student's distribution first; `teacher_first` is the conventional ordering.
/// The decoupled loss always puts the teacher first.
enum class KdDirection { as_written, teacher_first };

struct DistillConfig {
    double alpha = 1.0;  // target-class weight
    double beta = 0.5;   // non-target weight
    double tau = 1.0;    // softening temperature
    DistillLoss loss = DistillLoss::dkd;
    KdDirection direction = KdDirection::as_written;
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> dlogits;  // same layout as the student logits
};

namespace detail {

/// Writes log-softmax of `x[0..c)` scaled by 1/tau into `out`.
inline void log_softmax(const double* x, int c, double tau, double* out) {
    double mx = x[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int i = 0; i < c; ++i) {
        out[i] = (x[i] - mx) / tau;
        z += std::exp(out[i]);
    }
    const double lz = std::log(z);
    for (int i = 0; i < c; ++i) out[i] -= lz;
}

}  // namespace detail

/// Mean cross-entropy over the batch; gradient = (softmax - onehot) / batch.
inline LossGrad softmax_xent(const Logits& logits, const std::vector<int>& labels) {
    const int B = logits.batch, C = logits.classes;
    if (static_cast<int>(labels.size()) != B)
        throw config_error("softmax_xent: label count mismatch");
    LossGrad out;
    out.dlogits.assign(static_cast<std::size_t>(B) * C, 0.0);
    std::vector<double> lp(static_cast<std::size_t>(C));
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const int t = labels[static_cast<std::size_t>(b)];
        if (t < 0 || t >= C) throw config_error("softmax_xent: label out of range");
        detail::log_softmax(logits.row(b), C, 1.0, lp.data());
        total -= lp[static_cast<std::size_t>(t)];
        double* g = out.dlogits.data() + static_cast<std::size_t>(b) * C;
        for (int c = 0; c < C; ++c) g[c] = std::exp(lp[static_cast<std::size_t>(c)]) / B;
        g[t] -= 1.0 / B;
    }
    out.loss = total / B;
    return out;
}

/// One distillation pair: mean KL between tau-softened distributions, scaled
/// by tau^2, gradient into the student only (teacher side constant).
/// `student_first` selects D_KL(student || teacher) instead of the
/// conventional D_KL(teacher || student).
inline LossGrad kd_pair(const Logits& teacher, const Logits& student, double tau,
                        bool student_first) {
    const int B = student.batch, C = student.classes;
    if (teacher.batch != B || teacher.classes != C)
        throw config_error("kd: teacher/student shape mismatch");
    if (tau <= 0.0) throw config_error("kd: tau must be positive");
    LossGrad out;
    out.dlogits.assign(static_cast<std::size_t>(B) * C, 0.0);
    std::vector<double> lt(static_cast<std::size_t>(C)), ls(static_cast<std::size_t>(C));
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        detail::log_softmax(teacher.row(b), C, tau, lt.data());
        detail::log_softmax(student.row(b), C, tau, ls.data());
        double* g = out.dlogits.data() + static_cast<std::size_t>(b) * C;
        if (!student_first) {
            // KL(T||S): grad_j = tau * (q_j - p_j) / B
            double kl = 0.0;
            for (int c = 0; c < C; ++c) {
                const double p = std::exp(lt[static_cast<std::size_t>(c)]);
                const double q = std::exp(ls[static_cast<std::size_t>(c)]);
                kl += p * (lt[static_cast<std::size_t>(c)] - ls[static_cast<std::size_t>(c)]);
                g[c] = tau * (q - p) / B;
            }
            total += kl;
        } else {
            // KL(S||T): grad_j = tau * q_j * (ln(q_j/p_j) - KL) / B
            double kl = 0.0;
            for (int c = 0; c < C; ++c) {
                const double q = std::exp(ls[static_cast<std::size_t>(c)]);
                kl += q * (ls[static_cast<std::size_t>(c)] - lt[static_cast<std::size_t>(c)]);
            }
            for (int c = 0; c < C; ++c) {
                const double q = std::exp(ls[static_cast<std::size_t>(c)]);
                const double d = ls[static_cast<std::size_t>(c)] - lt[static_cast<std::size_t>(c)];
                g[c] = tau * q * (d - kl) / B;
            }
            total += kl;
        }
    }
    out.loss = tau * tau * total / B;
    return out;
}

/// Conventional KD loss, KL(teacher || student).
inline LossGrad kd_loss(const Logits& teacher, const Logits& student, double tau) {
    return kd_pair(teacher, student, tau, /*student_first=*/false);
}

/// Decoupled distillation: a binary target/non-target KL plus a renormalized
/// non-target KL, combined as alpha * L_TC + beta * L_NC (teacher first in
/// both, as the decomposition defines them). Mean over batch, tau^2 scaled.
inline LossGrad dkd_loss(const Logits& teacher, const Logits& student,
                         const std::vector<int>& labels, const DistillConfig& cfg) {
    const int B = student.batch, C = student.classes;
    if (teacher.batch != B || teacher.classes != C)
        throw config_error("dkd: teacher/student shape mismatch");
    if (static_cast<int>(labels.size()) != B)
        throw config_error("dkd: label count mismatch");
    if (cfg.tau <= 0.0) throw config_error("dkd: tau must be positive");
    const double tau = cfg.tau;
    LossGrad out;
    out.dlogits.assign(static_cast<std::size_t>(B) * C, 0.0);
    std::vector<double> lt(static_cast<std::size_t>(C)), ls(static_cast<std::size_t>(C));
    std::vector<double> ct(static_cast<std::size_t>(C)), cs(static_cast<std::size_t>(C));
    std::vector<double> nt_logits_t, nt_logits_s;
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const int t = labels[static_cast<std::size_t>(b)];
        if (t < 0 || t >= C) throw config_error("dkd: label out of range");
        detail::log_softmax(teacher.row(b), C, tau, lt.data());
        detail::log_softmax(student.row(b), C, tau, ls.data());
        const double pt = std::exp(lt[static_cast<std::size_t>(t)]);
        const double qt = std::exp(ls[static_cast<std::size_t>(t)]);
        double rt = 0.0, rs = 0.0;  // non-target mass, summed for stability
        for (int c = 0; c < C; ++c) {
            if (c == t) continue;
            rt += std::exp(lt[static_cast<std::size_t>(c)]);
            rs += std::exp(ls[static_cast<std::size_t>(c)]);
        }
        rs = std::max(rs, 1e-300);
        // Binary target/other KL.
        double l_tc = 0.0;
        if (pt > 0.0) l_tc += pt * (lt[static_cast<std::size_t>(t)] - ls[static_cast<std::size_t>(t)]);
        if (rt > 0.0) l_tc += rt * (std::log(rt) - std::log(rs));
        // Renormalized non-target KL via softmax over the non-target logits.
        double l_nc = 0.0;
        if (C > 2) {
            nt_logits_t.clear();
            nt_logits_s.clear();
            for (int c = 0; c < C; ++c) {
                if (c == t) continue;
                nt_logits_t.push_back(teacher.row(b)[c]);
                nt_logits_s.push_back(student.row(b)[c]);
            }
            const int M = C - 1;
            detail::log_softmax(nt_logits_t.data(), M, tau, ct.data());
            detail::log_softmax(nt_logits_s.data(), M, tau, cs.data());
            for (int m = 0; m < M; ++m) {
                const double p = std::exp(ct[static_cast<std::size_t>(m)]);
                l_nc += p * (ct[static_cast<std::size_t>(m)] - cs[static_cast<std::size_t>(m)]);
            }
        }
        total += cfg.alpha * l_tc + cfg.beta * l_nc;
        // Gradient into student logits.
        double* g = out.dlogits.data() + static_cast<std::size_t>(b) * C;
        const double aq = rt * qt / rs - pt;  // A * q_t without dividing by q_t
        for (int c = 0; c < C; ++c) {
            const double qc = std::exp(ls[static_cast<std::size_t>(c)]);
            const double delta = (c == t) ? 1.0 : 0.0;
            g[c] += cfg.alpha * aq * (delta - qc);
        }
        if (C > 2) {
            int m = 0;
            for (int c = 0; c < C; ++c) {
                if (c == t) continue;
                const double cs_m = std::exp(cs[static_cast<std::size_t>(m)]);
                const double ct_m = std::exp(ct[static_cast<std::size_t>(m)]);
                g[c] += cfg.beta * (cs_m - ct_m);
                ++m;
            }
        }
        for (int c = 0; c < C; ++c) g[c] *= tau / B;
    }
    out.loss = tau * tau * total / B;
    return out;
}

namespace detail {

inline LossGrad pair_loss(const Logits& teacher, const Logits& student,
                          const std::vector<int>& labels, const DistillConfig& cfg) {
    if (cfg.loss == DistillLoss::kd)
        return kd_pair(teacher, student, cfg.tau,
                       cfg.direction == KdDirection::as_written);
    return dkd_loss(teacher, student, labels, cfg);
}

}  // namespace detail

/// Aggregate losses for one sandwich sample. `logits[i]` are ordered
/// ascending by subnet capacity; the last entry is the largest subnet.
struct SandwichLosses {
    double total = 0.0;
    double l_max = 0.0;                    // ground-truth term of the largest subnet
    std::vector<double> l_sub;             // distillation term per smaller subnet
    std::vector<std::vector<double>> dlogits;  // per-subnet student gradients
};

/// Subnet mutual distillation: each smaller subnet i is the student of every
/// strictly larger subnet, averaged over its k-i teachers; teachers are
/// detached. The largest subnet carries only the ground-truth loss.
inline SandwichLosses smd_losses(const std::vector<Logits>& logits,
                                 const std::vector<int>& labels,
                                 const DistillConfig& cfg) {
    const int k = static_cast<int>(logits.size());
    if (k < 2) throw config_error("smd_losses: need at least two subnets");
    SandwichLosses out;
    out.dlogits.resize(static_cast<std::size_t>(k));
    out.l_sub.assign(static_cast<std::size_t>(k), 0.0);
    const LossGrad ce = softmax_xent(logits[static_cast<std::size_t>(k - 1)], labels);
    out.l_max = ce.loss;
    out.total = ce.loss;
    out.dlogits[static_cast<std::size_t>(k - 1)] = ce.dlogits;
    for (int i = 0; i < k - 1; ++i) {
        const double w = 1.0 / (k - 1 - i);  // average over the k-i larger subnets
        std::vector<double> grad(logits[static_cast<std::size_t>(i)].v.size(), 0.0);
        double li = 0.0;
        for (int j = i + 1; j < k; ++j) {
            const LossGrad pl = detail::pair_loss(logits[static_cast<std::size_t>(j)],
                                                  logits[static_cast<std::size_t>(i)],
                                                  labels, cfg);
            li += w * pl.loss;
            for (std::size_t u = 0; u < grad.size(); ++u) grad[u] += w * pl.dlogits[u];
        }
        out.l_sub[static_cast<std::size_t>(i)] = li;
        out.total += li;
        out.dlogits[static_cast<std::size_t>(i)] = std::move(grad);
    }
    return out;
}

/// In-place distillation (the BigNAS-style baseline): the largest subnet
/// teaches every smaller one, no subnet-to-subnet terms.
inline SandwichLosses inplace_losses(const std::vector<Logits>& logits,
                                     const std::vector<int>& labels,
                                     const DistillConfig& cfg) {
    const int k = static_cast<int>(logits.size());
    if (k < 2) throw config_error("inplace_losses: need at least two subnets");
    SandwichLosses out;
    out.dlogits.resize(static_cast<std::size_t>(k));
    out.l_sub.assign(static_cast<std::size_t>(k), 0.0);
    const LossGrad ce = softmax_xent(logits[static_cast<std::size_t>(k - 1)], labels);
    out.l_max = ce.loss;
    out.total = ce.loss;
    out.dlogits[static_cast<std::size_t>(k - 1)] = ce.dlogits;
    for (int i = 0; i < k - 1; ++i) {
        const LossGrad pl = detail::pair_loss(logits[static_cast<std::size_t>(k - 1)],
                                              logits[static_cast<std::size_t>(i)],
                                              labels, cfg);
        out.l_sub[static_cast<std::size_t>(i)] = pl.loss;
        out.total += pl.loss;
        out.dlogits[static_cast<std::size_t>(i)] = pl.dlogits;
    }
    return out;
}

inline SandwichLosses sandwich_losses(DistillMode mode, const std::vector<Logits>& logits,
                                      const std::vector<int>& labels,
                                      const DistillConfig& cfg) {
    return mode == DistillMode::smd ? smd_losses(logits, labels, cfg)
                                    : inplace_losses(logits, labels, cfg);
}

}  // namespace paretonet
