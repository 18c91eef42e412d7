// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "paretonet/common.hpp"
#include "paretonet/dataset.hpp"
#include "paretonet/distill.hpp"
#include "paretonet/rng.hpp"
#include "paretonet/space.hpp"
#include "paretonet/supernet.hpp"

namespace paretonet {

struct TrainConfig {
    int epochs = 30;
    int warmup_epochs = 2;
    int batch_size = 128;
    double base_lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::string lr_schedule = "cosine";  // linear warmup then cosine decay
    int n_random_subnets = 2;            // the N of the sandwich rule
    DistillMode distill_mode = DistillMode::smd;
    DistillLoss distill_loss = DistillLoss::dkd;
    double alpha = 1.0;
    double beta = 0.5;
    double tau = 1.0;
    KdDirection kd_direction = KdDirection::as_written;
    double grad_clip = 5.0;  // global L2 norm cap on the aggregated gradient; 0 = off
    std::uint64_t seed = 42;
};

inline void validate_train_config(const TrainConfig& c) {
    if (c.epochs < 1) throw config_error("train config: epochs must be >= 1");
    if (c.warmup_epochs < 0 || c.warmup_epochs > c.epochs)
        throw config_error("train config: warmup_epochs out of range");
    if (c.batch_size < 1) throw config_error("train config: batch_size must be >= 1");
    if (c.base_lr < 0.0) throw config_error("train config: base_lr must be >= 0");
    if (c.n_random_subnets < 0) throw config_error("train config: N must be >= 0");
    if (c.tau <= 0.0) throw config_error("train config: tau must be > 0");
    if (c.lr_schedule != "cosine")
        throw config_error("train config: unknown lr_schedule '" + c.lr_schedule + "'");
}

struct TrainLogRow {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // epoch mean of the aggregate sandwich loss
    double min_acc = 0.0;
    double max_acc = 0.0;
};

struct TrainLog {
    double initial_loss = 0.0;  // aggregate loss of the first batch, pre-update
    std::vector<TrainLogRow> rows;
};

inline double lr_at(const TrainConfig& cfg, int step, int warmup_steps, int total_steps) {
    if (step < warmup_steps)
        return cfg.base_lr * (step + 1) / warmup_steps;
    const int rest = std::max(1, total_steps - warmup_steps);
    const double t = static_cast<double>(step - warmup_steps) / rest;
    return 0.5 * cfg.base_lr * (1.0 + std::cos(3.141592653589793 * t));
}

/// Sandwich-rule pre-training: each step samples {min, N random, max} subnets
/// ordered by parameter count, computes the ground-truth loss of the largest
/// plus the configured distillation terms, aggregates all gradients (each
/// distillation term lands only on its student's slice) and applies one SGD
/// update with momentum, weight decay and warmup+cosine schedule.
inline TrainLog train_supernet(const SpaceSpec& spec, SupernetParams& params,
                               const SyntheticDataset& ds, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (ds.train_x.empty()) throw config_error("train: empty training set");
    const int n_train = static_cast<int>(ds.train_x.size());
    const int steps_per_epoch = std::max(1, n_train / cfg.batch_size);
    const int total_steps = steps_per_epoch * cfg.epochs;
    const int warmup_steps = std::max(1, steps_per_epoch * cfg.warmup_epochs);

    const DistillConfig dcfg{cfg.alpha, cfg.beta, cfg.tau, cfg.distill_loss,
                             cfg.kd_direction};
    const ArchEncoding arch_min = sample_min(spec);
    const ArchEncoding arch_max = sample_max(spec);

    Rng rng(child_seed(cfg.seed, 0x747261696e));
    std::vector<Tensor> velocity;
    velocity.reserve(params.tensors.size());
    for (const auto& t : params.tensors) velocity.emplace_back(t.shape);
    Grads acc = make_grads(params);

    TrainLog log;
    const int k = cfg.n_random_subnets + 2;
    std::vector<ForwardCache> caches(static_cast<std::size_t>(k));
    std::vector<int> order(static_cast<std::size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        double last_lr = 0.0;
        for (int s = 0; s < steps_per_epoch; ++s, ++step) {
            std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(s) * cfg.batch_size,
                                   order.begin() + static_cast<std::ptrdiff_t>(s + 1) * cfg.batch_size);
            std::vector<int> labels(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i)
                labels[i] = ds.train_y[static_cast<std::size_t>(batch[i])];

            std::vector<ArchEncoding> archs;
            archs.push_back(arch_min);
            for (int r = 0; r < cfg.n_random_subnets; ++r)
                archs.push_back(sample_random(spec, rng));
            archs.push_back(arch_max);
            std::vector<SubnetView> views;
            views.reserve(archs.size());
            for (const auto& a : archs) views.push_back(make_view(spec, params, a));
            std::sort(views.begin(), views.end(),
                      [](const SubnetView& a, const SubnetView& b) {
                          if (a.n_params != b.n_params) return a.n_params < b.n_params;
                          return a.arch.genes < b.arch.genes;
                      });

            std::vector<Logits> logits(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) {
                const Act input = build_input(ds.train_x, batch, ds.resolution,
                                              views[static_cast<std::size_t>(i)].cfg.resolution);
                logits[static_cast<std::size_t>(i)] =
                    forward(params, views[static_cast<std::size_t>(i)], input,
                            caches[static_cast<std::size_t>(i)]);
            }
            const SandwichLosses losses =
                sandwich_losses(cfg.distill_mode, logits, labels, dcfg);
            if (!std::isfinite(losses.total))
                throw numeric_error("train: loss diverged (not finite) at epoch " +
                                    std::to_string(epoch + 1) + " step " +
                                    std::to_string(s + 1));
            if (step == 0) log.initial_loss = losses.total;
            epoch_loss += losses.total;

            for (auto& t : acc.t) t.zero();
            for (int i = 0; i < k; ++i) {
                Logits dl(logits[static_cast<std::size_t>(i)].batch,
                          logits[static_cast<std::size_t>(i)].classes);
                dl.v = losses.dlogits[static_cast<std::size_t>(i)];
                backward_into(params, views[static_cast<std::size_t>(i)],
                              caches[static_cast<std::size_t>(i)], dl, acc);
            }

            // The summed gradient of k subnets can spike early in training;
            // without normalization layers one bad step kills rectifier paths
            // for good, so the aggregate is clipped by global L2 norm.
            if (cfg.grad_clip > 0.0) {
                double sq = 0.0;
                for (const auto& t : acc.t)
                    for (double x : t.v) sq += x * x;
                const double norm = std::sqrt(sq);
                if (norm > cfg.grad_clip) {
                    const double scale = cfg.grad_clip / norm;
                    for (auto& t : acc.t)
                        for (double& x : t.v) x *= scale;
                }
            }

            const double lr = lr_at(cfg, step, warmup_steps, total_steps);
            last_lr = lr;
            for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
                Tensor& w = params.tensors[ti];
                Tensor& v = velocity[ti];
                const Tensor& gt = acc.t[ti];
                const double wd = params.bias_flag[ti] ? 0.0 : cfg.weight_decay;
                for (std::size_t j = 0; j < w.v.size(); ++j) {
                    v.v[j] = cfg.momentum * v.v[j] + gt.v[j] + wd * w.v[j];
                    w.v[j] -= lr * v.v[j];
                }
            }
        }
        for (const auto& t : params.tensors)
            for (double x : t.v)
                if (!std::isfinite(x))
                    throw numeric_error("train: non-finite parameter after epoch " +
                                        std::to_string(epoch + 1));
        TrainLogRow row;
        row.epoch = epoch + 1;
        row.lr = last_lr;
        row.train_loss = epoch_loss / steps_per_epoch;
        row.min_acc = evaluate(spec, params, arch_min, ds);
        row.max_acc = evaluate(spec, params, arch_max, ds);
        log.rows.push_back(row);
    }
    return log;
}

}  // namespace paretonet
