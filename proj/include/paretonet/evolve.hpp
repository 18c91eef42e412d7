// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "paretonet/common.hpp"
#include "paretonet/rng.hpp"
#include "paretonet/space.hpp"

namespace paretonet {

struct Objectives {
    double accuracy = 0.0;    // maximized
    double latency_ms = 0.0;  // minimized
};

struct Individual {
    ArchEncoding genes;
    Objectives obj;
    int id = -1;
    int generation = 0;
    int parent_a = -1, parent_b = -1;
};

/// a dominates b: no worse in both objectives, strictly better in one.
inline bool dominates(const Objectives& a, const Objectives& b) {
    const bool no_worse = a.accuracy >= b.accuracy && a.latency_ms <= b.latency_ms;
    const bool strictly = a.accuracy > b.accuracy || a.latency_ms < b.latency_ms;
    return no_worse && strictly;
}

/// Deb's fast non-dominated sort: partition into fronts F1, F2, ...
inline std::vector<std::vector<int>> fast_nondominated_sort(
    const std::vector<Individual>& pop) {
    const int n = static_cast<int>(pop.size());
    std::vector<std::vector<int>> dominated(static_cast<std::size_t>(n));
    std::vector<int> count(static_cast<std::size_t>(n), 0);
    std::vector<std::vector<int>> fronts;
    std::vector<int> first;
    for (int p = 0; p < n; ++p) {
        for (int q = 0; q < n; ++q) {
            if (p == q) continue;
            if (dominates(pop[static_cast<std::size_t>(p)].obj, pop[static_cast<std::size_t>(q)].obj))
                dominated[static_cast<std::size_t>(p)].push_back(q);
            else if (dominates(pop[static_cast<std::size_t>(q)].obj, pop[static_cast<std::size_t>(p)].obj))
                ++count[static_cast<std::size_t>(p)];
        }
        if (count[static_cast<std::size_t>(p)] == 0) first.push_back(p);
    }
    fronts.push_back(std::move(first));
    std::size_t fi = 0;
    while (!fronts[fi].empty()) {
        std::vector<int> next;
        for (int p : fronts[fi])
            for (int q : dominated[static_cast<std::size_t>(p)])
                if (--count[static_cast<std::size_t>(q)] == 0) next.push_back(q);
        if (next.empty()) break;
        fronts.push_back(std::move(next));
        ++fi;
    }
    return fronts;
}

/// NSGA-II crowding distance within one front. Boundary individuals get
/// +infinity, interior ones the normalized neighbour gap summed over both
/// objectives; a zero objective range contributes nothing.
inline std::vector<double> crowding_distance(const std::vector<Individual>& pop,
                                             const std::vector<int>& front) {
    const std::size_t m = front.size();
    std::vector<double> dist(m, 0.0);
    if (m <= 2) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        return dist;
    }
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    auto run = [&](auto key) {
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return key(pop[static_cast<std::size_t>(front[a])]) <
                   key(pop[static_cast<std::size_t>(front[b])]);
        });
        const double lo = key(pop[static_cast<std::size_t>(front[order.front()])]);
        const double hi = key(pop[static_cast<std::size_t>(front[order.back()])]);
        dist[order.front()] = std::numeric_limits<double>::infinity();
        dist[order.back()] = std::numeric_limits<double>::infinity();
        if (hi - lo <= 0.0) return;
        for (std::size_t i = 1; i + 1 < m; ++i) {
            const double prev = key(pop[static_cast<std::size_t>(front[order[i - 1]])]);
            const double next = key(pop[static_cast<std::size_t>(front[order[i + 1]])]);
            dist[order[i]] += (next - prev) / (hi - lo);
        }
    };
    run([](const Individual& x) { return x.obj.accuracy; });
    run([](const Individual& x) { return x.obj.latency_ms; });
    return dist;
}

/// Elitist top-K: fill by front rank, break the partially admitted front by
/// descending crowding distance; final deterministic tie-break by
/// (latency, genes).
inline std::vector<int> nsga2_select(const std::vector<Individual>& pop, int k) {
    if (k > static_cast<int>(pop.size()))
        throw config_error("nsga2_select: K larger than population");
    std::vector<int> out;
    const auto fronts = fast_nondominated_sort(pop);
    for (const auto& front : fronts) {
        if (static_cast<int>(out.size()) + static_cast<int>(front.size()) <= k) {
            out.insert(out.end(), front.begin(), front.end());
            if (static_cast<int>(out.size()) == k) break;
            continue;
        }
        const std::vector<double> dist = crowding_distance(pop, front);
        std::vector<std::size_t> order(front.size());
        for (std::size_t i = 0; i < front.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (dist[a] != dist[b]) return dist[a] > dist[b];
            const Individual& ia = pop[static_cast<std::size_t>(front[a])];
            const Individual& ib = pop[static_cast<std::size_t>(front[b])];
            if (ia.obj.latency_ms != ib.obj.latency_ms)
                return ia.obj.latency_ms < ib.obj.latency_ms;
            return ia.genes.genes < ib.genes.genes;
        });
        for (std::size_t i = 0; i < order.size() && static_cast<int>(out.size()) < k; ++i)
            out.push_back(front[order[i]]);
        break;
    }
    return out;
}

/// Dominated area between the front and a reference point (accuracy
/// maximized, latency minimized). Every member must lie inside the reference
/// box.
inline double hypervolume_2d(const std::vector<Objectives>& front, const Objectives& ref) {
    if (front.empty()) return 0.0;
    std::vector<Objectives> pts = front;
    for (const auto& p : pts)
        if (p.accuracy < ref.accuracy || p.latency_ms > ref.latency_ms)
            throw config_error("hypervolume: member outside the reference box");
    std::sort(pts.begin(), pts.end(), [](const Objectives& a, const Objectives& b) {
        if (a.latency_ms != b.latency_ms) return a.latency_ms < b.latency_ms;
        return a.accuracy > b.accuracy;
    });
    // Latency-ascending sweep over the accuracy-improving envelope; each
    // segment is a rectangle between a point and the next latency step.
    double volume = 0.0;
    double best_acc = ref.accuracy;
    std::vector<Objectives> sweep;
    for (const auto& p : pts) {
        if (p.accuracy > best_acc) {
            sweep.push_back(p);
            best_acc = p.accuracy;
        }
    }
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        const double lat_hi =
            (i + 1 < sweep.size()) ? sweep[i + 1].latency_ms : ref.latency_ms;
        volume += (sweep[i].accuracy - ref.accuracy) * (lat_hi - sweep[i].latency_ms);
    }
    return volume;
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

struct SearchConfig {
    int population = 128;
    int top_k = 64;
    int generations = 20;
    double p_m = 0.2;
    std::uint64_t seed = 7;
    std::string device = "nx";
    std::string surrogate_kind = "auto";
    int resample_limit = 10;  // dedupe attempts before admitting a duplicate
};

inline void validate_search_config(const SearchConfig& c) {
    if (c.population < 2) throw config_error("search config: population must be >= 2");
    if (c.top_k < 1 || c.top_k > c.population)
        throw config_error("search config: need 1 <= top_k <= population");
    if (c.generations < 1) throw config_error("search config: generations must be >= 1");
    if (c.p_m < 0.0 || c.p_m > 1.0) throw config_error("search config: p_m must be in [0,1]");
}

struct HistoryRow {
    int generation = 0;
    double hypervolume = 0.0;
    int front_size = 0;
    double best_acc = 0.0;
    double min_lat = 0.0;
};

struct SearchResult {
    std::vector<Individual> front;  // all-time archive, latency ascending
    std::vector<HistoryRow> history;
    Objectives ref_point;
    int unique_evaluations = 0;
};

/// NSGA-II loop over architecture genomes with pluggable objective functions
/// (the CLI wires supernet accuracy and a fitted latency surrogate; tests may
/// substitute anything). Accuracy is cached per unique encoding, the archive
/// keeps every non-dominated point ever seen, and generations are
/// reproducible given (seed, config).
inline SearchResult run_search(const SpaceSpec& spec,
                               const std::function<double(const ArchEncoding&)>& accuracy_fn,
                               const std::function<double(const ArchEncoding&)>& latency_fn,
                               const SearchConfig& cfg, int threads = 1) {
    validate_search_config(cfg);
    SearchResult res;
    res.ref_point = Objectives{0.0, 2.0 * latency_fn(sample_max(spec))};

    std::unordered_map<ArchEncoding, Objectives, ArchEncodingHash> cache;
    std::unordered_set<ArchEncoding, ArchEncodingHash> seen;

    auto evaluate_pop = [&](std::vector<Individual>& pop) {
        std::vector<int> missing;
        for (int i = 0; i < static_cast<int>(pop.size()); ++i) {
            auto it = cache.find(pop[static_cast<std::size_t>(i)].genes);
            if (it == cache.end())
                missing.push_back(i);
            else
                pop[static_cast<std::size_t>(i)].obj = it->second;
        }
        // Objective evaluation is read-only and independent per architecture;
        // results are committed in index order so any thread count yields the
        // same state.
        std::vector<Objectives> fresh(missing.size());
        auto eval_range = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                const ArchEncoding& g = pop[static_cast<std::size_t>(missing[i])].genes;
                fresh[i] = Objectives{accuracy_fn(g), latency_fn(g)};
            }
        };
        if (threads > 1 && missing.size() > 1) {
            std::vector<std::thread> pool;
            const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(threads),
                                                         missing.size());
            const std::size_t chunk = (missing.size() + nw - 1) / nw;
            for (std::size_t w = 0; w < nw; ++w)
                pool.emplace_back(eval_range, w * chunk,
                                  std::min(missing.size(), (w + 1) * chunk));
            for (auto& t : pool) t.join();
        } else {
            eval_range(0, missing.size());
        }
        for (std::size_t i = 0; i < missing.size(); ++i) {
            pop[static_cast<std::size_t>(missing[i])].obj = fresh[i];
            cache.emplace(pop[static_cast<std::size_t>(missing[i])].genes, fresh[i]);
        }
    };

    // All-time non-dominated archive; one representative (lexicographically
    // smallest genes) per objective point, so the output front is strict in
    // latency.
    std::vector<Individual> archive;
    auto archive_insert = [&](const Individual& ind) {
        for (const auto& a : archive) {
            if (dominates(a.obj, ind.obj)) return;
            if (a.obj.accuracy == ind.obj.accuracy &&
                a.obj.latency_ms == ind.obj.latency_ms && a.genes.genes <= ind.genes.genes)
                return;
        }
        std::vector<Individual> next;
        next.reserve(archive.size() + 1);
        for (auto& a : archive) {
            const bool same_point = a.obj.accuracy == ind.obj.accuracy &&
                                    a.obj.latency_ms == ind.obj.latency_ms;
            if (dominates(ind.obj, a.obj) || same_point) continue;
            next.push_back(std::move(a));
        }
        next.push_back(ind);
        archive = std::move(next);
    };

    int next_id = 0;
    std::vector<Individual> pop;
    {
        Rng rng(child_seed(cfg.seed, 1));
        while (static_cast<int>(pop.size()) < cfg.population) {
            ArchEncoding g = sample_random(spec, rng);
            if (!seen.insert(g).second) continue;  // generation 1 is unique
            Individual ind;
            ind.genes = std::move(g);
            ind.id = next_id++;
            ind.generation = 1;
            pop.push_back(std::move(ind));
        }
    }

    for (int gen = 1; gen <= cfg.generations; ++gen) {
        evaluate_pop(pop);
        for (const auto& ind : pop) archive_insert(ind);
        HistoryRow row;
        row.generation = gen;
        row.front_size = static_cast<int>(archive.size());
        std::vector<Objectives> in_box;
        double best_acc = 0.0, min_lat = std::numeric_limits<double>::infinity();
        for (const auto& a : archive) {
            best_acc = std::max(best_acc, a.obj.accuracy);
            min_lat = std::min(min_lat, a.obj.latency_ms);
            if (a.obj.accuracy >= res.ref_point.accuracy &&
                a.obj.latency_ms <= res.ref_point.latency_ms)
                in_box.push_back(a.obj);
        }
        row.best_acc = best_acc;
        row.min_lat = min_lat;
        row.hypervolume = hypervolume_2d(in_box, res.ref_point);
        res.history.push_back(row);
        if (gen == cfg.generations) break;

        const std::vector<int> top = nsga2_select(pop, cfg.top_k);
        Rng rng(child_seed(cfg.seed, static_cast<std::uint64_t>(gen) + 1));
        std::vector<Individual> offspring;
        const int n_cross = cfg.population / 2;
        const int n_mut = cfg.population - n_cross;
        auto fresh_child = [&](bool is_cross) {
            for (int attempt = 0;; ++attempt) {
                const Individual& pa =
                    pop[static_cast<std::size_t>(top[static_cast<std::size_t>(
                        rng.uniform_index(top.size()))])];
                Individual child;
                if (is_cross) {
                    const Individual& pb =
                        pop[static_cast<std::size_t>(top[static_cast<std::size_t>(
                            rng.uniform_index(top.size()))])];
                    child.genes = crossover(spec, pa.genes, pb.genes, rng);
                    child.parent_b = pb.id;
                } else {
                    child.genes = mutate(spec, pa.genes, cfg.p_m, rng);
                }
                child.parent_a = pa.id;
                child.generation = gen + 1;
                if (seen.insert(child.genes).second || attempt >= cfg.resample_limit) {
                    child.id = next_id++;
                    return child;
                }
            }
        };
        for (int i = 0; i < n_cross; ++i) offspring.push_back(fresh_child(true));
        for (int i = 0; i < n_mut; ++i) offspring.push_back(fresh_child(false));
        pop = std::move(offspring);
    }

    res.unique_evaluations = static_cast<int>(cache.size());
    std::sort(archive.begin(), archive.end(), [](const Individual& a, const Individual& b) {
        if (a.obj.latency_ms != b.obj.latency_ms) return a.obj.latency_ms < b.obj.latency_ms;
        return a.genes.genes < b.genes.genes;
    });
    res.front = std::move(archive);
    return res;
}

}  // namespace paretonet
