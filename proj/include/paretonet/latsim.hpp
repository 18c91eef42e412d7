// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "paretonet/common.hpp"
#include "paretonet/rng.hpp"
#include "paretonet/space.hpp"

namespace paretonet {

/// Simulated edge-device cost parameters. Per-layer latency is the roofline
/// max(compute time, memory time) plus a fixed launch overhead, which is what
/// decouples latency rank from FLOPs rank.
struct DeviceProfile {
    std::string name;
    double compute_rate = 1.0;       // FLOPs per ms
    double mem_bandwidth = 1.0;      // bytes per ms
    double per_layer_overhead = 0.0; // ms
    double per_model_overhead = 0.0; // ms
    double noise_sigma = 0.0;        // ms, 0 = deterministic
};

inline void validate_device(const DeviceProfile& d) {
    if (d.compute_rate <= 0.0 || d.mem_bandwidth <= 0.0)
        throw config_error("device '" + d.name + "': rates must be positive");
    if (d.per_layer_overhead < 0.0 || d.per_model_overhead < 0.0 || d.noise_sigma < 0.0)
        throw config_error("device '" + d.name + "': overheads must be non-negative");
}

/// Three shipped profiles with strictly ordered capability (orin fastest).
inline std::vector<DeviceProfile> default_profiles() {
    return {
        {"orin", 5.0e6, 2.5e6, 0.010, 0.05, 0.0},
        {"xavier", 2.5e6, 1.2e6, 0.020, 0.10, 0.0},
        {"nx", 1.2e6, 5.0e5, 0.040, 0.20, 0.0},
    };
}

inline const DeviceProfile& find_device(const std::vector<DeviceProfile>& devices,
                                        const std::string& name) {
    for (const auto& d : devices)
        if (d.name == name) return d;
    throw config_error("unknown device '" + name + "'");
}

/// Per-layer cost table at inference batch size 1. Multiply-add counts as 2
/// FLOPs; bytes are 4 * (parameters touched + activations read + written).
struct LayerCost {
    std::string name;
    double flops = 0.0;
    double param_bytes = 0.0;
    double act_bytes = 0.0;
    double bytes() const { return param_bytes + act_bytes; }
};

inline std::vector<LayerCost> layer_costs(const SpaceSpec& spec, const ArchEncoding& arch) {
    const ArchConfig c = decode(spec, arch);
    std::vector<LayerCost> out;
    auto pointwise = [&](const std::string& name, int ci, int co, int l_in, int l_out) {
        LayerCost lc;
        lc.name = name;
        lc.flops = 2.0 * l_out * ci * co;
        lc.param_bytes = 4.0 * (static_cast<double>(co) * ci + co);
        lc.act_bytes = 4.0 * (static_cast<double>(ci) * l_in + static_cast<double>(co) * l_out);
        out.push_back(lc);
    };
    int len = c.resolution;
    pointwise("stem", 1, c.stem_width, len, len);
    int c_prev = c.stem_width;
    for (std::size_t s = 0; s < c.stages.size(); ++s) {
        const auto& st = c.stages[s];
        const int stride = spec.stages[s].stride;
        const int l_out = (len + stride - 1) / stride;
        for (int b = 0; b < st.depth; ++b) {
            const int ci = (b == 0) ? c_prev : st.width;
            const int li = (b == 0) ? len : l_out;
            const int bstride = (b == 0) ? stride : 1;
            const int lo = (li + bstride - 1) / bstride;
            const int hidden = st.expand * ci;
            const std::string pre = "s" + std::to_string(s + 1) + ".b" + std::to_string(b + 1);
            pointwise(pre + ".exp", ci, hidden, li, li);
            LayerCost dw;
            dw.name = pre + ".dw";
            dw.flops = 2.0 * lo * hidden * st.kernel;
            dw.param_bytes = 4.0 * (static_cast<double>(hidden) * st.kernel + hidden);
            dw.act_bytes = 4.0 * (static_cast<double>(hidden) * li + static_cast<double>(hidden) * lo);
            out.push_back(dw);
            if (spec.stages[s].use_se) {
                const int se = std::max(1, hidden / 4);
                LayerCost sc;
                sc.name = pre + ".se";
                sc.flops = 2.0 * hidden * se * 2.0 + hidden;
                sc.param_bytes = 4.0 * (2.0 * static_cast<double>(hidden) * se + se + hidden);
                sc.act_bytes = 4.0 * (3.0 * static_cast<double>(hidden) * lo);
                out.push_back(sc);
            }
            pointwise(pre + ".proj", hidden, st.width, lo, lo);
        }
        len = l_out;
        c_prev = st.width;
    }
    pointwise("head", c_prev, c.head_width, len, len);
    LayerCost cls;
    cls.name = "cls";
    cls.flops = 2.0 * c.head_width * spec.n_classes;
    cls.param_bytes = 4.0 * (static_cast<double>(c.head_width) * spec.n_classes + spec.n_classes);
    cls.act_bytes = 4.0 * (c.head_width + spec.n_classes);
    out.push_back(cls);
    return out;
}

inline double count_flops(const SpaceSpec& spec, const ArchEncoding& arch) {
    double s = 0.0;
    for (const auto& lc : layer_costs(spec, arch)) s += lc.flops;
    return s;
}

inline double count_bytes(const SpaceSpec& spec, const ArchEncoding& arch) {
    double s = 0.0;
    for (const auto& lc : layer_costs(spec, arch)) s += lc.bytes();
    return s;
}

/// Roofline latency: per_model_overhead + sum over layers of
/// max(flops/compute, bytes/bandwidth) + per_layer_overhead, plus optional
/// seeded Gaussian noise. Deterministic when noise_sigma is 0.
inline double simulate_latency(const SpaceSpec& spec, const ArchEncoding& arch,
                               const DeviceProfile& device, std::uint64_t seed = 0) {
    validate_device(device);
    double ms = device.per_model_overhead;
    for (const auto& lc : layer_costs(spec, arch)) {
        ms += std::max(lc.flops / device.compute_rate, lc.bytes() / device.mem_bandwidth) +
              device.per_layer_overhead;
    }
    if (device.noise_sigma > 0.0) {
        Rng rng(child_seed(seed, fnv1a64(device.name)));
        ms += device.noise_sigma * rng.normal();
    }
    return std::max(ms, 1e-9);
}

// ---------------------------------------------------------------------------
// Latency datasets
// ---------------------------------------------------------------------------

struct LatencySample {
    ArchEncoding genes;
    std::string device;
    double latency_ms = 0.0;
};

/// n unique random architectures, each measured on every device. Duplicates
/// are resampled.
inline std::vector<LatencySample> build_latency_dataset(
    const SpaceSpec& spec, int n_samples, const std::vector<DeviceProfile>& devices,
    std::uint64_t seed) {
    if (n_samples < 1) throw config_error("latency dataset: n_samples must be >= 1");
    if (devices.empty()) throw config_error("latency dataset: no devices");
    Rng rng(child_seed(seed, 0x6c6174));
    std::unordered_set<ArchEncoding, ArchEncodingHash> seen;
    std::vector<ArchEncoding> archs;
    archs.reserve(static_cast<std::size_t>(n_samples));
    while (static_cast<int>(archs.size()) < n_samples) {
        ArchEncoding a = sample_random(spec, rng);
        if (seen.insert(a).second) archs.push_back(std::move(a));
    }
    std::vector<LatencySample> out;
    out.reserve(archs.size() * devices.size());
    for (const auto& a : archs)
        for (const auto& d : devices) {
            LatencySample s;
            s.genes = a;
            s.device = d.name;
            s.latency_ms = simulate_latency(spec, a, d, seed);
            out.push_back(std::move(s));
        }
    return out;
}

/// CSV schema: gene_0,...,gene_{G-1},device,latency_ms. Lines starting with
/// '#' carry artifact metadata and are skipped on import.
inline void export_latency_csv(const std::vector<LatencySample>& samples, int genome_length,
                               std::ostream& os, const std::string& meta_comment = "") {
    if (!meta_comment.empty()) os << "# " << meta_comment << "\n";
    for (int g = 0; g < genome_length; ++g) os << "gene_" << g << ",";
    os << "device,latency_ms\n";
    os.precision(17);
    for (const auto& s : samples) {
        for (int v : s.genes.genes) os << v << ",";
        os << s.device << "," << s.latency_ms << "\n";
    }
}

inline void export_latency_csv(const std::vector<LatencySample>& samples, int genome_length,
                               const std::string& path, const std::string& meta_comment = "") {
    std::ofstream f(path);
    if (!f) throw config_error("cannot write '" + path + "'");
    export_latency_csv(samples, genome_length, f, meta_comment);
}

/// Strict import: validates the header, gene bounds and positive latencies;
/// errors carry the offending line number. Accepts externally measured files
/// with the same schema.
inline std::vector<LatencySample> import_latency_csv(std::istream& is, const SpaceSpec& spec) {
    const int G = spec.genome_length();
    std::vector<LatencySample> out;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        if (!header_seen) {
            if (static_cast<int>(cells.size()) != G + 2)
                throw config_error("latency csv line " + std::to_string(line_no) +
                                   ": expected " + std::to_string(G + 2) +
                                   " header columns, got " + std::to_string(cells.size()));
            for (int g = 0; g < G; ++g)
                if (cells[static_cast<std::size_t>(g)] != "gene_" + std::to_string(g))
                    throw config_error("latency csv line " + std::to_string(line_no) +
                                       ": bad header column '" +
                                       cells[static_cast<std::size_t>(g)] + "'");
            if (cells[static_cast<std::size_t>(G)] != "device" ||
                cells[static_cast<std::size_t>(G + 1)] != "latency_ms")
                throw config_error("latency csv line " + std::to_string(line_no) +
                                   ": header must end with device,latency_ms");
            header_seen = true;
            continue;
        }
        if (static_cast<int>(cells.size()) != G + 2)
            throw config_error("latency csv line " + std::to_string(line_no) + ": expected " +
                               std::to_string(G + 2) + " columns, got " +
                               std::to_string(cells.size()));
        LatencySample s;
        s.genes.genes.resize(static_cast<std::size_t>(G));
        try {
            for (int g = 0; g < G; ++g)
                s.genes.genes[static_cast<std::size_t>(g)] =
                    std::stoi(cells[static_cast<std::size_t>(g)]);
            s.latency_ms = std::stod(cells[static_cast<std::size_t>(G + 1)]);
        } catch (const std::exception&) {
            throw config_error("latency csv line " + std::to_string(line_no) +
                               ": malformed number");
        }
        s.device = cells[static_cast<std::size_t>(G)];
        try {
            validate_encoding(spec, s.genes);
        } catch (const config_error& e) {
            throw config_error("latency csv line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!(s.latency_ms > 0.0))
            throw config_error("latency csv line " + std::to_string(line_no) +
                               ": latency must be positive");
        out.push_back(std::move(s));
    }
    if (!header_seen) throw config_error("latency csv: missing header row");
    return out;
}

inline std::vector<LatencySample> import_latency_csv(const std::string& path,
                                                     const SpaceSpec& spec) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot read '" + path + "'");
    return import_latency_csv(f, spec);
}

}  // namespace paretonet
