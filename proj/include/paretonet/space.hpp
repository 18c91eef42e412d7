// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "paretonet/common.hpp"
#include "paretonet/rng.hpp"

namespace paretonet {

/// One elastic stage of inverted-residual blocks over 1-D signals.
struct StageSpec {
    std::vector<int> widths;   // output channels
    std::vector<int> depths;   // number of blocks
    std::vector<int> kernels;  // depthwise tap counts, odd
    std::vector<int> expands;  // expansion ratios
    bool use_se = false;
    int stride = 1;  // applied by the first block of the stage
};

/// Declarative description of every elastic dimension of the search space.
/// Gene layout: [resolution, stem, (width, depth, kernel, expand) per stage,
/// head]; genome length G = 4*stages + 3.
struct SpaceSpec {
    std::vector<StageSpec> stages;
    std::vector<int> stem_widths;
    std::vector<int> head_widths;
    std::vector<int> resolutions;
    int n_classes = 0;

    int genome_length() const { return 4 * static_cast<int>(stages.size()) + 3; }

    static constexpr int kGeneResolution = 0;
    static constexpr int kGeneStem = 1;
    int gene_width(int stage) const { return 2 + 4 * stage; }
    int gene_depth(int stage) const { return 3 + 4 * stage; }
    int gene_kernel(int stage) const { return 4 + 4 * stage; }
    int gene_expand(int stage) const { return 5 + 4 * stage; }
    int gene_head() const { return genome_length() - 1; }

    const std::vector<int>& choices(int gene) const {
        if (gene == kGeneResolution) return resolutions;
        if (gene == kGeneStem) return stem_widths;
        if (gene == gene_head()) return head_widths;
        const int s = (gene - 2) / 4;
        const auto& st = stages[static_cast<std::size_t>(s)];
        switch ((gene - 2) % 4) {
            case 0: return st.widths;
            case 1: return st.depths;
            case 2: return st.kernels;
            default: return st.expands;
        }
    }

    int n_choices(int gene) const { return static_cast<int>(choices(gene).size()); }
};

/// Fixed-length vector of choice indices: the genome for evolution, the key
/// for weight slicing and the feature source for the surrogates.
struct ArchEncoding {
    std::vector<int> genes;

    bool operator==(const ArchEncoding& o) const { return genes == o.genes; }
    bool operator<(const ArchEncoding& o) const { return genes < o.genes; }
};

struct ArchEncodingHash {
    std::size_t operator()(const ArchEncoding& a) const {
        return static_cast<std::size_t>(
            fnv1a64(a.genes.data(), a.genes.size() * sizeof(int)));
    }
};

/// Decoded architecture: concrete choice values instead of indices.
struct ArchConfig {
    struct Stage {
        int width = 0, depth = 0, kernel = 0, expand = 0;
    };
    int resolution = 0;
    int stem_width = 0;
    int head_width = 0;
    std::vector<Stage> stages;
};

// ---------------------------------------------------------------------------
// Validation and config parsing
// ---------------------------------------------------------------------------

namespace detail {

inline void require_choice_list(const std::vector<int>& v, const std::string& key) {
    if (v.empty()) throw config_error("space config: empty choice list for '" + key + "'");
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] <= 0)
            throw config_error("space config: non-positive value in '" + key + "'");
        if (i > 0 && v[i] <= v[i - 1])
            throw config_error("space config: '" + key +
                               "' must be strictly increasing (got " +
                               std::to_string(v[i - 1]) + " then " + std::to_string(v[i]) +
                               ")");
    }
}

inline std::vector<int> int_list(const nlohmann::json& j, const std::string& key) {
    if (!j.contains(key))
        throw config_error("space config: missing key '" + key + "'");
    const auto& a = j.at(key);
    if (!a.is_array()) throw config_error("space config: '" + key + "' must be an array");
    std::vector<int> out;
    for (const auto& e : a) {
        if (!e.is_number_integer())
            throw config_error("space config: '" + key + "' must contain integers");
        out.push_back(e.get<int>());
    }
    return out;
}

}  // namespace detail

inline void validate_space(const SpaceSpec& spec) {
    detail::require_choice_list(spec.stem_widths, "stem_widths");
    detail::require_choice_list(spec.head_widths, "head_widths");
    detail::require_choice_list(spec.resolutions, "resolutions");
    if (spec.n_classes < 2) throw config_error("space config: n_classes must be >= 2");
    if (spec.stages.empty()) throw config_error("space config: at least one stage required");
    for (std::size_t s = 0; s < spec.stages.size(); ++s) {
        const auto& st = spec.stages[s];
        const std::string p = "stages[" + std::to_string(s) + "].";
        detail::require_choice_list(st.widths, p + "widths");
        detail::require_choice_list(st.depths, p + "depths");
        detail::require_choice_list(st.kernels, p + "kernels");
        detail::require_choice_list(st.expands, p + "expands");
        for (int k : st.kernels)
            if (k % 2 == 0)
                throw config_error("space config: '" + p + "kernels' must be odd");
        if (st.stride != 1 && st.stride != 2)
            throw config_error("space config: '" + p + "stride' must be 1 or 2");
    }
}

inline SpaceSpec load_space(const std::string& config_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(config_text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("space config: not valid JSON: ") + e.what());
    }
    SpaceSpec spec;
    spec.stem_widths = detail::int_list(j, "stem_widths");
    spec.head_widths = detail::int_list(j, "head_widths");
    spec.resolutions = detail::int_list(j, "resolutions");
    if (!j.contains("n_classes") || !j.at("n_classes").is_number_integer())
        throw config_error("space config: missing integer key 'n_classes'");
    spec.n_classes = j.at("n_classes").get<int>();
    if (!j.contains("stages") || !j.at("stages").is_array())
        throw config_error("space config: missing array key 'stages'");
    for (const auto& sj : j.at("stages")) {
        StageSpec st;
        st.widths = detail::int_list(sj, "widths");
        st.depths = detail::int_list(sj, "depths");
        st.kernels = detail::int_list(sj, "kernels");
        st.expands = detail::int_list(sj, "expands");
        if (!sj.contains("use_se") || !sj.at("use_se").is_boolean())
            throw config_error("space config: missing boolean key 'use_se'");
        st.use_se = sj.at("use_se").get<bool>();
        if (!sj.contains("stride") || !sj.at("stride").is_number_integer())
            throw config_error("space config: missing integer key 'stride'");
        st.stride = sj.at("stride").get<int>();
        spec.stages.push_back(std::move(st));
    }
    validate_space(spec);
    return spec;
}

/// Canonical hash of a space config; embedded in every artifact so stages of
/// the pipeline can refuse mismatched inputs.
inline std::string space_hash(const SpaceSpec& spec) {
    nlohmann::json j;
    j["stem_widths"] = spec.stem_widths;
    j["head_widths"] = spec.head_widths;
    j["resolutions"] = spec.resolutions;
    j["n_classes"] = spec.n_classes;
    j["stages"] = nlohmann::json::array();
    for (const auto& st : spec.stages) {
        nlohmann::json sj;
        sj["widths"] = st.widths;
        sj["depths"] = st.depths;
        sj["kernels"] = st.kernels;
        sj["expands"] = st.expands;
        sj["use_se"] = st.use_se;
        sj["stride"] = st.stride;
        j["stages"].push_back(sj);
    }
    return to_hex(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Encoding / decoding and genome operators
// ---------------------------------------------------------------------------

inline void validate_encoding(const SpaceSpec& spec, const ArchEncoding& a) {
    if (static_cast<int>(a.genes.size()) != spec.genome_length())
        throw config_error("encoding: expected " + std::to_string(spec.genome_length()) +
                           " genes, got " + std::to_string(a.genes.size()));
    for (int g = 0; g < spec.genome_length(); ++g) {
        const int idx = a.genes[static_cast<std::size_t>(g)];
        if (idx < 0 || idx >= spec.n_choices(g))
            throw config_error("encoding: gene " + std::to_string(g) + " index " +
                               std::to_string(idx) + " out of range [0, " +
                               std::to_string(spec.n_choices(g)) + ")");
    }
}

inline ArchConfig decode(const SpaceSpec& spec, const ArchEncoding& a) {
    validate_encoding(spec, a);
    ArchConfig c;
    auto pick = [&](int gene) {
        return spec.choices(gene)[static_cast<std::size_t>(a.genes[static_cast<std::size_t>(gene)])];
    };
    c.resolution = pick(SpaceSpec::kGeneResolution);
    c.stem_width = pick(SpaceSpec::kGeneStem);
    c.head_width = pick(spec.gene_head());
    for (int s = 0; s < static_cast<int>(spec.stages.size()); ++s) {
        ArchConfig::Stage st;
        st.width = pick(spec.gene_width(s));
        st.depth = pick(spec.gene_depth(s));
        st.kernel = pick(spec.gene_kernel(s));
        st.expand = pick(spec.gene_expand(s));
        c.stages.push_back(st);
    }
    return c;
}

inline ArchEncoding encode(const SpaceSpec& spec, const ArchConfig& c) {
    auto find_index = [](const std::vector<int>& choices, int value, const char* what) {
        auto it = std::find(choices.begin(), choices.end(), value);
        if (it == choices.end())
            throw config_error(std::string("encode: value ") + std::to_string(value) +
                               " not a valid choice for " + what);
        return static_cast<int>(it - choices.begin());
    };
    ArchEncoding a;
    a.genes.assign(static_cast<std::size_t>(spec.genome_length()), 0);
    a.genes[SpaceSpec::kGeneResolution] =
        find_index(spec.resolutions, c.resolution, "resolution");
    a.genes[SpaceSpec::kGeneStem] = find_index(spec.stem_widths, c.stem_width, "stem");
    a.genes[static_cast<std::size_t>(spec.gene_head())] =
        find_index(spec.head_widths, c.head_width, "head");
    if (c.stages.size() != spec.stages.size())
        throw config_error("encode: stage count mismatch");
    for (int s = 0; s < static_cast<int>(spec.stages.size()); ++s) {
        const auto& st = spec.stages[static_cast<std::size_t>(s)];
        const auto& cs = c.stages[static_cast<std::size_t>(s)];
        a.genes[static_cast<std::size_t>(spec.gene_width(s))] =
            find_index(st.widths, cs.width, "width");
        a.genes[static_cast<std::size_t>(spec.gene_depth(s))] =
            find_index(st.depths, cs.depth, "depth");
        a.genes[static_cast<std::size_t>(spec.gene_kernel(s))] =
            find_index(st.kernels, cs.kernel, "kernel");
        a.genes[static_cast<std::size_t>(spec.gene_expand(s))] =
            find_index(st.expands, cs.expand, "expand");
    }
    return a;
}

inline ArchEncoding sample_min(const SpaceSpec& spec) {
    ArchEncoding a;
    a.genes.assign(static_cast<std::size_t>(spec.genome_length()), 0);
    return a;
}

inline ArchEncoding sample_max(const SpaceSpec& spec) {
    ArchEncoding a;
    a.genes.resize(static_cast<std::size_t>(spec.genome_length()));
    for (int g = 0; g < spec.genome_length(); ++g)
        a.genes[static_cast<std::size_t>(g)] = spec.n_choices(g) - 1;
    return a;
}

inline ArchEncoding sample_random(const SpaceSpec& spec, Rng& rng) {
    ArchEncoding a;
    a.genes.resize(static_cast<std::size_t>(spec.genome_length()));
    for (int g = 0; g < spec.genome_length(); ++g)
        a.genes[static_cast<std::size_t>(g)] = static_cast<int>(
            rng.uniform_index(static_cast<std::uint64_t>(spec.n_choices(g))));
    return a;
}

inline ArchEncoding sample_random(const SpaceSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return sample_random(spec, rng);
}

/// Each gene independently resamples, with probability p_m, among the OTHER
/// choices of its position; single-choice genes never change, so p_m is the
/// true per-gene change probability.
inline ArchEncoding mutate(const SpaceSpec& spec, const ArchEncoding& a, double p_m,
                           Rng& rng) {
    validate_encoding(spec, a);
    if (p_m < 0.0 || p_m > 1.0) throw config_error("mutate: p_m must be in [0, 1]");
    ArchEncoding out = a;
    for (int g = 0; g < spec.genome_length(); ++g) {
        const int n = spec.n_choices(g);
        if (n < 2) continue;
        if (rng.uniform01() < p_m) {
            const int cur = out.genes[static_cast<std::size_t>(g)];
            int pick = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - 1)));
            if (pick >= cur) ++pick;
            out.genes[static_cast<std::size_t>(g)] = pick;
        }
    }
    return out;
}

inline ArchEncoding mutate(const SpaceSpec& spec, const ArchEncoding& a, double p_m,
                           std::uint64_t seed) {
    Rng rng(seed);
    return mutate(spec, a, p_m, rng);
}

/// Uniform gene-wise crossover: each gene copied from a or b with prob 1/2.
inline ArchEncoding crossover(const SpaceSpec& spec, const ArchEncoding& a,
                              const ArchEncoding& b, Rng& rng) {
    validate_encoding(spec, a);
    validate_encoding(spec, b);
    if (a.genes.size() != b.genes.size())
        throw config_error("crossover: genome length mismatch");
    ArchEncoding out;
    out.genes.resize(a.genes.size());
    for (std::size_t g = 0; g < a.genes.size(); ++g)
        out.genes[g] = rng.bernoulli(0.5) ? a.genes[g] : b.genes[g];
    return out;
}

inline ArchEncoding crossover(const SpaceSpec& spec, const ArchEncoding& a,
                              const ArchEncoding& b, std::uint64_t seed) {
    Rng rng(seed);
    return crossover(spec, a, b, rng);
}

/// The desk-scale default space shipped with the repo (G = 15, ~1.5e6 archs).
inline std::string desk_space_json() {
    return R"({
  "stem_widths": [8, 12],
  "head_widths": [32, 48],
  "resolutions": [16, 24, 32],
  "n_classes": 8,
  "stages": [
    {"widths": [8, 12, 16],  "depths": [1, 2, 3], "kernels": [3, 5], "expands": [2, 4, 6], "use_se": false, "stride": 1},
    {"widths": [16, 24, 32], "depths": [1, 2, 3], "kernels": [3, 5], "expands": [2, 4, 6], "use_se": true,  "stride": 2},
    {"widths": [24, 32, 48], "depths": [1, 2, 3], "kernels": [3, 5], "expands": [2, 4, 6], "use_se": true,  "stride": 2}
  ]
})";
}

}  // namespace paretonet
