// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "paretonet/common.hpp"
#include "paretonet/space.hpp"
#include "paretonet/supernet.hpp"
#include "paretonet/train.hpp"

namespace paretonet {

/// Provenance stamped into every artifact file.
struct ArtifactMeta {
    std::string space_hash;
    std::uint64_t seed = 0;
    std::string version = kVersion;

    std::string comment() const {
        return "space_hash=" + space_hash + " seed=" + std::to_string(seed) +
               " version=" + version;
    }
    nlohmann::json to_json() const {
        return {{"space_hash", space_hash}, {"seed", seed}, {"version", version}};
    }
};

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot write '" + path + "'");
    f << content;
}

// ---------------------------------------------------------------------------
// Weights: JSON manifest + little-endian f32 blob
// ---------------------------------------------------------------------------

/// Writes <prefix>.json (manifest) and <prefix>.bin (raw little-endian f32
/// values in tensor order).
inline void save_weights(const std::string& prefix, const SupernetParams& params,
                         const ArtifactMeta& meta) {
    nlohmann::json manifest;
    manifest["meta"] = meta.to_json();
    manifest["dtype"] = "f32";
    manifest["blob"] = std::filesystem::path(prefix + ".bin").filename().string();
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<char> blob;
    std::int64_t offset = 0;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        const Tensor& t = params.tensors[i];
        nlohmann::json tj;
        tj["name"] = params.names[i];
        tj["shape"] = t.shape;
        tj["offset"] = offset;
        tensors.push_back(tj);
        for (double v : t.v) {
            const float f = static_cast<float>(v);
            char bytes[4];
            std::memcpy(bytes, &f, 4);
            blob.insert(blob.end(), bytes, bytes + 4);
        }
        offset += t.numel() * 4;
    }
    manifest["tensors"] = tensors;
    write_file(prefix + ".json", manifest.dump(2) + "\n");
    std::ofstream f(prefix + ".bin", std::ios::binary);
    if (!f) throw config_error("cannot write '" + prefix + ".bin'");
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

/// Loads a weights file into a freshly shaped parameter store, verifying the
/// space hash and every tensor shape against the spec's maxima.
inline SupernetParams load_weights(const std::string& prefix, const SpaceSpec& spec,
                                   ArtifactMeta* meta_out = nullptr) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(prefix + ".json"));
    } catch (const nlohmann::json::exception& e) {
        throw config_error("weights manifest: invalid JSON: " + std::string(e.what()));
    }
    const std::string file_hash = manifest.at("meta").at("space_hash").get<std::string>();
    if (file_hash != space_hash(spec))
        throw config_error("weights manifest: space hash " + file_hash +
                           " does not match the configured space " + space_hash(spec));
    if (manifest.at("dtype").get<std::string>() != "f32")
        throw config_error("weights manifest: unsupported dtype");
    if (meta_out) {
        meta_out->space_hash = file_hash;
        meta_out->seed = manifest.at("meta").at("seed").get<std::uint64_t>();
        meta_out->version = manifest.at("meta").at("version").get<std::string>();
    }
    SupernetParams params = init_supernet(spec, 0);  // shapes only; values overwritten
    const std::string blob = read_file(prefix + ".bin");
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != params.tensors.size())
        throw config_error("weights manifest: tensor count mismatch");
    for (const auto& tj : tensors) {
        const std::string name = tj.at("name").get<std::string>();
        auto it = params.by_name.find(name);
        if (it == params.by_name.end())
            throw config_error("weights manifest: unknown tensor '" + name + "'");
        Tensor& t = params.tensors[static_cast<std::size_t>(it->second)];
        const std::vector<int> shape = tj.at("shape").get<std::vector<int>>();
        if (shape != t.shape)
            throw config_error("weights manifest: tensor '" + name + "' shape mismatch");
        const std::int64_t offset = tj.at("offset").get<std::int64_t>();
        if (offset < 0 ||
            offset + t.numel() * 4 > static_cast<std::int64_t>(blob.size()))
            throw config_error("weights blob: tensor '" + name + "' out of bounds");
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            float f;
            std::memcpy(&f, blob.data() + offset + i * 4, 4);
            if (!std::isfinite(f))
                throw config_error("weights blob: non-finite value in '" + name + "'");
            t.v[static_cast<std::size_t>(i)] = static_cast<double>(f);
        }
    }
    return params;
}

// ---------------------------------------------------------------------------
// Train log CSV
// ---------------------------------------------------------------------------

inline void save_train_log(const std::string& path, const TrainLog& log,
                           const ArtifactMeta& meta, const std::string& distill_mode,
                           const std::string& distill_loss) {
    std::ostringstream os;
    os << "# " << meta.comment() << " distill_mode=" << distill_mode
       << " distill_loss=" << distill_loss << " initial_loss=" << log.initial_loss << "\n";
    os << "epoch,lr,train_loss,min_acc,max_acc\n";
    os.precision(17);
    for (const auto& r : log.rows)
        os << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.min_acc << ","
           << r.max_acc << "\n";
    write_file(path, os.str());
}

/// Key=value pairs from the first '#' comment line of an artifact CSV.
inline std::unordered_map<std::string, std::string> read_csv_meta(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot read '" + path + "'");
    std::string line;
    std::unordered_map<std::string, std::string> out;
    if (std::getline(f, line) && !line.empty() && line[0] == '#') {
        std::stringstream ss(line.substr(1));
        std::string tok;
        while (ss >> tok) {
            const auto eq = tok.find('=');
            if (eq != std::string::npos) out[tok.substr(0, eq)] = tok.substr(eq + 1);
        }
    }
    return out;
}

struct ParsedTrainLog {
    std::unordered_map<std::string, std::string> meta;
    std::vector<TrainLogRow> rows;
};

inline ParsedTrainLog load_train_log(const std::string& path) {
    ParsedTrainLog out;
    out.meta = read_csv_meta(path);
    std::ifstream f(path);
    if (!f) throw config_error("cannot read '" + path + "'");
    std::string line;
    bool header = false;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            header = true;  // column names
            continue;
        }
        TrainLogRow r;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        r.epoch = std::stoi(cell);
        std::getline(ss, cell, ',');
        r.lr = std::stod(cell);
        std::getline(ss, cell, ',');
        r.train_loss = std::stod(cell);
        std::getline(ss, cell, ',');
        r.min_acc = std::stod(cell);
        std::getline(ss, cell, ',');
        r.max_acc = std::stod(cell);
        out.rows.push_back(r);
    }
    return out;
}

}  // namespace paretonet
