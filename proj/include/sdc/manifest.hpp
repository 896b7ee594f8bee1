#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdc/config.hpp"
#include "sdc/errors.hpp"

namespace sdc {

inline std::string hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot hash missing file: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return hash_hex(h);
}

// Per-stage run record: the stage hash it was produced under plus content
// hashes of everything read and written. A stage is current when its manifest
// matches the requested stage hash and every listed file still hashes the
// same; anything else (missing file, tampered artifact, changed upstream)
// forces a re-run.
struct Manifest {
    std::string stage;
    std::string stage_hash;
    std::uint64_t seed = 0;
    double wall_time_sec = 0.0;
    std::map<std::string, std::string> inputs;  // absolute path -> content hash
    std::map<std::string, std::string> outputs; // absolute path -> content hash

    nlohmann::json to_json() const {
        return {{"schema_version", kConfigSchemaVersion},
                {"stage", stage},
                {"stage_hash", stage_hash},
                {"seed", seed},
                {"wall_time_sec", wall_time_sec},
                {"inputs", inputs},
                {"outputs", outputs}};
    }

    static Manifest from_json(const nlohmann::json& j) {
        Manifest m;
        m.stage = j.at("stage").get<std::string>();
        m.stage_hash = j.at("stage_hash").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.wall_time_sec = j.at("wall_time_sec").get<double>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        return m;
    }
};

inline std::filesystem::path manifest_path(const std::filesystem::path& stage_dir) {
    return stage_dir / "manifest.json";
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& stage_dir) {
    std::ofstream out(manifest_path(stage_dir), std::ios::trunc);
    if (!out) throw Error("cannot write manifest in " + stage_dir.string());
    out << m.to_json().dump(2) << "\n";
}

inline bool load_manifest(const std::filesystem::path& stage_dir, Manifest& out) {
    std::ifstream in(manifest_path(stage_dir));
    if (!in) return false;
    try {
        nlohmann::json j;
        in >> j;
        out = Manifest::from_json(j);
        return true;
    } catch (const std::exception&) {
        return false; // unreadable manifest == stale stage
    }
}

inline bool files_match(const std::map<std::string, std::string>& recorded) {
    for (const auto& [path, hash] : recorded) {
        std::error_code ec;
        if (!std::filesystem::exists(path, ec)) return false;
        if (hash_file(path) != hash) return false;
    }
    return true;
}

inline bool stage_is_current(const std::filesystem::path& stage_dir, const std::string& stage_hash) {
    Manifest m;
    if (!load_manifest(stage_dir, m)) return false;
    if (m.stage_hash != stage_hash) return false;
    return files_match(m.inputs) && files_match(m.outputs);
}

} // namespace sdc
