#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdc/clustering.hpp"
#include "sdc/decoder.hpp"
#include "sdc/errors.hpp"
#include "sdc/rng.hpp"
#include "sdc/synth.hpp"

namespace sdc {

inline constexpr int kConfigSchemaVersion = 1;

// FNV-1a 64 over bytes; used for config and artifact content hashes.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

inline std::string hash_string(const std::string& s) { return hash_hex(fnv1a64(s.data(), s.size())); }

// Full pipeline configuration. Parsed from a flat `key = value` file with
// `#` comments; lists are comma-separated. Unknown keys are rejected so typos
// fail loudly.
struct PipelineConfig {
    std::filesystem::path data_root;
    std::filesystem::path output_root = "out";

    double voxel_threshold = 8.0; // NC percent, strictly-greater selection

    TrainConfig train;           // defaults: 5000 iters, batch 128, lr 1e-4, tau 0.03, sigma 0.1
    int ensemble_restarts = 50;
    std::vector<double> ridge_lambda_grid = {0.1, 1, 10, 100, 1000, 10000, 100000};

    std::vector<double> epsilon_grid = {0.5, 0.55, 0.6, 0.65};
    int min_neighbors = 3;
    double epsilon_expansion_step = 0.05;
    double epsilon_expansion_cap = 0.65;

    std::vector<int> k_values = {1, 5, 10, 50};
    int representative_images = 10;
    int representative_captions = 50;

    std::uint64_t seed = 0;
    PlantedSpec synth;

    // Execution knobs; never part of content hashes.
    int jobs = 1;
    bool force = false;

    // epsilon_expansion = min(epsilon + step, cap), clamped to >= epsilon.
    double expansion_for(double epsilon) const {
        return std::max(epsilon, std::min(epsilon + epsilon_expansion_step, epsilon_expansion_cap));
    }

    DbscanConfig dbscan_for(double epsilon) const {
        return DbscanConfig{epsilon, min_neighbors, expansion_for(epsilon)};
    }

    void validate() const {
        if (output_root.empty()) throw ConfigInvalid("config: output_root is required");
        if (voxel_threshold < 0.0) throw ConfigInvalid("config: voxel_threshold must be >= 0");
        train.validate();
        if (ensemble_restarts < 1) throw ConfigInvalid("config: ensemble_restarts must be >= 1");
        if (ridge_lambda_grid.empty()) throw ConfigInvalid("config: ridge_lambda_grid is empty");
        for (double l : ridge_lambda_grid) {
            if (l < 0.0) throw ConfigInvalid("config: negative ridge lambda");
        }
        if (epsilon_grid.empty()) throw ConfigInvalid("config: epsilon_grid is empty");
        for (double e : epsilon_grid) {
            if (!(e > 0.0 && e < 2.0)) throw ConfigInvalid("config: epsilon values must be in (0, 2)");
        }
        if (min_neighbors < 1) throw ConfigInvalid("config: min_neighbors must be >= 1");
        if (epsilon_expansion_step < 0.0) throw ConfigInvalid("config: negative expansion step");
        if (k_values.empty()) throw ConfigInvalid("config: k_values is empty");
        for (int k : k_values) {
            if (k < 1) throw ConfigInvalid("config: k values must be >= 1");
        }
        if (representative_images < 1 || representative_captions < 1) {
            throw ConfigInvalid("config: representative counts must be >= 1");
        }
        try {
            synth.validate();
        } catch (const InfeasibleSpec& e) {
            throw ConfigInvalid(std::string("config: ") + e.what());
        }
    }

    // Canonical parameter dump; the basis of every stage hash. Paths and
    // execution knobs are excluded on purpose: moving data or changing --jobs
    // must not invalidate artifacts (input content hashes cover the data).
    std::string canonical_params() const {
        std::ostringstream os;
        os.precision(17);
        os << "schema_version=" << kConfigSchemaVersion << '\n';
        os << "voxel_threshold=" << voxel_threshold << '\n';
        os << "train.iterations=" << train.iterations << '\n';
        os << "train.batch_size=" << train.batch_size << '\n';
        os << "train.learning_rate=" << train.learning_rate << '\n';
        os << "train.temperature=" << train.temperature << '\n';
        os << "train.noise_sigma=" << train.noise_sigma << '\n';
        os << "ensemble.restarts=" << ensemble_restarts << '\n';
        os << "ridge.lambda_grid=";
        for (double l : ridge_lambda_grid) os << l << ',';
        os << '\n';
        os << "dbscan.epsilon_grid=";
        for (double e : epsilon_grid) os << e << ',';
        os << '\n';
        os << "dbscan.min_neighbors=" << min_neighbors << '\n';
        os << "dbscan.expansion_step=" << epsilon_expansion_step << '\n';
        os << "dbscan.expansion_cap=" << epsilon_expansion_cap << '\n';
        os << "eval.k_values=";
        for (int k : k_values) os << k << ',';
        os << '\n';
        os << "interpret.images=" << representative_images << '\n';
        os << "interpret.captions=" << representative_captions << '\n';
        os << "seed=" << seed << '\n';
        os << "synth.participants=" << synth.n_participants << '\n';
        os << "synth.voxels=" << synth.n_voxels << '\n';
        os << "synth.items=" << synth.n_items << '\n';
        os << "synth.concepts=" << synth.n_concepts << '\n';
        os << "synth.noise_ceiling=" << synth.noise_ceiling_target << '\n';
        os << "synth.signal_fraction=" << synth.signal_fraction << '\n';
        os << "synth.shared_items=" << synth.n_shared_items << '\n';
        os << "synth.sessions=" << synth.n_sessions << '\n';
        os << "synth.separation_epsilon=" << synth.separation_epsilon << '\n';
        os << "synth.session_offset_sigma=" << synth.session_offset_sigma << '\n';
        os << "synth.seed=" << synth.seed << '\n';
        return os.str();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& value, Parse parse) {
    std::vector<T> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse(item));
    }
    return out;
}

} // namespace detail

inline PipelineConfig parse_config(const std::map<std::string, std::string>& kv) {
    PipelineConfig cfg;
    bool saw_version = false;

    auto as_double = [](const std::string& v, const std::string& key) {
        try {
            std::size_t pos = 0;
            double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigInvalid("config: cannot parse number for " + key + ": '" + v + "'");
        }
    };
    auto as_int = [&](const std::string& v, const std::string& key) {
        const double d = as_double(v, key);
        return static_cast<int>(d);
    };
    auto as_u64 = [](const std::string& v, const std::string& key) {
        try {
            std::size_t pos = 0;
            std::uint64_t u = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return u;
        } catch (const std::exception&) {
            throw ConfigInvalid("config: cannot parse integer for " + key + ": '" + v + "'");
        }
    };

    for (const auto& [key, value] : kv) {
        if (key == "schema_version") {
            if (as_int(value, key) != kConfigSchemaVersion) {
                throw ConfigInvalid("config: unsupported schema_version '" + value + "'");
            }
            saw_version = true;
        } else if (key == "data_root") {
            cfg.data_root = value;
        } else if (key == "output_root") {
            cfg.output_root = value;
        } else if (key == "voxel_threshold") {
            cfg.voxel_threshold = as_double(value, key);
        } else if (key == "train.iterations") {
            cfg.train.iterations = as_int(value, key);
        } else if (key == "train.batch_size") {
            cfg.train.batch_size = as_int(value, key);
        } else if (key == "train.learning_rate") {
            cfg.train.learning_rate = static_cast<float>(as_double(value, key));
        } else if (key == "train.temperature") {
            cfg.train.temperature = static_cast<float>(as_double(value, key));
        } else if (key == "train.noise_sigma") {
            cfg.train.noise_sigma = static_cast<float>(as_double(value, key));
        } else if (key == "train.log_every") {
            cfg.train.log_every = as_int(value, key);
        } else if (key == "ensemble.restarts") {
            cfg.ensemble_restarts = as_int(value, key);
        } else if (key == "ridge.lambda_grid") {
            cfg.ridge_lambda_grid =
                detail::parse_list<double>(value, [&](const std::string& s) { return as_double(s, key); });
        } else if (key == "dbscan.epsilon_grid") {
            cfg.epsilon_grid =
                detail::parse_list<double>(value, [&](const std::string& s) { return as_double(s, key); });
        } else if (key == "dbscan.min_neighbors") {
            cfg.min_neighbors = as_int(value, key);
        } else if (key == "dbscan.epsilon_expansion_step") {
            cfg.epsilon_expansion_step = as_double(value, key);
        } else if (key == "dbscan.epsilon_expansion_cap") {
            cfg.epsilon_expansion_cap = as_double(value, key);
        } else if (key == "eval.k_values") {
            cfg.k_values =
                detail::parse_list<int>(value, [&](const std::string& s) { return as_int(s, key); });
        } else if (key == "interpret.images") {
            cfg.representative_images = as_int(value, key);
        } else if (key == "interpret.captions") {
            cfg.representative_captions = as_int(value, key);
        } else if (key == "seed") {
            cfg.seed = as_u64(value, key);
        } else if (key == "jobs") {
            cfg.jobs = as_int(value, key);
        } else if (key == "synth.participants") {
            cfg.synth.n_participants = as_int(value, key);
        } else if (key == "synth.voxels") {
            cfg.synth.n_voxels = as_int(value, key);
        } else if (key == "synth.items") {
            cfg.synth.n_items = as_int(value, key);
        } else if (key == "synth.concepts") {
            cfg.synth.n_concepts = as_int(value, key);
        } else if (key == "synth.noise_ceiling") {
            cfg.synth.noise_ceiling_target = as_double(value, key);
        } else if (key == "synth.signal_fraction") {
            cfg.synth.signal_fraction = as_double(value, key);
        } else if (key == "synth.shared_items") {
            cfg.synth.n_shared_items = as_int(value, key);
        } else if (key == "synth.sessions") {
            cfg.synth.n_sessions = as_int(value, key);
        } else if (key == "synth.separation_epsilon") {
            cfg.synth.separation_epsilon = as_double(value, key);
        } else if (key == "synth.session_offset_sigma") {
            cfg.synth.session_offset_sigma = as_double(value, key);
        } else if (key == "synth.seed") {
            // handled after the loop so the global seed can act as fallback
        } else {
            throw ConfigInvalid("config: unknown key '" + key + "'");
        }
    }
    if (!saw_version) throw ConfigInvalid("config: missing schema_version");

    // The synthetic generator follows the global seed unless one was given.
    if (kv.find("synth.seed") != kv.end()) {
        cfg.synth.seed = as_u64(kv.at("synth.seed"), "synth.seed");
    } else {
        cfg.synth.seed = mix_seed(cfg.seed, {hash_tag("synth")});
    }
    return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigInvalid("config: cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigInvalid("config: line " + std::to_string(line_no) + " is not key = value");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigInvalid("config: empty key at line " + std::to_string(line_no));
        if (!kv.emplace(key, value).second) {
            throw ConfigInvalid("config: duplicate key '" + key + "'");
        }
    }
    return parse_config(kv);
}

} // namespace sdc
