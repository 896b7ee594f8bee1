#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sdc/errors.hpp"

namespace sdc {

// Matrix files are raw little-endian float32, row-major; metadata lives in a
// JSON sidecar next to the data file (<name>.json). Round-trips are bit-exact.
static_assert(std::endian::native == std::endian::little,
              "matrix file format requires a little-endian host");

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MatrixF32 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data; // row-major, rows*cols values

    MatrixF32() = default;
    MatrixF32(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    Eigen::Map<RowMajorF> map() {
        return Eigen::Map<RowMajorF>(data.data(), static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(cols));
    }
    Eigen::Map<const RowMajorF> map() const {
        return Eigen::Map<const RowMajorF>(data.data(), static_cast<Eigen::Index>(rows),
                                           static_cast<Eigen::Index>(cols));
    }

    static MatrixF32 from_eigen(const Eigen::Ref<const RowMajorF>& m) {
        MatrixF32 out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
        out.map() = m;
        return out;
    }

    bool all_finite() const {
        for (float v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

inline void require_finite(const MatrixF32& m, const std::string& what) {
    if (!m.all_finite()) throw Error("matrix contains NaN/Inf values: " + what);
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& data_path) {
    return std::filesystem::path(data_path.string() + ".json");
}

// Writes <path> (raw floats) and <path>.json. `extra` fields are merged into
// the sidecar; used for decoder checkpoints that carry training metadata.
inline void save_matrix(const MatrixF32& m, const std::filesystem::path& path,
                        const std::string& role,
                        const nlohmann::json& extra = nlohmann::json::object()) {
    if (m.data.size() != m.rows * m.cols) throw Error("matrix size/shape mismatch: " + path.string());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write matrix file: " + path.string());
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!out) throw Error("short write on matrix file: " + path.string());
    out.close();

    nlohmann::json side = extra;
    side["rows"] = m.rows;
    side["cols"] = m.cols;
    side["dtype"] = "f32";
    side["role"] = role;
    std::ofstream js(sidecar_path(path), std::ios::trunc);
    if (!js) throw Error("cannot write matrix sidecar: " + sidecar_path(path).string());
    js << side.dump(2) << "\n";
}

inline nlohmann::json load_sidecar(const std::filesystem::path& path) {
    std::ifstream js(sidecar_path(path));
    if (!js) throw Error("missing matrix sidecar: " + sidecar_path(path).string());
    nlohmann::json side;
    try {
        js >> side;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed matrix sidecar " + sidecar_path(path).string() + ": " + e.what());
    }
    return side;
}

inline MatrixF32 load_matrix(const std::filesystem::path& path) {
    const nlohmann::json side = load_sidecar(path);
    if (!side.contains("rows") || !side.contains("cols") || !side.contains("dtype")) {
        throw Error("matrix sidecar missing rows/cols/dtype: " + sidecar_path(path).string());
    }
    if (side["dtype"] != "f32") throw Error("unsupported matrix dtype in " + sidecar_path(path).string());

    MatrixF32 m(side["rows"].get<std::size_t>(), side["cols"].get<std::size_t>());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open matrix file: " + path.string());
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(m.data.size() * sizeof(float))) {
        throw Error("matrix file truncated: " + path.string());
    }
    char probe;
    if (in.read(&probe, 1), in.gcount() != 0) {
        throw Error("matrix file larger than sidecar shape: " + path.string());
    }
    require_finite(m, path.string());
    return m;
}

} // namespace sdc
