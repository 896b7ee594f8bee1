#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sdc/contrastive_loss.hpp"
#include "sdc/datamodel.hpp"
#include "sdc/errors.hpp"
#include "sdc/matrix.hpp"
#include "sdc/rng.hpp"

namespace sdc {

struct TrainConfig {
    int iterations = 5000;
    int batch_size = 128;
    float learning_rate = 1e-4f;
    float temperature = 0.03f;
    float noise_sigma = 0.1f;
    std::uint64_t seed = 0;
    int log_every = 250;

    void validate() const {
        if (iterations < 1) throw ConfigInvalid("train: iterations must be >= 1");
        if (batch_size < 2) throw ConfigInvalid("train: batch_size must be >= 2 (in-batch negatives)");
        if (!(temperature > 0.0f)) throw ConfigInvalid("train: temperature must be > 0");
        if (noise_sigma < 0.0f) throw ConfigInvalid("train: noise_sigma must be >= 0");
        if (!(learning_rate > 0.0f)) throw ConfigInvalid("train: learning_rate must be > 0");
    }

    nlohmann::json to_json() const {
        return {{"iterations", iterations},   {"batch_size", batch_size},
                {"learning_rate", learning_rate}, {"temperature", temperature},
                {"noise_sigma", noise_sigma}, {"seed", seed},
                {"log_every", log_every}};
    }
    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.iterations = j.at("iterations").get<int>();
        c.batch_size = j.at("batch_size").get<int>();
        c.learning_rate = j.at("learning_rate").get<float>();
        c.temperature = j.at("temperature").get<float>();
        c.noise_sigma = j.at("noise_sigma").get<float>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.log_every = j.value("log_every", 250);
        return c;
    }
};

struct EnsembleSpec {
    int restarts = 50;
    std::vector<std::uint64_t> seeds;

    static EnsembleSpec from_base_seed(int restarts, std::uint64_t base_seed) {
        EnsembleSpec s;
        s.restarts = restarts;
        s.seeds.reserve(restarts);
        for (int r = 0; r < restarts; ++r) {
            s.seeds.push_back(mix_seed(base_seed, {hash_tag("restart"), static_cast<std::uint64_t>(r)}));
        }
        return s;
    }

    void validate() const {
        if (restarts < 1) throw ConfigInvalid("ensemble: restarts must be >= 1");
        if (static_cast<int>(seeds.size()) != restarts) {
            throw ConfigInvalid("ensemble: restarts must equal seed count");
        }
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            for (std::size_t j = i + 1; j < seeds.size(); ++j) {
                if (seeds[i] == seeds[j]) throw ConfigInvalid("ensemble: seeds must be distinct");
            }
        }
    }
};

// Linear map from selected voxels to the 512-d embedding space. Row i is the
// concept vector of voxel voxel_index_map[i].
struct LinearDecoder {
    MatrixF32 weights; // v x 512
    int participant_id = 0;
    std::vector<VoxelId> voxel_index_map;
};

struct TrainDiagnostics {
    float final_train_loss = 0.0f;
    float final_val_loss = 0.0f;
    std::vector<std::pair<int, float>> val_history; // (iteration, val loss)
};

// Y_hat = X * W.
inline MatrixF32 predict(const LinearDecoder& d, const MatrixF32& X) {
    if (X.cols != d.weights.rows) {
        throw DimensionMismatch("predict: X has " + std::to_string(X.cols) +
                                " columns, decoder expects " + std::to_string(d.weights.rows));
    }
    MatrixF32 out(X.rows, d.weights.cols);
    out.map().noalias() = X.map() * d.weights.map();
    return out;
}

// Minimizes batched symmetric InfoNCE with Adam. Each batch input is
// perturbed with fresh Gaussian noise (sigma from the config); batches come
// from a per-epoch shuffle without replacement, short tail batch kept.
inline LinearDecoder train_contrastive(const MatrixF32& X_train, const MatrixF32& Y_train,
                                       const MatrixF32& X_val, const MatrixF32& Y_val,
                                       const TrainConfig& cfg, int participant_id,
                                       std::vector<VoxelId> voxel_index_map,
                                       TrainDiagnostics* diag = nullptr) {
    cfg.validate();
    if (X_train.rows != Y_train.rows) throw DimensionMismatch("train: X/Y row mismatch");
    if (X_val.rows != Y_val.rows) throw DimensionMismatch("train: X_val/Y_val row mismatch");
    if (X_train.rows < 2) throw DimensionMismatch("train: need at least 2 training rows");
    if (!voxel_index_map.empty() && voxel_index_map.size() != X_train.cols) {
        throw DimensionMismatch("train: voxel_index_map size != voxel count");
    }

    using MatF = Eigen::MatrixXf;
    const Eigen::Index n = static_cast<Eigen::Index>(X_train.rows);
    const Eigen::Index v = static_cast<Eigen::Index>(X_train.cols);
    const Eigen::Index e = static_cast<Eigen::Index>(Y_train.cols);
    const MatF X = X_train.map();
    const MatF Y = Y_train.map();
    const MatF Xv = X_val.map();
    const MatF Yv = Y_val.map();

    Rng rng(cfg.seed);
    MatF W(v, e);
    const float init_std = 1.0f / std::sqrt(static_cast<float>(v));
    for (Eigen::Index i = 0; i < v; ++i) {
        for (Eigen::Index j = 0; j < e; ++j) W(i, j) = init_std * rng.normal_f();
    }

    // Adam, beta1=0.9 beta2=0.999 eps=1e-8.
    MatF m1 = MatF::Zero(v, e), m2 = MatF::Zero(v, e);
    const float b1 = 0.9f, b2 = 0.999f, adam_eps = 1e-8f;
    float b1t = 1.0f, b2t = 1.0f;

    std::vector<std::size_t> perm(n);
    for (Eigen::Index i = 0; i < n; ++i) perm[i] = static_cast<std::size_t>(i);
    std::size_t pos = static_cast<std::size_t>(n); // force shuffle on first batch

    const float tau = cfg.temperature;
    MatF Xb, Yb, A, gA, gW;
    float train_loss = 0.0f;
    TrainDiagnostics local;
    TrainDiagnostics& dg = diag ? *diag : local;

    auto val_loss = [&]() -> float {
        if (Xv.rows() == 0) return 0.0f;
        MatF Av = Xv * W;
        return infonce_loss<float>(Av, Yv, tau);
    };

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        if (pos >= static_cast<std::size_t>(n)) {
            rng.shuffle(perm);
            pos = 0;
        }
        const Eigen::Index bs =
            static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch_size, n - pos));
        Xb.resize(bs, v);
        Yb.resize(bs, e);
        for (Eigen::Index i = 0; i < bs; ++i) {
            Xb.row(i) = X.row(static_cast<Eigen::Index>(perm[pos + i]));
            Yb.row(i) = Y.row(static_cast<Eigen::Index>(perm[pos + i]));
        }
        pos += static_cast<std::size_t>(bs);

        if (cfg.noise_sigma > 0.0f) {
            for (Eigen::Index i = 0; i < bs; ++i) {
                for (Eigen::Index j = 0; j < v; ++j) {
                    Xb(i, j) += cfg.noise_sigma * rng.normal_f();
                }
            }
        }

        A.noalias() = Xb * W;
        train_loss = infonce_loss_grad<float>(A, Yb, tau, gA);
        if (!std::isfinite(train_loss)) {
            throw NonFiniteLoss("train: loss became non-finite at iteration " +
                                std::to_string(iter));
        }
        gW.noalias() = Xb.transpose() * gA;

        b1t *= b1;
        b2t *= b2;
        m1 = b1 * m1 + (1.0f - b1) * gW;
        m2 = b2 * m2.array().matrix() + (1.0f - b2) * gW.array().square().matrix();
        const float corr1 = 1.0f / (1.0f - b1t);
        const float corr2 = 1.0f / (1.0f - b2t);
        W.array() -= cfg.learning_rate * (m1.array() * corr1) /
                     ((m2.array() * corr2).sqrt() + adam_eps);

        if (cfg.log_every > 0 && (iter % cfg.log_every == 0 || iter == cfg.iterations)) {
            dg.val_history.emplace_back(iter, val_loss());
        }
    }

    dg.final_train_loss = train_loss;
    dg.final_val_loss = dg.val_history.empty() ? val_loss() : dg.val_history.back().second;

    LinearDecoder out;
    out.weights = MatrixF32::from_eigen(W);
    out.participant_id = participant_id;
    out.voxel_index_map = std::move(voxel_index_map);
    if (!out.weights.all_finite()) throw NonFiniteLoss("train: non-finite weights after training");
    return out;
}

// Elementwise mean of the restart weight matrices (double accumulation,
// summed in restart order so results are reproducible).
inline LinearDecoder ensemble_average(const std::vector<LinearDecoder>& decoders) {
    if (decoders.empty()) throw ShapeMismatch("ensemble_average: no decoders");
    const LinearDecoder& first = decoders.front();
    for (const LinearDecoder& d : decoders) {
        if (d.participant_id != first.participant_id ||
            d.weights.rows != first.weights.rows || d.weights.cols != first.weights.cols ||
            d.voxel_index_map != first.voxel_index_map) {
            throw ShapeMismatch("ensemble_average: decoders disagree on shape or voxel map");
        }
    }
    std::vector<double> acc(first.weights.data.size(), 0.0);
    for (const LinearDecoder& d : decoders) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d.weights.data[i];
    }
    LinearDecoder out;
    out.weights = MatrixF32(first.weights.rows, first.weights.cols);
    const double inv = 1.0 / static_cast<double>(decoders.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        out.weights.data[i] = static_cast<float>(acc[i] * inv);
    }
    out.participant_id = first.participant_id;
    out.voxel_index_map = first.voxel_index_map;
    return out;
}

// Checkpoint = weights matrix file + sidecar carrying participant id, voxel
// map and whatever training metadata the caller passes in `extra`.
inline void save_decoder(const LinearDecoder& d, const std::filesystem::path& path,
                         const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json side = extra;
    side["participant_id"] = d.participant_id;
    side["voxel_index_map"] = d.voxel_index_map;
    save_matrix(d.weights, path, "decoder_weights", side);
}

inline LinearDecoder load_decoder(const std::filesystem::path& path) {
    LinearDecoder d;
    d.weights = load_matrix(path);
    const nlohmann::json side = load_sidecar(path);
    d.participant_id = side.at("participant_id").get<int>();
    d.voxel_index_map = side.at("voxel_index_map").get<std::vector<VoxelId>>();
    if (d.voxel_index_map.size() != d.weights.rows) {
        throw ShapeMismatch("decoder checkpoint: voxel map size != weight rows in " + path.string());
    }
    return d;
}

} // namespace sdc
