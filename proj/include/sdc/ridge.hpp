#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sdc/decoder.hpp"
#include "sdc/errors.hpp"
#include "sdc/evaluation.hpp"
#include "sdc/matrix.hpp"

namespace sdc {

struct RidgeResult {
    LinearDecoder decoder;
    double lambda = 0.0;
    double val_top1 = 0.0;
    std::vector<std::pair<double, double>> grid_scores; // (lambda, val top-1)
};

// Closed-form ridge baseline: W = (X'X + lambda I)^-1 X'Y per grid value,
// keeping the lambda with the best validation top-1 retrieval (first grid
// entry wins ties).
inline RidgeResult train_ridge(const MatrixF32& X_train, const MatrixF32& Y_train,
                               const std::vector<double>& lambda_grid, const MatrixF32& X_val,
                               const MatrixF32& Y_val, int participant_id = 0,
                               std::vector<VoxelId> voxel_index_map = {}) {
    if (X_train.rows != Y_train.rows) throw DimensionMismatch("ridge: X/Y row mismatch");
    if (X_val.rows != Y_val.rows) throw DimensionMismatch("ridge: X_val/Y_val row mismatch");
    if (X_val.cols != X_train.cols) throw DimensionMismatch("ridge: X_val column mismatch");
    if (lambda_grid.empty()) throw ConfigInvalid("ridge: empty lambda grid");
    for (double l : lambda_grid) {
        if (l < 0.0) throw ConfigInvalid("ridge: negative lambda");
    }
    if (!voxel_index_map.empty() && voxel_index_map.size() != X_train.cols) {
        throw DimensionMismatch("ridge: voxel_index_map size != voxel count");
    }

    const Eigen::Index v = static_cast<Eigen::Index>(X_train.cols);
    const Eigen::MatrixXd X = X_train.map().cast<double>();
    const Eigen::MatrixXd Y = Y_train.map().cast<double>();
    const Eigen::MatrixXd XtX = X.transpose() * X;
    const Eigen::MatrixXd XtY = X.transpose() * Y;

    RidgeResult best;
    bool have_best = false;
    for (double lambda : lambda_grid) {
        Eigen::MatrixXd reg = XtX;
        reg.diagonal().array() += lambda;
        if (lambda == 0.0) {
            // X'X is only invertible when X has full column rank.
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(reg);
            if (qr.rank() < v) {
                throw SingularMatrix("ridge: X'X singular at lambda = 0 (rank-deficient X)");
            }
        }
        const Eigen::MatrixXd W = Eigen::LDLT<Eigen::MatrixXd>(reg).solve(XtY);

        LinearDecoder d;
        d.weights = MatrixF32::from_eigen(W.cast<float>());
        d.participant_id = participant_id;
        d.voxel_index_map = voxel_index_map.empty()
                                ? [&] {
                                      std::vector<VoxelId> ids(X_train.cols);
                                      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<VoxelId>(i);
                                      return ids;
                                  }()
                                : voxel_index_map;

        double top1 = 1.0;
        if (X_val.rows > 0) {
            const MatrixF32 pred = predict(d, X_val);
            top1 = topk_accuracy(pred, Y_val, {1}).accuracy[0];
        }
        best.grid_scores.emplace_back(lambda, top1);
        if (!have_best || top1 > best.val_top1) {
            best.decoder = std::move(d);
            best.lambda = lambda;
            best.val_top1 = top1;
            have_best = true;
        }
    }
    return best;
}

} // namespace sdc
