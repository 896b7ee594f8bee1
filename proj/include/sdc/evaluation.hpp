#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sdc/errors.hpp"
#include "sdc/matrix.hpp"

namespace sdc {

struct RetrievalReport {
    int participant_id = -1;
    std::vector<int> k_values;
    std::vector<double> accuracy; // fraction of rows whose true target ranks in top k
    std::vector<double> chance;   // k / N
    std::size_t candidate_count = 0;

    nlohmann::json to_json() const {
        return {{"participant_id", participant_id}, {"k_values", k_values},
                {"accuracy", accuracy},             {"chance", chance},
                {"N", candidate_count}};
    }
    static RetrievalReport from_json(const nlohmann::json& j) {
        RetrievalReport r;
        r.participant_id = j.at("participant_id").get<int>();
        r.k_values = j.at("k_values").get<std::vector<int>>();
        r.accuracy = j.at("accuracy").get<std::vector<double>>();
        r.chance = j.at("chance").get<std::vector<double>>();
        r.candidate_count = j.at("N").get<std::size_t>();
        return r;
    }
};

// Top-k retrieval accuracy. Row i of `predicted` is scored against all N
// target rows by cosine similarity; a hit at k means the true target (row i)
// survives the top-k cut. Ties break by ascending candidate index, so a tied
// true target counts only if its index keeps it inside the cut.
inline RetrievalReport topk_accuracy(const MatrixF32& predicted, const MatrixF32& targets,
                                     const std::vector<int>& k_values) {
    if (predicted.rows != targets.rows || predicted.cols != targets.cols) {
        throw DimensionMismatch("topk_accuracy: predicted/targets shape mismatch");
    }
    const std::size_t n = predicted.rows;
    if (n == 0) throw DimensionMismatch("topk_accuracy: empty input");
    for (int k : k_values) {
        if (k < 1 || static_cast<std::size_t>(k) > n) {
            throw Error("topk_accuracy: k=" + std::to_string(k) + " outside [1, N]");
        }
    }

    Eigen::MatrixXd P = predicted.map().cast<double>();
    Eigen::MatrixXd T = targets.map().cast<double>();
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        const double pn = P.row(i).norm();
        const double tn = T.row(i).norm();
        if (pn == 0.0 || tn == 0.0) {
            throw DegenerateRow("topk_accuracy: zero-norm row " + std::to_string(i));
        }
        P.row(i) /= pn;
        T.row(i) /= tn;
    }
    const Eigen::MatrixXd S = P * T.transpose(); // S(i, j) = cos(pred_i, target_j)

    // rank of the true target: strictly-better candidates plus equal-scoring
    // candidates with a smaller index, plus one.
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double self = S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
        std::size_t r = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double s = S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (s > self || (s == self && j < i)) ++r;
        }
        rank[i] = r;
    }

    RetrievalReport rep;
    rep.k_values = k_values;
    rep.candidate_count = n;
    for (int k : k_values) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (rank[i] <= static_cast<std::size_t>(k)) ++hits;
        }
        rep.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(n));
        rep.chance.push_back(static_cast<double>(k) / static_cast<double>(n));
    }
    return rep;
}

inline void save_report(const RetrievalReport& r, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write retrieval report: " + path.string());
    out << r.to_json().dump(2) << "\n";
}

inline RetrievalReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open retrieval report: " + path.string());
    nlohmann::json j;
    in >> j;
    return RetrievalReport::from_json(j);
}

} // namespace sdc
