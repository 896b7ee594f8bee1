#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sdc/csv.hpp"
#include "sdc/errors.hpp"
#include "sdc/matrix.hpp"
#include "sdc/rng.hpp"

namespace sdc {

using ItemId = std::int64_t;
using VoxelId = std::int64_t;

inline constexpr int kEmbeddingDim = 512;
inline constexpr int kMaxRepeats = 3;
inline constexpr std::size_t kValFoldSize = 1000;
inline constexpr std::size_t kTestFoldSize = 1000;

enum class Fold { Train, Val, Test };

inline const char* fold_name(Fold f) {
    switch (f) {
        case Fold::Train: return "train";
        case Fold::Val: return "val";
        case Fold::Test: return "test";
    }
    return "?";
}

inline Fold fold_from_name(const std::string& s) {
    if (s == "train") return Fold::Train;
    if (s == "val") return Fold::Val;
    if (s == "test") return Fold::Test;
    throw Error("unknown fold name: " + s);
}

struct TrialRow {
    std::int64_t trial_id = 0; // row index into the participant's response matrix
    ItemId item_id = 0;
    int session_id = 0;
    int repeat_index = 0;
};

struct TrialTable {
    std::vector<TrialRow> rows;

    std::size_t size() const { return rows.size(); }

    // Enforces the structural invariants: unique (item, repeat) pairs,
    // repeat_index < 3, and trial ids addressing rows of an n-row matrix.
    void validate(std::size_t response_rows) const {
        std::set<std::pair<ItemId, int>> seen;
        for (const TrialRow& t : rows) {
            if (t.repeat_index < 0 || t.repeat_index >= kMaxRepeats) {
                throw Error("repeat_index out of range for item " + std::to_string(t.item_id));
            }
            if (!seen.insert({t.item_id, t.repeat_index}).second) {
                throw Error("duplicate (item_id, repeat_index): " + std::to_string(t.item_id) +
                            "," + std::to_string(t.repeat_index));
            }
            if (t.trial_id < 0 || static_cast<std::size_t>(t.trial_id) >= response_rows) {
                throw Error("trial_id " + std::to_string(t.trial_id) +
                            " does not index a response row");
            }
        }
    }

    std::map<ItemId, std::vector<std::size_t>> rows_by_item() const {
        std::map<ItemId, std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < rows.size(); ++i) out[rows[i].item_id].push_back(i);
        return out;
    }

    std::map<int, std::vector<std::size_t>> rows_by_session() const {
        std::map<int, std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < rows.size(); ++i) out[rows[i].session_id].push_back(i);
        return out;
    }

    std::vector<ItemId> distinct_items_ascending() const {
        std::set<ItemId> ids;
        for (const TrialRow& t : rows) ids.insert(t.item_id);
        return {ids.begin(), ids.end()};
    }
};

inline void save_trials_csv(const TrialTable& t, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write trials csv: " + path.string());
    out << "trial_id,item_id,session_id,repeat_index\n";
    for (const TrialRow& r : t.rows) {
        out << r.trial_id << ',' << r.item_id << ',' << r.session_id << ',' << r.repeat_index << '\n';
    }
}

inline TrialTable load_trials_csv(const std::filesystem::path& path) {
    TrialTable t;
    for (const auto& f : read_csv(path, "trial_id,item_id,session_id,repeat_index")) {
        if (f.size() != 4) throw Error("bad trials row in " + path.string());
        t.rows.push_back({parse_ll(f[0], "trial_id"), parse_ll(f[1], "item_id"),
                          static_cast<int>(parse_ll(f[2], "session_id")),
                          static_cast<int>(parse_ll(f[3], "repeat_index"))});
    }
    return t;
}

struct FoldAssignment {
    std::map<ItemId, Fold> fold;
    std::set<ItemId> shared;

    Fold fold_of(ItemId id) const {
        auto it = fold.find(id);
        if (it == fold.end()) throw Error("item has no fold assignment: " + std::to_string(id));
        return it->second;
    }
    bool is_shared(ItemId id) const { return shared.count(id) > 0; }

    std::vector<ItemId> items_in_fold(Fold f) const {
        std::vector<ItemId> out;
        for (const auto& [id, g] : fold) {
            if (g == f) out.push_back(id);
        }
        return out; // map iteration is already ascending by item id
    }
};

inline void save_folds_csv(const FoldAssignment& fa, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write folds csv: " + path.string());
    out << "item_id,fold,shared\n";
    for (const auto& [id, f] : fa.fold) {
        out << id << ',' << fold_name(f) << ',' << (fa.shared.count(id) ? 1 : 0) << '\n';
    }
}

inline FoldAssignment load_folds_csv(const std::filesystem::path& path) {
    FoldAssignment fa;
    for (const auto& f : read_csv(path, "item_id,fold,shared")) {
        if (f.size() != 3) throw Error("bad folds row in " + path.string());
        const ItemId id = parse_ll(f[0], "item_id");
        fa.fold[id] = fold_from_name(f[1]);
        if (parse_ll(f[2], "shared") != 0) fa.shared.insert(id);
    }
    return fa;
}

struct ParticipantDataset {
    int participant_id = 0;
    MatrixF32 responses;          // trials x voxels
    MatrixF32 targets;            // items x 512, row index == item_id
    TrialTable trials;
    FoldAssignment folds;
    std::vector<float> noise_ceiling; // percent variance explainable, per voxel
};

// Assigns items to Train/Val/Test. All fully-repeated shared items are forced
// into Test; Test is then filled to 1000 items and Val gets 1000 items, both
// drawn seeded-random from the remaining items with three repeats. Items with
// fewer than three repeats always train.
inline FoldAssignment split_folds(const TrialTable& trials, const std::set<ItemId>& shared_items,
                                  std::uint64_t seed) {
    if (trials.rows.empty()) throw Error("split_folds: empty trial table");

    std::map<ItemId, int> repeat_count;
    for (const TrialRow& t : trials.rows) repeat_count[t.item_id]++;

    std::vector<ItemId> shared_full, other_full;
    for (const auto& [id, n] : repeat_count) {
        if (n >= kMaxRepeats) {
            (shared_items.count(id) ? shared_full : other_full).push_back(id);
        }
    }

    if (shared_full.size() > kTestFoldSize) {
        throw Error("split_folds: more fully-repeated shared items than test slots");
    }
    const std::size_t need = (kTestFoldSize - shared_full.size()) + kValFoldSize;
    if (other_full.size() < need) {
        throw InsufficientRepeats(
            "split_folds: need " + std::to_string(need) + " non-shared items with " +
            std::to_string(kMaxRepeats) + " repeats, have " + std::to_string(other_full.size()));
    }

    Rng rng(mix_seed(seed, {hash_tag("fold_split")}));
    rng.shuffle(other_full); // other_full starts sorted ascending, so this is seed-stable

    FoldAssignment fa;
    for (const auto& [id, n] : repeat_count) {
        fa.fold[id] = Fold::Train;
        if (shared_items.count(id)) fa.shared.insert(id);
    }
    for (ItemId id : shared_full) fa.fold[id] = Fold::Test;
    std::size_t i = 0;
    for (; i < kTestFoldSize - shared_full.size(); ++i) fa.fold[other_full[i]] = Fold::Test;
    for (std::size_t j = 0; j < kValFoldSize; ++j, ++i) fa.fold[other_full[i]] = Fold::Val;
    return fa;
}

// Per-voxel noise ceiling (percent variance explainable) from training-fold
// trials only. Within-item variance across repeats estimates the noise term;
// the /3 accounts for averaging over three repeats:
//   NC = 100 * sig2 / (sig2 + noise2 / 3),  sig2 = max(0, total2 - noise2).
inline std::vector<float> compute_noise_ceiling(const MatrixF32& train_responses,
                                                const TrialTable& train_trials) {
    const std::size_t n = train_responses.rows;
    const std::size_t v = train_responses.cols;
    if (n != train_trials.size()) {
        throw DimensionMismatch("compute_noise_ceiling: responses rows != trials");
    }

    const auto by_item = train_trials.rows_by_item();
    std::size_t items_with_repeats = 0;
    for (const auto& [id, rows] : by_item) {
        if (rows.size() >= 2) ++items_with_repeats;
    }
    if (items_with_repeats == 0) {
        throw NoRepeats("compute_noise_ceiling: no training item has >= 2 repeats");
    }
    if (n < 2) throw NoRepeats("compute_noise_ceiling: need at least 2 training trials");

    std::vector<double> sum(v, 0.0), sumsq(v, 0.0), noise_acc(v, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const float* row = &train_responses.data[r * v];
        for (std::size_t c = 0; c < v; ++c) {
            const double x = row[c];
            sum[c] += x;
            sumsq[c] += x * x;
        }
    }

    std::vector<double> mean_buf(v), ss_buf(v);
    for (const auto& [id, rows] : by_item) {
        const std::size_t m = rows.size();
        if (m < 2) continue;
        std::fill(mean_buf.begin(), mean_buf.end(), 0.0);
        std::fill(ss_buf.begin(), ss_buf.end(), 0.0);
        for (std::size_t r : rows) {
            const float* row = &train_responses.data[r * v];
            for (std::size_t c = 0; c < v; ++c) mean_buf[c] += row[c];
        }
        for (std::size_t c = 0; c < v; ++c) mean_buf[c] /= static_cast<double>(m);
        for (std::size_t r : rows) {
            const float* row = &train_responses.data[r * v];
            for (std::size_t c = 0; c < v; ++c) {
                const double d = row[c] - mean_buf[c];
                ss_buf[c] += d * d;
            }
        }
        for (std::size_t c = 0; c < v; ++c) {
            noise_acc[c] += ss_buf[c] / static_cast<double>(m - 1);
        }
    }

    std::vector<float> nc(v, 0.0f);
    for (std::size_t c = 0; c < v; ++c) {
        const double total2 =
            (sumsq[c] - sum[c] * sum[c] / static_cast<double>(n)) / static_cast<double>(n - 1);
        const double noise2 = noise_acc[c] / static_cast<double>(items_with_repeats);
        const double sig2 = std::max(0.0, total2 - noise2);
        const double denom = sig2 + noise2 / static_cast<double>(kMaxRepeats);
        nc[c] = denom > 0.0 ? static_cast<float>(100.0 * sig2 / denom) : 0.0f;
    }
    return nc;
}

// Indices with NC strictly above the threshold, ascending.
inline std::vector<VoxelId> select_voxels(const std::vector<float>& nc, double threshold) {
    if (threshold < 0.0) throw Error("select_voxels: negative threshold");
    std::vector<VoxelId> out;
    for (std::size_t i = 0; i < nc.size(); ++i) {
        if (nc[i] > threshold) out.push_back(static_cast<VoxelId>(i));
    }
    if (out.empty()) {
        throw EmptySelection("select_voxels: no voxel above " + std::to_string(threshold) + "%");
    }
    return out;
}

// Z-scores each voxel within each scanning session (population std). Groups
// with zero spread map to zeros.
inline MatrixF32 normalize_by_session(const MatrixF32& responses, const TrialTable& trials) {
    const std::size_t n = responses.rows;
    const std::size_t v = responses.cols;
    if (n != trials.size()) throw DimensionMismatch("normalize_by_session: responses rows != trials");

    MatrixF32 out(n, v);
    for (const auto& [session, rows] : trials.rows_by_session()) {
        if (rows.size() < 2) {
            throw SessionTooSmall("normalize_by_session: session " + std::to_string(session) +
                                  " has " + std::to_string(rows.size()) + " trial(s)");
        }
        const double m = static_cast<double>(rows.size());
        std::vector<double> mean(v, 0.0), var(v, 0.0);
        for (std::size_t r : rows) {
            const float* row = &responses.data[r * v];
            for (std::size_t c = 0; c < v; ++c) mean[c] += row[c];
        }
        for (std::size_t c = 0; c < v; ++c) mean[c] /= m;
        for (std::size_t r : rows) {
            const float* row = &responses.data[r * v];
            for (std::size_t c = 0; c < v; ++c) {
                const double d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        std::vector<double> inv_std(v, 0.0);
        for (std::size_t c = 0; c < v; ++c) {
            const double sd = std::sqrt(var[c] / m);
            inv_std[c] = sd > 1e-12 ? 1.0 / sd : 0.0;
        }
        for (std::size_t r : rows) {
            const float* src = &responses.data[r * v];
            float* dst = &out.data[r * v];
            for (std::size_t c = 0; c < v; ++c) {
                dst[c] = static_cast<float>((src[c] - mean[c]) * inv_std[c]);
            }
        }
    }
    return out;
}

// Arithmetic mean of each item's trial rows; output rows ascend by item id.
inline MatrixF32 average_repeats(const MatrixF32& per_trial, const TrialTable& trials) {
    const std::size_t v = per_trial.cols;
    if (per_trial.rows != trials.size()) {
        throw DimensionMismatch("average_repeats: matrix rows != trials");
    }
    const auto by_item = trials.rows_by_item();
    MatrixF32 out(by_item.size(), v);
    std::size_t r_out = 0;
    std::vector<double> acc(v);
    for (const auto& [id, rows] : by_item) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t r : rows) {
            const float* row = &per_trial.data[r * v];
            for (std::size_t c = 0; c < v; ++c) acc[c] += row[c];
        }
        float* dst = &out.data[r_out * v];
        for (std::size_t c = 0; c < v; ++c) {
            dst[c] = static_cast<float>(acc[c] / static_cast<double>(rows.size()));
        }
        ++r_out;
    }
    return out;
}

// Restriction of a trial table + response matrix to one fold. The returned
// rows are positional (row i of the matrix is rows[i] of the table); trial_id
// keeps referring to the original full matrix.
struct FoldView {
    MatrixF32 responses;
    TrialTable trials;
};

inline FoldView restrict_to_fold(const MatrixF32& responses, const TrialTable& trials,
                                 const FoldAssignment& folds, Fold which) {
    FoldView out;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (folds.fold_of(trials.rows[i].item_id) == which) keep.push_back(i);
    }
    out.responses = MatrixF32(keep.size(), responses.cols);
    out.trials.rows.reserve(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const float* src = &responses.data[keep[i] * responses.cols];
        std::copy(src, src + responses.cols, &out.responses.data[i * responses.cols]);
        out.trials.rows.push_back(trials.rows[keep[i]]);
    }
    return out;
}

inline MatrixF32 select_columns(const MatrixF32& m, const std::vector<VoxelId>& cols) {
    MatrixF32 out(m.rows, cols.size());
    for (std::size_t r = 0; r < m.rows; ++r) {
        const float* src = &m.data[r * m.cols];
        float* dst = &out.data[r * cols.size()];
        for (std::size_t j = 0; j < cols.size(); ++j) {
            dst[j] = src[static_cast<std::size_t>(cols[j])];
        }
    }
    return out;
}

} // namespace sdc
