#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdc/datamodel.hpp"
#include "sdc/errors.hpp"
#include "sdc/matrix.hpp"
#include "sdc/rng.hpp"

namespace sdc {

// Parameters for a synthetic multi-participant dataset with planted concepts.
// Signal voxels respond with the projection of the item embedding onto their
// assigned concept direction; background voxels are pure noise.
struct PlantedSpec {
    int n_participants = 4;
    int n_voxels = 2000; // per participant
    int n_items = 3000;
    int n_concepts = 5;
    double noise_ceiling_target = 60.0; // percent, in (0, 100]
    double signal_fraction = 0.4;       // fraction of voxels assigned to concepts
    int n_shared_items = 413;           // fully-repeated items flagged as shared
    int n_sessions = 10;
    double separation_epsilon = 0.5;    // concept pair distance must exceed 2x this
    double session_offset_sigma = 0.0;  // optional additive per-(voxel, session) offset
    std::uint64_t seed = 0;

    void validate() const {
        if (n_participants < 2) throw InfeasibleSpec("synth: need >= 2 participants");
        if (n_voxels < 1 || n_items < 1 || n_concepts < 1) {
            throw InfeasibleSpec("synth: counts must be positive");
        }
        if (!(noise_ceiling_target > 0.0) || noise_ceiling_target > 100.0) {
            throw InfeasibleSpec("synth: noise_ceiling_target must be in (0, 100]");
        }
        if (signal_fraction <= 0.0 || signal_fraction > 1.0) {
            throw InfeasibleSpec("synth: signal_fraction must be in (0, 1]");
        }
        if (n_shared_items < 0 || n_shared_items > n_items) {
            throw InfeasibleSpec("synth: n_shared_items out of range");
        }
        if (n_sessions < 2) throw InfeasibleSpec("synth: need >= 2 sessions");
        if (static_cast<int>(signal_fraction * n_voxels) < n_concepts) {
            throw InfeasibleSpec("synth: too few signal voxels to cover all concepts");
        }
    }
};

struct SyntheticDataset {
    std::vector<ParticipantDataset> participants;
    MatrixF32 concept_vectors;                   // K x 512 unit rows
    std::vector<std::vector<int>> voxel_concept; // per participant, per voxel; -1 = background
    std::set<ItemId> shared_items;
};

namespace detail {

// K unit directions with pairwise cosine similarity exactly -1/(K-1): random
// orthonormal frame, centered, renormalized. This is the maximal mutual
// separation achievable by K unit vectors, so feasibility only depends on K.
inline MatrixF32 sample_concept_vectors(int k, double separation_epsilon, Rng& rng) {
    if (k > kEmbeddingDim) throw InfeasibleSpec("synth: more concepts than embedding dimensions");
    if (k >= 2) {
        const double best_dist = 1.0 + 1.0 / (k - 1);
        if (best_dist <= 2.0 * separation_epsilon) {
            throw InfeasibleSpec("synth: " + std::to_string(k) +
                                 " concepts cannot be separated by more than 2 x " +
                                 std::to_string(separation_epsilon) + " in cosine distance");
        }
    }

    Eigen::MatrixXd basis(k, kEmbeddingDim);
    for (int i = 0; i < k; ++i) {
        // Gram-Schmidt against previous rows; resample on (vanishingly rare)
        // near-degeneracy.
        while (true) {
            for (int j = 0; j < kEmbeddingDim; ++j) basis(i, j) = rng.normal();
            for (int p = 0; p < i; ++p) basis.row(i) -= basis.row(i).dot(basis.row(p)) * basis.row(p);
            const double norm = basis.row(i).norm();
            if (norm > 1e-6) {
                basis.row(i) /= norm;
                break;
            }
        }
    }
    if (k >= 2) {
        const Eigen::RowVectorXd mean = basis.colwise().mean();
        basis.rowwise() -= mean;
        for (int i = 0; i < k; ++i) basis.row(i) /= basis.row(i).norm();
    }
    return MatrixF32::from_eigen(basis.cast<float>());
}

} // namespace detail

// Deterministic dataset generation. Items get i.i.d. Gaussian embeddings;
// every item is presented three times, spread over the sessions. Per-trial
// noise is scaled so the analytic noise ceiling of a signal voxel equals
// noise_ceiling_target:  sigma_n^2 = 3 * (100 - t) / t  (signal variance 1).
inline SyntheticDataset generate_dataset(const PlantedSpec& spec) {
    spec.validate();
    SyntheticDataset out;

    Rng concept_rng(mix_seed(spec.seed, {hash_tag("concepts")}));
    out.concept_vectors =
        detail::sample_concept_vectors(spec.n_concepts, spec.separation_epsilon, concept_rng);

    Rng item_rng(mix_seed(spec.seed, {hash_tag("items")}));
    MatrixF32 targets(spec.n_items, kEmbeddingDim);
    for (float& v : targets.data) v = item_rng.normal_f();
    for (ItemId i = 0; i < spec.n_shared_items; ++i) out.shared_items.insert(i);

    const double t = spec.noise_ceiling_target;
    const double noise_sigma = std::sqrt(static_cast<double>(kMaxRepeats) * (100.0 - t) / t);

    const std::size_t n_trials = static_cast<std::size_t>(spec.n_items) * kMaxRepeats;
    const std::size_t session_len =
        (n_trials + static_cast<std::size_t>(spec.n_sessions) - 1) / spec.n_sessions;
    if (session_len < 2) throw InfeasibleSpec("synth: sessions would have fewer than 2 trials");

    // Precompute item-to-concept projections once; shared across participants.
    Eigen::MatrixXf projections(spec.n_items, spec.n_concepts); // <y_i, c_k>
    projections.noalias() = targets.map() * out.concept_vectors.map().transpose();

    for (int p = 1; p <= spec.n_participants; ++p) {
        Rng rng(mix_seed(spec.seed, {hash_tag("participant"), static_cast<std::uint64_t>(p)}));

        // Voxel -> concept assignment: a seeded shuffle picks the signal
        // voxels, concepts go round-robin so coverage is balanced.
        std::vector<VoxelId> order(spec.n_voxels);
        for (int v = 0; v < spec.n_voxels; ++v) order[v] = v;
        rng.shuffle(order);
        const int n_signal = static_cast<int>(spec.signal_fraction * spec.n_voxels);
        std::vector<int> assignment(spec.n_voxels, -1);
        for (int s = 0; s < n_signal; ++s) {
            assignment[static_cast<std::size_t>(order[s])] = s % spec.n_concepts;
        }

        ParticipantDataset ds;
        ds.participant_id = p;
        ds.targets = targets;
        ds.trials.rows.reserve(n_trials);
        for (int r = 0; r < kMaxRepeats; ++r) {
            for (int i = 0; i < spec.n_items; ++i) {
                TrialRow row;
                row.trial_id = static_cast<std::int64_t>(r) * spec.n_items + i;
                row.item_id = i;
                row.session_id = static_cast<int>(static_cast<std::size_t>(row.trial_id) / session_len);
                row.repeat_index = r;
                ds.trials.rows.push_back(row);
            }
        }

        std::vector<std::vector<float>> session_offset;
        if (spec.session_offset_sigma > 0.0) {
            session_offset.assign(spec.n_voxels, std::vector<float>(spec.n_sessions, 0.0f));
            for (int v = 0; v < spec.n_voxels; ++v) {
                for (int s = 0; s < spec.n_sessions; ++s) {
                    session_offset[v][s] =
                        static_cast<float>(spec.session_offset_sigma * rng.normal());
                }
            }
        }

        ds.responses = MatrixF32(n_trials, spec.n_voxels);
        for (std::size_t trial = 0; trial < n_trials; ++trial) {
            const TrialRow& tr = ds.trials.rows[trial];
            float* row = &ds.responses.data[trial * spec.n_voxels];
            for (int v = 0; v < spec.n_voxels; ++v) {
                const int concept_id = assignment[v];
                double x;
                if (concept_id >= 0) {
                    x = projections(static_cast<Eigen::Index>(tr.item_id), concept_id) +
                        noise_sigma * rng.normal();
                } else {
                    x = rng.normal();
                }
                if (!session_offset.empty()) x += session_offset[v][tr.session_id];
                row[v] = static_cast<float>(x);
            }
        }

        out.voxel_concept.push_back(std::move(assignment));
        out.participants.push_back(std::move(ds));
    }
    return out;
}

// Emits the on-disk layout the pipeline's prepare stage consumes, plus the
// planted ground truth for validation.
inline void write_dataset(const SyntheticDataset& data, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "items");

    save_matrix(data.participants.front().targets, root / "items" / "targets.f32",
                "target_embeddings");
    {
        std::ofstream out(root / "items" / "shared_items.csv", std::ios::trunc);
        if (!out) throw Error("cannot write shared_items.csv");
        out << "item_id\n";
        for (ItemId id : data.shared_items) out << id << '\n';
    }
    save_matrix(data.concept_vectors, root / "concept_vectors.f32", "planted_concepts");
    {
        std::ofstream out(root / "ground_truth.csv", std::ios::trunc);
        if (!out) throw Error("cannot write ground_truth.csv");
        out << "participant_id,voxel_id,concept_id\n";
        for (std::size_t k = 0; k < data.participants.size(); ++k) {
            const int pid = data.participants[k].participant_id;
            const auto& assignment = data.voxel_concept[k];
            for (std::size_t v = 0; v < assignment.size(); ++v) {
                out << pid << ',' << v << ',' << assignment[v] << '\n';
            }
        }
    }
    for (const ParticipantDataset& ds : data.participants) {
        const fs::path pdir = root / ("participant_" + std::to_string(ds.participant_id));
        fs::create_directories(pdir);
        save_matrix(ds.responses, pdir / "responses.f32", "responses");
        save_trials_csv(ds.trials, pdir / "trials.csv");
    }
}

} // namespace sdc
