#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdc/clustering.hpp"
#include "sdc/concepts.hpp"
#include "sdc/config.hpp"
#include "sdc/datamodel.hpp"
#include "sdc/decoder.hpp"
#include "sdc/errors.hpp"
#include "sdc/evaluation.hpp"
#include "sdc/manifest.hpp"
#include "sdc/matrix.hpp"
#include "sdc/ridge.hpp"
#include "sdc/synth.hpp"

namespace sdc {

enum class Stage { Synth, Prepare, Train, Evaluate, Cluster, Interpret, Report };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::Synth: return "synth";
        case Stage::Prepare: return "prepare";
        case Stage::Train: return "train";
        case Stage::Evaluate: return "evaluate";
        case Stage::Cluster: return "cluster";
        case Stage::Interpret: return "interpret";
        case Stage::Report: return "report";
    }
    return "?";
}

inline Stage stage_from_name(const std::string& s) {
    for (Stage st : {Stage::Synth, Stage::Prepare, Stage::Train, Stage::Evaluate, Stage::Cluster,
                     Stage::Interpret, Stage::Report}) {
        if (s == stage_name(st)) return st;
    }
    throw ConfigInvalid("unknown stage: " + s);
}

struct StageOutcome {
    bool skipped = false; // manifest was current; nothing re-run
    std::filesystem::path stage_dir;
    double wall_time_sec = 0.0;
};

inline std::string format_epsilon(double e) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", e);
    return buf;
}

// Runs pipeline stages with content-addressed output directories. Each stage
// hash covers the parameters that stage depends on plus the hashes of its
// upstream stages, so changing the clustering grid re-runs clustering but
// leaves trained decoders untouched.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const PipelineConfig& config() const { return cfg_; }

    std::string stage_hash(Stage s) const {
        std::ostringstream os;
        os.precision(17);
        os << "schema=" << kConfigSchemaVersion << ";stage=" << stage_name(s) << ";seed=" << cfg_.seed
           << ';';
        switch (s) {
            case Stage::Synth:
                os << "participants=" << cfg_.synth.n_participants << ";voxels=" << cfg_.synth.n_voxels
                   << ";items=" << cfg_.synth.n_items << ";concepts=" << cfg_.synth.n_concepts
                   << ";nc=" << cfg_.synth.noise_ceiling_target
                   << ";signal=" << cfg_.synth.signal_fraction
                   << ";shared=" << cfg_.synth.n_shared_items << ";sessions=" << cfg_.synth.n_sessions
                   << ";sep=" << cfg_.synth.separation_epsilon
                   << ";offset=" << cfg_.synth.session_offset_sigma << ";synthseed=" << cfg_.synth.seed;
                break;
            case Stage::Prepare:
                os << "threshold=" << cfg_.voxel_threshold;
                break;
            case Stage::Train:
                os << "prepare=" << stage_hash(Stage::Prepare) << ";iters=" << cfg_.train.iterations
                   << ";batch=" << cfg_.train.batch_size << ";lr=" << cfg_.train.learning_rate
                   << ";tau=" << cfg_.train.temperature << ";sigma=" << cfg_.train.noise_sigma
                   << ";restarts=" << cfg_.ensemble_restarts << ";lambdas=";
                for (double l : cfg_.ridge_lambda_grid) os << l << ',';
                break;
            case Stage::Evaluate:
                os << "train=" << stage_hash(Stage::Train) << ";k=";
                for (int k : cfg_.k_values) os << k << ',';
                break;
            case Stage::Cluster:
                os << "train=" << stage_hash(Stage::Train) << ";eps=";
                for (double e : cfg_.epsilon_grid) os << e << ',';
                os << ";minneigh=" << cfg_.min_neighbors << ";expstep=" << cfg_.epsilon_expansion_step
                   << ";expcap=" << cfg_.epsilon_expansion_cap;
                break;
            case Stage::Interpret:
                os << "cluster=" << stage_hash(Stage::Cluster)
                   << ";evaluate=" << stage_hash(Stage::Evaluate)
                   << ";images=" << cfg_.representative_images
                   << ";captions=" << cfg_.representative_captions;
                break;
            case Stage::Report:
                os << "evaluate=" << stage_hash(Stage::Evaluate)
                   << ";cluster=" << stage_hash(Stage::Cluster)
                   << ";interpret=" << stage_hash(Stage::Interpret);
                break;
        }
        return hash_string(os.str());
    }

    std::filesystem::path stage_dir(Stage s) const {
        return cfg_.output_root / stage_name(s) / stage_hash(s).substr(0, 12);
    }

    StageOutcome run(Stage s) {
        const std::string hash = stage_hash(s);
        const std::filesystem::path dir = stage_dir(s);
        if (!cfg_.force && stage_is_current(dir, hash)) {
            return {true, dir, 0.0};
        }
        std::filesystem::create_directories(dir);

        Manifest m;
        m.stage = stage_name(s);
        m.stage_hash = hash;
        m.seed = cfg_.seed;
        const auto t0 = std::chrono::steady_clock::now();
        switch (s) {
            case Stage::Synth: run_synth(dir, m); break;
            case Stage::Prepare: run_prepare(dir, m); break;
            case Stage::Train: run_train(dir, m); break;
            case Stage::Evaluate: run_evaluate(dir, m); break;
            case Stage::Cluster: run_cluster(dir, m); break;
            case Stage::Interpret: run_interpret(dir, m); break;
            case Stage::Report: run_report(dir, m); break;
        }
        m.wall_time_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        save_manifest(m, dir);
        return {false, dir, m.wall_time_sec};
    }

private:
    PipelineConfig cfg_;

    static void record(std::map<std::string, std::string>& target,
                       const std::filesystem::path& path) {
        target[path.string()] = hash_file(path);
    }
    static void record_matrix(std::map<std::string, std::string>& target,
                              const std::filesystem::path& path) {
        record(target, path);
        record(target, sidecar_path(path));
    }

    // Upstream gate: the stage must have a manifest for the expected hash and
    // all of its recorded files must still match (chain integrity).
    std::filesystem::path require_stage(Stage s) const {
        const std::filesystem::path dir = stage_dir(s);
        if (!stage_is_current(dir, stage_hash(s))) {
            throw MissingUpstream(std::string("stage '") + stage_name(s) +
                                  "' artifacts missing or stale under " + dir.string() +
                                  " - run that stage first");
        }
        return dir;
    }

    std::vector<int> participants_in(const std::filesystem::path& root,
                                     const std::string& prefix) const {
        std::vector<int> ids;
        std::error_code ec;
        for (const auto& entry : std::filesystem::directory_iterator(root, ec)) {
            if (!entry.is_directory()) continue;
            const std::string name = entry.path().filename().string();
            if (name.rfind(prefix, 0) == 0) {
                try {
                    ids.push_back(std::stoi(name.substr(prefix.size())));
                } catch (const std::exception&) {
                }
            }
        }
        std::sort(ids.begin(), ids.end());
        if (ids.empty()) {
            throw MissingUpstream("no participant directories ('" + prefix + "<id>') under " +
                                  root.string());
        }
        return ids;
    }

    // ---- synth ---------------------------------------------------------

    void run_synth(const std::filesystem::path& dir, Manifest& m) {
        const SyntheticDataset data = generate_dataset(cfg_.synth);
        write_dataset(data, cfg_.data_root);

        record(m.outputs, cfg_.data_root / "items" / "shared_items.csv");
        record_matrix(m.outputs, cfg_.data_root / "items" / "targets.f32");
        record_matrix(m.outputs, cfg_.data_root / "concept_vectors.f32");
        record(m.outputs, cfg_.data_root / "ground_truth.csv");
        for (const ParticipantDataset& p : data.participants) {
            const auto pdir = cfg_.data_root / ("participant_" + std::to_string(p.participant_id));
            record_matrix(m.outputs, pdir / "responses.f32");
            record(m.outputs, pdir / "trials.csv");
        }
        {
            // no paths in here: artifacts must be byte-identical across roots
            std::ofstream note(dir / "synth.json", std::ios::trunc);
            note << nlohmann::json{{"participants", cfg_.synth.n_participants},
                                   {"concepts", cfg_.synth.n_concepts},
                                   {"items", cfg_.synth.n_items},
                                   {"voxels", cfg_.synth.n_voxels},
                                   {"seed", cfg_.synth.seed}}
                        .dump(2)
                 << "\n";
        }
        record(m.outputs, dir / "synth.json");
    }

    // ---- prepare -------------------------------------------------------

    void run_prepare(const std::filesystem::path& dir, Manifest& m) {
        const std::filesystem::path targets_path = cfg_.data_root / "items" / "targets.f32";
        const std::filesystem::path shared_path = cfg_.data_root / "items" / "shared_items.csv";
        if (!std::filesystem::exists(targets_path) || !std::filesystem::exists(shared_path)) {
            throw MissingUpstream("prepare: raw dataset not found under " + cfg_.data_root.string() +
                                  " (expected items/targets.f32 and items/shared_items.csv)");
        }
        const MatrixF32 targets = load_matrix(targets_path);
        record_matrix(m.inputs, targets_path);

        std::set<ItemId> shared;
        for (const auto& row : read_csv(shared_path, "item_id")) {
            shared.insert(parse_ll(row.at(0), "item_id"));
        }
        record(m.inputs, shared_path);

        for (int pid : participants_in(cfg_.data_root, "participant_")) {
            const auto raw = cfg_.data_root / ("participant_" + std::to_string(pid));
            const MatrixF32 responses = load_matrix(raw / "responses.f32");
            const TrialTable trials = load_trials_csv(raw / "trials.csv");
            trials.validate(responses.rows);
            record_matrix(m.inputs, raw / "responses.f32");
            record(m.inputs, raw / "trials.csv");

            const FoldAssignment folds = split_folds(
                trials, shared, mix_seed(cfg_.seed, {hash_tag("folds"), static_cast<std::uint64_t>(pid)}));

            // Noise ceiling from raw training trials only, then selection,
            // then session z-scoring of the selected columns over all trials.
            const FoldView train_view = restrict_to_fold(responses, trials, folds, Fold::Train);
            const std::vector<float> nc = compute_noise_ceiling(train_view.responses, train_view.trials);
            const std::vector<VoxelId> selected = select_voxels(nc, cfg_.voxel_threshold);
            const MatrixF32 normalized =
                normalize_by_session(select_columns(responses, selected), trials);

            const auto pdir = dir / ("p" + std::to_string(pid));
            std::filesystem::create_directories(pdir);

            MatrixF32 nc_mat(1, nc.size());
            nc_mat.data = nc;
            save_matrix(nc_mat, pdir / "noise_ceiling.f32", "noise_ceiling_percent");
            {
                std::ofstream out(pdir / "selected_voxels.csv", std::ios::trunc);
                out << "voxel_id\n";
                for (VoxelId v : selected) out << v << '\n';
            }
            save_folds_csv(folds, pdir / "folds.csv");

            for (Fold f : {Fold::Train, Fold::Val, Fold::Test}) {
                const FoldView view = restrict_to_fold(normalized, trials, folds, f);
                MatrixF32 Y(view.trials.size(), targets.cols);
                for (std::size_t r = 0; r < view.trials.size(); ++r) {
                    const ItemId item = view.trials.rows[r].item_id;
                    if (item < 0 || static_cast<std::size_t>(item) >= targets.rows) {
                        throw Error("prepare: item_id " + std::to_string(item) +
                                    " has no target row");
                    }
                    std::copy(&targets.data[static_cast<std::size_t>(item) * targets.cols],
                              &targets.data[(static_cast<std::size_t>(item) + 1) * targets.cols],
                              &Y.data[r * targets.cols]);
                }
                const std::string tag = fold_name(f);
                save_matrix(view.responses, pdir / ("X_" + tag + ".f32"), "responses_" + tag);
                save_matrix(Y, pdir / ("Y_" + tag + ".f32"), "targets_" + tag);
                save_trials_csv(view.trials, pdir / ("trials_" + tag + ".csv"));
                record_matrix(m.outputs, pdir / ("X_" + tag + ".f32"));
                record_matrix(m.outputs, pdir / ("Y_" + tag + ".f32"));
                record(m.outputs, pdir / ("trials_" + tag + ".csv"));
            }
            record_matrix(m.outputs, pdir / "noise_ceiling.f32");
            record(m.outputs, pdir / "selected_voxels.csv");
            record(m.outputs, pdir / "folds.csv");
        }
    }

    // ---- train ---------------------------------------------------------

    void run_train(const std::filesystem::path& dir, Manifest& m) {
        const std::filesystem::path prep = require_stage(Stage::Prepare);

        for (int pid : participants_in(prep, "p")) {
            const auto pprep = prep / ("p" + std::to_string(pid));
            const MatrixF32 X_train = load_matrix(pprep / "X_train.f32");
            const MatrixF32 Y_train = load_matrix(pprep / "Y_train.f32");
            const MatrixF32 X_val = load_matrix(pprep / "X_val.f32");
            const MatrixF32 Y_val = load_matrix(pprep / "Y_val.f32");
            for (const char* f : {"X_train.f32", "Y_train.f32", "X_val.f32", "Y_val.f32"}) {
                record_matrix(m.inputs, pprep / f);
            }
            std::vector<VoxelId> voxel_map;
            for (const auto& row : read_csv(pprep / "selected_voxels.csv", "voxel_id")) {
                voxel_map.push_back(parse_ll(row.at(0), "voxel_id"));
            }
            record(m.inputs, pprep / "selected_voxels.csv");

            const EnsembleSpec ensemble = EnsembleSpec::from_base_seed(
                cfg_.ensemble_restarts,
                mix_seed(cfg_.seed, {hash_tag("train"), static_cast<std::uint64_t>(pid)}));
            ensemble.validate();

            std::vector<LinearDecoder> restarts(ensemble.restarts);
            std::vector<TrainDiagnostics> diags(ensemble.restarts);
            run_parallel(ensemble.restarts, [&](int r) {
                TrainConfig tc = cfg_.train;
                tc.seed = ensemble.seeds[static_cast<std::size_t>(r)];
                restarts[r] = train_contrastive(X_train, Y_train, X_val, Y_val, tc, pid, voxel_map,
                                                &diags[r]);
            });
            const LinearDecoder averaged = ensemble_average(restarts);

            nlohmann::json losses_train = nlohmann::json::array();
            nlohmann::json losses_val = nlohmann::json::array();
            for (const TrainDiagnostics& d : diags) {
                losses_train.push_back(d.final_train_loss);
                losses_val.push_back(d.final_val_loss);
            }
            const auto pdir = dir / ("p" + std::to_string(pid));
            std::filesystem::create_directories(pdir);
            save_decoder(averaged, pdir / "decoder.f32",
                         {{"train_config", cfg_.train.to_json()},
                          {"seeds", ensemble.seeds},
                          {"restarts", ensemble.restarts},
                          {"final_losses", {{"train", losses_train}, {"val", losses_val}}},
                          {"seed", cfg_.seed}});
            record_matrix(m.outputs, pdir / "decoder.f32");

            const RidgeResult ridge = train_ridge(X_train, Y_train, cfg_.ridge_lambda_grid, X_val,
                                                  Y_val, pid, voxel_map);
            nlohmann::json grid = nlohmann::json::array();
            for (const auto& [lambda, score] : ridge.grid_scores) {
                grid.push_back({{"lambda", lambda}, {"val_top1", score}});
            }
            save_decoder(ridge.decoder, pdir / "ridge.f32",
                         {{"lambda", ridge.lambda}, {"val_top1", ridge.val_top1},
                          {"grid_scores", grid}});
            record_matrix(m.outputs, pdir / "ridge.f32");
        }
    }

    // ---- evaluate ------------------------------------------------------

    void run_evaluate(const std::filesystem::path& dir, Manifest& m) {
        const std::filesystem::path prep = require_stage(Stage::Prepare);
        const std::filesystem::path train = require_stage(Stage::Train);

        for (int pid : participants_in(train, "p")) {
            const auto pprep = prep / ("p" + std::to_string(pid));
            const auto ptrain = train / ("p" + std::to_string(pid));
            const MatrixF32 X_test = load_matrix(pprep / "X_test.f32");
            const MatrixF32 Y_test = load_matrix(pprep / "Y_test.f32");
            const TrialTable trials_test = load_trials_csv(pprep / "trials_test.csv");
            record_matrix(m.inputs, pprep / "X_test.f32");
            record_matrix(m.inputs, pprep / "Y_test.f32");
            record(m.inputs, pprep / "trials_test.csv");

            const auto pdir = dir / ("p" + std::to_string(pid));
            std::filesystem::create_directories(pdir);

            for (const char* model : {"decoder", "ridge"}) {
                const LinearDecoder d = load_decoder(ptrain / (std::string(model) + ".f32"));
                record_matrix(m.inputs, ptrain / (std::string(model) + ".f32"));

                const MatrixF32 yhat = predict(d, X_test);
                const MatrixF32 yhat_avg = average_repeats(yhat, trials_test);
                const MatrixF32 y_avg = average_repeats(Y_test, trials_test);
                RetrievalReport rep = topk_accuracy(yhat_avg, y_avg, cfg_.k_values);
                rep.participant_id = pid;

                const std::string tag = std::string(model) == "decoder" ? "contrastive" : "ridge";
                save_report(rep, pdir / ("retrieval_" + tag + ".json"));
                record(m.outputs, pdir / ("retrieval_" + tag + ".json"));
                if (tag == "contrastive") {
                    // Per-trial test predictions feed the interpret stage.
                    save_matrix(yhat, pdir / "yhat_test_trials.f32", "decoded_test_embeddings");
                    record_matrix(m.outputs, pdir / "yhat_test_trials.f32");
                }
            }
        }
    }

    // ---- cluster -------------------------------------------------------

    void run_cluster(const std::filesystem::path& dir, Manifest& m) {
        const std::filesystem::path train = require_stage(Stage::Train);

        std::vector<LinearDecoder> decoders;
        for (int pid : participants_in(train, "p")) {
            const auto path = train / ("p" + std::to_string(pid)) / "decoder.f32";
            decoders.push_back(load_decoder(path));
            record_matrix(m.inputs, path);
        }
        const ConceptPointSet points = concept_points_from_decoders(decoders);
        const int participants = distinct_participants(points);
        if (participants < 2) {
            throw TooFewParticipants("cluster: need decoder checkpoints from >= 2 participants");
        }
        if (cfg_.min_neighbors > participants - 1) {
            throw TooFewParticipants(
                "cluster: min_neighbors = " + std::to_string(cfg_.min_neighbors) +
                " exceeds participant count - 1 = " + std::to_string(participants - 1));
        }

        for (double eps : cfg_.epsilon_grid) {
            const DbscanConfig dc = cfg_.dbscan_for(eps);
            const ClusterResult res = run_sdc_dbscan(points, dc);
            const std::string label = format_epsilon(eps);
            save_clusters_csv(points, res, dir / ("clusters_eps" + label + ".csv"));
            std::ofstream out(dir / ("summary_eps" + label + ".json"), std::ios::trunc);
            out << cluster_summary(points, res, dc).dump(2) << "\n";
            out.close();
            record(m.outputs, dir / ("clusters_eps" + label + ".csv"));
            record(m.outputs, dir / ("summary_eps" + label + ".json"));
        }
    }

    // ---- interpret -----------------------------------------------------

    void run_interpret(const std::filesystem::path& dir, Manifest& m) {
        const std::filesystem::path prep = require_stage(Stage::Prepare);
        const std::filesystem::path train = require_stage(Stage::Train);
        const std::filesystem::path cluster = require_stage(Stage::Cluster);
        const std::filesystem::path eval = require_stage(Stage::Evaluate);

        const std::vector<int> pids = participants_in(train, "p");

        // Pooled decoded test embeddings over the shared test items.
        std::vector<MatrixF32> preds;
        std::vector<TrialTable> tables;
        std::vector<ItemId> shared_test;
        for (std::size_t i = 0; i < pids.size(); ++i) {
            const auto peval = eval / ("p" + std::to_string(pids[i]));
            const auto pprep = prep / ("p" + std::to_string(pids[i]));
            preds.push_back(load_matrix(peval / "yhat_test_trials.f32"));
            tables.push_back(load_trials_csv(pprep / "trials_test.csv"));
            record_matrix(m.inputs, peval / "yhat_test_trials.f32");
            record(m.inputs, pprep / "trials_test.csv");
            if (i == 0) {
                const FoldAssignment folds = load_folds_csv(pprep / "folds.csv");
                record(m.inputs, pprep / "folds.csv");
                for (ItemId id : folds.items_in_fold(Fold::Test)) {
                    if (folds.is_shared(id)) shared_test.push_back(id);
                }
            }
        }
        std::vector<const MatrixF32*> pred_ptrs;
        std::vector<const TrialTable*> table_ptrs;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            pred_ptrs.push_back(&preds[i]);
            table_ptrs.push_back(&tables[i]);
        }
        const MatrixF32 pool = averaged_decoded_embeddings(pred_ptrs, table_ptrs, shared_test);

        // Optional caption corpus for word tables.
        const std::filesystem::path captions_txt = cfg_.data_root / "captions.txt";
        const std::filesystem::path captions_emb = cfg_.data_root / "caption_embeddings.f32";
        std::vector<std::string> caption_texts;
        MatrixF32 caption_matrix;
        bool have_captions = false;
        if (std::filesystem::exists(captions_txt) && std::filesystem::exists(captions_emb)) {
            std::ifstream in(captions_txt);
            std::string line;
            while (std::getline(in, line)) caption_texts.push_back(line);
            caption_matrix = load_matrix(captions_emb);
            if (caption_matrix.rows != caption_texts.size()) {
                throw Error("interpret: captions.txt line count != caption_embeddings.f32 rows");
            }
            have_captions = caption_matrix.rows > 0;
            record(m.inputs, captions_txt);
            record_matrix(m.inputs, captions_emb);
        }

        std::vector<LinearDecoder> decoders;
        for (int pid : pids) {
            const auto path = train / ("p" + std::to_string(pid)) / "decoder.f32";
            decoders.push_back(load_decoder(path));
            record_matrix(m.inputs, path);
        }
        const ConceptPointSet points = concept_points_from_decoders(decoders);

        for (double eps : cfg_.epsilon_grid) {
            const std::string label = format_epsilon(eps);
            const ClusterResult res =
                load_clusters_csv(cluster / ("clusters_eps" + label + ".csv"), points);
            record(m.inputs, cluster / ("clusters_eps" + label + ".csv"));

            nlohmann::json reps = nlohmann::json::array();
            std::vector<std::pair<int, WordTables>> word_tables;
            for (std::size_t c = 0; c < res.clusters.size(); ++c) {
                const ConceptCentroid centroid =
                    cluster_centroid(points, res.clusters[c], static_cast<int>(c));
                if (centroid.degenerate) {
                    reps.push_back({{"cluster_id", c}, {"degenerate", true}});
                    continue;
                }
                const RepresentativeSet rs = representative_items(
                    centroid, pool, shared_test, static_cast<std::size_t>(cfg_.representative_images));
                reps.push_back(rs.to_json());
                if (have_captions &&
                    static_cast<std::size_t>(cfg_.representative_captions) <= caption_matrix.rows) {
                    word_tables.emplace_back(
                        static_cast<int>(c),
                        caption_word_counts(centroid, caption_matrix, caption_texts,
                                            static_cast<std::size_t>(cfg_.representative_captions)));
                }
            }
            std::ofstream out(dir / ("representatives_eps" + label + ".json"), std::ios::trunc);
            out << nlohmann::json{{"epsilon", eps}, {"clusters", reps}}.dump(2) << "\n";
            out.close();
            record(m.outputs, dir / ("representatives_eps" + label + ".json"));
            if (!word_tables.empty()) {
                save_word_tables_csv(word_tables, dir / ("words_eps" + label + ".csv"));
                record(m.outputs, dir / ("words_eps" + label + ".csv"));
            }
        }
    }

    // ---- report --------------------------------------------------------

    void run_report(const std::filesystem::path& dir, Manifest& m) {
        const std::filesystem::path eval = require_stage(Stage::Evaluate);
        const std::filesystem::path cluster = require_stage(Stage::Cluster);
        const std::filesystem::path interp = require_stage(Stage::Interpret);

        const std::vector<int> pids = participants_in(eval, "p");

        std::ofstream curves(dir / "topk_curves.csv", std::ios::trunc);
        curves << "participant_id,model,k,accuracy,chance\n";
        std::map<int, std::map<std::string, RetrievalReport>> reports;
        for (int pid : pids) {
            for (const std::string model : {"contrastive", "ridge"}) {
                const auto path = eval / ("p" + std::to_string(pid)) / ("retrieval_" + model + ".json");
                const RetrievalReport r = load_report(path);
                record(m.inputs, path);
                reports[pid][model] = r;
                for (std::size_t i = 0; i < r.k_values.size(); ++i) {
                    curves << pid << ',' << model << ',' << r.k_values[i] << ',' << r.accuracy[i]
                           << ',' << r.chance[i] << '\n';
                }
            }
        }
        curves.close();
        record(m.outputs, dir / "topk_curves.csv");

        std::ofstream md(dir / "report.md", std::ios::trunc);
        md << "# Pipeline report\n\n";
        md << "- seed: " << cfg_.seed << "\n";
        md << "- participants: " << pids.size() << "\n";
        md << "- stage hashes: prepare " << stage_hash(Stage::Prepare).substr(0, 12) << ", train "
           << stage_hash(Stage::Train).substr(0, 12) << ", cluster "
           << stage_hash(Stage::Cluster).substr(0, 12) << "\n\n";

        md << "## Decoding accuracy (top-k retrieval)\n\n";
        md << "| participant | model |";
        for (int k : cfg_.k_values) md << " k=" << k << " |";
        md << "\n|---|---|";
        for (std::size_t i = 0; i < cfg_.k_values.size(); ++i) md << "---|";
        md << "\n";
        for (int pid : pids) {
            for (const std::string model : {"contrastive", "ridge"}) {
                md << "| " << pid << " | " << model << " |";
                for (double a : reports[pid][model].accuracy) {
                    char buf[32];
                    std::snprintf(buf, sizeof(buf), " %.4f |", a);
                    md << buf;
                }
                md << "\n";
            }
        }

        std::ofstream ccsv(dir / "clusters_summary.csv", std::ios::trunc);
        ccsv << "epsilon,cluster_id,size,core_points,participants\n";
        md << "\n## Clusters per epsilon\n\n";
        md << "| epsilon | clusters | outliers |\n|---|---|---|\n";
        for (double eps : cfg_.epsilon_grid) {
            const std::string label = format_epsilon(eps);
            const auto spath = cluster / ("summary_eps" + label + ".json");
            std::ifstream sin(spath);
            nlohmann::json summary;
            sin >> summary;
            record(m.inputs, spath);
            md << "| " << label << " | " << summary.at("n_clusters") << " | "
               << summary.at("n_outliers") << " |\n";
            for (const auto& c : summary.at("clusters")) {
                ccsv << label << ',' << c.at("cluster_id") << ',' << c.at("size") << ','
                     << c.at("core_points") << ',' << c.at("participants") << '\n';
            }
        }
        ccsv.close();
        record(m.outputs, dir / "clusters_summary.csv");

        md << "\n## Representative items\n\n";
        for (double eps : cfg_.epsilon_grid) {
            const std::string label = format_epsilon(eps);
            const auto rpath = interp / ("representatives_eps" + label + ".json");
            std::ifstream rin(rpath);
            nlohmann::json reps;
            rin >> reps;
            record(m.inputs, rpath);
            md << "### epsilon = " << label << "\n\n";
            for (const auto& c : reps.at("clusters")) {
                md << "- cluster " << c.at("cluster_id") << ": ";
                if (c.value("degenerate", false)) {
                    md << "degenerate centroid\n";
                    continue;
                }
                md << "positive items [";
                for (const auto& p : c.at("positives")) md << p.at("item_id") << ' ';
                md << "], negative items [";
                for (const auto& p : c.at("negatives")) md << p.at("item_id") << ' ';
                md << "]\n";
            }
            md << "\n";
        }
        md.close();
        record(m.outputs, dir / "report.md");
    }

    // Bounded worker pool over [0, count); exceptions rethrown in order.
    template <typename Fn>
    void run_parallel(int count, Fn&& fn) {
        const int workers = std::max(1, std::min(cfg_.jobs, count));
        if (workers == 1) {
            for (int i = 0; i < count; ++i) fn(i);
            return;
        }
        std::atomic<int> next{0};
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (std::thread& t : pool) t.join();
        for (const std::exception_ptr& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
};

} // namespace sdc
