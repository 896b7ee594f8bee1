// Command-line front end for the staged decoding/clustering pipeline.
//
// Exit codes: 0 success, 2 invalid configuration, 3 missing/stale upstream
// stage, 4 pipeline data error, 1 unexpected failure.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sdc/config.hpp"
#include "sdc/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitConfigInvalid = 2;
constexpr int kExitMissingUpstream = 3;
constexpr int kExitDataError = 4;

int run_stage_command(const std::string& stage, const std::string& config_path, int jobs,
                      bool force, bool has_seed, std::uint64_t seed) {
    sdc::PipelineConfig cfg = sdc::load_config(config_path);
    if (jobs > 0) cfg.jobs = jobs;
    if (force) cfg.force = true;
    if (has_seed) {
        cfg.seed = seed;
        cfg.synth.seed = sdc::mix_seed(seed, {sdc::hash_tag("synth")});
    }

    sdc::Pipeline pipeline(cfg);
    const sdc::StageOutcome outcome = pipeline.run(sdc::stage_from_name(stage));
    if (outcome.skipped) {
        std::cout << stage << ": up to date (" << outcome.stage_dir.string() << ")\n";
    } else {
        std::cout << stage << ": done in " << outcome.wall_time_sec << " s -> "
                  << outcome.stage_dir.string() << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shared decodable concept pipeline: train contrastive voxel decoders, cluster "
                 "their weight rows across participants, and interpret the clusters."};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    std::string config_path;
    int jobs = 0;
    bool force = false;
    std::uint64_t seed = 0;
    bool has_seed = false;
    app.add_option("--config", config_path, "Pipeline config file (key = value)")->required();
    app.add_option("--jobs", jobs, "Parallel training jobs (default: from config)");
    app.add_flag("--force", force, "Re-run the stage even if its manifest is current");
    auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");

    std::string chosen;
    for (const char* name : {"synth", "prepare", "train", "evaluate", "cluster", "interpret",
                             "report"}) {
        auto* sub = app.add_subcommand(name, std::string("Run the ") + name + " stage");
        sub->callback([&chosen, name] { chosen = name; });
    }

    CLI11_PARSE(app, argc, argv);
    has_seed = seed_opt->count() > 0;

    try {
        return run_stage_command(chosen, config_path, jobs, force, has_seed, seed);
    } catch (const sdc::ConfigInvalid& e) {
        std::cerr << "error (config): " << e.what() << "\n";
        return kExitConfigInvalid;
    } catch (const sdc::MissingUpstream& e) {
        std::cerr << "error (upstream): " << e.what() << "\n";
        return kExitMissingUpstream;
    } catch (const sdc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDataError;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return kExitUnexpected;
    }
}
