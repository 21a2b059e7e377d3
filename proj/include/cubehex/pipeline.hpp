#pragma once

#include "cubehex/session_io.hpp"

#include <functional>

namespace cubehex
{

/// Every weight, step count and seed of a full run. Text form is one `key = value` per line.
struct PipelineConfig
{
    std::uint64_t seed = 0;

    int deform_steps = 500;
    double deform_lr = 1e-3;
    DeformWeights deform;

    int polycube_steps = 300;
    double polycube_lr = 1e-3;
    PolycubeWeights polycube;
    int anchor_grid = 16;
    int anchor_samples = 4096;
    double anchor_sigma = 0.02;    // times the deformed bbox diagonal
    double min_half = 1e-3;        // times the deformed bbox diagonal
    int suggest_grid = 32;
    int max_cuboids = 8;
    double min_add_fraction = 0.02;  // stop adding once the best box is this small vs the bbox volume

    double voxel_cell = 0.0;  // 0: deformed bbox diagonal / 40
    bool allow_topology_override = false;
    bool pad = false;

    int pullback_steps = 800;
    double pullback_lr = 1e-4;
    PullbackWeights pullback;

    int quality_steps = 1000;
    double quality_lr = 1e-4;
    QualityWeights quality;
    SurfaceMode mode = SurfaceMode::Free;

    int report_samples = 50000;
};

/// Throws Config naming the line for unknown keys, repeated keys or unparsable values.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
/// All keys with their current values; parse_config(format_config(c)) == c.
std::string format_config(const PipelineConfig& config);
std::vector<std::string> config_keys();
/// Sets one key; throws Config.
void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value);

/// Per-stage seed derived from the base seed.
std::uint64_t stage_seed(std::uint64_t base, Stage stage);

/// Starts a session from a normalized input mesh.
Session new_session(TetMesh input, const Normalization& transform, std::uint64_t seed);

/// Drops artifacts downstream of `stage` and moves the cursor back to it if it is ahead.
void truncate_session(Session& session, Stage stage);

TetMesh deformed_mesh(const Session& session);
/// Lattice connectivity at the newest positions.
HexMesh current_hex(const Session& session);

struct StageResult
{
    LoopResult loop;  // empty for stages without an optimizer
    Notices notices;
};

StageResult run_deform(Session& s, const PipelineConfig& c, const RunControl& control = {},
                       const LiveValue<DeformWeights>* live = nullptr);
/// Anchors from the deformed mesh, then repeated volume-mode Add + Reoptimize until the best
/// box is small, max_cuboids is reached, or the shape is covered.
StageResult fit_polycube(Session& s, const PipelineConfig& c, const RunControl& control = {},
                         const LiveValue<PolycubeWeights>* live = nullptr);
/// Reoptimizes the session's existing cuboids against fresh anchors.
StageResult reoptimize_polycube(Session& s, const PipelineConfig& c, const RunControl& control = {},
                                const LiveValue<PolycubeWeights>* live = nullptr);
StageResult run_voxelize(Session& s, const PipelineConfig& c);
/// Builds the hex mesh from the session's (possibly edited) voxel grid.
StageResult rebuild_hex(Session& s, const PipelineConfig& c);
StageResult run_pullback(Session& s, const PipelineConfig& c, int phase, const RunControl& control = {},
                         const LiveValue<PullbackWeights>* live = nullptr);
/// Continues from an existing quality state (keeping mode and landmarks), else starts from the
/// phase-2 mesh. Config weights replace the stored ones.
StageResult run_quality(Session& s, const PipelineConfig& c, const RunControl& control = {},
                        const LiveValue<QualityWeights>* live = nullptr);

QualityReport session_report(const Session& s, const PipelineConfig& c);

/// Every stage in order with the config's settings. `on_stage` is told each stage name before
/// it starts.
Notices run_all(Session& s, const PipelineConfig& c, const std::function<void(const std::string&)>& on_stage = {});

} // namespace cubehex
