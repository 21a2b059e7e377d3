#pragma once

#include "cubehex/deform.hpp"
#include "cubehex/pullback.hpp"
#include "cubehex/quality.hpp"
#include "cubehex/voxelize.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>

namespace cubehex
{

// normalized = (p - center) * scale
struct Normalization
{
    Vec3 center = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
    Vec3 restore(const Vec3& q) const { return q / scale + center; }
    Points restore(const Points& points) const;
    bool identity() const { return scale == 1.0 && center.isZero(0.0); }
};

/// Centers the bounding box at the origin and scales its longest edge to 1.
Normalization fit_unit_box(const Points& points);

// Cells as read from a file, before any checks beyond index ranges.
struct RawMesh
{
    Points vertices;
    std::vector<std::array<int, 4>> tets;
    std::vector<std::array<int, 8>> hexes;
};

/// MEDIT .mesh reader. Surface elements (edges, triangles, quads, corners, ridges) are skipped.
/// Errors carry the 1-based line number.
RawMesh parse_medit(std::istream& in);
/// Legacy VTK ASCII unstructured grid reader; triangle, quad, line and vertex cells are skipped.
RawMesh parse_vtk(std::istream& in);

struct LoadedTetMesh
{
    TetMesh mesh;
    Normalization transform;  // identity when loaded without normalization
    Notices notices;
};

/// Reads .mesh or .vtk, reorients negative-volume tets (with a notice) and, when `normalize`,
/// maps the mesh into the unit box. Throws Io, Format or InvalidMesh.
LoadedTetMesh load_tet_mesh(const std::filesystem::path& path, bool normalize = true);
HexMesh load_hex_mesh(const std::filesystem::path& path);

/// Format chosen by extension: .mesh, .vtk, or .obj (boundary quads only for hex meshes,
/// boundary triangles for tet meshes). Positions are passed through `transform.restore`.
void save_hex_mesh(const std::filesystem::path& path, const HexMesh& mesh, const Normalization& transform = {});
void save_tet_mesh(const std::filesystem::path& path, const TetMesh& mesh, const Normalization& transform = {});

enum class Stage
{
    Empty,
    Input,
    Deformed,
    Decomposed,
    Voxelized,
    PullbackPhase1,
    PullbackPhase2,
    Optimized,
};

const char* to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct Session
{
    std::optional<TetMesh> input;  // normalized
    Normalization transform;
    std::optional<DeformationState> deformation;
    std::optional<PolyCube> polycube;
    std::vector<std::string> polycube_log;  // cuboid edits in order, free text
    std::optional<VoxelGrid> voxels;
    std::optional<HexMesh> hex;  // lattice (possibly padded) hex mesh fed to the pullback
    std::optional<PullbackState> pullback;
    std::optional<QualityState> quality;
    Stage cursor = Stage::Empty;
    std::map<std::string, std::uint64_t> seeds;

    /// Positions of the newest hex mesh: quality, then phase 2, then phase 1, then the lattice.
    Points hex_positions() const;
    /// Throws State if the cursor points past an artifact that is missing or inconsistent.
    void check() const;
};

inline constexpr std::uint32_t session_format_version = 1;

/// Archive: magic "CHXSESS\0", u32 version, u64 manifest size, JSON manifest, u64 blob size,
/// little-endian blob, u32 crc32 of everything before it.
std::string encode_session(const Session& session);
Session decode_session(const std::string& bytes);

void save_session(const std::filesystem::path& path, const Session& session);
Session load_session(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// Table-style text block and its JSON twin.
std::string format_report(const QualityReport& report, int n_hexes);
std::string report_json(const QualityReport& report, int n_hexes);

} // namespace cubehex
