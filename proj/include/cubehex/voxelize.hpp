#pragma once

#include "cubehex/mesh.hpp"
#include "cubehex/polycube.hpp"

#include <optional>
#include <set>

namespace cubehex
{

using VoxelKey = std::array<int, 3>;

struct VoxelEdit
{
    bool add = true;
    std::vector<VoxelKey> changed;  // cells whose state actually flipped
};

/// Occupied cells of an integer lattice. Cell (i,j,k) spans origin + cell_size * [i,i+1] x ...
struct VoxelGrid
{
    double cell_size = 1.0;
    Vec3 origin = Vec3::Zero();
    std::set<VoxelKey> occupied;
    std::vector<VoxelEdit> log;

    bool contains(const VoxelKey& key) const { return occupied.count(key) > 0; }
    size_t size() const { return occupied.size(); }
};

/// Lattice spacing used when none is given: bounding-box diagonal / 40.
double default_cell_size(const Box3& box);

/// Rounds every cuboid corner to the nearest lattice plane (half away from zero) and marks the
/// cells whose centers fall inside a snapped cuboid. Cuboids that collapse to zero width are
/// dropped with a notice; throws State if nothing is left.
VoxelGrid snap_and_voxelize(const PolyCube& polycube, double cell_size, Notices* notices = nullptr);

struct VoxelTarget
{
    enum class Kind
    {
        Cell,
        Layer,
    };
    Kind kind = Kind::Cell;
    VoxelKey cell{0, 0, 0};
    int axis = 0;
    int index = 0;
    // Inclusive range over the two remaining axes (ascending axis order). Unset: the
    // bounding rectangle of the current occupancy.
    std::optional<std::array<int, 4>> region;

    static VoxelTarget single(const VoxelKey& key);
    static VoxelTarget layer(int axis, int index, std::optional<std::array<int, 4>> region = std::nullopt);
};

struct EditResult
{
    int changed = 0;
    Notices notices;
};

EditResult edit_voxels(VoxelGrid& grid, bool add, const VoxelTarget& target);
/// Reverts the last n logged edits. Returns how many were undone.
int undo_voxels(VoxelGrid& grid, int n = 1);

struct TopologyReport
{
    int components = 0;
    // Lattice edges given by their lower endpoint and axis.
    std::vector<std::pair<VoxelKey, int>> nonmanifold_edges;
    // Lattice vertices whose cell neighbourhood is not a disk and that lie on no
    // non-manifold edge.
    std::vector<VoxelKey> nonmanifold_vertices;

    bool clean() const { return components == 1 && nonmanifold_edges.empty() && nonmanifold_vertices.empty(); }
    std::string summary() const;
};

TopologyReport validate_topology(const VoxelGrid& grid);

/// One hex per voxel with welded lattice vertices. Throws InvalidMesh if the topology is not
/// clean unless `allow_override`, in which case the mesh is flagged.
HexMesh to_hex_mesh(const VoxelGrid& grid, bool allow_override = false);

/// Inserts one layer of hexes under the whole boundary. Original boundary vertices move inward
/// by half a cell along their averaged inward normal and the old positions become the new
/// boundary, so every boundary quad extrudes one hex. The offset is halved (up to 6 times)
/// while any corner tet would invert.
HexMesh global_pad(const HexMesh& mesh, Notices* notices = nullptr);

} // namespace cubehex
