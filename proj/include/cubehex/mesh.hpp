#pragma once

#include "cubehex/types.hpp"

#include <array>
#include <span>
#include <vector>

namespace cubehex
{

struct TetMesh
{
    Points vertices;
    std::vector<std::array<int, 4>> tets;
};

// Hex corners follow the VTK ordering: bottom quad 0-1-2-3 counter-clockwise when seen from
// the top quad, then 4-5-6-7 directly above.
//
//      7-------6
//     /|      /|
//    4-------5 |
//    | 3-----|-2
//    |/      |/
//    0-------1
struct HexMesh
{
    Points vertices;
    std::vector<std::array<int, 8>> hexes;
    // Edge length of the undeformed lattice the hexes came from. Corner-tet rest frames are
    // right-angle frames of this length.
    double cell_size = 1.0;
    // Set when the mesh was built from a voxel grid that failed topology validation.
    bool topology_override = false;
};

// Boundary surfaces keep their own compact vertex array plus a map back to the volume mesh.
struct TriSurface
{
    Points vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<int> volume_index;
    // Cell that owns each face (empty for surfaces not extracted from a volume mesh).
    std::vector<int> face_cell;
};

struct QuadSurface
{
    Points vertices;
    std::vector<std::array<int, 4>> quads;
    std::vector<int> volume_index;
    std::vector<int> face_cell;
};

/// Throws InvalidMesh on out-of-range indices, repeated hex corners, or a non-manifold
/// boundary.
void validate(const TetMesh& mesh);
void validate(const HexMesh& mesh);

/// Faces used by exactly one cell, oriented outward. Surface vertices are numbered in
/// increasing volume-vertex order.
TriSurface extract_boundary(const TetMesh& mesh);
QuadSurface extract_boundary(const HexMesh& mesh);

/// Splits each quad along its 0-2 diagonal; triangle 2q and 2q+1 come from quad q.
TriSurface triangulate(const QuadSurface& surface);

/// One-ring neighbours along surface edges (quad edges only, no diagonals).
std::vector<std::vector<int>> vertex_neighbors(const QuadSurface& surface);

double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);
double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
/// Exact trilinear hex volume (face-centroid / cell-centroid 24-tet split).
double hex_volume(const Points& vertices, const std::array<int, 8>& hex);

struct Measures
{
    std::vector<double> cell_volumes;
    std::vector<double> face_areas;
    double total_volume = 0.0;
    double total_area = 0.0;
};

/// Negative volumes are reported as is.
Measures measures(const TetMesh& mesh);
Measures measures(const HexMesh& mesh);

/// A tetrahedron with a fixed rest edge frame. Its Jacobian under a map f is
/// [f(v1)-f(v0), f(v2)-f(v0), f(v3)-f(v0)] * rest_inverse.
struct TetElement
{
    std::array<int, 4> vertices;
    Mat3 rest_inverse;
};

struct CornerTet
{
    int hex = 0;
    int corner = 0;
    TetElement element;
};

struct CornerTetSet
{
    std::vector<CornerTet> tets;

    std::vector<TetElement> elements() const;
};

/// Corner c of a hex paired with its three edge neighbours, ordered so that an axis-aligned
/// hex yields a right-handed frame.
const std::array<std::array<int, 4>, 8>& corner_tet_pattern();

/// Eight corner tets per hex. Rest frames are right-angle frames of length cell_size, so the
/// identity map on an undeformed voxel mesh has J = I everywhere.
CornerTetSet corner_tets(const HexMesh& mesh);

/// Elements of a tet mesh with rest frames taken from its own vertex positions. Throws
/// InvalidMesh naming the tet if a rest frame is singular.
std::vector<TetElement> tet_elements(const TetMesh& mesh);

Mat3 edge_matrix(const Points& positions, const std::array<int, 4>& tet);
Mat3 jacobian(const Points& positions, const TetElement& element);
std::vector<Mat3> jacobians(const Points& positions, std::span<const TetElement> elements);

/// Scatter a gradient with respect to J back onto the element's four vertices.
void accumulate_jacobian_gradient(const TetElement& element, const Mat3& dJ, std::span<Vec3> gradient);

/// Unit cube [0,1]^3 hex in VTK order; handy in tests and fixtures.
HexMesh unit_cube_hex();

} // namespace cubehex
