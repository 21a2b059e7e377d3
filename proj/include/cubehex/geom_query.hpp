#pragma once

#include "cubehex/bvh.hpp"
#include "cubehex/mesh.hpp"

#include <cstdint>

namespace cubehex
{

enum class ProjectionRegion
{
    Interior,
    Edge,
    Vertex,
};

/// Closest point on a triangle (or tet) element. For triangles `weights[3]` is unused.
/// For edge projections `feature` is the local edge i (from corner i to corner (i+1)%3), for
/// vertex projections the local corner.
struct ProjectionResult
{
    Vec3 point = Vec3::Zero();
    int element = -1;
    std::array<double, 4> weights{};
    double sq_distance = 0.0;
    ProjectionRegion region = ProjectionRegion::Interior;
    int feature = -1;
};

/// Point-triangle projection: interior foot point from the closed-form barycentric solve,
/// otherwise the best of the three edge clamps.
ProjectionResult project_to_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct ProjectionGradients
{
    // Exact Jacobian of the closest point: planar projector inside, edge projector on an
    // edge, zero at a vertex.
    Mat3 dq_dp;
    // Supporting-plane projector of the closest triangle; used wherever the exact Jacobian
    // degenerates on ridges.
    Mat3 dq_dp_plane;
    // d(squared distance)/d(triangle corner i) = 2 w_i (q - p).
    std::array<Vec3, 3> dd_dv;

    /// The Jacobian optimizers chain through: exact inside a triangle, the plane projector
    /// when the projection is clamped to an edge or a vertex.
    const Mat3& ridge_safe() const { return use_plane ? dq_dp_plane : dq_dp; }
    bool use_plane = false;
};

/// Closest-point queries against a triangle surface. Rebuilds its hierarchy when vertices
/// drift more than 10% of the mean edge length from the last build, refits otherwise.
class SurfaceProjector
{
public:
    SurfaceProjector() = default;
    /// Zero-area triangles are skipped (listed in notices()); throws InvalidMesh if no
    /// triangle is usable.
    explicit SurfaceProjector(TriSurface surface);

    ProjectionResult project(const Vec3& p) const;
    ProjectionGradients gradients(const Vec3& p, const ProjectionResult& result) const;

    void update_positions(const Points& vertices);

    const TriSurface& surface() const { return surface_; }
    const Notices& notices() const { return notices_; }
    int rebuild_count() const { return rebuilds_; }

private:
    struct TriangleData
    {
        Vec3 g1, g2;  // w1 = g1.(p - v0), w2 = g2.(p - v0)
        Vec3 normal;  // unit
        bool degenerate = false;
    };

    void prepare();
    void rebuild();
    std::vector<Box3> boxes() const;

    TriSurface surface_;
    std::vector<TriangleData> data_;
    std::vector<int> active_;  // non-degenerate triangle ids, BVH primitives index into this
    Bvh bvh_;
    Points built_positions_;
    double rebuild_threshold_ = 0.0;
    int rebuilds_ = 0;
    Notices notices_;
};

/// Point location and closest-point queries on a tet mesh. The normal-equation inverse of
/// each tet is precomputed.
class TetMeshQuery
{
public:
    TetMeshQuery() = default;
    explicit TetMeshQuery(const TetMesh& mesh);

    /// Containing tet with the lowest index, -1 if none. Boundary points count as inside.
    int locate(const Vec3& p, std::array<double, 4>* weights = nullptr) const;
    bool contains(const Vec3& p) const { return locate(p) >= 0; }

    /// Zero distance with barycentric weights inside; otherwise the closest boundary point
    /// expressed in the owning tet.
    ProjectionResult project(const Vec3& p) const;

    const TetMesh& mesh() const { return mesh_; }
    const SurfaceProjector& boundary() const { return boundary_; }

private:
    std::array<double, 4> barycentric(int tet, const Vec3& p) const;

    TetMesh mesh_;
    std::vector<Mat3> normal_inverse_;   // (E^T E)^-1
    std::vector<Mat3> edge_transpose_;   // E^T
    Bvh bvh_;
    SurfaceProjector boundary_;
    double inside_tolerance_ = 1e-12;
};

/// Signed distance with the inside-negative convention.
struct SignedDistanceSample
{
    double value = 0.0;
    Vec3 gradient = Vec3::Zero();
};

SignedDistanceSample signed_distance(const Vec3& p, const TetMeshQuery& query);

struct SurfaceSamples
{
    Points points;
    std::vector<int> faces;
    std::vector<std::array<double, 3>> weights;
};

/// Area-uniform samples; deterministic for a given seed.
SurfaceSamples sample_surface(const TriSurface& surface, int n, std::uint64_t seed);

/// Stream of independent seeds derived from a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

} // namespace cubehex
