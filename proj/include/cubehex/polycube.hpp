#pragma once

#include "cubehex/geom_query.hpp"
#include "cubehex/live.hpp"
#include "cubehex/optim.hpp"

#include <optional>

namespace cubehex
{

/// Axis-aligned box. `half` holds half-extents: the box spans center +- half.
struct Cuboid
{
    Vec3 center = Vec3::Zero();
    Vec3 half = Vec3::Ones();
    bool locked = false;

    Vec3 min() const { return center - half; }
    Vec3 max() const { return center + half; }
    static Cuboid from_bounds(const Vec3& lo, const Vec3& hi, bool locked = false);
};

struct PolyCube
{
    std::vector<Cuboid> cuboids;
};

struct SdfGradient
{
    Vec3 d_p = Vec3::Zero();
    Vec3 d_center = Vec3::Zero();
    Vec3 d_half = Vec3::Zero();
};

double cuboid_sdf(const Cuboid& cuboid, const Vec3& p, SdfGradient* grad = nullptr);

struct MinSdf
{
    double value = std::numeric_limits<double>::infinity();
    int cuboid = -1;  // argmin, lowest index on ties
    SdfGradient grad;
};

/// Minimum of the cuboid SDFs. Throws InvalidArgument on an empty polycube.
MinSdf polycube_min_sdf(const PolyCube& polycube, const Vec3& p, bool with_gradient = false);

struct AnchorSet
{
    Points points;
    std::vector<double> distance;  // signed distance to the deformed mesh
    std::vector<char> inside;
};

/// Uniform grid of grid_res^3 points over the 1.1x-scaled bounding box plus n_surface boundary
/// samples displaced by isotropic Gaussian noise of standard deviation sigma.
AnchorSet make_anchors(const TetMeshQuery& deformed, int grid_res, int n_surface, double sigma, std::uint64_t seed);

struct PolycubeWeights
{
    double plus = 1.0;
    double minus = 1.0;
};

/// Parameter layout: per cuboid [center xyz, half xyz].
Eigen::VectorXd pack(const PolyCube& polycube);
void unpack(const Eigen::VectorXd& params, PolyCube& polycube);

/// lambda_+ E_+ + lambda_- E_-, terms "plus" and "minus" (weighted). Locked cuboids take part in
/// the minimum but their gradient entries are zero.
EnergyEval energy_polycube(const PolyCube& polycube, const AnchorSet& anchors, const PolycubeWeights& w);

struct ReoptimizeOptions
{
    int n_steps = 300;
    double lr = 1e-3;
    double min_half = 1e-3;  // floor on every half-extent, enforced after each step
};

LoopResult reoptimize(PolyCube& polycube, const AnchorSet& anchors, const PolycubeWeights& weights,
                      const ReoptimizeOptions& options, const RunControl& control = {},
                      const LiveValue<PolycubeWeights>* live = nullptr);

/// Occupancy classification on an n^3 cell grid spanning `box`; cells are sampled at centers.
struct CellGrid
{
    int n = 32;
    Box3 box;
    std::vector<char> cells;  // x fastest

    Vec3 cell_size() const { return box.sizes() / n; }
    Vec3 cell_center(int i, int j, int k) const;
    char at(int i, int j, int k) const { return cells[static_cast<size_t>((k * n + j) * n + i)]; }
};

/// Inclusive cell index range [lo, hi] per axis.
struct CellBox
{
    std::array<int, 3> lo{0, 0, 0};
    std::array<int, 3> hi{-1, -1, -1};

    long volume() const;
};

/// Largest axis-aligned block of set cells (layer pairs times a 2D maximal-rectangle sweep).
/// Empty box (volume 0) if no cell is set. Ties keep the first block found in (z0, z1, y, x) order.
CellBox largest_box(const std::vector<char>& cells, int nx, int ny, int nz);

enum class AddMode
{
    Distance,
    Volume,
};

struct Suggestion
{
    std::optional<Cuboid> cuboid;  // empty: nothing to add / subtract
    std::string status;            // "ok", "fully covered", "nothing to subtract"
};

struct SuggestOptions
{
    int grid_res = 32;
    double initial_half_cells = 1.5;  // distance mode
};

Suggestion suggest_add(const PolyCube& polycube, const TetMeshQuery& deformed, AddMode mode,
                       const SuggestOptions& options = {});
Suggestion suggest_subtract(const PolyCube& polycube, const TetMeshQuery& deformed, const SuggestOptions& options = {});

/// Replaces every cuboid intersecting `region` with up to six disjoint slabs covering
/// cuboid minus region. Cuboids inside the region are removed.
PolyCube apply_subtract(const PolyCube& polycube, const Cuboid& region);

// Edits; all throw InvalidArgument on a bad id or non-positive extents.
void add_cuboid(PolyCube& polycube, const Cuboid& cuboid);
void remove_cuboid(PolyCube& polycube, int id);
void duplicate_cuboid(PolyCube& polycube, int id);
void move_cuboid(PolyCube& polycube, int id, const Vec3& center);
void resize_cuboid(PolyCube& polycube, int id, const Vec3& half);
void lock_cuboid(PolyCube& polycube, int id, bool locked);
/// Translates the cuboid per axis by the smallest offset (<= tolerance) that makes one of its
/// faces coplanar with a parallel face of another cuboid.
void sticky_snap(PolyCube& polycube, int id, double tolerance);

} // namespace cubehex
