#include "cubehex/polycube.hpp"

#include "cubehex/error.hpp"
#include "cubehex/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace cubehex
{

Cuboid Cuboid::from_bounds(const Vec3& lo, const Vec3& hi, bool locked)
{
    return Cuboid{0.5 * (lo + hi), 0.5 * (hi - lo), locked};
}

double cuboid_sdf(const Cuboid& cuboid, const Vec3& p, SdfGradient* grad)
{
    Vec3 rel = p - cuboid.center;
    Vec3 d = rel.cwiseAbs() - cuboid.half;
    Vec3 outside = d.cwiseMax(0.0);
    double norm = outside.norm();
    Vec3 dv_dd = Vec3::Zero();
    double value;
    if (norm > 0.0)
    {
        value = norm;
        dv_dd = outside / norm;
    }
    else
    {
        Eigen::Index axis;
        value = d.maxCoeff(&axis);
        dv_dd[axis] = 1.0;
    }
    if (grad)
    {
        Vec3 sign(rel.x() < 0 ? -1.0 : 1.0, rel.y() < 0 ? -1.0 : 1.0, rel.z() < 0 ? -1.0 : 1.0);
        grad->d_p = sign.cwiseProduct(dv_dd);
        grad->d_center = -grad->d_p;
        grad->d_half = -dv_dd;
    }
    return value;
}

MinSdf polycube_min_sdf(const PolyCube& polycube, const Vec3& p, bool with_gradient)
{
    if (polycube.cuboids.empty())
        throw Error(ErrorCode::InvalidArgument, "polycube has no cuboids");
    MinSdf best;
    for (size_t i = 0; i < polycube.cuboids.size(); ++i)
    {
        double v = cuboid_sdf(polycube.cuboids[i], p);
        if (v < best.value)
        {
            best.value = v;
            best.cuboid = static_cast<int>(i);
        }
    }
    if (with_gradient)
        cuboid_sdf(polycube.cuboids[static_cast<size_t>(best.cuboid)], p, &best.grad);
    return best;
}

AnchorSet make_anchors(const TetMeshQuery& deformed, int grid_res, int n_surface, double sigma, std::uint64_t seed)
{
    if (grid_res < 2)
        throw Error(ErrorCode::InvalidArgument, "anchor grid resolution must be at least 2");
    if (n_surface < 0 || sigma < 0.0)
        throw Error(ErrorCode::InvalidArgument, "anchor surface count and noise must be non-negative");
    Box3 box;
    for (const auto& v : deformed.mesh().vertices)
        box.extend(v);
    Vec3 center = box.center(), half = 0.55 * box.sizes();
    AnchorSet anchors;
    for (int k = 0; k < grid_res; ++k)
        for (int j = 0; j < grid_res; ++j)
            for (int i = 0; i < grid_res; ++i)
            {
                Vec3 t = Vec3(i, j, k) / double(grid_res - 1);
                anchors.points.push_back(center - half + 2.0 * half.cwiseProduct(t));
            }
    if (n_surface > 0)
    {
        SurfaceSamples s = sample_surface(deformed.boundary().surface(), n_surface, seed);
        std::mt19937_64 rng(derive_seed(seed, 1));
        std::normal_distribution<double> noise(0.0, 1.0);
        for (const auto& p : s.points)
        {
            Vec3 offset(noise(rng), noise(rng), noise(rng));
            anchors.points.push_back(p + sigma * offset);
        }
    }
    anchors.distance.resize(anchors.points.size());
    anchors.inside.resize(anchors.points.size());
    parallel_for(anchors.points.size(), [&](std::size_t i) {
        SignedDistanceSample s = signed_distance(anchors.points[i], deformed);
        anchors.distance[i] = s.value;
        anchors.inside[i] = s.value <= 0.0 ? 1 : 0;
    });
    return anchors;
}

Eigen::VectorXd pack(const PolyCube& polycube)
{
    Eigen::VectorXd x(6 * static_cast<Eigen::Index>(polycube.cuboids.size()));
    for (size_t i = 0; i < polycube.cuboids.size(); ++i)
    {
        x.segment<3>(6 * static_cast<Eigen::Index>(i)) = polycube.cuboids[i].center;
        x.segment<3>(6 * static_cast<Eigen::Index>(i) + 3) = polycube.cuboids[i].half;
    }
    return x;
}

void unpack(const Eigen::VectorXd& params, PolyCube& polycube)
{
    if (params.size() != 6 * static_cast<Eigen::Index>(polycube.cuboids.size()))
        throw Error(ErrorCode::InvalidArgument, "parameter vector does not match the cuboid count");
    for (size_t i = 0; i < polycube.cuboids.size(); ++i)
    {
        polycube.cuboids[i].center = params.segment<3>(6 * static_cast<Eigen::Index>(i));
        polycube.cuboids[i].half = params.segment<3>(6 * static_cast<Eigen::Index>(i) + 3);
    }
}

EnergyEval energy_polycube(const PolyCube& polycube, const AnchorSet& anchors, const PolycubeWeights& w)
{
    const size_t n = anchors.points.size();
    std::vector<MinSdf> mins(n);
    parallel_for(n, [&](std::size_t i) { mins[i] = polycube_min_sdf(polycube, anchors.points[i], true); });

    double plus = 0.0, minus = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(6 * static_cast<Eigen::Index>(polycube.cuboids.size()));
    for (size_t i = 0; i < n; ++i)
    {
        const MinSdf& m = mins[i];
        double coef;
        if (!anchors.inside[i])
        {
            double r = anchors.distance[i] - m.value;
            plus += r * r;
            coef = -2.0 * w.plus * r;
        }
        else if (m.value >= 0.0)
        {
            minus += m.value * m.value;
            coef = 2.0 * w.minus * m.value;
        }
        else
        {
            continue;
        }
        if (polycube.cuboids[static_cast<size_t>(m.cuboid)].locked)
            continue;
        Eigen::Index base = 6 * m.cuboid;
        grad.segment<3>(base) += coef * m.grad.d_center;
        grad.segment<3>(base + 3) += coef * m.grad.d_half;
    }
    EnergyEval e;
    e.terms = {{"plus", w.plus * plus}, {"minus", w.minus * minus}};
    e.value = w.plus * plus + w.minus * minus;
    e.grad = std::move(grad);
    return e;
}

LoopResult reoptimize(PolyCube& polycube, const AnchorSet& anchors, const PolycubeWeights& weights,
                      const ReoptimizeOptions& options, const RunControl& control, const LiveValue<PolycubeWeights>* live)
{
    if (polycube.cuboids.empty())
        throw Error(ErrorCode::State, "nothing to optimize: the polycube has no cuboids");
    PolyCube work = polycube;
    PolycubeWeights current = weights;
    EnergyFn energy = [&](const Eigen::VectorXd& x, std::uint64_t) {
        if (live)
            current = live->get();
        unpack(x, work);
        return energy_polycube(work, anchors, current);
    };
    LoopOptions loop;
    loop.n_steps = options.n_steps;
    loop.adam.lr = options.lr;
    loop.project = [&](Eigen::VectorXd& x) {
        for (size_t i = 0; i < polycube.cuboids.size(); ++i)
            for (int a = 0; a < 3; ++a)
            {
                Eigen::Index idx = 6 * static_cast<Eigen::Index>(i) + 3 + a;
                x[idx] = std::max(x[idx], options.min_half);
            }
    };
    loop.on_step = control.on_step;
    loop.cancel = control.cancel;
    for (size_t i = 0; i < polycube.cuboids.size(); ++i)
    {
        std::ostringstream name;
        name << "cuboid " << i;
        loop.blocks.push_back({name.str(), 6 * static_cast<Eigen::Index>(i), 6});
    }
    LoopResult result = run_loop(energy, pack(polycube), loop);
    unpack(result.params, polycube);
    return result;
}

Vec3 CellGrid::cell_center(int i, int j, int k) const
{
    return box.min() + cell_size().cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5));
}

long CellBox::volume() const
{
    long v = 1;
    for (int a = 0; a < 3; ++a)
        v *= std::max(0, hi[static_cast<size_t>(a)] - lo[static_cast<size_t>(a)] + 1);
    return v;
}

CellBox largest_box(const std::vector<char>& cells, int nx, int ny, int nz)
{
    if (cells.size() != static_cast<size_t>(nx) * static_cast<size_t>(ny) * static_cast<size_t>(nz))
        throw Error(ErrorCode::InvalidArgument, "cell grid size mismatch");
    auto at = [&](int i, int j, int k) { return cells[static_cast<size_t>((k * ny + j) * nx + i)] != 0; };
    CellBox best;
    long best_volume = 0;
    std::vector<char> mask(static_cast<size_t>(nx * ny));
    std::vector<int> heights(static_cast<size_t>(nx));
    std::vector<int> stack;
    for (int z0 = 0; z0 < nz; ++z0)
    {
        std::fill(mask.begin(), mask.end(), 1);
        for (int z1 = z0; z1 < nz; ++z1)
        {
            // Columns set in every layer z0..z1.
            bool any = false;
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i)
                {
                    char& m = mask[static_cast<size_t>(j * nx + i)];
                    m = m && at(i, j, z1);
                    any = any || m;
                }
            if (!any)
                break;
            long depth = z1 - z0 + 1;
            if (static_cast<long>(nx) * ny * depth <= best_volume)
                continue;
            std::fill(heights.begin(), heights.end(), 0);
            for (int j = 0; j < ny; ++j)
            {
                for (int i = 0; i < nx; ++i)
                    heights[static_cast<size_t>(i)] = mask[static_cast<size_t>(j * nx + i)] ? heights[static_cast<size_t>(i)] + 1 : 0;
                // Largest rectangle under the histogram.
                stack.clear();
                for (int i = 0; i <= nx; ++i)
                {
                    int h = i < nx ? heights[static_cast<size_t>(i)] : 0;
                    while (!stack.empty() && heights[static_cast<size_t>(stack.back())] >= h)
                    {
                        int top = stack.back();
                        stack.pop_back();
                        int height = heights[static_cast<size_t>(top)];
                        int left = stack.empty() ? 0 : stack.back() + 1;
                        long volume = static_cast<long>(height) * (i - left) * depth;
                        if (volume > best_volume)
                        {
                            best_volume = volume;
                            best.lo = {left, j - height + 1, z0};
                            best.hi = {i - 1, j, z1};
                        }
                    }
                    stack.push_back(i);
                }
            }
        }
    }
    return best;
}

namespace
{

CellGrid classify(const Box3& box, int n, const std::function<char(const Vec3&)>& keep)
{
    CellGrid grid;
    grid.n = n;
    grid.box = box;
    grid.cells.resize(static_cast<size_t>(n) * static_cast<size_t>(n) * static_cast<size_t>(n));
    parallel_for(grid.cells.size(), [&](std::size_t c) {
        int i = static_cast<int>(c % static_cast<size_t>(n));
        int j = static_cast<int>((c / static_cast<size_t>(n)) % static_cast<size_t>(n));
        int k = static_cast<int>(c / (static_cast<size_t>(n) * static_cast<size_t>(n)));
        grid.cells[c] = keep(grid.cell_center(i, j, k));
    });
    return grid;
}

Box3 mesh_box(const TetMeshQuery& mesh)
{
    Box3 box;
    for (const auto& v : mesh.mesh().vertices)
        box.extend(v);
    return box;
}

Cuboid cuboid_from_cells(const CellGrid& grid, const CellBox& cells)
{
    Vec3 size = grid.cell_size();
    Vec3 lo = grid.box.min() + size.cwiseProduct(Vec3(cells.lo[0], cells.lo[1], cells.lo[2]));
    Vec3 hi = grid.box.min() + size.cwiseProduct(Vec3(cells.hi[0] + 1, cells.hi[1] + 1, cells.hi[2] + 1));
    return Cuboid::from_bounds(lo, hi);
}

bool covered(const PolyCube& polycube, const Vec3& p)
{
    return !polycube.cuboids.empty() && polycube_min_sdf(polycube, p).value <= 0.0;
}

} // namespace

Suggestion suggest_add(const PolyCube& polycube, const TetMeshQuery& deformed, AddMode mode, const SuggestOptions& options)
{
    if (options.grid_res < 1)
        throw Error(ErrorCode::InvalidArgument, "grid resolution must be positive");
    CellGrid grid = classify(mesh_box(deformed), options.grid_res,
                             [&](const Vec3& p) { return char(deformed.contains(p) && !covered(polycube, p)); });
    Suggestion out;
    if (std::none_of(grid.cells.begin(), grid.cells.end(), [](char c) { return c != 0; }))
    {
        out.status = "fully covered";
        return out;
    }
    if (mode == AddMode::Volume)
    {
        out.cuboid = cuboid_from_cells(grid, largest_box(grid.cells, grid.n, grid.n, grid.n));
        out.status = "ok";
        return out;
    }
    // Furthest uncovered interior point from the polycube; with no cuboids yet, the deepest
    // interior point.
    double best = -std::numeric_limits<double>::infinity();
    Vec3 best_point = Vec3::Zero();
    for (int k = 0; k < grid.n; ++k)
        for (int j = 0; j < grid.n; ++j)
            for (int i = 0; i < grid.n; ++i)
            {
                if (!grid.at(i, j, k))
                    continue;
                Vec3 p = grid.cell_center(i, j, k);
                double score = polycube.cuboids.empty() ? -signed_distance(p, deformed).value
                                                        : polycube_min_sdf(polycube, p).value;
                if (score > best)
                {
                    best = score;
                    best_point = p;
                }
            }
    out.cuboid = Cuboid{best_point, options.initial_half_cells * grid.cell_size(), false};
    out.status = "ok";
    return out;
}

Suggestion suggest_subtract(const PolyCube& polycube, const TetMeshQuery& deformed, const SuggestOptions& options)
{
    Suggestion out;
    if (polycube.cuboids.empty())
    {
        out.status = "nothing to subtract";
        return out;
    }
    Box3 box = mesh_box(deformed);
    for (const auto& c : polycube.cuboids)
    {
        box.extend(c.min());
        box.extend(c.max());
    }
    CellGrid grid = classify(box, options.grid_res,
                             [&](const Vec3& p) { return char(!deformed.contains(p) && covered(polycube, p)); });
    CellBox cells = largest_box(grid.cells, grid.n, grid.n, grid.n);
    if (cells.volume() == 0)
    {
        out.status = "nothing to subtract";
        return out;
    }
    out.cuboid = cuboid_from_cells(grid, cells);
    out.status = "ok";
    return out;
}

PolyCube apply_subtract(const PolyCube& polycube, const Cuboid& region)
{
    PolyCube out;
    Vec3 r0 = region.min(), r1 = region.max();
    for (const auto& c : polycube.cuboids)
    {
        Vec3 a = c.min(), b = c.max();
        Vec3 lo = a.cwiseMax(r0), hi = b.cwiseMin(r1);
        if ((lo.array() >= hi.array()).any())
        {
            out.cuboids.push_back(c);
            continue;
        }
        auto slab = [&](Vec3 s0, Vec3 s1) {
            if ((s1.array() > s0.array()).all())
                out.cuboids.push_back(Cuboid::from_bounds(s0, s1, c.locked));
        };
        // x slabs span the full cuboid, y slabs the intersection's x range, z slabs its x and y
        // ranges, so the pieces are disjoint.
        slab(a, Vec3(lo.x(), b.y(), b.z()));
        slab(Vec3(hi.x(), a.y(), a.z()), b);
        slab(Vec3(lo.x(), a.y(), a.z()), Vec3(hi.x(), lo.y(), b.z()));
        slab(Vec3(lo.x(), hi.y(), a.z()), Vec3(hi.x(), b.y(), b.z()));
        slab(Vec3(lo.x(), lo.y(), a.z()), Vec3(hi.x(), hi.y(), lo.z()));
        slab(Vec3(lo.x(), lo.y(), hi.z()), Vec3(hi.x(), hi.y(), b.z()));
    }
    return out;
}

namespace
{

Cuboid& checked(PolyCube& polycube, int id)
{
    if (id < 0 || id >= static_cast<int>(polycube.cuboids.size()))
    {
        std::ostringstream msg;
        msg << "no cuboid with id " << id;
        throw Error(ErrorCode::InvalidArgument, msg.str());
    }
    return polycube.cuboids[static_cast<size_t>(id)];
}

void check_half(const Vec3& half)
{
    if (!(half.array() > 0.0).all() || !half.allFinite())
        throw Error(ErrorCode::InvalidArgument, "cuboid half-extents must be positive");
}

} // namespace

void add_cuboid(PolyCube& polycube, const Cuboid& cuboid)
{
    check_half(cuboid.half);
    if (!cuboid.center.allFinite())
        throw Error(ErrorCode::InvalidArgument, "cuboid center must be finite");
    polycube.cuboids.push_back(cuboid);
}

void remove_cuboid(PolyCube& polycube, int id)
{
    checked(polycube, id);
    polycube.cuboids.erase(polycube.cuboids.begin() + id);
}

void duplicate_cuboid(PolyCube& polycube, int id)
{
    Cuboid copy = checked(polycube, id);
    copy.locked = false;
    polycube.cuboids.push_back(copy);
}

void move_cuboid(PolyCube& polycube, int id, const Vec3& center)
{
    if (!center.allFinite())
        throw Error(ErrorCode::InvalidArgument, "cuboid center must be finite");
    checked(polycube, id).center = center;
}

void resize_cuboid(PolyCube& polycube, int id, const Vec3& half)
{
    check_half(half);
    checked(polycube, id).half = half;
}

void lock_cuboid(PolyCube& polycube, int id, bool locked)
{
    checked(polycube, id).locked = locked;
}

void sticky_snap(PolyCube& polycube, int id, double tolerance)
{
    Cuboid& c = checked(polycube, id);
    for (int a = 0; a < 3; ++a)
    {
        double own[2] = {c.center[a] - c.half[a], c.center[a] + c.half[a]};
        double best = std::numeric_limits<double>::infinity();
        for (size_t o = 0; o < polycube.cuboids.size(); ++o)
        {
            if (static_cast<int>(o) == id)
                continue;
            const Cuboid& other = polycube.cuboids[o];
            double planes[2] = {other.center[a] - other.half[a], other.center[a] + other.half[a]};
            for (double plane : planes)
                for (double face : own)
                {
                    double offset = plane - face;
                    if (std::abs(offset) <= tolerance && std::abs(offset) < std::abs(best))
                        best = offset;
                }
        }
        if (std::isfinite(best))
            c.center[a] += best;
    }
}

} // namespace cubehex
