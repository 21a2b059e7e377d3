#include "cubehex/voxelize.hpp"

#include "cubehex/error.hpp"

#include <cmath>
#include <map>
#include <queue>
#include <sstream>

namespace cubehex
{

namespace
{

VoxelKey shifted(VoxelKey k, int axis, int by)
{
    k[static_cast<size_t>(axis)] += by;
    return k;
}

// Cell offsets of the 2x2x2 block around a lattice vertex, bit b of the index selects -1 on axis b.
VoxelKey block_cell(const VoxelKey& vertex, int bits)
{
    return {vertex[0] - ((bits >> 0) & 1), vertex[1] - ((bits >> 1) & 1), vertex[2] - ((bits >> 2) & 1)};
}

bool block_connected(int mask)
{
    if (mask == 0)
        return true;
    int start = 0;
    while (!((mask >> start) & 1))
        ++start;
    int seen = 1 << start, frontier = seen;
    while (frontier)
    {
        int next = 0;
        for (int b = 0; b < 8; ++b)
            if ((frontier >> b) & 1)
                for (int a = 0; a < 3; ++a)
                {
                    int n = b ^ (1 << a);
                    if (((mask >> n) & 1) && !((seen >> n) & 1))
                        next |= 1 << n;
                }
        seen |= next;
        frontier = next;
    }
    return seen == mask;
}

} // namespace

double default_cell_size(const Box3& box)
{
    return box.diagonal().norm() / 40.0;
}

VoxelGrid snap_and_voxelize(const PolyCube& polycube, double cell_size, Notices* notices)
{
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
        throw Error(ErrorCode::InvalidArgument, "cell size must be positive");
    VoxelGrid grid;
    grid.cell_size = cell_size;
    int kept = 0;
    for (size_t c = 0; c < polycube.cuboids.size(); ++c)
    {
        const Cuboid& cub = polycube.cuboids[c];
        std::array<int, 3> lo{}, hi{};
        bool collapsed = false;
        for (int a = 0; a < 3; ++a)
        {
            lo[static_cast<size_t>(a)] = static_cast<int>(std::round(cub.min()[a] / cell_size));
            hi[static_cast<size_t>(a)] = static_cast<int>(std::round(cub.max()[a] / cell_size));
            collapsed |= hi[static_cast<size_t>(a)] <= lo[static_cast<size_t>(a)];
        }
        if (collapsed)
        {
            if (notices)
                notices->push_back("cuboid " + std::to_string(c) + " snaps to zero width and was dropped");
            continue;
        }
        ++kept;
        for (int k = lo[2]; k < hi[2]; ++k)
            for (int j = lo[1]; j < hi[1]; ++j)
                for (int i = lo[0]; i < hi[0]; ++i)
                    grid.occupied.insert({i, j, k});
    }
    if (kept == 0)
        throw Error(ErrorCode::State, "every cuboid collapsed when snapped to the voxel grid");
    return grid;
}

VoxelTarget VoxelTarget::single(const VoxelKey& key)
{
    VoxelTarget t;
    t.kind = Kind::Cell;
    t.cell = key;
    return t;
}

VoxelTarget VoxelTarget::layer(int axis, int index, std::optional<std::array<int, 4>> region)
{
    VoxelTarget t;
    t.kind = Kind::Layer;
    t.axis = axis;
    t.index = index;
    t.region = region;
    return t;
}

EditResult edit_voxels(VoxelGrid& grid, bool add, const VoxelTarget& target)
{
    std::vector<VoxelKey> cells;
    if (target.kind == VoxelTarget::Kind::Cell)
    {
        cells.push_back(target.cell);
    }
    else
    {
        if (target.axis < 0 || target.axis > 2)
            throw Error(ErrorCode::InvalidArgument, "layer axis must be 0, 1 or 2");
        int u = (target.axis + 1) % 3, w = (target.axis + 2) % 3;
        if (u > w)
            std::swap(u, w);
        std::array<int, 4> r;
        if (target.region)
        {
            r = *target.region;
        }
        else
        {
            if (grid.occupied.empty())
                throw Error(ErrorCode::InvalidArgument, "layer edit on an empty grid needs an explicit region");
            r = {INT32_MAX, INT32_MIN, INT32_MAX, INT32_MIN};
            for (const auto& c : grid.occupied)
            {
                r[0] = std::min(r[0], c[static_cast<size_t>(u)]);
                r[1] = std::max(r[1], c[static_cast<size_t>(u)]);
                r[2] = std::min(r[2], c[static_cast<size_t>(w)]);
                r[3] = std::max(r[3], c[static_cast<size_t>(w)]);
            }
        }
        if (r[1] < r[0] || r[3] < r[2])
            throw Error(ErrorCode::InvalidArgument, "layer region is empty");
        for (int b = r[2]; b <= r[3]; ++b)
            for (int a = r[0]; a <= r[1]; ++a)
            {
                VoxelKey k{};
                k[static_cast<size_t>(target.axis)] = target.index;
                k[static_cast<size_t>(u)] = a;
                k[static_cast<size_t>(w)] = b;
                cells.push_back(k);
            }
    }

    EditResult result;
    VoxelEdit edit;
    edit.add = add;
    for (const auto& k : cells)
    {
        bool changed = add ? grid.occupied.insert(k).second : grid.occupied.erase(k) > 0;
        if (changed)
            edit.changed.push_back(k);
    }
    result.changed = static_cast<int>(edit.changed.size());
    if (result.changed == 0)
    {
        result.notices.push_back(add ? "all target cells are already occupied" : "no occupied cell in the target");
        return result;
    }
    grid.log.push_back(std::move(edit));
    return result;
}

int undo_voxels(VoxelGrid& grid, int n)
{
    int undone = 0;
    while (undone < n && !grid.log.empty())
    {
        const VoxelEdit& e = grid.log.back();
        for (const auto& k : e.changed)
        {
            if (e.add)
                grid.occupied.erase(k);
            else
                grid.occupied.insert(k);
        }
        grid.log.pop_back();
        ++undone;
    }
    return undone;
}

std::string TopologyReport::summary() const
{
    std::ostringstream s;
    s << components << " component(s), " << nonmanifold_edges.size() << " non-manifold edge(s), "
      << nonmanifold_vertices.size() << " non-manifold vertex(es)";
    return s.str();
}

TopologyReport validate_topology(const VoxelGrid& grid)
{
    TopologyReport report;
    if (grid.occupied.empty())
        throw Error(ErrorCode::InvalidArgument, "voxel grid is empty");

    std::set<VoxelKey> seen;
    for (const auto& start : grid.occupied)
    {
        if (seen.count(start))
            continue;
        ++report.components;
        std::queue<VoxelKey> q;
        q.push(start);
        seen.insert(start);
        while (!q.empty())
        {
            VoxelKey c = q.front();
            q.pop();
            for (int a = 0; a < 3; ++a)
                for (int d : {-1, 1})
                {
                    VoxelKey n = shifted(c, a, d);
                    if (grid.contains(n) && seen.insert(n).second)
                        q.push(n);
                }
        }
    }

    // Edges: the four cells around an edge along `axis` starting at lattice point v.
    std::set<std::pair<VoxelKey, int>> edges;
    std::set<VoxelKey> vertices;
    for (const auto& c : grid.occupied)
        for (int bits = 0; bits < 8; ++bits)
        {
            VoxelKey v{c[0] + (bits & 1), c[1] + ((bits >> 1) & 1), c[2] + ((bits >> 2) & 1)};
            vertices.insert(v);
            for (int a = 0; a < 3; ++a)
                if (!((bits >> a) & 1))
                    edges.insert({v, a});
        }
    std::set<VoxelKey> on_bad_edge;
    for (const auto& [v, axis] : edges)
    {
        int u = (axis + 1) % 3, w = (axis + 2) % 3;
        bool occ[2][2];
        int count = 0;
        for (int du = 0; du < 2; ++du)
            for (int dw = 0; dw < 2; ++dw)
            {
                VoxelKey c = v;
                c[static_cast<size_t>(u)] -= du;
                c[static_cast<size_t>(w)] -= dw;
                occ[du][dw] = grid.contains(c);
                count += occ[du][dw];
            }
        if (count == 2 && occ[0][0] == occ[1][1])
        {
            report.nonmanifold_edges.push_back({v, axis});
            on_bad_edge.insert(v);
            on_bad_edge.insert(shifted(v, axis, 1));
        }
    }
    for (const auto& v : vertices)
    {
        if (on_bad_edge.count(v))
            continue;
        int mask = 0;
        for (int bits = 0; bits < 8; ++bits)
            if (grid.contains(block_cell(v, bits)))
                mask |= 1 << bits;
        if (!block_connected(mask) || !block_connected(~mask & 0xff))
            report.nonmanifold_vertices.push_back(v);
    }
    return report;
}

HexMesh to_hex_mesh(const VoxelGrid& grid, bool allow_override)
{
    TopologyReport topo = validate_topology(grid);
    HexMesh mesh;
    mesh.cell_size = grid.cell_size;
    if (!topo.clean())
    {
        if (!allow_override)
            throw Error(ErrorCode::InvalidMesh, "voxel topology is not clean: " + topo.summary());
        mesh.topology_override = true;
    }
    static constexpr int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                         {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
    std::map<VoxelKey, int> ids;
    mesh.hexes.reserve(grid.occupied.size());
    for (const auto& c : grid.occupied)
    {
        std::array<int, 8> hex{};
        for (size_t n = 0; n < 8; ++n)
        {
            VoxelKey v{c[0] + corner[n][0], c[1] + corner[n][1], c[2] + corner[n][2]};
            auto [it, fresh] = ids.try_emplace(v, static_cast<int>(mesh.vertices.size()));
            if (fresh)
                mesh.vertices.push_back(grid.origin + grid.cell_size * Vec3(v[0], v[1], v[2]));
            hex[n] = it->second;
        }
        mesh.hexes.push_back(hex);
    }
    return mesh;
}

HexMesh global_pad(const HexMesh& mesh, Notices* notices)
{
    QuadSurface surface = extract_boundary(mesh);
    const size_t nb = surface.vertices.size();
    std::vector<Vec3> normal(nb, Vec3::Zero());
    for (const auto& q : surface.quads)
    {
        const Points& p = surface.vertices;
        Vec3 n = (p[static_cast<size_t>(q[2])] - p[static_cast<size_t>(q[0])])
                     .cross(p[static_cast<size_t>(q[3])] - p[static_cast<size_t>(q[1])]);
        if (n.norm() > 0)
            n.normalize();
        for (int v : q)
            normal[static_cast<size_t>(v)] += n;
    }
    for (size_t i = 0; i < nb; ++i)
    {
        double len = normal[i].norm();
        if (!(len > 1e-12))
            throw Error(ErrorCode::InvalidMesh,
                        "boundary vertex " + std::to_string(surface.volume_index[i]) + " has no usable normal");
        normal[i] /= len;
    }

    HexMesh out;
    out.cell_size = mesh.cell_size;
    out.topology_override = mesh.topology_override;
    out.hexes = mesh.hexes;
    // Outer copies keep the old positions; originals move inward.
    const int base = static_cast<int>(mesh.vertices.size());
    for (const auto& q : surface.quads)
    {
        std::array<int, 8> h{};
        for (size_t k = 0; k < 4; ++k)
        {
            h[k] = surface.volume_index[static_cast<size_t>(q[k])];
            h[k + 4] = base + q[k];
        }
        out.hexes.push_back(h);
    }
    CornerTetSet tets = corner_tets(out);

    double offset = 0.5 * mesh.cell_size;
    for (int attempt = 0; attempt <= 6; ++attempt, offset *= 0.5)
    {
        out.vertices = mesh.vertices;
        for (size_t i = 0; i < nb; ++i)
            out.vertices[static_cast<size_t>(surface.volume_index[i])] -= offset * normal[i];
        out.vertices.insert(out.vertices.end(), surface.vertices.begin(), surface.vertices.end());
        bool ok = true;
        for (const auto& t : tets.tets)
            if (!(edge_matrix(out.vertices, t.element.vertices).determinant() > 0.0))
            {
                ok = false;
                break;
            }
        if (ok)
        {
            if (attempt > 0 && notices)
            {
                std::ostringstream s;
                s << "padding offset reduced to " << offset << " to avoid inverted elements";
                notices->push_back(s.str());
            }
            return out;
        }
    }
    throw Error(ErrorCode::Numerical, "global padding inverts elements even after halving the offset 6 times");
}

} // namespace cubehex
