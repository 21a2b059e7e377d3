#include "cubehex/fixtures.hpp"

#include <algorithm>
#include <cmath>

namespace cubehex::fixtures
{

TetMesh lattice_tet_mesh(const std::array<int, 3>& dims, double spacing, const Vec3& origin,
                         const std::function<bool(int, int, int)>& keep)
{
    const int nx = dims[0] + 1, ny = dims[1] + 1;
    auto vid = [&](int i, int j, int k) { return i + nx * (j + ny * k); };

    TetMesh mesh;
    std::vector<int> used(static_cast<size_t>(nx * ny * (dims[2] + 1)), -1);
    std::vector<std::array<int, 4>> raw;

    static const std::array<std::array<int, 3>, 6> perms = {
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i)
            {
                if (!keep(i, j, k))
                    continue;
                for (const auto& perm : perms)
                {
                    std::array<int, 3> c = {i, j, k};
                    std::array<int, 4> tet;
                    tet[0] = vid(c[0], c[1], c[2]);
                    for (int s = 0; s < 3; ++s)
                    {
                        ++c[static_cast<size_t>(perm[static_cast<size_t>(s)])];
                        tet[static_cast<size_t>(s + 1)] = vid(c[0], c[1], c[2]);
                    }
                    raw.push_back(tet);
                }
            }

    auto position = [&](int id) {
        int i = id % nx, j = (id / nx) % ny, k = id / (nx * ny);
        return Vec3(origin + spacing * Vec3(i, j, k));
    };
    for (const auto& tet : raw)
        for (int v : tet)
            used[static_cast<size_t>(v)] = 0;
    for (size_t v = 0; v < used.size(); ++v)
        if (used[v] == 0)
        {
            used[v] = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(position(static_cast<int>(v)));
        }
    for (auto tet : raw)
    {
        for (int& v : tet)
            v = used[static_cast<size_t>(v)];
        if (tet_volume(mesh.vertices[tet[0]], mesh.vertices[tet[1]], mesh.vertices[tet[2]], mesh.vertices[tet[3]]) < 0)
            std::swap(tet[2], tet[3]);
        mesh.tets.push_back(tet);
    }
    return mesh;
}

TetMesh cube(int n)
{
    return lattice_tet_mesh({n, n, n}, 1.0 / n, Vec3::Zero(), [](int, int, int) { return true; });
}

TetMesh l_shape(int n)
{
    return lattice_tet_mesh({2 * n, 2 * n, n}, 1.0 / n, Vec3::Zero(),
                            [n](int i, int j, int) { return !(i >= n && j >= n); });
}

TetMesh rounded_cube(int n, double roundness)
{
    TetMesh mesh = cube(n);
    for (auto& v : mesh.vertices)
    {
        // Cube [-1,1]^3 -> ball: the classic volume-preserving-ish "spherified cube" map.
        Vec3 p = 2.0 * v - Vec3::Ones();
        double x2 = p.x() * p.x(), y2 = p.y() * p.y(), z2 = p.z() * p.z();
        Vec3 ball(p.x() * std::sqrt(std::max(0.0, 1 - y2 / 2 - z2 / 2 + y2 * z2 / 3)),
                  p.y() * std::sqrt(std::max(0.0, 1 - z2 / 2 - x2 / 2 + z2 * x2 / 3)),
                  p.z() * std::sqrt(std::max(0.0, 1 - x2 / 2 - y2 / 2 + x2 * y2 / 3)));
        Vec3 q = (1.0 - roundness) * p + roundness * ball;
        v = 0.5 * (q + Vec3::Ones());
    }
    return mesh;
}

TetMesh rotated(TetMesh mesh, const Mat3& rotation)
{
    for (auto& v : mesh.vertices)
        v = rotation * v;
    return mesh;
}

} // namespace cubehex::fixtures
