#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cubehex/error.hpp"
#include "cubehex/fixtures.hpp"
#include "cubehex/mesh.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

using namespace cubehex;

namespace
{

TetMesh single_tet()
{
    TetMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    m.tets = {{0, 1, 2, 3}};
    return m;
}

HexMesh block(int nx, int ny, int nz)
{
    HexMesh m;
    auto id = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= ny; ++j)
            for (int i = 0; i <= nx; ++i)
                m.vertices.emplace_back(i, j, k);
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                m.hexes.push_back({id(i, j, k), id(i + 1, j, k), id(i + 1, j + 1, k), id(i, j + 1, k), id(i, j, k + 1),
                                   id(i + 1, j, k + 1), id(i + 1, j + 1, k + 1), id(i, j + 1, k + 1)});
    return m;
}

// Oracle: a face is on the boundary iff its sorted vertex set occurs once.
template <size_t N>
size_t count_once(const std::vector<std::array<int, N>>& faces)
{
    std::multiset<std::array<int, N>> all;
    for (auto f : faces)
    {
        std::sort(f.begin(), f.end());
        all.insert(f);
    }
    size_t once = 0;
    for (const auto& f : all)
        once += all.count(f) == 1;
    return once;
}

} // namespace

TEST_CASE("boundary of simple cells")
{
    TriSurface s = extract_boundary(single_tet());
    CHECK(s.triangles.size() == 4);
    CHECK(s.vertices.size() == 4);

    QuadSurface q = extract_boundary(unit_cube_hex());
    CHECK(q.quads.size() == 6);
    CHECK(q.vertices.size() == 8);

    HexMesh two = block(2, 1, 1);
    QuadSurface q2 = extract_boundary(two);
    std::vector<std::array<int, 4>> faces;
    const int local[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
    for (const auto& h : two.hexes)
        for (const auto& f : local)
            faces.push_back({h[static_cast<size_t>(f[0])], h[static_cast<size_t>(f[1])], h[static_cast<size_t>(f[2])],
                             h[static_cast<size_t>(f[3])]});
    CHECK(q2.quads.size() == count_once(faces));
    CHECK(q2.quads.size() == 10);
}

TEST_CASE("boundary faces point outward")
{
    TetMesh cube = fixtures::cube(2);
    TriSurface s = extract_boundary(cube);
    // Divergence theorem: sum over faces of (centroid . n) area / 3 equals the enclosed volume.
    double vol = 0.0;
    for (const auto& t : s.triangles)
    {
        const Vec3 &a = s.vertices[static_cast<size_t>(t[0])], &b = s.vertices[static_cast<size_t>(t[1])],
                   &c = s.vertices[static_cast<size_t>(t[2])];
        vol += a.dot(b.cross(c)) / 6.0;
    }
    CHECK(vol == doctest::Approx(1.0).epsilon(1e-12));
    for (size_t i = 0; i < s.vertices.size(); ++i)
        CHECK((s.vertices[i] - cube.vertices[static_cast<size_t>(s.volume_index[i])]).norm() == 0.0);
}

TEST_CASE("boundary is invariant under vertex permutation")
{
    TetMesh m = fixtures::l_shape(1);
    std::vector<int> perm(m.vertices.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937 rng(3);
    std::shuffle(perm.begin(), perm.end(), rng);
    TetMesh p;
    p.vertices.resize(m.vertices.size());
    for (size_t i = 0; i < perm.size(); ++i)
        p.vertices[static_cast<size_t>(perm[i])] = m.vertices[i];
    for (auto t : m.tets)
    {
        for (int& v : t)
            v = perm[static_cast<size_t>(v)];
        p.tets.push_back(t);
    }
    auto canon = [](const TriSurface& s) {
        std::set<std::array<int, 3>> out;
        for (auto t : s.triangles)
        {
            std::array<int, 3> g{s.volume_index[static_cast<size_t>(t[0])], s.volume_index[static_cast<size_t>(t[1])],
                                 s.volume_index[static_cast<size_t>(t[2])]};
            std::rotate(g.begin(), std::min_element(g.begin(), g.end()), g.end());
            out.insert(g);
        }
        return out;
    };
    auto a = canon(extract_boundary(m));
    std::set<std::array<int, 3>> mapped;
    for (auto t : a)
    {
        for (int& v : t)
            v = perm[static_cast<size_t>(v)];
        std::rotate(t.begin(), std::min_element(t.begin(), t.end()), t.end());
        mapped.insert(t);
    }
    CHECK(mapped == canon(extract_boundary(p)));
}

TEST_CASE("non-manifold boundary is rejected naming the edge")
{
    // Two tets sharing only an edge.
    TetMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(-1, 0, 0), Vec3(0, -1, 0)};
    m.tets = {{0, 2, 3, 1}, {0, 4, 5, 1}};
    CHECK_THROWS_WITH_AS(extract_boundary(m), doctest::Contains("edge"), Error);
}

TEST_CASE("measures")
{
    Measures h = measures(unit_cube_hex());
    CHECK(h.total_volume == doctest::Approx(1.0));
    CHECK(h.total_area == doctest::Approx(6.0));
    Measures t = measures(single_tet());
    CHECK(t.total_volume == doctest::Approx(1.0 / 6.0));

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 50; ++i)
    {
        Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng)), c(u(rng), u(rng), u(rng)), d(u(rng), u(rng), u(rng));
        Mat3 e;
        e << b - a, c - a, d - a;
        CHECK(std::abs(tet_volume(a, b, c, d)) == doctest::Approx(std::abs(e.determinant()) / 6.0));
    }
}

TEST_CASE("corner tets")
{
    CHECK(corner_tets(unit_cube_hex()).tets.size() == 8);
    HexMesh b = block(3, 3, 3);
    CornerTetSet set = corner_tets(b);
    CHECK(set.tets.size() == 216);
    for (const auto& ct : set.tets)
        CHECK(jacobian(b.vertices, ct.element).determinant() == doctest::Approx(1.0).epsilon(1e-14));
    // Each corner tet: the corner plus its three edge neighbours inside the hex.
    const auto& pattern = corner_tet_pattern();
    for (int c = 0; c < 8; ++c)
    {
        Vec3 p = unit_cube_hex().vertices[static_cast<size_t>(pattern[static_cast<size_t>(c)][0])];
        for (int k = 1; k < 4; ++k)
            CHECK((unit_cube_hex().vertices[static_cast<size_t>(pattern[static_cast<size_t>(c)][static_cast<size_t>(k)])] - p)
                      .norm() == doctest::Approx(1.0));
    }
    // Corner tets overlap, so on the unit cube they sum to 8 * 1/6 rather than the hex volume.
    HexMesh cube = unit_cube_hex();
    double sum = 0.0;
    for (const auto& ct : corner_tets(cube).tets)
    {
        const auto& v = ct.element.vertices;
        sum += tet_volume(cube.vertices[static_cast<size_t>(v[0])], cube.vertices[static_cast<size_t>(v[1])],
                          cube.vertices[static_cast<size_t>(v[2])], cube.vertices[static_cast<size_t>(v[3])]);
    }
    CHECK(sum == doctest::Approx(8.0 / 6.0));
}

TEST_CASE("jacobians of affine maps")
{
    TetMesh m = fixtures::cube(2);
    auto elements = tet_elements(m);
    for (const auto& J : jacobians(m.vertices, elements))
        CHECK((J - Mat3::Identity()).norm() < 1e-12);

    Points scaled = m.vertices;
    for (auto& p : scaled)
        p *= 2.0;
    for (const auto& J : jacobians(scaled, elements))
    {
        CHECK((J - 2.0 * Mat3::Identity()).norm() < 1e-12);
        CHECK(J.determinant() == doctest::Approx(8.0));
    }

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    Mat3 A;
    for (int i = 0; i < 9; ++i)
        A(i / 3, i % 3) = u(rng);
    Vec3 b(u(rng), u(rng), u(rng));
    Points affine = m.vertices;
    for (auto& p : affine)
        p = A * p + b;
    for (const auto& J : jacobians(affine, elements))
        CHECK((J - A).norm() < 1e-12);
}

TEST_CASE("jacobians are linear in the map")
{
    TetMesh m = fixtures::l_shape(1);
    auto elements = tet_elements(m);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 5; ++trial)
    {
        Points f(m.vertices.size()), g(m.vertices.size()), h(m.vertices.size());
        double alpha = u(rng), beta = u(rng);
        for (size_t i = 0; i < f.size(); ++i)
        {
            f[i] = Vec3(u(rng), u(rng), u(rng));
            g[i] = Vec3(u(rng), u(rng), u(rng));
            h[i] = alpha * f[i] + beta * g[i];
        }
        auto Jf = jacobians(f, elements), Jg = jacobians(g, elements), Jh = jacobians(h, elements);
        for (size_t t = 0; t < elements.size(); ++t)
            CHECK((Jh[t] - alpha * Jf[t] - beta * Jg[t]).norm() < 1e-12);
    }
}

TEST_CASE("degenerate rest tet is rejected naming it")
{
    TetMesh m = single_tet();
    m.vertices[3] = Vec3(1, 1, 0);
    CHECK_THROWS_AS(tet_elements(m), Error);
    CHECK_THROWS_WITH(tet_elements(m), doctest::Contains("0"));
}

TEST_CASE("validation")
{
    TetMesh m = single_tet();
    m.tets[0][3] = 9;
    CHECK_THROWS_AS(validate(m), Error);
    HexMesh h = unit_cube_hex();
    h.hexes[0][1] = h.hexes[0][0];
    CHECK_THROWS_AS(validate(h), Error);
}
