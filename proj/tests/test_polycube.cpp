#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cubehex/error.hpp"
#include "cubehex/fixtures.hpp"
#include "cubehex/polycube.hpp"

#include <cmath>
#include <random>

using namespace cubehex;

namespace
{

bool in_box(const Cuboid& c, const Vec3& p)
{
    return ((p - c.center).cwiseAbs() - c.half).maxCoeff() <= 0.0;
}

bool in_union(const PolyCube& pc, const Vec3& p)
{
    for (const auto& c : pc.cuboids)
        if (in_box(c, p))
            return true;
    return false;
}

double mc_volume(const PolyCube& pc, const Box3& domain, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    int hits = 0;
    for (int i = 0; i < n; ++i)
    {
        Vec3 p = domain.min() + domain.sizes().cwiseProduct(Vec3(u(rng), u(rng), u(rng)));
        hits += in_union(pc, p);
    }
    return domain.volume() * hits / n;
}

// O(n^6) exhaustive search with a 3D prefix sum.
long brute_force_largest(const std::vector<char>& cells, int n)
{
    auto idx = [n](int i, int j, int k) { return static_cast<size_t>(((k * (n + 1)) + j) * (n + 1) + i); };
    std::vector<int> pre(static_cast<size_t>((n + 1) * (n + 1) * (n + 1)), 0);
    for (int k = 1; k <= n; ++k)
        for (int j = 1; j <= n; ++j)
            for (int i = 1; i <= n; ++i)
                pre[idx(i, j, k)] = cells[static_cast<size_t>(((k - 1) * n + (j - 1)) * n + (i - 1))] + pre[idx(i - 1, j, k)] +
                                    pre[idx(i, j - 1, k)] + pre[idx(i, j, k - 1)] - pre[idx(i - 1, j - 1, k)] -
                                    pre[idx(i - 1, j, k - 1)] - pre[idx(i, j - 1, k - 1)] + pre[idx(i - 1, j - 1, k - 1)];
    long best = 0;
    for (int x0 = 0; x0 < n; ++x0)
        for (int x1 = x0 + 1; x1 <= n; ++x1)
            for (int y0 = 0; y0 < n; ++y0)
                for (int y1 = y0 + 1; y1 <= n; ++y1)
                    for (int z0 = 0; z0 < n; ++z0)
                        for (int z1 = z0 + 1; z1 <= n; ++z1)
                        {
                            long vol = long(x1 - x0) * (y1 - y0) * (z1 - z0);
                            if (vol <= best)
                                continue;
                            long s = pre[idx(x1, y1, z1)] - pre[idx(x0, y1, z1)] - pre[idx(x1, y0, z1)] - pre[idx(x1, y1, z0)] +
                                     pre[idx(x0, y0, z1)] + pre[idx(x0, y1, z0)] + pre[idx(x1, y0, z0)] - pre[idx(x0, y0, z0)];
                            if (s == vol)
                                best = vol;
                        }
    return best;
}

TetMesh box_mesh(const Vec3& lo, const Vec3& hi, int n)
{
    Vec3 size = hi - lo;
    TetMesh m = fixtures::cube(n);
    for (auto& v : m.vertices)
        v = lo + size.cwiseProduct(v);
    return m;
}

} // namespace

TEST_CASE("cuboid sdf examples and gradients")
{
    Cuboid c{Vec3::Zero(), Vec3::Ones(), false};
    CHECK(cuboid_sdf(c, Vec3(2, 0, 0)) == doctest::Approx(1.0));
    CHECK(cuboid_sdf(c, Vec3(0, 0, 0)) == doctest::Approx(-1.0));
    CHECK(cuboid_sdf(c, Vec3(1, 0.3, -0.2)) == 0.0);
    CHECK(cuboid_sdf(c, Vec3(-0.5, 1, 1)) == 0.0);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-2, 2);
    const double h = 1e-6;
    for (int t = 0; t < 200; ++t)
    {
        Cuboid b{Vec3(u(rng), u(rng), u(rng)) * 0.2, Vec3(0.5, 0.7, 0.9), false};
        Vec3 p(u(rng), u(rng), u(rng));
        SdfGradient g;
        cuboid_sdf(b, p, &g);
        for (int a = 0; a < 3; ++a)
        {
            Cuboid bp = b, bm = b;
            bp.center[a] += h;
            bm.center[a] -= h;
            CHECK((cuboid_sdf(bp, p) - cuboid_sdf(bm, p)) / (2 * h) == doctest::Approx(g.d_center[a]).epsilon(1e-5));
            bp = b;
            bm = b;
            bp.half[a] += h;
            bm.half[a] -= h;
            CHECK((cuboid_sdf(bp, p) - cuboid_sdf(bm, p)) / (2 * h) == doctest::Approx(g.d_half[a]).epsilon(1e-5));
        }
    }
}

TEST_CASE("min sdf")
{
    PolyCube one{{Cuboid{Vec3(0.1, 0.2, 0.3), Vec3(0.4, 0.5, 0.6), false}}};
    CHECK(polycube_min_sdf(one, Vec3(1, 1, 1)).value == cuboid_sdf(one.cuboids[0], Vec3(1, 1, 1)));

    PolyCube two{{Cuboid{Vec3(0, 0, 0), Vec3::Ones(), false}, Cuboid{Vec3(3, 0, 0), Vec3::Ones(), false}}};
    MinSdf m = polycube_min_sdf(two, Vec3(1.5, 0, 0));
    CHECK(m.value == doctest::Approx(0.5));
    CHECK(m.cuboid == 0);  // tie keeps the lower index
    CHECK(polycube_min_sdf(two, Vec3(3.2, 0.1, 0)).value <= 0.0);
    CHECK_THROWS_AS(polycube_min_sdf(PolyCube{}, Vec3::Zero()), Error);
}

TEST_CASE("polycube energy vanishes on a matching box")
{
    TetMesh mesh = box_mesh(Vec3(-0.5, -0.3, -0.2), Vec3(0.5, 0.3, 0.2), 2);
    TetMeshQuery q(mesh);
    AnchorSet anchors = make_anchors(q, 8, 200, 0.02, 3);
    PolyCube pc{{Cuboid::from_bounds(Vec3(-0.5, -0.3, -0.2), Vec3(0.5, 0.3, 0.2))}};
    EnergyEval e = energy_polycube(pc, anchors, {});
    CHECK(e.terms[0].value <= 1e-20);  // E+
    CHECK(e.terms[1].value == 0.0);    // E-
}

TEST_CASE("polycube energy gradient")
{
    TetMesh mesh = fixtures::l_shape(1);
    TetMeshQuery q(mesh);
    AnchorSet anchors = make_anchors(q, 6, 100, 0.05, 5);
    PolyCube pc{{Cuboid{Vec3(0.9, 0.6, 0.45), Vec3(0.8, 0.5, 0.4), false},
                 Cuboid{Vec3(0.4, 1.4, 0.55), Vec3(0.35, 0.5, 0.45), false},
                 Cuboid{Vec3(1.5, 1.5, 0.5), Vec3(0.2, 0.2, 0.2), true}}};
    PolycubeWeights w{0.7, 1.3};
    EnergyFn f = [&](const Eigen::VectorXd& x, std::uint64_t) {
        PolyCube work = pc;
        unpack(x, work);
        return energy_polycube(work, anchors, w);
    };
    Eigen::VectorXd x = pack(pc);
    EnergyEval e = f(x, 0);
    CHECK(e.grad.segment<6>(12).isZero());  // locked
    // Irrational-ish offsets keep grid anchors off the SDF kinks.
    pc.cuboids[2].locked = false;
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-0.03, 0.03);
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x[i] += u(rng);
    CHECK(check_gradient(f, x, static_cast<int>(x.size()), 1e-6, 1, 1e-3) <= 1e-4);
}

TEST_CASE("anchors")
{
    TetMesh mesh = fixtures::cube(2);
    TetMeshQuery q(mesh);
    AnchorSet corners = make_anchors(q, 2, 0, 0.0, 1);
    CHECK(corners.points.size() == 8);
    for (const auto& p : corners.points)
        CHECK((p.cwiseAbs() - Vec3(0.5, 0.5, 0.5)).isZero() == false);
    AnchorSet surf = make_anchors(q, 2, 50, 0.0, 1);
    for (size_t i = 8; i < surf.points.size(); ++i)
        CHECK(std::abs(surf.distance[i]) <= 1e-9);
    AnchorSet again = make_anchors(q, 2, 50, 0.0, 1);
    CHECK(again.points == surf.points);
    for (size_t i = 0; i < surf.points.size(); ++i)
        CHECK(bool(surf.inside[i]) == q.contains(surf.points[i]));
}

TEST_CASE("largest box agrees with exhaustive search")
{
    std::mt19937_64 rng(12);
    const int n = 8;
    for (int trial = 0; trial < 10; ++trial)
    {
        std::bernoulli_distribution fill(0.55 + 0.04 * trial);
        std::vector<char> cells(n * n * n);
        for (auto& c : cells)
            c = fill(rng);
        CellBox b = largest_box(cells, n, n, n);
        CHECK(b.volume() == brute_force_largest(cells, n));
        for (int k = b.lo[2]; k <= b.hi[2]; ++k)
            for (int j = b.lo[1]; j <= b.hi[1]; ++j)
                for (int i = b.lo[0]; i <= b.hi[0]; ++i)
                    CHECK(cells[static_cast<size_t>((k * n + j) * n + i)]);
    }
    // 2x2x1 minus one cell -> a 2x1x1 block.
    std::vector<char> l = {1, 1, 1, 0};
    CHECK(largest_box(l, 2, 2, 1).volume() == 2);
    CHECK(largest_box(std::vector<char>(8, 0), 2, 2, 2).volume() == 0);
}

TEST_CASE("suggest add")
{
    TetMesh mesh = box_mesh(Vec3(0, 0, 0), Vec3(1, 0.5, 0.75), 2);
    TetMeshQuery q(mesh);
    SuggestOptions opt;
    opt.grid_res = 8;
    Suggestion s = suggest_add(PolyCube{}, q, AddMode::Volume, opt);
    REQUIRE(s.cuboid);
    Vec3 cell = Vec3(1, 0.5, 0.75) / 8.0;
    CHECK(((s.cuboid->min() - Vec3(0, 0, 0)).cwiseAbs() - cell).maxCoeff() <= 1e-12);
    CHECK(((s.cuboid->max() - Vec3(1, 0.5, 0.75)).cwiseAbs() - cell).maxCoeff() <= 1e-12);

    Suggestion d = suggest_add(PolyCube{}, q, AddMode::Distance, opt);
    REQUIRE(d.cuboid);
    CHECK(q.contains(d.cuboid->center));
    CHECK((d.cuboid->half - 1.5 * cell).norm() < 1e-12);

    PolyCube full{{Cuboid::from_bounds(Vec3(-0.1, -0.1, -0.1), Vec3(1.1, 0.6, 0.85))}};
    Suggestion none = suggest_add(full, q, AddMode::Volume, opt);
    CHECK_FALSE(none.cuboid);
    CHECK(none.status == "fully covered");

    // With a cuboid covering the left half, distance mode picks a point far from it.
    PolyCube half{{Cuboid::from_bounds(Vec3(0, 0, 0), Vec3(0.5, 0.5, 0.75))}};
    Suggestion far = suggest_add(half, q, AddMode::Distance, opt);
    REQUIRE(far.cuboid);
    CHECK(far.cuboid->center.x() > 0.85);
}

TEST_CASE("suggest subtract")
{
    TetMesh box = box_mesh(Vec3(0, 0, 0), Vec3(1, 1, 1), 2);
    TetMeshQuery q(box);
    PolyCube exact{{Cuboid::from_bounds(Vec3(0, 0, 0), Vec3(1, 1, 1))}};
    SuggestOptions opt;
    opt.grid_res = 8;
    CHECK(suggest_subtract(exact, q, opt).status == "nothing to subtract");

    // C shape: a 4x4x1 block minus the 2x2 notch at i in [1,3), j >= 2.
    TetMesh c = fixtures::lattice_tet_mesh({4, 4, 1}, 0.25, Vec3::Zero(),
                                           [](int i, int j, int) { return !(i >= 1 && i < 3 && j >= 2); });
    TetMeshQuery cq(c);
    PolyCube big{{Cuboid::from_bounds(Vec3(0, 0, 0), Vec3(1, 1, 0.25))}};
    Suggestion s = suggest_subtract(big, cq, opt);
    REQUIRE(s.cuboid);
    CHECK((s.cuboid->min() - Vec3(0.25, 0.5, 0)).norm() < 1e-12);
    CHECK((s.cuboid->max() - Vec3(0.75, 1.0, 0.25)).norm() < 1e-12);
    // Disjoint from the mesh interior.
    CHECK_FALSE(cq.contains(s.cuboid->center));
}

TEST_CASE("apply subtract")
{
    PolyCube cube{{Cuboid::from_bounds(Vec3(0, 0, 0), Vec3(1, 1, 1), true)}};
    Cuboid away = Cuboid::from_bounds(Vec3(2, 2, 2), Vec3(3, 3, 3));
    PolyCube same = apply_subtract(cube, away);
    REQUIRE(same.cuboids.size() == 1);
    CHECK(same.cuboids[0].center == cube.cuboids[0].center);

    Cuboid column = Cuboid::from_bounds(Vec3(0.4, 0.4, -1), Vec3(0.6, 0.6, 2));
    PolyCube notched = apply_subtract(cube, column);
    CHECK(notched.cuboids.size() == 4);
    for (const auto& c : notched.cuboids)
        CHECK(c.locked);
    Box3 domain(Vec3(0, 0, 0), Vec3(1, 1, 1));
    CHECK(std::abs(mc_volume(notched, domain, 1000000, 7) - (1.0 - 0.04)) <= 1e-3);
    // x slabs span the full cube, y slabs are notched to the column's x range.
    int full = 0;
    for (const auto& c : notched.cuboids)
        full += std::abs(c.half.y() - 0.5) < 1e-12 && std::abs(c.half.z() - 0.5) < 1e-12;
    CHECK(full >= 2);

    // Corner region: volume identity.
    Cuboid corner = Cuboid::from_bounds(Vec3(0.7, 0.6, 0.5), Vec3(1.5, 1.5, 1.5));
    PolyCube cut = apply_subtract(cube, corner);
    CHECK(std::abs(mc_volume(cut, domain, 1000000, 9) - (1.0 - 0.3 * 0.4 * 0.5)) <= 1e-3);

    CHECK(apply_subtract(cube, cube.cuboids[0]).cuboids.empty());
}

TEST_CASE("edits and sticky snap")
{
    PolyCube pc;
    add_cuboid(pc, Cuboid{Vec3(0, 0, 0), Vec3(0.5, 0.5, 0.5), true});
    add_cuboid(pc, Cuboid{Vec3(1.01, 0, 0), Vec3(0.5, 0.5, 0.5), false});
    PolyCube snapped = pc;
    sticky_snap(snapped, 1, 0.02);
    CHECK(std::abs((snapped.cuboids[1].center.x() - 0.5) - 0.5) <= 1e-12);
    PolyCube far = pc;
    move_cuboid(far, 1, Vec3(1.05, 0, 0));
    PolyCube far_snapped = far;
    sticky_snap(far_snapped, 1, 0.02);
    CHECK(far_snapped.cuboids[1].center == far.cuboids[1].center);

    duplicate_cuboid(pc, 0);
    REQUIRE(pc.cuboids.size() == 3);
    CHECK(pc.cuboids[2].center == pc.cuboids[0].center);
    CHECK_FALSE(pc.cuboids[2].locked);
    remove_cuboid(pc, 2);
    CHECK(pc.cuboids.size() == 2);
    lock_cuboid(pc, 1, true);
    CHECK(pc.cuboids[1].locked);
    resize_cuboid(pc, 1, Vec3(0.1, 0.2, 0.3));
    CHECK(pc.cuboids[1].half == Vec3(0.1, 0.2, 0.3));
    CHECK_THROWS_AS(remove_cuboid(pc, 5), Error);
    CHECK_THROWS_AS(resize_cuboid(pc, 0, Vec3(0, 1, 1)), Error);
}

TEST_CASE("reoptimize fits a box and respects locks")
{
    TetMesh mesh = box_mesh(Vec3(0, 0, 0), Vec3(1, 0.6, 0.4), 2);
    TetMeshQuery q(mesh);
    AnchorSet anchors = make_anchors(q, 10, 500, 0.02, 4);
    PolyCube pc{{Cuboid::from_bounds(Vec3(0.05, 0.05, 0.04), Vec3(0.9, 0.5, 0.35)),
                 Cuboid{Vec3(3, 3, 3), Vec3(0.1, 0.1, 0.1), true}}};
    ReoptimizeOptions opt;
    opt.n_steps = 300;
    opt.lr = 2e-3;
    LoopResult r = reoptimize(pc, anchors, {}, opt);
    CHECK(r.final_eval.value < 0.1 * r.history.front().total);
    CHECK((pc.cuboids[0].min() - Vec3(0, 0, 0)).cwiseAbs().maxCoeff() < 0.03);
    CHECK((pc.cuboids[0].max() - Vec3(1, 0.6, 0.4)).cwiseAbs().maxCoeff() < 0.03);
    CHECK(pc.cuboids[1].center == Vec3(3, 3, 3));

    // Half-extent floor.
    PolyCube tiny{{Cuboid{Vec3(5, 5, 5), Vec3(0.002, 0.002, 0.002), false}}};
    opt.n_steps = 20;
    opt.min_half = 0.0015;
    reoptimize(tiny, anchors, {}, opt);
    CHECK(tiny.cuboids[0].half.minCoeff() >= 0.0015);
}
