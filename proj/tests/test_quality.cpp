#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cubehex/error.hpp"
#include "cubehex/fixtures.hpp"
#include "cubehex/quality.hpp"
#include "cubehex/voxelize.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace cubehex;

namespace
{

HexMesh block_hex(int nx, int ny, int nz, double cell, const Vec3& origin = Vec3::Zero())
{
    VoxelGrid g;
    g.cell_size = cell;
    g.origin = origin;
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                g.occupied.insert({i, j, k});
    return to_hex_mesh(g);
}

Points jitter(Points p, double amount, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amount, amount);
    for (auto& v : p)
        v += Vec3(u(rng), u(rng), u(rng));
    return p;
}

TriSurface uv_sphere(double radius, int rings, int segments)
{
    TriSurface s;
    s.vertices.push_back(Vec3(0, 0, radius));
    for (int r = 1; r < rings; ++r)
    {
        double th = M_PI * r / rings;
        for (int k = 0; k < segments; ++k)
        {
            double ph = 2 * M_PI * k / segments;
            s.vertices.push_back(radius * Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)));
        }
    }
    s.vertices.push_back(Vec3(0, 0, -radius));
    int south = static_cast<int>(s.vertices.size()) - 1;
    auto id = [&](int r, int k) { return 1 + (r - 1) * segments + (k % segments); };
    for (int k = 0; k < segments; ++k)
    {
        s.triangles.push_back({0, id(1, k), id(1, k + 1)});
        s.triangles.push_back({south, id(rings - 1, k + 1), id(rings - 1, k)});
        for (int r = 1; r < rings - 1; ++r)
        {
            s.triangles.push_back({id(r, k), id(r + 1, k), id(r + 1, k + 1)});
            s.triangles.push_back({id(r, k), id(r + 1, k + 1), id(r, k + 1)});
        }
    }
    return s;
}

Mat3 random_rotation(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0, 1);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized().toRotationMatrix();
}

} // namespace

TEST_CASE("scaled jacobian")
{
    CHECK(scaled_jacobian(Mat3::Identity()) == 1.0);
    Mat3 shear = Mat3::Identity();
    shear(0, 1) = 1.0;
    CHECK(scaled_jacobian(shear) == doctest::Approx(std::cos(M_PI / 4)).epsilon(1e-14));

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 500; ++t)
    {
        Mat3 R = random_rotation(rng);
        CHECK(std::abs(scaled_jacobian(R * Vec3(0.5 + u(rng) * u(rng) + 1, 2, 0.3).asDiagonal()) - 1.0) <= 1e-12);
        Mat3 M = Mat3::NullaryExpr([&] { return u(rng); });
        double s = scaled_jacobian(M);
        CHECK(s <= 1.0 + 1e-15);
        CHECK(s >= -1.0 - 1e-15);
        // Derivative by central differences.
        Mat3 dJ;
        scaled_jacobian(M, &dJ);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
            {
                Mat3 a = M, b = M;
                a(i, j) += 1e-6;
                b(i, j) -= 1e-6;
                double fd = (scaled_jacobian(a) - scaled_jacobian(b)) / 2e-6;
                CHECK(std::abs(fd - dJ(i, j)) <= 1e-6 * std::max(1.0, std::abs(fd)) + 1e-7);
            }
    }
    // Degenerate column: value 0, no NaN in the derivative.
    Mat3 flat = Mat3::Identity();
    flat.col(2).setZero();
    Mat3 d;
    CHECK(scaled_jacobian(flat, &d) == 0.0);
    CHECK(d.allFinite());
}

TEST_CASE("custom energy")
{
    HexMesh h = block_hex(2, 2, 1, 0.5);
    auto el = corner_tets(h).elements();
    CHECK(energy_custom(h.vertices, el, 2.0, false) == doctest::Approx(-2.0 * 32).epsilon(1e-14));
    // Worst mode on equal summands: lambda * (-1 + log n).
    CHECK(energy_custom(h.vertices, el, 2.0, true) == doctest::Approx(2.0 * (-1.0 + std::log(32.0))).epsilon(1e-14));

    Points x = jitter(h.vertices, 0.06, 2);
    for (bool worst : {false, true})
    {
        EnergyFn f = [&](const Eigen::VectorXd& v, std::uint64_t) {
            std::vector<Vec3> g(h.vertices.size(), Vec3::Zero());
            EnergyEval e;
            e.value = energy_custom(unflatten(v), el, 1.7, worst, g);
            e.grad = flatten(g);
            return e;
        };
        CHECK(check_gradient(f, flatten(x), 54, 1e-5, 1, 1e-3) <= 1e-4);
    }
}

TEST_CASE("log-sum-exp distortion")
{
    HexMesh h = block_hex(2, 1, 1, 1.0);
    auto el = corner_tets(h).elements();
    IsoWeights w;
    double s = iso_summand(Mat3::Identity(), w);
    CHECK(energy_hex_lse(h.vertices, el, w) == doctest::Approx(s + std::log(16.0)).epsilon(1e-14));

    Points x = jitter(h.vertices, 0.1, 3);
    std::vector<double> terms = iso_summands(x, el, w);
    double mx = *std::max_element(terms.begin(), terms.end());
    double lse = energy_hex_lse(x, el, w);
    CHECK(lse >= mx);
    CHECK(lse <= mx + std::log(16.0));

    EnergyFn f = [&](const Eigen::VectorXd& v, std::uint64_t) {
        std::vector<Vec3> g(h.vertices.size(), Vec3::Zero());
        EnergyEval e;
        e.value = energy_hex_lse(unflatten(v), el, w, g);
        e.grad = flatten(g);
        return e;
    };
    CHECK(check_gradient(f, flatten(x), 36, 1e-6, 1, 1e-3) <= 1e-4);

    // Ten disjoint unit tets, one squashed: the gradient sits on the bad one.
    Points p;
    std::vector<TetElement> tets;
    for (int t = 0; t < 10; ++t)
    {
        Vec3 o(3.0 * t, 0, 0);
        double top = t == 4 ? 0.05 : 1.0;
        p.insert(p.end(), {o, o + Vec3(1, 0, 0), o + Vec3(0, 1, 0), o + Vec3(0, 0, top)});
        TetElement e;
        e.vertices = {4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3};
        e.rest_inverse = Mat3::Identity();
        tets.push_back(e);
    }
    std::vector<Vec3> g(p.size(), Vec3::Zero());
    energy_hex_lse(p, tets, w, g);
    double total = 0, bad = 0;
    for (size_t i = 0; i < g.size(); ++i)
    {
        double l1 = g[i].cwiseAbs().sum();
        total += l1;
        if (i >= 16 && i < 20)
            bad += l1;
    }
    CHECK(bad > 0.9 * total);

    Points inverted = p;
    inverted[19].z() = -0.1;
    CHECK_THROWS_AS(energy_hex_lse(inverted, tets, w), Error);
}

TEST_CASE("element filters")
{
    HexMesh h = block_hex(2, 2, 2, 0.5);
    ElementFilter q;
    q.kind = ElementFilter::Kind::Quality;
    q.threshold = 1.0;
    CHECK(filter_elements(h, q).empty());

    ElementFilter plane;
    plane.kind = ElementFilter::Kind::Plane;
    plane.point = Vec3(5, 0, 0);
    plane.normal = Vec3(1, 0, 0);
    CHECK(filter_elements(h, plane).size() == 8);
    plane.point = Vec3(0.5, 0, 0);
    CHECK(filter_elements(h, plane) == std::vector<int>{0, 1, 2, 3});  // voxels are ordered x-major

    // Two separate cubes, the second sheared by 45 degrees.
    HexMesh two = unit_cube_hex();
    for (int i = 0; i < 8; ++i)
        two.vertices.push_back(two.vertices[static_cast<size_t>(i)] + Vec3(3, 0, 0) +
                               (i >= 4 ? Vec3(1, 0, 0) : Vec3::Zero()));
    two.hexes.push_back({8, 9, 10, 11, 12, 13, 14, 15});
    q.threshold = 0.8;
    CHECK(filter_elements(two, q) == std::vector<int>{1});
}

TEST_CASE("quality report")
{
    TetMesh input = fixtures::cube(4);
    HexMesh h = block_hex(4, 4, 4, 0.25);
    TriSurface surface = extract_boundary(input);
    QualityReport r = report_quality(h, surface, 20000, 1);
    CHECK(r.j_min == 1.0);
    CHECK(r.j_avg == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.v_min == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.inverted == 0);
    CHECK(r.d_max <= 1e-12);

    QualityReport again = report_quality(h, surface, 20000, 1);
    CHECK(again.d_avg == r.d_avg);
    CHECK(again.d_max == r.d_max);

    // Concentric spheres radius 1 and 1.01.
    TriSurface a = uv_sphere(1.0, 90, 180), b = uv_sphere(1.01, 90, 180);
    HausdorffSample hs = sampled_hausdorff(a, b, 20000, 3);
    double diag = 2.0 * std::sqrt(3.0) * 1.01;
    CHECK(std::abs(hs.max / diag - 0.01 / diag) <= 5e-4);
    CHECK(hs.avg <= hs.max);

    Points moved = h.vertices;
    for (auto& v : moved)
        v *= 1.1;
    HexMesh big = h;
    big.vertices = moved;
    QualityReport rb = report_quality(big, surface, 20000, 1);
    CHECK(rb.v_min == doctest::Approx(1.331).epsilon(1e-12));
    CHECK(rb.d_max == doctest::Approx(0.1 * std::sqrt(3.0) / std::sqrt(3.0)).epsilon(0.05));
}

TEST_CASE("quality energy gradients")
{
    TetMesh input = fixtures::rounded_cube(3, 0.3);
    HexMesh h = block_hex(2, 2, 2, 0.45, Vec3(0.06, 0.08, 0.04));
    QualityOptimizer opt(h, input);
    QualityState s = opt.initial_state(jitter(h.vertices, 0.03, 5));
    QualityWeights w{0.9, 1.1, 0.8, 1.2, 0.7, 0.6, 1e-4, false, false};
    EnergyFn free = [&](const Eigen::VectorXd& x, std::uint64_t) { return opt.evaluate(x, s, w, 3); };
    CHECK(check_gradient(free, opt.params(s), 81, 1e-5, 1, 1e-3) <= 1e-4);

    w.worst_distortion = true;
    w.worst_custom = true;
    CHECK(check_gradient(free, opt.params(s), 81, 1e-5, 2, 1e-3) <= 1e-4);

    // Constrained mode on a box whose block sits off-centre, so every latent has a unique
    // nearest face and the projection is planar.
    TetMesh box = fixtures::cube(2);
    HexMesh inner = block_hex(2, 2, 2, 0.35, Vec3(0.07, 0.12, 0.2));
    QualityOptimizer copt(inner, box);
    QualityState cs = copt.initial_state(inner.vertices);
    copt.set_mode(cs, SurfaceMode::Constrained);
    QualityWeights cw;
    cw.custom = 0.5;
    EnergyFn constrained = [&](const Eigen::VectorXd& x, std::uint64_t) { return copt.evaluate(x, cs, cw, 1); };
    CHECK(check_gradient(constrained, copt.params(cs), 81, 1e-6, 3, 1e-3) <= 1e-4);
}

TEST_CASE("surface modes and landmarks")
{
    TetMesh input = fixtures::cube(3);
    HexMesh h = block_hex(3, 3, 3, 1.0 / 3.0);
    Points start = jitter(h.vertices, 0.01, 6);
    QualityOptimizer opt(h, input);
    QualityOptions o;
    o.n_steps = 60;
    o.lr = 1e-3;

    SUBCASE("distortion only descends")
    {
        QualityState s = opt.initial_state(jitter(h.vertices, 0.05, 7));
        s.weights = QualityWeights{0, 0, 0, 1, 0, 0, 1e-4, false, false};
        o.n_steps = 200;
        o.lr = 1e-4;
        LoopResult r = opt.run(s, o);
        for (size_t k = 0; k + 50 < r.history.size(); k += 50)
            CHECK(r.history[k + 50].total <= r.history[k].total);
    }
    SUBCASE("fixed keeps the surface")
    {
        QualityState s = opt.initial_state(start);
        opt.set_mode(s, SurfaceMode::Fixed);
        opt.run(s, o);
        bool interior_moved = false;
        for (size_t v = 0; v < start.size(); ++v)
        {
            bool on_surface = std::find(opt.boundary().volume_index().begin(), opt.boundary().volume_index().end(),
                                        static_cast<int>(v)) != opt.boundary().volume_index().end();
            if (on_surface)
                CHECK(s.positions[v] == start[v]);
            else
                interior_moved |= s.positions[v] != start[v];
        }
        CHECK(interior_moved);
    }
    SUBCASE("constrained stays on the input surface")
    {
        QualityState s = opt.initial_state(start);
        opt.set_mode(s, SurfaceMode::Constrained);
        double worst = 0;
        RunControl c;
        c.on_step = [&](const StepInfo& info) {
            Points p = opt.positions(*info.params, s);
            for (int v : opt.boundary().volume_index())
                worst = std::max(worst, std::sqrt(opt.input_surface().project(p[static_cast<size_t>(v)]).sq_distance));
            return true;
        };
        LoopResult r = opt.run(s, o, c);
        CHECK(r.history.size() == 60);
        CHECK(worst <= 1e-9);
        CHECK(r.history.back().term("anchor") >= 0.0);
    }
    SUBCASE("landmarks are pinned")
    {
        QualityState s = opt.initial_state(start);
        int id = opt.boundary().volume_index()[5];
        Vec3 pin = start[static_cast<size_t>(id)] + Vec3(0.01, 0.0, -0.01);
        opt.set_landmarks(s, {{id, pin}});
        for (SurfaceMode m : {SurfaceMode::Free, SurfaceMode::Constrained})
        {
            opt.set_mode(s, m);
            opt.run(s, o);
            CHECK(s.positions[static_cast<size_t>(id)] == pin);
        }
        int interior = -1;
        for (size_t v = 0; v < h.vertices.size(); ++v)
            if ((h.vertices[v] - Vec3(1, 1, 1) / 3.0).norm() < 1e-12)
                interior = static_cast<int>(v);
        REQUIRE(interior >= 0);
        CHECK_THROWS_AS(opt.set_landmarks(s, {{interior, Vec3::Zero()}}), Error);
    }
    SUBCASE("landmark pulled through the mesh warns")
    {
        QualityState s = opt.initial_state(h.vertices);
        int corner = -1;
        for (size_t v = 0; v < h.vertices.size(); ++v)
            if (h.vertices[v].isZero())
                corner = static_cast<int>(v);
        opt.set_landmarks(s, {{corner, Vec3(0.8, 0.8, 0.8)}});
        o.n_steps = 5;
        LoopResult r = opt.run(s, o);
        REQUIRE(r.warnings.size() >= 1);
        CHECK(r.warnings.back().find(std::to_string(corner)) != std::string::npos);
        s.weights.worst_distortion = true;
        CHECK_THROWS_AS(opt.run(s, o), Error);
    }
}
