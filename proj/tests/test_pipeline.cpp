#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cubehex/error.hpp"
#include "cubehex/fixtures.hpp"
#include "cubehex/pipeline.hpp"

#include <chrono>

using namespace cubehex;

namespace
{

Session cube_session(int n, std::uint64_t seed)
{
    TetMesh m = fixtures::cube(n);
    Normalization t = fit_unit_box(m.vertices);
    for (Vec3& p : m.vertices)
        p = t.apply(p);
    return new_session(m, t, seed);
}

ErrorCode code_of(const std::function<void()>& fn, std::string* message = nullptr)
{
    try
    {
        fn();
    }
    catch (const Error& e)
    {
        if (message)
            *message = e.what();
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::InvalidArgument;
}

} // namespace

TEST_CASE("config parsing")
{
    PipelineConfig c = parse_config("# weights\nseed = 42\n\ndeform.cube = 2.5  # stronger\nquality.mode = constrained\n"
                                    "voxel.pad = true\npullback.steps=10\n");
    CHECK(c.seed == 42);
    CHECK(c.deform.cube == 2.5);
    CHECK(c.mode == SurfaceMode::Constrained);
    CHECK(c.pad);
    CHECK(c.pullback_steps == 10);
    CHECK(c.quality_steps == 1000);

    std::string text = format_config(c);
    CHECK(format_config(parse_config(text)) == text);
    CHECK(config_keys().size() == 44);

    std::string msg;
    CHECK(code_of([] { parse_config("seed = 1\ndeform.cubee = 1\n"); }, &msg) == ErrorCode::Config);
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("unknown config key 'deform.cubee'") != std::string::npos);
    CHECK(code_of([] { parse_config("deform.lr = 0\n"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_config("deform.cube = -1\n"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_config("deform.cube = 1x\n"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_config("voxel.pad = yes\n"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_config("seed = 1\nseed = 2\n"); }, &msg) == ErrorCode::Config);
    CHECK(msg.find("repeated") != std::string::npos);
    CHECK(code_of([] { parse_config("just words\n"); }) == ErrorCode::Config);
}

TEST_CASE("stages need their upstream artifacts")
{
    Session s = cube_session(2, 0);
    PipelineConfig c;
    std::string msg;
    CHECK(code_of([&] { run_voxelize(s, c); }, &msg) == ErrorCode::State);
    CHECK(msg.find("decomposed") != std::string::npos);
    CHECK(code_of([&] { run_pullback(s, c, 2); }) == ErrorCode::State);
    CHECK(code_of([&] { run_quality(s, c); }) == ErrorCode::State);
}

TEST_CASE("cube run-all with a 4^3 lattice")
{
    Session s = cube_session(4, 0);
    PipelineConfig c;
    c.voxel_cell = 0.25;
    std::vector<std::string> stages;
    auto t0 = std::chrono::steady_clock::now();
    run_all(s, c, [&](const std::string& name) { stages.push_back(name); });
    QualityReport r = session_report(s, c);
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("cube run-all ", seconds, " s, J_min ", r.j_min, ", d_max ", r.d_max);
    CHECK(stages.size() == 6);
    CHECK(s.cursor == Stage::Optimized);
    CHECK(s.polycube->cuboids.size() == 1);
    CHECK(s.voxels->size() == 64);
    CHECK(r.inverted == 0);
    CHECK(r.j_min >= 0.99);
    CHECK(r.d_max <= 1e-2);

    // the whole session survives a save/load round trip
    Session back = decode_session(encode_session(s));
    CHECK(back.hex_positions() == s.hex_positions());
}

TEST_CASE("rerunning an upstream stage drops downstream artifacts")
{
    Session s = cube_session(2, 0);
    PipelineConfig c;
    c.deform_steps = 5;
    c.polycube_steps = 5;
    c.voxel_cell = 0.5;
    c.pullback_steps = 3;
    run_deform(s, c);
    fit_polycube(s, c);
    run_voxelize(s, c);
    run_pullback(s, c, 1);
    CHECK(s.cursor == Stage::PullbackPhase1);
    run_deform(s, c);
    CHECK(s.cursor == Stage::Deformed);
    CHECK(!s.polycube);
    CHECK(!s.voxels);
    CHECK(!s.pullback);
    s.check();
}

TEST_CASE("padding option pads the lattice mesh")
{
    Session s = cube_session(2, 0);
    PipelineConfig c;
    c.deform_steps = 5;
    c.polycube_steps = 5;
    c.voxel_cell = 0.5;
    c.pad = true;
    run_deform(s, c);
    fit_polycube(s, c);
    run_voxelize(s, c);
    CHECK(s.voxels->size() == 8);
    CHECK(s.hex->hexes.size() == 8 + 24);
}
