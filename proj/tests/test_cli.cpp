#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cubehex/bvh.hpp"
#include "cubehex/fixtures.hpp"
#include "cubehex/session_io.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sys/wait.h>

using namespace cubehex;
namespace fs = std::filesystem;

namespace
{

struct Run
{
    int exit = -1;
    std::string out;
    std::string err;
};

fs::path scratch()
{
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("cubehex_cli_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

Run cli(const std::string& args)
{
    fs::path err = scratch() / "stderr.txt";
    std::string cmd = std::string(CUBEHEX_CLI) + " " + args + " 2>" + err.string();
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    REQUIRE(p);
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0)
        r.out.append(buf, n);
    int status = ::pclose(p);
    r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
}

nlohmann::json error_record(const Run& r)
{
    auto at = r.err.find("error: ");
    REQUIRE(at != std::string::npos);
    return nlohmann::json::parse(r.err.substr(at + 7, r.err.find('\n', at) - at - 7));
}

fs::path cube_input()
{
    fs::path p = scratch() / "cube.mesh";
    if (!fs::exists(p))
    {
        // scaled and shifted so normalization has work to do
        TetMesh m = fixtures::cube(4);
        for (Vec3& v : m.vertices)
            v = 10.0 * v + Vec3(3, -2, 1);
        save_tet_mesh(p, m);
    }
    return p;
}

fs::path quick_config()
{
    fs::path p = scratch() / "quick.cfg";
    std::ofstream(p) << "seed = 5\nvoxel.cell = 0.25\nreport.samples = 4000\n";
    return p;
}

} // namespace

TEST_CASE("missing session file is an io error")
{
    Run r = cli("report --session " + (scratch() / "nope.chx").string());
    CHECK(r.exit == 3);
    nlohmann::json e = error_record(r);
    CHECK(e["error"] == "io");
    CHECK(e["exit"] == 3);
}

TEST_CASE("usage and config errors exit 2")
{
    CHECK(cli("").exit == 2);
    CHECK(cli("frobnicate").exit == 2);
    CHECK(cli("pullback --phase 3 --session x").exit == 2);

    fs::path bad = scratch() / "bad.cfg";
    std::ofstream(bad) << "seed = 1\ndeform.cubee = 2\n";
    Run r = cli("run-all --input " + cube_input().string() + " --out x.chx --config " + bad.string());
    CHECK(r.exit == 2);
    nlohmann::json e = error_record(r);
    CHECK(e["error"] == "config");
    CHECK(e["message"].get<std::string>().find("line 2") != std::string::npos);
}

TEST_CASE("stage before its inputs exist")
{
    fs::path s = scratch() / "deformed.chx";
    Run d = cli("deform --input " + cube_input().string() + " --out " + s.string() + " --steps 3");
    REQUIRE(d.exit == 0);
    Run r = cli("voxelize --session " + s.string());
    CHECK(r.exit == 5);
    CHECK(error_record(r)["error"] == "state");
}

TEST_CASE("run-all on the cube fixture, then report twice")
{
    fs::path s = scratch() / "cube.chx";
    fs::path hex = scratch() / "cube_hex.vtk";
    Run r = cli("run-all --input " + cube_input().string() + " --config " + quick_config().string() + " --out " +
                s.string() + " --export " + hex.string());
    INFO(r.err);
    REQUIRE(r.exit == 0);
    CHECK(r.out.find("#hex      64") != std::string::npos);

    Run a = cli("report --json --session " + s.string() + " --config " + quick_config().string());
    Run b = cli("report --json --session " + s.string() + " --config " + quick_config().string());
    REQUIRE(a.exit == 0);
    CHECK(a.out == b.out);
    nlohmann::json rep = nlohmann::json::parse(a.out);
    CHECK(rep["j_min"].get<double>() >= 0.99);
    CHECK(rep["inverted"] == 0);

    Run text1 = cli("report --session " + s.string());
    Run text2 = cli("report --session " + s.string());
    CHECK(text1.out == text2.out);
    CHECK(text1.out.find("J min") != std::string::npos);

    // export is in the input's frame: the 10x cube shifted by (3,-2,1)
    HexMesh m = load_hex_mesh(hex);
    Box3 box;
    for (const Vec3& v : m.vertices)
        box.extend(v);
    CHECK(box.min().x() == doctest::Approx(3.0).epsilon(0.01));
    CHECK(box.max().y() == doctest::Approx(8.0).epsilon(0.01));
}

TEST_CASE("run-all is reproducible from config and seed")
{
    fs::path a = scratch() / "rep_a.chx", b = scratch() / "rep_b.chx";
    std::string common = "run-all --steps 20 --input " + cube_input().string() + " --config " + quick_config().string();
    REQUIRE(cli(common + " --out " + a.string()).exit == 0);
    REQUIRE(cli(common + " --out " + b.string()).exit == 0);
    CHECK(slurp(a) == slurp(b));

    Run other = cli(common + " --seed 6 --out " + b.string());
    REQUIRE(other.exit == 0);
    CHECK(slurp(a) != slurp(b));
}

TEST_CASE("config prints a loadable default")
{
    Run r = cli("config");
    CHECK(r.exit == 0);
    fs::path p = scratch() / "defaults.cfg";
    std::ofstream(p) << r.out;
    Run d = cli("deform --steps 1 --input " + cube_input().string() + " --out " + (scratch() / "d.chx").string() +
                " --config " + p.string());
    CHECK(d.exit == 0);
}
