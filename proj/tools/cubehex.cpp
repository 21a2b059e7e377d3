// Command-line pipeline driver.

#include "cubehex/error.hpp"
#include "cubehex/pipeline.hpp"
#include "cubehex/studio.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <iostream>

using namespace cubehex;

namespace
{

enum Exit
{
    ok = 0,
    usage = 2,
    io = 3,
    mesh = 4,
    state = 5,
};

int exit_code(ErrorCode code)
{
    switch (code)
    {
    case ErrorCode::InvalidArgument:
    case ErrorCode::Config:
        return usage;
    case ErrorCode::Io:
        return io;
    case ErrorCode::Format:
    case ErrorCode::InvalidMesh:
        return mesh;
    case ErrorCode::Numerical:
    case ErrorCode::State:
        return state;
    }
    return state;
}

int report_error(const std::string& code, const std::string& message, int exit)
{
    nlohmann::json record = {{"error", code}, {"message", message}, {"exit", exit}};
    std::cerr << "error: " << record.dump() << '\n';
    return exit;
}

struct Common
{
    std::string session;
    std::string out;
    std::string config;
    std::string input;
    std::string export_path;
    std::uint64_t seed = 0;
    int steps = -1;
    bool have_seed = false;
};

PipelineConfig make_config(const Common& o, CLI::App* app)
{
    PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    if (app->count("--seed"))
        c.seed = o.seed;
    return c;
}

void note(const Notices& notices)
{
    for (const std::string& n : notices)
        std::cerr << "notice: " << n << '\n';
}

void summary(const char* stage, const StageResult& r)
{
    std::cerr << stage;
    if (!r.loop.history.empty() || r.loop.final_eval.grad.size() > 0)
        std::cerr << ": " << r.loop.history.size() << " steps, energy " << r.loop.final_eval.value;
    if (r.loop.cancelled)
        std::cerr << " (cancelled)";
    std::cerr << '\n';
    note(r.notices);
}

Session open_session(const Common& o)
{
    if (o.session.empty())
        throw Error(ErrorCode::InvalidArgument, "--session is required");
    return load_session(o.session);
}

Session start_session(const Common& o, const PipelineConfig& c)
{
    if (o.input.empty())
        return open_session(o);
    LoadedTetMesh in = load_tet_mesh(o.input);
    note(in.notices);
    return new_session(std::move(in.mesh), in.transform, c.seed);
}

void finish(const Common& o, const Session& s)
{
    std::string target = o.out.empty() ? o.session : o.out;
    if (target.empty())
        throw Error(ErrorCode::InvalidArgument, "--out is required when no --session is given");
    save_session(target, s);
    if (!o.export_path.empty())
    {
        if (s.cursor < Stage::Voxelized)
            throw Error(ErrorCode::State, "nothing to export before voxelization");
        save_hex_mesh(o.export_path, current_hex(s), s.transform);
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"cubehex: all-hex meshing with cuboid polycubes"};
    app.require_subcommand(1);
    Common o;
    int phase = 0;
    bool as_json = false;
    int port = 0;

    auto add_common = [&](CLI::App* sub, bool input) {
        sub->add_option("--session", o.session, "session file to read");
        sub->add_option("--out", o.out, "session file to write (default: --session)");
        sub->add_option("--config", o.config, "key = value config file");
        sub->add_option("--seed", o.seed, "base seed (overrides the config)");
        sub->add_option("--steps", o.steps, "optimizer steps for this stage (overrides the config)");
        sub->add_option("--export", o.export_path, "write the hex mesh (.mesh, .vtk or .obj)");
        if (input)
            sub->add_option("--input", o.input, "tetrahedral input mesh (.mesh or .vtk)");
    };

    CLI::App* deform = app.add_subcommand("deform", "deform the input toward a near-polycube");
    add_common(deform, true);
    CLI::App* fit = app.add_subcommand("polycube-fit", "decompose the deformed mesh into cuboids");
    add_common(fit, false);
    CLI::App* vox = app.add_subcommand("voxelize", "snap the cuboids to a lattice and build the hex mesh");
    add_common(vox, false);
    CLI::App* pull = app.add_subcommand("pullback", "pull the lattice mesh back onto the input");
    add_common(pull, false);
    pull->add_option("--phase", phase, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    CLI::App* opt = app.add_subcommand("optimize", "hex mesh quality optimization");
    add_common(opt, false);
    CLI::App* rep = app.add_subcommand("report", "print quality metrics");
    add_common(rep, false);
    rep->add_flag("--json", as_json, "machine-readable record");
    CLI::App* all = app.add_subcommand("run-all", "every stage with the config's settings");
    add_common(all, true);
    CLI::App* cfg = app.add_subcommand("config", "print the default config");
    CLI::App* serve = app.add_subcommand("serve", "studio service on 127.0.0.1");
    add_common(serve, false);
    serve->add_option("--port", port, "TCP port (0 picks one)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        return report_error("usage", e.what(), usage);
    }

    try
    {
        if (cfg->parsed())
        {
            std::cout << format_config(PipelineConfig{});
            return ok;
        }
        CLI::App* sub = app.get_subcommands().front();
        PipelineConfig c = make_config(o, sub);
        const bool steps = o.steps >= 0;

        if (deform->parsed())
        {
            Session s = start_session(o, c);
            if (steps)
                c.deform_steps = o.steps;
            summary("deform", run_deform(s, c));
            finish(o, s);
        }
        else if (fit->parsed())
        {
            Session s = open_session(o);
            if (steps)
                c.polycube_steps = o.steps;
            StageResult r = fit_polycube(s, c);
            summary("polycube-fit", r);
            std::cerr << s.polycube->cuboids.size() << " cuboid(s)\n";
            finish(o, s);
        }
        else if (vox->parsed())
        {
            Session s = open_session(o);
            summary("voxelize", run_voxelize(s, c));
            std::cerr << s.voxels->size() << " voxel(s), " << s.hex->hexes.size() << " hex(es)\n";
            finish(o, s);
        }
        else if (pull->parsed())
        {
            Session s = open_session(o);
            if (steps)
                c.pullback_steps = o.steps;
            summary(phase == 1 ? "pullback phase 1" : "pullback phase 2", run_pullback(s, c, phase));
            finish(o, s);
        }
        else if (opt->parsed())
        {
            Session s = open_session(o);
            if (steps)
                c.quality_steps = o.steps;
            summary("optimize", run_quality(s, c));
            finish(o, s);
        }
        else if (rep->parsed())
        {
            Session s = open_session(o);
            QualityReport r = session_report(s, c);
            int n = static_cast<int>(s.hex->hexes.size());
            std::cout << (as_json ? report_json(r, n) + "\n" : format_report(r, n));
            if (!o.export_path.empty())
                save_hex_mesh(o.export_path, current_hex(s), s.transform);
        }
        else if (all->parsed())
        {
            Session s = start_session(o, c);
            if (steps)
                c.deform_steps = c.polycube_steps = c.pullback_steps = c.quality_steps = o.steps;
            note(run_all(s, c, [](const std::string& stage) { std::cerr << "stage: " << stage << '\n'; }));
            finish(o, s);
            QualityReport r = session_report(s, c);
            std::cout << format_report(r, static_cast<int>(s.hex->hexes.size()));
        }
        else if (serve->parsed())
        {
            Session s = open_session(o);
            StudioServer server(std::move(s), c, o.out.empty() ? o.session : o.out);
            server.listen(static_cast<std::uint16_t>(port));
            std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
            server.serve_forever();
        }
        return ok;
    }
    catch (const Error& e)
    {
        int code = exit_code(e.code());
        return report_error(to_string(e.code()), e.what(), code);
    }
    catch (const std::exception& e)
    {
        return report_error("internal", e.what(), state);
    }
}
