#include "cubehex/pipeline.hpp"

#include "cubehex/error.hpp"

#include <charconv>
#include <set>
#include <sstream>

namespace cubehex
{

namespace
{

std::string trim(const std::string& s)
{
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string show(double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text)
{
    T v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end)
        throw Error(ErrorCode::Config, "invalid value '" + text + "' for " + key);
    return v;
}

struct Entry
{
    std::string key;
    std::function<void(PipelineConfig&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

template <class T>
using Ref = T& (*)(PipelineConfig&);

Entry real(std::string key, Ref<double> ref, double lo, bool open_lo)
{
    return {key,
            [=](PipelineConfig& c, const std::string& v) {
                double x = parse_number<double>(key, v);
                if (!std::isfinite(x) || x < lo || (open_lo && x == lo))
                    throw Error(ErrorCode::Config, key + " must be " + (open_lo ? "> " : ">= ") + show(lo));
                ref(c) = x;
            },
            [=](const PipelineConfig& c) { return show(ref(const_cast<PipelineConfig&>(c))); }};
}

Entry weight(std::string key, Ref<double> ref)
{
    return real(std::move(key), ref, 0.0, false);
}

Entry positive(std::string key, Ref<double> ref)
{
    return real(std::move(key), ref, 0.0, true);
}

Entry integer(std::string key, Ref<int> ref, int lo)
{
    return {key,
            [=](PipelineConfig& c, const std::string& v) {
                int x = parse_number<int>(key, v);
                if (x < lo)
                    throw Error(ErrorCode::Config, key + " must be >= " + std::to_string(lo));
                ref(c) = x;
            },
            [=](const PipelineConfig& c) { return std::to_string(ref(const_cast<PipelineConfig&>(c))); }};
}

Entry flag(std::string key, Ref<bool> ref)
{
    return {key,
            [=](PipelineConfig& c, const std::string& v) {
                if (v == "true" || v == "1")
                    ref(c) = true;
                else if (v == "false" || v == "0")
                    ref(c) = false;
                else
                    throw Error(ErrorCode::Config, "invalid value '" + v + "' for " + key + " (true or false)");
            },
            [=](const PipelineConfig& c) { return std::string(ref(const_cast<PipelineConfig&>(c)) ? "true" : "false"); }};
}

const std::vector<Entry>& entries()
{
    static const std::vector<Entry> table = {
        {"seed", [](PipelineConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
         [](const PipelineConfig& c) { return std::to_string(c.seed); }},

        integer("deform.steps", [](PipelineConfig& c) -> int& { return c.deform_steps; }, 0),
        positive("deform.lr", [](PipelineConfig& c) -> double& { return c.deform_lr; }),
        weight("deform.angle", [](PipelineConfig& c) -> double& { return c.deform.angle; }),
        weight("deform.vol", [](PipelineConfig& c) -> double& { return c.deform.vol; }),
        weight("deform.cube", [](PipelineConfig& c) -> double& { return c.deform.cube; }),
        weight("deform.smooth", [](PipelineConfig& c) -> double& { return c.deform.smooth; }),
        positive("deform.eps", [](PipelineConfig& c) -> double& { return c.deform.eps; }),

        integer("polycube.steps", [](PipelineConfig& c) -> int& { return c.polycube_steps; }, 0),
        positive("polycube.lr", [](PipelineConfig& c) -> double& { return c.polycube_lr; }),
        weight("polycube.plus", [](PipelineConfig& c) -> double& { return c.polycube.plus; }),
        weight("polycube.minus", [](PipelineConfig& c) -> double& { return c.polycube.minus; }),
        integer("polycube.anchor_grid", [](PipelineConfig& c) -> int& { return c.anchor_grid; }, 0),
        integer("polycube.anchor_samples", [](PipelineConfig& c) -> int& { return c.anchor_samples; }, 0),
        weight("polycube.anchor_sigma", [](PipelineConfig& c) -> double& { return c.anchor_sigma; }),
        positive("polycube.min_half", [](PipelineConfig& c) -> double& { return c.min_half; }),
        integer("polycube.suggest_grid", [](PipelineConfig& c) -> int& { return c.suggest_grid; }, 1),
        integer("polycube.max_cuboids", [](PipelineConfig& c) -> int& { return c.max_cuboids; }, 1),
        weight("polycube.min_add_fraction", [](PipelineConfig& c) -> double& { return c.min_add_fraction; }),

        weight("voxel.cell", [](PipelineConfig& c) -> double& { return c.voxel_cell; }),
        flag("voxel.allow_topology_override", [](PipelineConfig& c) -> bool& { return c.allow_topology_override; }),
        flag("voxel.pad", [](PipelineConfig& c) -> bool& { return c.pad; }),

        integer("pullback.steps", [](PipelineConfig& c) -> int& { return c.pullback_steps; }, 0),
        positive("pullback.lr", [](PipelineConfig& c) -> double& { return c.pullback_lr; }),
        weight("pullback.angle", [](PipelineConfig& c) -> double& { return c.pullback.angle; }),
        weight("pullback.vol", [](PipelineConfig& c) -> double& { return c.pullback.vol; }),
        weight("pullback.to_surface", [](PipelineConfig& c) -> double& { return c.pullback.to_surface; }),
        weight("pullback.from_surface", [](PipelineConfig& c) -> double& { return c.pullback.from_surface; }),
        weight("pullback.lap", [](PipelineConfig& c) -> double& { return c.pullback.lap; }),
        weight("pullback.pullback", [](PipelineConfig& c) -> double& { return c.pullback.pullback; }),
        positive("pullback.eps", [](PipelineConfig& c) -> double& { return c.pullback.eps; }),

        integer("quality.steps", [](PipelineConfig& c) -> int& { return c.quality_steps; }, 0),
        positive("quality.lr", [](PipelineConfig& c) -> double& { return c.quality_lr; }),
        weight("quality.lap", [](PipelineConfig& c) -> double& { return c.quality.lap; }),
        weight("quality.to_surface", [](PipelineConfig& c) -> double& { return c.quality.to_surface; }),
        weight("quality.from_surface", [](PipelineConfig& c) -> double& { return c.quality.from_surface; }),
        weight("quality.angle", [](PipelineConfig& c) -> double& { return c.quality.angle; }),
        weight("quality.vol", [](PipelineConfig& c) -> double& { return c.quality.vol; }),
        weight("quality.custom", [](PipelineConfig& c) -> double& { return c.quality.custom; }),
        positive("quality.eps", [](PipelineConfig& c) -> double& { return c.quality.eps; }),
        flag("quality.worst_distortion", [](PipelineConfig& c) -> bool& { return c.quality.worst_distortion; }),
        flag("quality.worst_custom", [](PipelineConfig& c) -> bool& { return c.quality.worst_custom; }),
        {"quality.mode",
         [](PipelineConfig& c, const std::string& v) {
             try
             {
                 c.mode = surface_mode_from_string(v);
             }
             catch (const Error& e)
             {
                 throw Error(ErrorCode::Config, e.what());
             }
         },
         [](const PipelineConfig& c) { return std::string(to_string(c.mode)); }},

        integer("report.samples", [](PipelineConfig& c) -> int& { return c.report_samples; }, 1),
    };
    return table;
}

const Entry* find_entry(const std::string& key)
{
    for (const Entry& e : entries())
        if (e.key == key)
            return &e;
    return nullptr;
}

} // namespace

void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value)
{
    const Entry* e = find_entry(key);
    if (!e)
        throw Error(ErrorCode::Config, "unknown config key '" + key + "'");
    e->set(config, value);
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> keys;
    for (const Entry& e : entries())
        keys.push_back(e.key);
    return keys;
}

PipelineConfig parse_config(const std::string& text)
{
    PipelineConfig config;
    std::istringstream in(text);
    std::string line;
    std::set<std::string> seen;
    int number = 0;
    while (std::getline(in, line))
    {
        ++number;
        size_t hash = line.find('#');
        if (hash != std::string::npos)
            line.resize(hash);
        line = trim(line);
        if (line.empty())
            continue;
        auto where = [&] { return "config line " + std::to_string(number) + ": "; };
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::Config, where() + "expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second)
            throw Error(ErrorCode::Config, where() + "repeated key '" + key + "'");
        try
        {
            set_config_value(config, key, value);
        }
        catch (const Error& e)
        {
            throw Error(ErrorCode::Config, where() + e.what());
        }
    }
    return config;
}

PipelineConfig load_config(const std::filesystem::path& path)
{
    std::string text = read_file(path);
    try
    {
        return parse_config(text);
    }
    catch (const Error& e)
    {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

std::string format_config(const PipelineConfig& config)
{
    std::string out;
    for (const Entry& e : entries())
        out += e.key + " = " + e.get(config) + "\n";
    return out;
}

std::uint64_t stage_seed(std::uint64_t base, Stage stage)
{
    return derive_seed(base, 1000 + static_cast<std::uint64_t>(stage));
}

Session new_session(TetMesh input, const Normalization& transform, std::uint64_t seed)
{
    validate(input);
    Session s;
    s.input = std::move(input);
    s.transform = transform;
    s.seeds["base"] = seed;
    s.cursor = Stage::Input;
    return s;
}

void truncate_session(Session& s, Stage stage)
{
    if (stage < Stage::Deformed)
        s.deformation.reset();
    if (stage < Stage::Decomposed)
    {
        s.polycube.reset();
        s.polycube_log.clear();
    }
    if (stage < Stage::Voxelized)
    {
        s.voxels.reset();
        s.hex.reset();
    }
    if (stage < Stage::PullbackPhase1)
        s.pullback.reset();
    else if (stage < Stage::PullbackPhase2 && s.pullback && s.pullback->phase_done > 1)
    {
        s.pullback->phase_done = 1;
        s.pullback->m.clear();
        s.pullback->targets.clear();
    }
    if (stage < Stage::Optimized)
        s.quality.reset();
    if (s.cursor > stage)
        s.cursor = stage;
}

namespace
{

void require(const Session& s, Stage stage, const char* what)
{
    if (s.cursor < stage)
        throw Error(ErrorCode::State, std::string(what) + " needs a session at stage '" + to_string(stage) +
                                          "' or later (it is at '" + to_string(s.cursor) + "')");
}

void add_warnings(StageResult& r)
{
    for (const std::string& w : r.loop.warnings)
        r.notices.push_back(w);
}

Box3 bounds(const Points& points)
{
    Box3 box;
    for (const Vec3& p : points)
        box.extend(p);
    return box;
}

std::string describe(const Cuboid& c)
{
    std::ostringstream out;
    out.precision(6);
    out << "[" << c.min().x() << "," << c.min().y() << "," << c.min().z() << "]-[" << c.max().x() << ","
        << c.max().y() << "," << c.max().z() << "]";
    return out.str();
}

} // namespace

TetMesh deformed_mesh(const Session& s)
{
    require(s, Stage::Deformed, "the deformed mesh");
    TetMesh m = *s.input;
    m.vertices = s.deformation->positions;
    return m;
}

HexMesh current_hex(const Session& s)
{
    require(s, Stage::Voxelized, "the hex mesh");
    HexMesh h = *s.hex;
    h.vertices = s.hex_positions();
    return h;
}

StageResult run_deform(Session& s, const PipelineConfig& c, const RunControl& control,
                       const LiveValue<DeformWeights>* live)
{
    require(s, Stage::Input, "deform");
    Deformer deformer(*s.input);
    DeformationState state = deformer.initial_state(c.deform);
    StageResult r;
    r.loop = deformer.run(state, c.deform_steps, c.deform_lr, control, live);
    add_warnings(r);
    truncate_session(s, Stage::Input);
    s.deformation = std::move(state);
    s.cursor = Stage::Deformed;
    return r;
}

namespace
{

AnchorSet session_anchors(const TetMeshQuery& dq, const PipelineConfig& c, Session& s, double diag)
{
    std::uint64_t seed = stage_seed(c.seed, Stage::Decomposed);
    s.seeds["polycube"] = seed;
    return make_anchors(dq, c.anchor_grid, c.anchor_samples, c.anchor_sigma * diag, seed);
}

} // namespace

StageResult fit_polycube(Session& s, const PipelineConfig& c, const RunControl& control,
                         const LiveValue<PolycubeWeights>* live)
{
    require(s, Stage::Deformed, "polycube-fit");
    TetMesh dm = deformed_mesh(s);
    TetMeshQuery dq(dm);
    Box3 box = bounds(dm.vertices);
    const double diag = box.diagonal().norm();
    AnchorSet anchors = session_anchors(dq, c, s, diag);
    ReoptimizeOptions ro{c.polycube_steps, c.polycube_lr, c.min_half * diag};

    PolyCube pc;
    std::vector<std::string> log;
    StageResult r;
    SuggestOptions so;
    so.grid_res = c.suggest_grid;
    const double box_volume = box.volume();
    while (static_cast<int>(pc.cuboids.size()) < c.max_cuboids)
    {
        Suggestion sg = suggest_add(pc, dq, AddMode::Volume, so);
        if (!sg.cuboid)
            break;
        double volume = 8.0 * sg.cuboid->half.prod();
        if (!pc.cuboids.empty() && volume < c.min_add_fraction * box_volume)
            break;
        add_cuboid(pc, *sg.cuboid);
        log.push_back("add " + describe(*sg.cuboid));
        r.loop = reoptimize(pc, anchors, c.polycube, ro, control, live);
        log.push_back("reoptimize");
        if (r.loop.cancelled)
            break;
    }
    add_warnings(r);
    truncate_session(s, Stage::Deformed);
    s.polycube = std::move(pc);
    s.polycube_log = std::move(log);
    s.cursor = Stage::Decomposed;
    return r;
}

StageResult reoptimize_polycube(Session& s, const PipelineConfig& c, const RunControl& control,
                                const LiveValue<PolycubeWeights>* live)
{
    require(s, Stage::Decomposed, "reoptimize");
    TetMesh dm = deformed_mesh(s);
    TetMeshQuery dq(dm);
    const double diag = bounds(dm.vertices).diagonal().norm();
    AnchorSet anchors = session_anchors(dq, c, s, diag);
    ReoptimizeOptions ro{c.polycube_steps, c.polycube_lr, c.min_half * diag};
    PolyCube pc = *s.polycube;
    StageResult r;
    r.loop = reoptimize(pc, anchors, c.polycube, ro, control, live);
    add_warnings(r);
    std::vector<std::string> log = s.polycube_log;
    truncate_session(s, Stage::Decomposed);
    s.polycube = std::move(pc);
    s.polycube_log = std::move(log);
    s.polycube_log.push_back("reoptimize");
    return r;
}

StageResult rebuild_hex(Session& s, const PipelineConfig& c)
{
    if (!s.voxels)
        throw Error(ErrorCode::State, "no voxel grid to build a hex mesh from");
    StageResult r;
    HexMesh hex = to_hex_mesh(*s.voxels, c.allow_topology_override);
    if (hex.topology_override)
        r.notices.push_back("voxel topology override: " + validate_topology(*s.voxels).summary());
    if (c.pad)
        hex = global_pad(hex, &r.notices);
    VoxelGrid grid = std::move(*s.voxels);
    truncate_session(s, Stage::Decomposed);
    s.voxels = std::move(grid);
    s.hex = std::move(hex);
    s.cursor = Stage::Voxelized;
    return r;
}

StageResult run_voxelize(Session& s, const PipelineConfig& c)
{
    require(s, Stage::Decomposed, "voxelize");
    double cell = c.voxel_cell;
    if (cell <= 0.0)
        cell = default_cell_size(bounds(s.deformation->positions));
    StageResult r;
    VoxelGrid grid = snap_and_voxelize(*s.polycube, cell, &r.notices);
    truncate_session(s, Stage::Decomposed);
    s.voxels = std::move(grid);
    StageResult built = rebuild_hex(s, c);
    r.notices.insert(r.notices.end(), built.notices.begin(), built.notices.end());
    return r;
}

StageResult run_pullback(Session& s, const PipelineConfig& c, int phase, const RunControl& control,
                         const LiveValue<PullbackWeights>* live)
{
    if (phase != 1 && phase != 2)
        throw Error(ErrorCode::InvalidArgument, "pullback phase must be 1 or 2");
    require(s, phase == 1 ? Stage::Voxelized : Stage::PullbackPhase1, phase == 1 ? "pullback phase 1" : "pullback phase 2");
    Pullback pb(*s.hex, deformed_mesh(s), *s.input);
    PullbackOptions opt;
    opt.n_steps = c.pullback_steps;
    opt.lr = c.pullback_lr;
    opt.seed = stage_seed(c.seed, Stage::PullbackPhase1);
    s.seeds["pullback"] = opt.seed;
    StageResult r;
    if (phase == 1)
    {
        PullbackState state = pb.initial_state(c.pullback);
        r.loop = pb.phase1(state, opt, control, live);
        truncate_session(s, Stage::Voxelized);
        s.pullback = std::move(state);
        s.cursor = Stage::PullbackPhase1;
    }
    else
    {
        truncate_session(s, Stage::PullbackPhase1);
        PullbackState state = *s.pullback;
        state.weights = c.pullback;
        r.loop = pb.phase2(state, opt, control, live);
        s.pullback = std::move(state);
        s.cursor = Stage::PullbackPhase2;
    }
    add_warnings(r);
    return r;
}

StageResult run_quality(Session& s, const PipelineConfig& c, const RunControl& control,
                        const LiveValue<QualityWeights>* live)
{
    require(s, Stage::PullbackPhase2, "optimize");
    QualityOptimizer opt(*s.hex, *s.input);
    QualityState state = s.quality ? *s.quality : opt.initial_state(s.pullback->m);
    if (state.mode != c.mode)
        opt.set_mode(state, c.mode);
    state.weights = c.quality;
    QualityOptions o;
    o.n_steps = c.quality_steps;
    o.lr = c.quality_lr;
    o.seed = stage_seed(c.seed, Stage::Optimized);
    s.seeds["quality"] = o.seed;
    StageResult r;
    r.loop = opt.run(state, o, control, live);
    add_warnings(r);
    s.quality = std::move(state);
    s.cursor = Stage::Optimized;
    return r;
}

QualityReport session_report(const Session& s, const PipelineConfig& c)
{
    return report_quality(current_hex(s), extract_boundary(*s.input), c.report_samples,
                          derive_seed(c.seed, 2000));
}

Notices run_all(Session& s, const PipelineConfig& c, const std::function<void(const std::string&)>& on_stage)
{
    require(s, Stage::Input, "run-all");
    Notices notices;
    auto step = [&](const char* name, const std::function<StageResult()>& fn) {
        if (on_stage)
            on_stage(name);
        StageResult r = fn();
        notices.insert(notices.end(), r.notices.begin(), r.notices.end());
    };
    step("deform", [&] { return run_deform(s, c); });
    step("polycube-fit", [&] { return fit_polycube(s, c); });
    step("voxelize", [&] { return run_voxelize(s, c); });
    step("pullback phase 1", [&] { return run_pullback(s, c, 1); });
    step("pullback phase 2", [&] { return run_pullback(s, c, 2); });
    step("optimize", [&] { return run_quality(s, c); });
    return notices;
}

} // namespace cubehex
