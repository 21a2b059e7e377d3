#include "cubehex/error.hpp"
#include "cubehex/studio.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

namespace cubehex
{

using nlohmann::json;
using studio::Frame;
using studio::FrameKind;

namespace
{

const std::vector<std::string> run_stages = {"deform",          "polycube-fit",    "reoptimize", "voxelize",
                                             "pullback-phase1", "pullback-phase2", "optimize"};

Vec3 vec(const json& payload, const char* key)
{
    const json& a = payload.at(key);
    return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
}

std::string value_text(const json& v)
{
    return v.is_string() ? v.get<std::string>() : v.dump();
}

json error_payload(ErrorCode code, const std::string& message)
{
    return {{"code", to_string(code)}, {"message", message}};
}

Points gather(const Points& positions, const std::vector<int>& index)
{
    Points out(index.size());
    for (size_t i = 0; i < index.size(); ++i)
        out[i] = positions[static_cast<size_t>(index[i])];
    return out;
}

} // namespace

StudioServer::StudioServer(Session session, PipelineConfig config, std::filesystem::path save_path)
    : session_(std::move(session)), config_(std::move(config)), save_path_(std::move(save_path))
{
    session_.check();
    published_ = studio::session_state(session_, config_);
}

StudioServer::~StudioServer()
{
    stop();
    if (client_thread_.joinable())
        client_thread_.join();
    cancel_ = true;
    if (worker_.joinable())
        worker_.join();
    if (listen_fd_ >= 0)
        ::close(listen_fd_);
}

void StudioServer::listen(std::uint16_t port)
{
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
        throw Error(ErrorCode::Io, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
        throw Error(ErrorCode::Io, "cannot bind 127.0.0.1:" + std::to_string(port) + ": " + std::strerror(errno));
    if (::listen(listen_fd_, 4) < 0)
        throw Error(ErrorCode::Io, std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

void StudioServer::serve_forever()
{
    if (listen_fd_ < 0)
        throw Error(ErrorCode::State, "listen() first");
    while (!stopping_)
    {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0)
        {
            if (stopping_)
                break;
            if (errno == EINTR || errno == ECONNABORTED)
                continue;
            throw Error(ErrorCode::Io, std::string("accept: ") + std::strerror(errno));
        }
        if (client_active_)
        {
            Frame refuse{FrameKind::Hello, {{"status", "error"}, {"message", "session already has a client"}}, {}};
            try
            {
                studio::write_frame(fd, refuse);
            }
            catch (const Error&)
            {
            }
            ::close(fd);
            continue;
        }
        if (client_thread_.joinable())
            client_thread_.join();
        client_active_ = true;
        client_thread_ = std::thread([this, fd] { handle_client(fd); });
    }
    if (client_thread_.joinable())
        client_thread_.join();
}

void StudioServer::stop()
{
    stopping_ = true;
    if (listen_fd_ >= 0)
        ::shutdown(listen_fd_, SHUT_RDWR);
    std::lock_guard<std::mutex> lock(write_mutex_);
    if (client_fd_ >= 0)
        ::shutdown(client_fd_, SHUT_RDWR);
}

Session StudioServer::session() const
{
    std::lock_guard<std::mutex> lock(mutex_);
    return session_;
}

PipelineConfig StudioServer::config() const
{
    std::lock_guard<std::mutex> lock(mutex_);
    return config_;
}

void StudioServer::send(const Frame& frame)
{
    std::lock_guard<std::mutex> lock(write_mutex_);
    if (client_fd_ < 0)
        return;
    try
    {
        studio::write_frame(client_fd_, frame);
    }
    catch (const Error&)
    {
        // the reader notices the closed connection
    }
}

void StudioServer::emit_locked(const std::string& type, json payload,
                               std::vector<std::pair<std::string, studio::Buffer>> buffers)
{
    Frame f{FrameKind::Event, {{"seq", ++seq_}, {"type", type}, {"payload", std::move(payload)}}, std::move(buffers)};
    send(f);
}

void StudioServer::publish_locked(const studio::StateMap& next, bool full)
{
    json changed = json::array(), removed = json::array();
    std::vector<std::pair<std::string, studio::Buffer>> buffers;
    for (const auto& [name, b] : next)
    {
        auto it = published_.find(name);
        if (it == published_.end() || !(it->second == b))
        {
            changed.push_back(name);
            buffers.emplace_back(name, b);
        }
    }
    if (full)
        for (const auto& [name, b] : published_)
            if (!next.count(name))
                removed.push_back(name);
    if (changed.empty() && removed.empty())
        return;
    for (const json& n : removed)
        published_.erase(n.get<std::string>());
    for (const auto& [name, b] : buffers)
        published_[name] = b;
    emit_locked("state-delta",
                {{"changed", changed}, {"removed", removed}, {"checksum", studio::state_checksum(published_)}},
                std::move(buffers));
}

void StudioServer::handle_client(int fd)
{
    try
    {
        Frame hello;
        if (studio::read_frame(fd, hello))
        {
            std::uint32_t version = hello.header.value("protocol", 0u);
            if (hello.kind != FrameKind::Hello || version != studio::protocol_version)
            {
                studio::write_frame(fd, Frame{FrameKind::Hello,
                                              {{"status", "error"},
                                               {"protocol", studio::protocol_version},
                                               {"message", "unsupported protocol version " + std::to_string(version)}},
                                              {}});
            }
            else
            {
                {
                    std::lock_guard<std::mutex> lock(write_mutex_);
                    client_fd_ = fd;
                }
                std::string stage;
                {
                    std::lock_guard<std::mutex> lock(mutex_);
                    stage = to_string(session_.cursor);
                }
                send(Frame{FrameKind::Hello,
                           {{"status", "ok"}, {"protocol", studio::protocol_version}, {"server", "cubehex"}, {"stage", stage}},
                           {}});
                Frame request;
                while (!stopping_ && studio::read_frame(fd, request))
                {
                    if (request.kind != FrameKind::Request)
                    {
                        send(Frame{FrameKind::Response,
                                   {{"id", nullptr},
                                    {"status", "error"},
                                    {"payload", error_payload(ErrorCode::Format, "expected a request frame")}},
                                   {}});
                        continue;
                    }
                    Reply reply = handle(request);
                    if (!reply.sent)
                        send(reply.frame);
                    if (reply.after)
                        reply.after();
                }
            }
        }
    }
    catch (const Error&)
    {
        // malformed traffic or a dropped connection ends the client
    }
    cancel_ = true;
    if (worker_.joinable())
        worker_.join();
    {
        std::lock_guard<std::mutex> lock(write_mutex_);
        client_fd_ = -1;
    }
    ::close(fd);
    client_active_ = false;
}

StudioServer::Reply StudioServer::handle(const Frame& request)
{
    Reply reply;
    const json& h = request.header;
    json id = h.contains("id") ? h["id"] : json(nullptr);
    reply.frame.kind = FrameKind::Response;
    reply.frame.header = {{"id", id}, {"status", "ok"}, {"payload", json::object()}};
    auto fail = [&](const std::string& status, json payload) {
        reply.frame.header["status"] = status;
        reply.frame.header["payload"] = std::move(payload);
        reply.frame.buffers.clear();
    };
    const json busy = {{"message", "an optimization is running; only weight updates and cancel are accepted"}};
    try
    {
        std::string command = h.at("command").get<std::string>();
        std::string stage = h.value("stage", "");
        json payload = h.contains("payload") ? h["payload"] : json::object();

        if (command == "get-state")
        {
            // Sent under the lock so no delta can overtake the snapshot.
            std::lock_guard<std::mutex> lock(mutex_);
            reply.frame.header["payload"] = {{"checksum", studio::state_checksum(published_)},
                                             {"stage", to_string(session_.cursor)},
                                             {"running", running_.load()}};
            for (const auto& [name, b] : published_)
                reply.frame.buffers.emplace_back(name, b);
            send(reply.frame);
            reply.sent = true;
        }
        else if (command == "mutate")
        {
            std::string op = payload.at("op").get<std::string>();
            bool weights = op == "set-weights";
            if (!weights && running_)
                fail("busy", busy);
            else
            {
                std::lock_guard<std::mutex> lock(mutex_);
                reply.frame.header["payload"] = mutate(payload, weights);
            }
        }
        else if (command == "optimize-start")
        {
            if (stage.empty())
                stage = payload.value("stage", "");
            if (std::find(run_stages.begin(), run_stages.end(), stage) == run_stages.end())
                throw Error(ErrorCode::InvalidArgument, "unknown stage '" + stage + "'");
            if (running_)
                fail("busy", busy);
            else
            {
                running_ = true;
                cancel_ = false;
                reply.frame.header["payload"] = {{"stage", stage}};
                reply.after = [this, stage] { start_run(stage); };
            }
        }
        else if (command == "cancel")
        {
            bool was = running_;
            if (was)
                cancel_ = true;
            reply.frame.header["payload"] = {{"was_running", was}};
        }
        else if (command == "query")
        {
            std::lock_guard<std::mutex> lock(mutex_);
            reply.frame.header["payload"] = query(payload, reply.frame.buffers);
        }
        else if (command == "save")
        {
            if (running_)
                fail("busy", busy);
            else
            {
                std::lock_guard<std::mutex> lock(mutex_);
                std::filesystem::path path = payload.contains("path") ? payload["path"].get<std::string>()
                                                                      : save_path_.string();
                if (path.empty())
                    throw Error(ErrorCode::InvalidArgument, "no save path");
                save_session(path, session_);
                reply.frame.header["payload"] = {{"path", path.string()}};
            }
        }
        else
            throw Error(ErrorCode::InvalidArgument, "unknown command '" + command + "'");
    }
    catch (const Error& e)
    {
        fail("error", error_payload(e.code(), e.what()));
    }
    catch (const json::exception& e)
    {
        fail("error", error_payload(ErrorCode::InvalidArgument, std::string("bad request: ") + e.what()));
    }
    return reply;
}

json StudioServer::mutate(const json& payload, bool& weights_only)
{
    const std::string op = payload.at("op").get<std::string>();
    Session& s = session_;
    json result = json::object();

    if (weights_only)
    {
        PipelineConfig c = config_;
        for (const auto& [key, value] : payload.at("values").items())
            set_config_value(c, key, value_text(value));
        config_ = c;
        live_deform_.set(c.deform);
        live_polycube_.set(c.polycube);
        live_pullback_.set(c.pullback);
        live_quality_.set(c.quality);
        studio::StateMap next = published_;
        next["meta"] = studio::text(studio::meta_text(s, config_));
        publish_locked(next, false);
        return result;
    }

    static const std::set<std::string> cuboid_ops = {"add-cuboid",  "remove-cuboid", "duplicate-cuboid",
                                                     "move-cuboid", "resize-cuboid", "lock-cuboid",
                                                     "snap-cuboid", "suggest-add",   "suggest-subtract",
                                                     "subtract"};
    static const std::set<std::string> voxel_ops = {"voxel-add", "voxel-remove", "voxel-undo", "rebuild-hex"};
    static const std::set<std::string> hex_ops = {"landmark-set", "landmark-remove", "set-mode"};

    if (cuboid_ops.count(op))
    {
        if (s.cursor < Stage::Deformed)
            throw Error(ErrorCode::State, "cuboid edits need a deformed mesh");
        PolyCube pc = s.polycube ? *s.polycube : PolyCube{};
        std::vector<std::string> log = s.polycube_log;
        std::string entry = op;
        auto id = [&] { return payload.at("id").get<int>(); };
        if (op == "add-cuboid")
            add_cuboid(pc, Cuboid{vec(payload, "center"), vec(payload, "half"), payload.value("locked", false)});
        else if (op == "remove-cuboid")
            remove_cuboid(pc, id());
        else if (op == "duplicate-cuboid")
            duplicate_cuboid(pc, id());
        else if (op == "move-cuboid")
            move_cuboid(pc, id(), vec(payload, "center"));
        else if (op == "resize-cuboid")
            resize_cuboid(pc, id(), vec(payload, "half"));
        else if (op == "lock-cuboid")
            lock_cuboid(pc, id(), payload.value("locked", true));
        else if (op == "snap-cuboid")
            sticky_snap(pc, id(), payload.at("tolerance").get<double>());
        else if (op == "subtract")
            pc = apply_subtract(pc, Cuboid::from_bounds(vec(payload, "min"), vec(payload, "max")));
        else
        {
            TetMesh dm = deformed_mesh(s);
            TetMeshQuery dq(dm);
            SuggestOptions so;
            so.grid_res = config_.suggest_grid;
            Suggestion sg;
            if (op == "suggest-add")
            {
                AddMode mode = payload.value("mode", "distance") == "volume" ? AddMode::Volume : AddMode::Distance;
                sg = suggest_add(pc, dq, mode, so);
                if (sg.cuboid)
                    add_cuboid(pc, *sg.cuboid);
            }
            else
            {
                sg = suggest_subtract(pc, dq, so);
                if (sg.cuboid)
                    pc = apply_subtract(pc, *sg.cuboid);
            }
            result["status"] = sg.status;
        }
        if (payload.contains("id"))
            entry += " " + std::to_string(payload["id"].get<int>());
        log.push_back(entry);
        truncate_session(s, Stage::Deformed);
        if (!pc.cuboids.empty())
        {
            s.polycube = std::move(pc);
            s.polycube_log = std::move(log);
            s.cursor = Stage::Decomposed;
        }
        result["cuboids"] = s.polycube ? s.polycube->cuboids.size() : 0;
    }
    else if (voxel_ops.count(op))
    {
        if (!s.voxels)
            throw Error(ErrorCode::State, "voxel edits need a voxel grid");
        VoxelGrid g = *s.voxels;
        if (op == "voxel-add" || op == "voxel-remove")
        {
            VoxelTarget target;
            if (payload.contains("cell"))
                target = VoxelTarget::single(payload["cell"].get<VoxelKey>());
            else
            {
                std::optional<std::array<int, 4>> region;
                if (payload.contains("region"))
                    region = payload["region"].get<std::array<int, 4>>();
                target = VoxelTarget::layer(payload.at("axis").get<int>(), payload.at("index").get<int>(), region);
            }
            EditResult er = edit_voxels(g, op == "voxel-add", target);
            result["changed"] = er.changed;
            result["notices"] = er.notices;
        }
        else if (op == "voxel-undo")
            result["undone"] = undo_voxels(g, payload.value("n", 1));
        s.voxels = std::move(g);
        try
        {
            StageResult r = rebuild_hex(s, config_);
            result["notices"] = r.notices;
            result["hexes"] = s.hex->hexes.size();
        }
        catch (const Error& e)
        {
            if (e.code() != ErrorCode::InvalidMesh)
                throw;
            // Grid kept so the user can fix it; no hex mesh until the topology is clean.
            s.hex.reset();
            s.pullback.reset();
            s.quality.reset();
            s.cursor = Stage::Decomposed;
            result["topology"] = e.what();
            emit_locked("warning", error_payload(e.code(), e.what()));
        }
    }
    else if (hex_ops.count(op))
    {
        if (s.cursor < Stage::PullbackPhase2)
            throw Error(ErrorCode::State, op + " needs a pulled-back hex mesh");
        QualityOptimizer opt(*s.hex, *s.input);
        QualityState q = s.quality ? *s.quality : opt.initial_state(s.pullback->m);
        if (!s.quality && q.mode != config_.mode)
            opt.set_mode(q, config_.mode);
        if (op == "set-mode")
        {
            SurfaceMode mode = surface_mode_from_string(payload.at("mode").get<std::string>());
            opt.set_mode(q, mode);
            config_.mode = mode;
        }
        else
        {
            LandmarkSet lm = q.landmarks;
            int vid = payload.at("id").get<int>();
            if (op == "landmark-set")
                lm[vid] = vec(payload, "position");
            else if (!lm.erase(vid))
                throw Error(ErrorCode::InvalidArgument, "vertex " + std::to_string(vid) + " is not a landmark");
            opt.set_landmarks(q, std::move(lm));
        }
        s.quality = std::move(q);
        result["landmarks"] = s.quality->landmarks.size();
    }
    else
        throw Error(ErrorCode::InvalidArgument, "unknown mutation '" + op + "'");

    publish_locked(studio::session_state(s, config_), true);
    return result;
}

json StudioServer::query(const json& payload, std::vector<std::pair<std::string, studio::Buffer>>& out)
{
    std::string kind = payload.at("kind").get<std::string>();
    if (kind == "filter")
    {
        ElementFilter f;
        std::string type = payload.value("filter", "quality");
        if (type == "plane")
        {
            f.kind = ElementFilter::Kind::Plane;
            f.point = vec(payload, "point");
            f.normal = vec(payload, "normal");
        }
        else if (type == "quality")
        {
            f.kind = ElementFilter::Kind::Quality;
            f.threshold = payload.at("threshold").get<double>();
        }
        else
            throw Error(ErrorCode::InvalidArgument, "unknown filter '" + type + "'");
        std::vector<int> ids = filter_elements(current_hex(session_), f);
        out.emplace_back("ids", studio::u32_indices(ids.data(), ids.size()));
        return {{"count", ids.size()}};
    }
    if (kind == "report")
    {
        PipelineConfig c = config_;
        if (payload.contains("samples"))
            c.report_samples = payload["samples"].get<int>();
        QualityReport r = session_report(session_, c);
        return json::parse(report_json(r, static_cast<int>(session_.hex->hexes.size())));
    }
    throw Error(ErrorCode::InvalidArgument, "unknown query '" + kind + "'");
}

void StudioServer::start_run(const std::string& stage)
{
    if (worker_.joinable())
        worker_.join();
    worker_ = std::thread([this, stage] { run_worker(stage); });
}

void StudioServer::run_worker(std::string stage)
{
    Session work;
    PipelineConfig c;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        work = session_;
        c = config_;
    }
    live_deform_.set(c.deform);
    live_polycube_.set(c.polycube);
    live_pullback_.set(c.pullback);
    live_quality_.set(c.quality);

    // Per-step geometry for the throttled deltas.
    std::function<studio::StateMap(const Eigen::VectorXd&)> geometry;
    int total = 0;
    std::optional<QualityOptimizer> decoder;
    QualityState decode_state;
    try
    {
        if (stage == "deform")
        {
            total = c.deform_steps;
            std::vector<int> vi = extract_boundary(*work.input).volume_index;
            geometry = [vi](const Eigen::VectorXd& x) {
                return studio::StateMap{{"deformed.surface.vertices", studio::f32_points(gather(unflatten(x), vi))}};
            };
        }
        else if (stage == "polycube-fit" || stage == "reoptimize")
        {
            total = c.polycube_steps;
            std::vector<char> locks;
            if (stage == "reoptimize" && work.polycube)
                for (const Cuboid& q : work.polycube->cuboids)
                    locks.push_back(q.locked);
            geometry = [this, locks, view = work](const Eigen::VectorXd& x) mutable {
                PolyCube pc;
                pc.cuboids.resize(static_cast<size_t>(x.size() / 6));
                unpack(x, pc);
                for (size_t i = 0; i < pc.cuboids.size() && i < locks.size(); ++i)
                    pc.cuboids[i].locked = locks[i] != 0;
                view.polycube = pc;
                return studio::StateMap{{"meta", studio::text(studio::meta_text(view, config_))}};
            };
        }
        else if (stage == "pullback-phase1" || stage == "pullback-phase2")
        {
            total = c.pullback_steps;
            if (work.hex)
            {
                std::vector<int> vi = extract_boundary(*work.hex).volume_index;
                geometry = [vi](const Eigen::VectorXd& x) {
                    return studio::StateMap{{"hex.surface.vertices", studio::f32_points(gather(unflatten(x), vi))}};
                };
            }
        }
        else if (stage == "optimize")
        {
            total = c.quality_steps;
            if (work.hex && work.pullback && work.pullback->phase_done >= 2)
            {
                decoder.emplace(*work.hex, *work.input);
                decode_state = work.quality ? *work.quality : decoder->initial_state(work.pullback->m);
                if (decode_state.mode != c.mode)
                    decoder->set_mode(decode_state, c.mode);
                std::vector<int> vi = extract_boundary(*work.hex).volume_index;
                geometry = [&, vi](const Eigen::VectorXd& x) {
                    return studio::StateMap{
                        {"hex.surface.vertices", studio::f32_points(gather(decoder->positions(x, decode_state), vi))}};
                };
            }
        }
    }
    catch (const Error&)
    {
        geometry = nullptr;  // the stage itself reports the problem below
    }

    auto last_geometry = std::chrono::steady_clock::now() - geometry_interval;
    RunControl control;
    control.cancel = &cancel_;
    control.on_step = [&](const StepInfo& info) {
        json terms = json::object();
        for (const EnergyTerm& t : info.eval->terms)
            terms[t.name] = t.value;
        std::lock_guard<std::mutex> lock(mutex_);
        emit_locked("progress", {{"stage", stage},
                                 {"step", info.step},
                                 {"steps", total},
                                 {"energy", info.eval->value},
                                 {"terms", terms},
                                 {"lr", info.lr_used},
                                 {"done", false}});
        auto now = std::chrono::steady_clock::now();
        if (geometry && now - last_geometry >= geometry_interval)
        {
            studio::StateMap next = published_;
            for (auto& [name, b] : geometry(*info.params))
                next[name] = std::move(b);
            publish_locked(next, false);
            last_geometry = now;
        }
        return true;
    };

    StageResult r;
    bool failed = false;
    json failure;
    try
    {
        if (stage == "deform")
            r = run_deform(work, c, control, &live_deform_);
        else if (stage == "polycube-fit")
            r = fit_polycube(work, c, control, &live_polycube_);
        else if (stage == "reoptimize")
            r = reoptimize_polycube(work, c, control, &live_polycube_);
        else if (stage == "voxelize")
            r = run_voxelize(work, c);
        else if (stage == "pullback-phase1")
            r = run_pullback(work, c, 1, control, &live_pullback_);
        else if (stage == "pullback-phase2")
            r = run_pullback(work, c, 2, control, &live_pullback_);
        else
            r = run_quality(work, c, control, &live_quality_);
    }
    catch (const Error& e)
    {
        failed = true;
        failure = error_payload(e.code(), e.what());
    }
    catch (const std::exception& e)
    {
        failed = true;
        failure = {{"code", "internal"}, {"message", e.what()}};
    }

    std::lock_guard<std::mutex> lock(mutex_);
    if (!failed)
        session_ = std::move(work);
    publish_locked(studio::session_state(session_, config_), true);
    for (const std::string& n : r.notices)
        emit_locked("warning", {{"message", n}});
    if (failed)
        emit_locked("warning", failure);
    running_ = false;
    emit_locked("progress", {{"stage", stage},
                             {"done", true},
                             {"failed", failed},
                             {"cancelled", r.loop.cancelled},
                             {"step", static_cast<std::int64_t>(r.loop.history.size())},
                             {"steps", total},
                             {"checksum", studio::state_checksum(published_)}});
}

} // namespace cubehex
