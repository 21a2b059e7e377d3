#include "cubehex/error.hpp"
#include "cubehex/studio.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace cubehex
{

using nlohmann::json;
using studio::Frame;
using studio::FrameKind;

StudioClient::~StudioClient()
{
    close();
}

void StudioClient::close()
{
    if (fd_ >= 0)
        ::close(fd_);
    fd_ = -1;
}

void StudioClient::connect(std::uint16_t port, std::uint32_t version)
{
    close();
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0)
        throw Error(ErrorCode::Io, std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
    {
        std::string why = std::strerror(errno);
        close();
        throw Error(ErrorCode::Io, "cannot connect to 127.0.0.1:" + std::to_string(port) + ": " + why);
    }
    studio::write_frame(fd_, Frame{FrameKind::Hello, {{"protocol", version}, {"client", "cubehex-client"}}, {}});
    Frame reply;
    if (!read_with_timeout(reply, std::chrono::milliseconds(10000)) || reply.kind != FrameKind::Hello)
    {
        close();
        throw Error(ErrorCode::State, "no hello from the server");
    }
    hello_ = reply.header;
    if (hello_.value("status", "") != "ok")
    {
        close();
        throw Error(ErrorCode::State, "server refused the connection: " + hello_.value("message", std::string("?")));
    }
    events_.clear();
    mirror_.clear();
}

bool StudioClient::read_with_timeout(Frame& frame, std::chrono::milliseconds timeout)
{
    if (fd_ < 0)
        throw Error(ErrorCode::State, "not connected");
    pollfd p{fd_, POLLIN, 0};
    int r;
    do
        r = ::poll(&p, 1, static_cast<int>(timeout.count()));
    while (r < 0 && errno == EINTR);
    if (r < 0)
        throw Error(ErrorCode::Io, std::string("poll: ") + std::strerror(errno));
    if (r == 0)
        return false;
    if (!studio::read_frame(fd_, frame))
        throw Error(ErrorCode::Io, "server closed the connection");
    if (frame.kind == FrameKind::Event && frame.header.value("type", "") == "state-delta")
        studio::apply_delta(mirror_, frame);
    return true;
}

Frame StudioClient::request(const std::string& command, const json& payload, const std::string& stage,
                            std::chrono::milliseconds timeout)
{
    const std::uint64_t id = next_id_++;
    json header = {{"id", id}, {"command", command}, {"payload", payload}};
    if (!stage.empty())
        header["stage"] = stage;
    studio::write_frame(fd_, Frame{FrameKind::Request, header, {}});
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;)
    {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        Frame f;
        if (left.count() <= 0 || !read_with_timeout(f, left))
            throw Error(ErrorCode::State, "no response to '" + command + "'");
        if (f.kind == FrameKind::Event)
            events_.push_back(std::move(f));
        else if (f.kind == FrameKind::Response && f.header.value("id", json()) == json(id))
            return f;
    }
}

std::optional<Frame> StudioClient::next_event(std::chrono::milliseconds timeout)
{
    if (!events_.empty())
    {
        Frame f = std::move(events_.front());
        events_.pop_front();
        return f;
    }
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;)
    {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        Frame f;
        if (left.count() < 0 || !read_with_timeout(f, std::max(left, std::chrono::milliseconds(0))))
            return std::nullopt;
        if (f.kind == FrameKind::Event)
            return f;
    }
}

Frame StudioClient::wait_event(const std::function<bool(const Frame&)>& pred, std::chrono::milliseconds timeout)
{
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;)
    {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        std::optional<Frame> f = next_event(std::max(left, std::chrono::milliseconds(0)));
        if (!f)
            throw Error(ErrorCode::State, "timed out waiting for an event");
        if (pred(*f))
            return *f;
    }
}

std::uint32_t StudioClient::sync()
{
    Frame r = request("get-state");
    if (r.header.value("status", "") != "ok")
        throw Error(ErrorCode::State, "get-state failed");
    mirror_.clear();
    for (auto& [name, b] : r.buffers)
        mirror_[name] = b;
    return r.header.at("payload").at("checksum").get<std::uint32_t>();
}

} // namespace cubehex
