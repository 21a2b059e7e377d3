#include "cubehex/error.hpp"
#include "cubehex/studio.hpp"

#include <zlib.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <sys/socket.h>
#include <unistd.h>

namespace cubehex::studio
{

using nlohmann::json;

namespace
{

template <class T>
void put(std::string& out, T v)
{
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T get(const char* p)
{
    char buf[sizeof(T)];
    std::memcpy(buf, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

BufferType type_from_string(const std::string& s)
{
    for (BufferType t : {BufferType::F32, BufferType::U32, BufferType::I32, BufferType::U8})
        if (s == to_string(t))
            return t;
    throw Error(ErrorCode::Format, "unknown buffer type '" + s + "'");
}

template <class T>
std::vector<T> values(const Buffer& b, BufferType expected)
{
    if (b.type != expected)
        throw Error(ErrorCode::Format, std::string("buffer is ") + to_string(b.type) + ", expected " +
                                           to_string(expected));
    std::vector<T> out(b.count());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = get<T>(b.bytes.data() + i * sizeof(T));
    return out;
}

} // namespace

const char* to_string(BufferType type)
{
    switch (type)
    {
    case BufferType::F32:
        return "f32";
    case BufferType::U32:
        return "u32";
    case BufferType::I32:
        return "i32";
    case BufferType::U8:
        return "u8";
    }
    return "u8";
}

size_t element_size(BufferType type)
{
    return type == BufferType::U8 ? 1 : 4;
}

Buffer f32_points(const Points& points)
{
    Buffer b{BufferType::F32, {}};
    b.bytes.reserve(12 * points.size());
    for (const Vec3& p : points)
        for (int k = 0; k < 3; ++k)
            put(b.bytes, static_cast<float>(p[k]));
    return b;
}

Buffer u32_indices(const int* data, size_t n)
{
    Buffer b{BufferType::U32, {}};
    for (size_t i = 0; i < n; ++i)
        put(b.bytes, static_cast<std::uint32_t>(data[i]));
    return b;
}

Buffer i32_values(const int* data, size_t n)
{
    Buffer b{BufferType::I32, {}};
    for (size_t i = 0; i < n; ++i)
        put(b.bytes, static_cast<std::int32_t>(data[i]));
    return b;
}

Buffer text(const std::string& s)
{
    return Buffer{BufferType::U8, s};
}

std::vector<float> floats(const Buffer& b)
{
    return values<float>(b, BufferType::F32);
}

std::vector<std::uint32_t> uints(const Buffer& b)
{
    return values<std::uint32_t>(b, BufferType::U32);
}

std::vector<std::int32_t> ints(const Buffer& b)
{
    return values<std::int32_t>(b, BufferType::I32);
}

const Buffer* Frame::buffer(const std::string& name) const
{
    for (const auto& [n, b] : buffers)
        if (n == name)
            return &b;
    return nullptr;
}

std::string encode_frame(const Frame& frame)
{
    json header = frame.header;
    json list = json::array();
    for (const auto& [name, b] : frame.buffers)
        list.push_back({{"name", name}, {"type", to_string(b.type)}, {"count", b.count()}});
    header["buffers"] = list;
    std::string h = header.dump();
    std::string body;
    put<std::uint8_t>(body, static_cast<std::uint8_t>(frame.kind));
    put<std::uint32_t>(body, static_cast<std::uint32_t>(h.size()));
    body += h;
    for (const auto& [name, b] : frame.buffers)
        body += b.bytes;
    if (body.size() > max_frame_size)
        throw Error(ErrorCode::InvalidArgument, "frame too large");
    std::string out;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(body.size()));
    return out + body;
}

Frame decode_frame(std::string_view body)
{
    if (body.size() < 5)
        throw Error(ErrorCode::Format, "frame shorter than its fixed header");
    Frame f;
    auto kind = static_cast<std::uint8_t>(body[0]);
    if (kind < 1 || kind > 4)
        throw Error(ErrorCode::Format, "unknown frame kind " + std::to_string(kind));
    f.kind = static_cast<FrameKind>(kind);
    std::uint32_t hsize = get<std::uint32_t>(body.data() + 1);
    if (hsize > body.size() - 5)
        throw Error(ErrorCode::Format, "frame header runs past the frame");
    try
    {
        f.header = json::parse(body.substr(5, hsize));
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorCode::Format, std::string("malformed frame header: ") + e.what());
    }
    if (!f.header.is_object())
        throw Error(ErrorCode::Format, "frame header is not an object");
    size_t pos = 5 + hsize;
    if (f.header.contains("buffers"))
    {
        for (const json& d : f.header["buffers"])
        {
            Buffer b;
            b.type = type_from_string(d.at("type").get<std::string>());
            size_t n = d.at("count").get<size_t>() * element_size(b.type);
            if (n > body.size() - pos)
                throw Error(ErrorCode::Format, "frame buffer runs past the frame");
            b.bytes.assign(body.data() + pos, n);
            pos += n;
            f.buffers.emplace_back(d.at("name").get<std::string>(), std::move(b));
        }
        f.header.erase("buffers");
    }
    if (pos != body.size())
        throw Error(ErrorCode::Format, "trailing bytes after the last buffer");
    return f;
}

std::uint32_t state_checksum(const StateMap& state)
{
    uLong c = crc32(0L, Z_NULL, 0);
    auto feed = [&](const std::string& s) { c = crc32(c, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())); };
    for (const auto& [name, b] : state)
    {
        std::string head = name;
        head += '\0';
        head += to_string(b.type);
        head += '\0';
        put<std::uint64_t>(head, b.bytes.size());
        feed(head);
        feed(b.bytes);
    }
    return static_cast<std::uint32_t>(c);
}

void apply_delta(StateMap& state, const Frame& event)
{
    const json& payload = event.header.at("payload");
    for (const json& name : payload.at("removed"))
        state.erase(name.get<std::string>());
    for (const json& name : payload.at("changed"))
    {
        const Buffer* b = event.buffer(name.get<std::string>());
        if (!b)
            throw Error(ErrorCode::Format, "state-delta lists '" + name.get<std::string>() + "' without a buffer");
        state[name.get<std::string>()] = *b;
    }
}

std::string meta_text(const Session& s, const PipelineConfig& c)
{
    json m;
    m["stage"] = to_string(s.cursor);
    json cuboids = json::array();
    if (s.polycube)
        for (const Cuboid& q : s.polycube->cuboids)
            cuboids.push_back({{"center", {q.center.x(), q.center.y(), q.center.z()}},
                               {"half", {q.half.x(), q.half.y(), q.half.z()}},
                               {"locked", q.locked}});
    m["cuboids"] = cuboids;
    m["config"] = format_config(c);
    m["mode"] = to_string(s.quality ? s.quality->mode : c.mode);
    json landmarks = json::array();
    if (s.quality)
        for (const auto& [id, p] : s.quality->landmarks)
            landmarks.push_back({id, p.x(), p.y(), p.z()});
    m["landmarks"] = landmarks;
    m["voxels"] = s.voxels ? s.voxels->size() : 0;
    m["hexes"] = s.hex ? s.hex->hexes.size() : 0;
    m["cell_size"] = s.voxels ? s.voxels->cell_size : 0.0;
    m["topology_override"] = s.hex && s.hex->topology_override;
    return m.dump();
}

StateMap session_state(const Session& s, const PipelineConfig& c)
{
    StateMap out;
    out["meta"] = text(meta_text(s, c));
    if (s.input)
    {
        TriSurface surf = extract_boundary(*s.input);
        out["input.surface.vertices"] = f32_points(surf.vertices);
        out["input.surface.triangles"] = u32_indices(surf.triangles.empty() ? nullptr : surf.triangles[0].data(),
                                                     3 * surf.triangles.size());
        if (s.deformation)
        {
            Points p(surf.volume_index.size());
            for (size_t i = 0; i < p.size(); ++i)
                p[i] = s.deformation->positions[static_cast<size_t>(surf.volume_index[i])];
            out["deformed.surface.vertices"] = f32_points(p);
        }
    }
    if (s.voxels)
    {
        std::vector<int> keys;
        for (const VoxelKey& k : s.voxels->occupied)
            keys.insert(keys.end(), k.begin(), k.end());
        out["voxels"] = i32_values(keys.data(), keys.size());
    }
    if (s.hex)
    {
        QuadSurface surf = extract_boundary(*s.hex);
        Points positions = s.hex_positions();
        Points p(surf.volume_index.size());
        for (size_t i = 0; i < p.size(); ++i)
            p[i] = positions[static_cast<size_t>(surf.volume_index[i])];
        out["hex.surface.vertices"] = f32_points(p);
        out["hex.surface.quads"] = u32_indices(surf.quads.empty() ? nullptr : surf.quads[0].data(), 4 * surf.quads.size());
        out["hex.surface.volume_index"] = u32_indices(surf.volume_index.data(), surf.volume_index.size());
    }
    return out;
}

namespace
{

bool read_exact(int fd, char* data, size_t n)
{
    size_t got = 0;
    while (got < n)
    {
        ssize_t r = ::recv(fd, data + got, n - got, 0);
        if (r == 0)
        {
            if (got == 0)
                return false;
            throw Error(ErrorCode::Io, "connection closed mid-frame");
        }
        if (r < 0)
        {
            if (errno == EINTR)
                continue;
            throw Error(ErrorCode::Io, std::string("recv failed: ") + std::strerror(errno));
        }
        got += static_cast<size_t>(r);
    }
    return true;
}

} // namespace

bool read_frame(int fd, Frame& frame)
{
    char prefix[4];
    if (!read_exact(fd, prefix, 4))
        return false;
    std::uint32_t size = get<std::uint32_t>(prefix);
    if (size > max_frame_size)
        throw Error(ErrorCode::Format, "frame of " + std::to_string(size) + " bytes exceeds the limit");
    std::string body(size, '\0');
    if (size > 0 && !read_exact(fd, body.data(), size))
        throw Error(ErrorCode::Io, "connection closed mid-frame");
    frame = decode_frame(body);
    return true;
}

void write_frame(int fd, const Frame& frame)
{
    std::string bytes = encode_frame(frame);
    size_t sent = 0;
    while (sent < bytes.size())
    {
        ssize_t r = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (r < 0)
        {
            if (errno == EINTR)
                continue;
            throw Error(ErrorCode::Io, std::string("send failed: ") + std::strerror(errno));
        }
        sent += static_cast<size_t>(r);
    }
}

} // namespace cubehex::studio
