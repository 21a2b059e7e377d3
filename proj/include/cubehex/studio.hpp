#pragma once

#include "cubehex/pipeline.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

namespace cubehex
{

// Wire format, all integers little-endian:
//   u32 size of the rest of the frame
//   u8  kind (1 hello, 2 request, 3 response, 4 event)
//   u32 header size, UTF-8 JSON header
//   buffers back to back, in the order listed in header["buffers"]
// Geometry travels as f32; index arrays as u32; voxel keys as i32; text entries as u8.
namespace studio
{

inline constexpr std::uint32_t protocol_version = 1;
inline constexpr std::uint32_t max_frame_size = 1u << 30;

enum class FrameKind : std::uint8_t
{
    Hello = 1,
    Request = 2,
    Response = 3,
    Event = 4,
};

enum class BufferType
{
    F32,
    U32,
    I32,
    U8,
};

const char* to_string(BufferType type);
size_t element_size(BufferType type);

struct Buffer
{
    BufferType type = BufferType::U8;
    std::string bytes;

    size_t count() const { return bytes.size() / element_size(type); }
    bool operator==(const Buffer&) const = default;
};

Buffer f32_points(const Points& points);
Buffer u32_indices(const int* data, size_t n);
Buffer i32_values(const int* data, size_t n);
Buffer text(const std::string& s);
std::vector<float> floats(const Buffer& buffer);
std::vector<std::uint32_t> uints(const Buffer& buffer);
std::vector<std::int32_t> ints(const Buffer& buffer);

struct Frame
{
    FrameKind kind = FrameKind::Request;
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::pair<std::string, Buffer>> buffers;

    const Buffer* buffer(const std::string& name) const;
};

/// Full frame including the length prefix. header["buffers"] is filled in from `buffers`.
std::string encode_frame(const Frame& frame);
/// `body` is the frame without its length prefix. Throws Format.
Frame decode_frame(std::string_view body);

/// Named entries making up the state a client mirrors.
using StateMap = std::map<std::string, Buffer>;

/// crc32 over the entries in name order; each contributes name, '\0', type name, '\0',
/// u64 byte count and the bytes.
std::uint32_t state_checksum(const StateMap& state);

/// Replaces payload.changed entries with the frame's buffers and drops payload.removed.
void apply_delta(StateMap& state, const Frame& event);

/// Entries for a session: "meta" (JSON text: stage, cuboids, config, mode, landmarks, counts),
/// "input.surface.vertices", "input.surface.triangles", and when present
/// "deformed.surface.vertices", "voxels", "hex.surface.vertices", "hex.surface.quads",
/// "hex.surface.volume_index".
StateMap session_state(const Session& session, const PipelineConfig& config);
std::string meta_text(const Session& session, const PipelineConfig& config);

/// Blocking socket helpers; return false on orderly close.
bool read_frame(int fd, Frame& frame);
void write_frame(int fd, const Frame& frame);

} // namespace studio

/// Serves one session to one client at a time on 127.0.0.1.
class StudioServer
{
public:
    StudioServer(Session session, PipelineConfig config, std::filesystem::path save_path = {});
    ~StudioServer();

    StudioServer(const StudioServer&) = delete;
    StudioServer& operator=(const StudioServer&) = delete;

    /// Binds 127.0.0.1:port (0 picks a free port).
    void listen(std::uint16_t port = 0);
    std::uint16_t port() const { return port_; }
    /// Accepts clients until stop().
    void serve_forever();
    void stop();

    Session session() const;
    PipelineConfig config() const;

    /// Minimum spacing of geometry deltas during a run.
    std::chrono::milliseconds geometry_interval{100};

private:
    struct Reply
    {
        studio::Frame frame;
        std::function<void()> after;  // runs once the reply is on the wire
        bool sent = false;
    };

    void handle_client(int fd);
    Reply handle(const studio::Frame& request);
    nlohmann::json mutate(const nlohmann::json& payload, bool& weights_only);
    nlohmann::json query(const nlohmann::json& payload, std::vector<std::pair<std::string, studio::Buffer>>& out);
    void start_run(const std::string& stage);
    void run_worker(std::string stage);

    // Diffs `next` against the published state and streams a state-delta for the differences.
    // Caller holds mutex_.
    void publish_locked(const studio::StateMap& next, bool full);
    void emit_locked(const std::string& type, nlohmann::json payload,
                     std::vector<std::pair<std::string, studio::Buffer>> buffers = {});
    void send(const studio::Frame& frame);

    mutable std::mutex mutex_;  // session_, config_, published_, seq_
    Session session_;
    PipelineConfig config_;
    std::filesystem::path save_path_;
    studio::StateMap published_;
    std::uint64_t seq_ = 0;

    std::mutex write_mutex_;
    int client_fd_ = -1;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread client_thread_;
    std::atomic<bool> client_active_{false};

    std::thread worker_;
    std::atomic<bool> running_{false};
    std::atomic<bool> cancel_{false};
    LiveValue<DeformWeights> live_deform_;
    LiveValue<PolycubeWeights> live_polycube_;
    LiveValue<PullbackWeights> live_pullback_;
    LiveValue<QualityWeights> live_quality_;
};

/// Blocking client used by tests and scripts. Events are applied to a local mirror of the
/// state as they arrive.
class StudioClient
{
public:
    StudioClient() = default;
    ~StudioClient();

    /// Connects and performs the hello exchange; throws State if the server refuses.
    void connect(std::uint16_t port, std::uint32_t version = studio::protocol_version);
    void close();

    /// Sends a request and waits for its response; events read meanwhile are queued.
    studio::Frame request(const std::string& command, const nlohmann::json& payload = nlohmann::json::object(),
                          const std::string& stage = "",
                          std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));
    /// Next queued or incoming event, or nullopt on timeout.
    std::optional<studio::Frame> next_event(std::chrono::milliseconds timeout);
    /// Drops events until one satisfies `pred`; throws State on timeout.
    studio::Frame wait_event(const std::function<bool(const studio::Frame&)>& pred,
                             std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

    /// get-state, replacing the mirror. Returns the server's checksum.
    std::uint32_t sync();
    const studio::StateMap& mirror() const { return mirror_; }
    const nlohmann::json& server_hello() const { return hello_; }

private:
    bool read_with_timeout(studio::Frame& frame, std::chrono::milliseconds timeout);

    int fd_ = -1;
    std::uint64_t next_id_ = 1;
    std::deque<studio::Frame> events_;
    studio::StateMap mirror_;
    nlohmann::json hello_;
};

} // namespace cubehex
