#pragma once

#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/predictor.hpp>

#include <bit>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <cerrno>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

namespace syncnoise::wire {

// Frame: "SNP1" | u8 kind | u32 payload length (LE) | payload.
inline constexpr char kMagic[4] = {'S', 'N', 'P', '1'};
inline constexpr std::size_t kHeaderSize = 9;
inline constexpr std::uint32_t kMaxPayload = 1u << 30;

enum class MessageKind : std::uint8_t
{
  noise_query = 1,
  noise_reply = 2,
  feature_inject_query = 3,
  decode_query = 4,
  decode_reply = 5,
  error = 6,
  scheduler_step_query = 7,
  scheduler_step_reply = 8,
  encode_query = 9,
  encode_reply = 10,
};

enum class ErrorCode : std::uint32_t
{
  bad_magic = 1,
  malformed = 2,
  unsupported = 3,
  predictor_failure = 4,
};

// ---------------------------------------------------------------------------
// Payload encoding

class PayloadWriter
{
public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v)
  {
    for (int i = 0; i < 4; ++i)
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s)
  {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  /// u32 rank, u32 dims, f32 data. An empty grid is written as rank 0.
  void tensor(const GridTensor& t)
  {
    if (t.empty())
    {
      u32(0);
      return;
    }
    u32(3);
    u32(static_cast<std::uint32_t>(t.channels()));
    u32(static_cast<std::uint32_t>(t.height()));
    u32(static_cast<std::uint32_t>(t.width()));
    buf_.reserve(buf_.size() + 4 * t.size());
    for (double v : t.values())
      f32(static_cast<float>(v));
  }

  std::vector<std::uint8_t>& bytes() noexcept { return buf_; }

private:
  std::vector<std::uint8_t> buf_;
};

class PayloadReader
{
public:
  explicit PayloadReader(std::span<const std::uint8_t> data)
    : data_(data)
  {
  }

  std::uint8_t u8()
  {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32()
  {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str()
  {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  /// Accepts rank 0 (absent), 2 (H, W), 3 (C, H, W) or 4 with a leading 1.
  GridTensor tensor()
  {
    const std::uint32_t rank = u32();
    if (rank > 4)
      throw PredictorProtocolError("tensor rank " + std::to_string(rank) +
                                   " unsupported");
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims)
      d = u32();
    if (rank == 0)
      return {};
    if (rank == 4)
    {
      if (dims[0] != 1)
        throw PredictorProtocolError("batched tensors unsupported");
      dims.erase(dims.begin());
    }
    if (rank == 1)
      throw PredictorProtocolError("rank-1 tensors unsupported");
    if (dims.size() == 2)
      dims.insert(dims.begin(), 1u);
    const std::uint64_t count =
      std::uint64_t{dims[0]} * dims[1] * std::uint64_t{dims[2]};
    if (count * 4 > remaining())
      throw PredictorProtocolError("tensor data truncated");
    GridTensor t(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                 static_cast<int>(dims[2]));
    for (auto& v : t.values())
      v = f32();
    return t;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void finish() const
  {
    if (remaining() != 0)
      throw PredictorProtocolError("trailing bytes in payload");
  }

private:
  void need(std::size_t n) const
  {
    if (remaining() < n)
      throw PredictorProtocolError("payload truncated");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline void write_features(PayloadWriter& w, const FeatureMap& features)
{
  w.u32(static_cast<std::uint32_t>(features.size()));
  for (const auto& [layer, grid] : features)
  {
    w.u32(static_cast<std::uint32_t>(layer));
    w.tensor(grid);
  }
}

inline FeatureMap read_features(PayloadReader& r)
{
  FeatureMap out;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i)
  {
    const auto layer = static_cast<int>(r.u32());
    out[layer] = r.tensor();
  }
  return out;
}

/// NOISE_QUERY / FEATURE_INJECT_QUERY payload. The inject kind appends the
/// injected feature list.
inline std::vector<std::uint8_t> encode_request(const PredictorRequest& req,
                                                bool with_injection)
{
  PayloadWriter w;
  w.i32(req.view_id);
  w.i32(req.timestep);
  w.u8(static_cast<std::uint8_t>(req.mode));
  w.str(req.prompt);
  w.tensor(req.latent);
  w.tensor(req.condition_image);
  w.u32(static_cast<std::uint32_t>(req.hook_layers.size()));
  for (int layer : req.hook_layers)
    w.u32(static_cast<std::uint32_t>(layer));
  if (with_injection)
    write_features(w, req.injected);
  return std::move(w.bytes());
}

inline PredictorRequest decode_request(std::span<const std::uint8_t> payload,
                                       bool with_injection)
{
  PayloadReader r(payload);
  PredictorRequest req;
  req.view_id = r.i32();
  req.timestep = r.i32();
  const std::uint8_t mode = r.u8();
  if (mode > 2)
    throw PredictorProtocolError("unknown conditioning mode " +
                                 std::to_string(mode));
  req.mode = static_cast<Conditioning>(mode);
  req.prompt = r.str();
  req.latent = r.tensor();
  req.condition_image = r.tensor();
  const std::uint32_t n = r.u32();
  if (n > 64)
    throw PredictorProtocolError("too many hook layers");
  for (std::uint32_t i = 0; i < n; ++i)
    req.hook_layers.push_back(static_cast<int>(r.u32()));
  if (with_injection)
    req.injected = read_features(r);
  r.finish();
  return req;
}

inline std::vector<std::uint8_t> encode_response(const PredictorResponse& resp)
{
  PayloadWriter w;
  w.tensor(resp.eps);
  write_features(w, resp.features);
  return std::move(w.bytes());
}

inline PredictorResponse decode_response(std::span<const std::uint8_t> payload)
{
  PayloadReader r(payload);
  PredictorResponse resp;
  resp.eps = r.tensor();
  resp.features = read_features(r);
  r.finish();
  return resp;
}

// ---------------------------------------------------------------------------
// Transport

class ByteStream
{
public:
  virtual ~ByteStream() = default;
  /// Reads exactly n bytes. Returns false on end of stream before the first
  /// byte; throws PredictorProtocolError when the stream ends mid-read.
  virtual bool read_exact(void* dst, std::size_t n) = 0;
  virtual void write_all(const void* src, std::size_t n) = 0;
};

/// Stream over a pair of file descriptors (the same one for sockets).
class FdStream : public ByteStream
{
public:
  FdStream(int in_fd, int out_fd, bool owns = true)
    : in_(in_fd)
    , out_(out_fd)
    , owns_(owns)
  {
  }
  FdStream(const FdStream&) = delete;
  FdStream& operator=(const FdStream&) = delete;
  ~FdStream() override { close_fds(); }

  bool read_exact(void* dst, std::size_t n) override
  {
    auto* p = static_cast<char*>(dst);
    std::size_t got = 0;
    while (got < n)
    {
      const ssize_t k = ::read(in_, p + got, n - got);
      if (k < 0 && errno == EINTR)
        continue;
      if (k < 0)
        throw PredictorProtocolError(std::string("read failed: ") +
                                     std::strerror(errno));
      if (k == 0)
      {
        if (got == 0)
          return false;
        throw PredictorProtocolError("stream closed mid-message");
      }
      got += static_cast<std::size_t>(k);
    }
    return true;
  }

  void write_all(const void* src, std::size_t n) override
  {
    const auto* p = static_cast<const char*>(src);
    std::size_t done = 0;
    while (done < n)
    {
      const ssize_t k = ::write(out_, p + done, n - done);
      if (k < 0 && errno == EINTR)
        continue;
      if (k <= 0)
        throw PredictorProtocolError(std::string("write failed: ") +
                                     std::strerror(errno));
      done += static_cast<std::size_t>(k);
    }
  }

protected:
  void close_fds()
  {
    if (!owns_)
      return;
    if (in_ >= 0)
      ::close(in_);
    if (out_ >= 0 && out_ != in_)
      ::close(out_);
    in_ = out_ = -1;
  }

private:
  int in_;
  int out_;
  bool owns_;
};

/// Child process speaking the protocol on its stdin/stdout.
class SubprocessStream : public FdStream
{
public:
  SubprocessStream(int in_fd, int out_fd, pid_t pid)
    : FdStream(in_fd, out_fd, true)
    , pid_(pid)
  {
  }
  ~SubprocessStream() override
  {
    close_fds();
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }

private:
  pid_t pid_;
};

/// Starts `/bin/sh -c command` with its stdin/stdout connected to the stream.
inline std::unique_ptr<ByteStream> spawn_stdio(const std::string& command)
{
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0)
    throw IoError("pipe failed");
  if (::pipe(from_child) != 0)
  {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw IoError("pipe failed");
  }
  std::signal(SIGPIPE, SIG_IGN);
  const pid_t pid = ::fork();
  if (pid < 0)
    throw IoError("fork failed");
  if (pid == 0)
  {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_unique<SubprocessStream>(from_child[0], to_child[1], pid);
}

inline sockaddr_un unix_address(const std::string& path)
{
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path))
    throw ArgumentError("socket path too long: " + path);
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  return addr;
}

inline std::unique_ptr<ByteStream> connect_unix(const std::string& path)
{
  const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0)
    throw IoError("socket failed");
  const sockaddr_un addr = unix_address(path);
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
  {
    ::close(fd);
    throw IoError("cannot connect to " + path + ": " + std::strerror(errno));
  }
  std::signal(SIGPIPE, SIG_IGN);
  return std::make_unique<FdStream>(fd, fd, true);
}

// ---------------------------------------------------------------------------
// Framing

struct Frame
{
  bool bad_magic = false;
  std::uint8_t kind = 0;
  std::vector<std::uint8_t> payload;
};

inline void write_frame(ByteStream& stream, MessageKind kind,
                        const std::vector<std::uint8_t>& payload)
{
  if (payload.size() > kMaxPayload)
    throw PredictorProtocolError("payload too large");
  std::uint8_t header[kHeaderSize];
  std::memcpy(header, kMagic, 4);
  header[4] = static_cast<std::uint8_t>(kind);
  const auto n = static_cast<std::uint32_t>(payload.size());
  for (int i = 0; i < 4; ++i)
    header[5 + i] = static_cast<std::uint8_t>(n >> (8 * i));
  stream.write_all(header, kHeaderSize);
  if (!payload.empty())
    stream.write_all(payload.data(), payload.size());
}

/// Next frame, or nullopt at end of stream. A frame with wrong magic is still
/// consumed (header plus declared payload) and flagged.
inline std::optional<Frame> read_frame(ByteStream& stream)
{
  std::uint8_t header[kHeaderSize];
  if (!stream.read_exact(header, kHeaderSize))
    return std::nullopt;
  Frame f;
  f.bad_magic = std::memcmp(header, kMagic, 4) != 0;
  f.kind = header[4];
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i)
    n |= static_cast<std::uint32_t>(header[5 + i]) << (8 * i);
  if (n > kMaxPayload)
  {
    if (f.bad_magic)
      return f;
    throw PredictorProtocolError("payload length " + std::to_string(n) +
                                 " exceeds limit");
  }
  f.payload.resize(n);
  if (n > 0 && !stream.read_exact(f.payload.data(), n))
    throw PredictorProtocolError("stream closed mid-message");
  return f;
}

inline std::vector<std::uint8_t> error_payload(ErrorCode code,
                                               const std::string& message)
{
  PayloadWriter w;
  w.u32(static_cast<std::uint32_t>(code));
  w.str(message);
  return std::move(w.bytes());
}

struct ErrorMessage
{
  std::uint32_t code = 0;
  std::string message;
};

inline ErrorMessage decode_error(std::span<const std::uint8_t> payload)
{
  PayloadReader r(payload);
  ErrorMessage e;
  e.code = r.u32();
  e.message = r.str();
  return e;
}

// ---------------------------------------------------------------------------
// Client

/// Predictor served by a remote process. Latents travel in the sigma
/// parameterization.
class RemotePredictor : public Predictor
{
public:
  explicit RemotePredictor(std::unique_ptr<ByteStream> stream,
                           int latent_channels = 4,
                           bool remote_scheduler = false)
    : stream_(std::move(stream))
    , channels_(latent_channels)
    , remote_scheduler_(remote_scheduler)
  {
  }

  PredictorResponse predict(const PredictorRequest& request) override
  {
    const bool inject = !request.injected.empty();
    const Frame reply = roundtrip(
      inject ? MessageKind::feature_inject_query : MessageKind::noise_query,
      encode_request(request, inject), MessageKind::noise_reply);
    return decode_response(reply.payload);
  }

  GridTensor encode(const GridTensor& image, int view_id) override
  {
    return tensor_call(MessageKind::encode_query, view_id, image,
                       MessageKind::encode_reply);
  }

  GridTensor decode(const GridTensor& latent, int view_id) override
  {
    return tensor_call(MessageKind::decode_query, view_id, latent,
                       MessageKind::decode_reply);
  }

  int latent_channels() const override { return channels_; }

  /// next_timestep is -1 for the final step onto the clean latent.
  std::optional<GridTensor> scheduler_step(const GridTensor& latent,
                                           const GridTensor& eps, int timestep,
                                           int next_timestep) override
  {
    if (!remote_scheduler_)
      return std::nullopt;
    PayloadWriter w;
    w.i32(timestep);
    w.i32(next_timestep);
    w.tensor(latent);
    w.tensor(eps);
    const Frame reply = roundtrip(MessageKind::scheduler_step_query, w.bytes(),
                                  MessageKind::scheduler_step_reply);
    PayloadReader r(reply.payload);
    GridTensor out = r.tensor();
    r.finish();
    return out;
  }

private:
  GridTensor tensor_call(MessageKind kind, int view_id, const GridTensor& t,
                         MessageKind expect)
  {
    PayloadWriter w;
    w.i32(view_id);
    w.tensor(t);
    const Frame reply = roundtrip(kind, w.bytes(), expect);
    PayloadReader r(reply.payload);
    GridTensor out = r.tensor();
    r.finish();
    return out;
  }

  Frame roundtrip(MessageKind kind, const std::vector<std::uint8_t>& payload,
                  MessageKind expect)
  {
    std::lock_guard lock(mutex_);
    write_frame(*stream_, kind, payload);
    std::optional<Frame> reply = read_frame(*stream_);
    if (!reply)
      throw PredictorProtocolError("predictor closed the connection");
    if (reply->bad_magic)
      throw PredictorProtocolError("bad magic in reply");
    if (reply->kind == static_cast<std::uint8_t>(MessageKind::error))
    {
      const ErrorMessage e = decode_error(reply->payload);
      throw PredictorProtocolError("predictor error " + std::to_string(e.code) +
                                   ": " + e.message);
    }
    if (reply->kind != static_cast<std::uint8_t>(expect))
      throw PredictorProtocolError("unexpected reply kind " +
                                   std::to_string(reply->kind));
    return std::move(*reply);
  }

  std::unique_ptr<ByteStream> stream_;
  std::mutex mutex_;
  int channels_;
  bool remote_scheduler_;
};

/// Endpoint syntax: "unix:<socket path>" or "stdio:<shell command>".
inline std::unique_ptr<ByteStream> open_endpoint(const std::string& endpoint)
{
  if (endpoint.rfind("unix:", 0) == 0)
    return connect_unix(endpoint.substr(5));
  if (endpoint.rfind("stdio:", 0) == 0)
    return spawn_stdio(endpoint.substr(6));
  throw ConfigError("unsupported predictor endpoint '" + endpoint +
                    "' (expected unix:<path> or stdio:<command>)");
}

// ---------------------------------------------------------------------------
// Server

/// Answers one frame. Never throws for malformed input; replies ERROR instead.
inline void handle_frame(ByteStream& stream, const Frame& frame,
                         Predictor& predictor)
{
  if (frame.bad_magic)
  {
    write_frame(stream, MessageKind::error,
                error_payload(ErrorCode::bad_magic, "bad magic"));
    return;
  }
  try
  {
    switch (static_cast<MessageKind>(frame.kind))
    {
      case MessageKind::noise_query:
      case MessageKind::feature_inject_query:
      {
        const bool inject =
          frame.kind == static_cast<std::uint8_t>(MessageKind::feature_inject_query);
        const PredictorRequest req = decode_request(frame.payload, inject);
        write_frame(stream, MessageKind::noise_reply,
                    encode_response(predictor.predict(req)));
        return;
      }
      case MessageKind::decode_query:
      case MessageKind::encode_query:
      {
        PayloadReader r(frame.payload);
        const int view_id = r.i32();
        const GridTensor t = r.tensor();
        r.finish();
        const bool dec =
          frame.kind == static_cast<std::uint8_t>(MessageKind::decode_query);
        PayloadWriter w;
        w.tensor(dec ? predictor.decode(t, view_id) : predictor.encode(t, view_id));
        write_frame(stream,
                    dec ? MessageKind::decode_reply : MessageKind::encode_reply,
                    w.bytes());
        return;
      }
      case MessageKind::scheduler_step_query:
      {
        PayloadReader r(frame.payload);
        const int t = r.i32();
        const int t_next = r.i32();
        const GridTensor latent = r.tensor();
        const GridTensor eps = r.tensor();
        r.finish();
        std::optional<GridTensor> out =
          predictor.scheduler_step(latent, eps, t, t_next);
        if (!out)
        {
          write_frame(stream, MessageKind::error,
                      error_payload(ErrorCode::unsupported,
                                    "scheduler step not offered"));
          return;
        }
        PayloadWriter w;
        w.tensor(*out);
        write_frame(stream, MessageKind::scheduler_step_reply, w.bytes());
        return;
      }
      default:
        write_frame(stream, MessageKind::error,
                    error_payload(ErrorCode::unsupported,
                                  "unsupported message kind " +
                                    std::to_string(frame.kind)));
        return;
    }
  }
  catch (const PredictorProtocolError& e)
  {
    write_frame(stream, MessageKind::error,
                error_payload(ErrorCode::malformed, e.what()));
  }
  catch (const std::exception& e)
  {
    write_frame(stream, MessageKind::error,
                error_payload(ErrorCode::predictor_failure, e.what()));
  }
}

/// Serves frames until the peer closes the stream.
inline void serve(ByteStream& stream, Predictor& predictor)
{
  while (true)
  {
    std::optional<Frame> frame;
    try
    {
      frame = read_frame(stream);
    }
    catch (const PredictorProtocolError&)
    {
      return;
    }
    if (!frame)
      return;
    handle_frame(stream, *frame, predictor);
  }
}

/// Listens on a unix socket, one thread per connection; predictor access is
/// serialized.
inline void serve_unix(const std::string& path, Predictor& predictor)
{
  const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0)
    throw IoError("socket failed");
  ::unlink(path.c_str());
  const sockaddr_un addr = unix_address(path);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(fd, 8) != 0)
  {
    ::close(fd);
    throw IoError("cannot listen on " + path + ": " + std::strerror(errno));
  }
  std::signal(SIGPIPE, SIG_IGN);

  class Locked : public Predictor
  {
  public:
    Locked(Predictor& inner, std::mutex& m) : inner_(inner), m_(m) {}
    PredictorResponse predict(const PredictorRequest& r) override
    {
      std::lock_guard l(m_);
      return inner_.predict(r);
    }
    GridTensor encode(const GridTensor& t, int v) override
    {
      std::lock_guard l(m_);
      return inner_.encode(t, v);
    }
    GridTensor decode(const GridTensor& t, int v) override
    {
      std::lock_guard l(m_);
      return inner_.decode(t, v);
    }
    int latent_channels() const override { return inner_.latent_channels(); }
    std::optional<GridTensor> scheduler_step(const GridTensor& x,
                                             const GridTensor& e, int t,
                                             int tn) override
    {
      std::lock_guard l(m_);
      return inner_.scheduler_step(x, e, t, tn);
    }

  private:
    Predictor& inner_;
    std::mutex& m_;
  };

  std::mutex mutex;
  Locked locked(predictor, mutex);
  while (true)
  {
    const int conn = ::accept(fd, nullptr, nullptr);
    if (conn < 0)
    {
      if (errno == EINTR)
        continue;
      break;
    }
    std::thread([conn, &locked] {
      FdStream stream(conn, conn, true);
      serve(stream, locked);
    }).detach();
  }
  ::close(fd);
}

} // namespace syncnoise::wire
