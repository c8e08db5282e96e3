#include "support.hpp"

#include <sys/socket.h>
#include <thread>

using namespace syncnoise;
using namespace syncnoise::wire;

namespace {

/// Random grid whose values are exactly representable as float.
GridTensor random_f32_grid(std::mt19937_64& rng, int c, int h, int w, float lo = -4,
                           float hi = 4)
{
  std::uniform_real_distribution<float> u(lo, hi);
  GridTensor g(c, h, w);
  for (auto& v : g.values())
    v = static_cast<double>(u(rng));
  return g;
}

bool bit_equal(const GridTensor& a, const GridTensor& b)
{
  if (!a.same_shape(b))
    return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a.values()[i]) !=
        std::bit_cast<std::uint64_t>(b.values()[i]))
      return false;
  return true;
}

/// A predictor served on one end of a socketpair by a background thread.
struct LoopbackServer
{
  int server_fd = -1;
  std::unique_ptr<Predictor> predictor;
  int client_fd = -1;
  FdStream raw;
  std::thread thread;

  explicit LoopbackServer(std::unique_ptr<Predictor> p)
    : predictor(std::move(p))
    , client_fd(open_pair())
    , raw(client_fd, client_fd, false)
  {
    thread = std::thread([this, fd = server_fd] {
      FdStream server(fd, fd, true);
      serve(server, *predictor);
    });
  }

  ~LoopbackServer()
  {
    ::shutdown(client_fd, SHUT_RDWR);
    thread.join();
    ::close(client_fd);
  }

  /// Non-owning stream for a RemotePredictor.
  std::unique_ptr<ByteStream> stream()
  {
    return std::make_unique<FdStream>(client_fd, client_fd, false);
  }

private:
  int open_pair()
  {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
      throw std::runtime_error("socketpair failed");
    server_fd = fds[1];
    return fds[0];
  }
};

} // namespace

TEST(WirePayload, TensorLayoutIsRankDimsLittleEndianFloat)
{
  GridTensor g(1, 1, 2);
  g(0, 0, 0) = 1.0;
  g(0, 0, 1) = -2.5;
  PayloadWriter w;
  w.tensor(g);
  const std::vector<std::uint8_t> expected = {
    3, 0, 0, 0,                 // rank
    1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, // C H W
    0x00, 0x00, 0x80, 0x3f,     // 1.0f
    0x00, 0x00, 0x20, 0xc0};    // -2.5f
  EXPECT_EQ(w.bytes(), expected);
}

TEST(WirePayload, RandomTensorsRoundTripBitExactly)
{
  std::mt19937_64 rng(21);
  for (int i = 0; i < 1000; ++i)
  {
    const GridTensor g = random_f32_grid(rng, 1 + int(rng() % 4), 1 + int(rng() % 9),
                                         1 + int(rng() % 9), -1e6f, 1e6f);
    PayloadWriter w;
    w.tensor(g);
    PayloadReader r(w.bytes());
    const GridTensor back = r.tensor();
    r.finish();
    ASSERT_TRUE(bit_equal(g, back));
  }
}

TEST(WirePayload, ReaderAcceptsRankTwoAndFour)
{
  PayloadWriter w;
  w.u32(2);
  w.u32(1);
  w.u32(2);
  w.f32(3.0f);
  w.f32(4.0f);
  w.u32(4);
  for (std::uint32_t d : {1u, 2u, 1u, 1u})
    w.u32(d);
  w.f32(5.0f);
  w.f32(6.0f);
  PayloadReader r(w.bytes());
  const GridTensor a = r.tensor();
  EXPECT_EQ(a.channels(), 1);
  EXPECT_EQ(a.width(), 2);
  EXPECT_EQ(a(0, 0, 1), 4.0);
  const GridTensor b = r.tensor();
  EXPECT_EQ(b.channels(), 2);
  EXPECT_EQ(b(1, 0, 0), 6.0);
  r.finish();
}

TEST(WirePayload, MalformedPayloadsThrow)
{
  PayloadWriter w;
  w.u32(4);
  for (std::uint32_t d : {2u, 1u, 1u, 1u}) // batch of 2 is not accepted
    w.u32(d);
  w.f32(0);
  w.f32(0);
  PayloadReader r(w.bytes());
  EXPECT_THROW(r.tensor(), PredictorProtocolError);

  PayloadWriter t;
  t.u32(3);
  t.u32(1);
  t.u32(2);
  t.u32(2);
  t.f32(0); // three values short
  PayloadReader short_reader(t.bytes());
  EXPECT_THROW(short_reader.tensor(), PredictorProtocolError);

  PayloadWriter extra;
  extra.u8(1);
  PayloadReader trailing(extra.bytes());
  EXPECT_THROW(trailing.finish(), PredictorProtocolError);
}

TEST(WirePayload, RequestAndResponseRoundTrip)
{
  std::mt19937_64 rng(5);
  PredictorRequest req;
  req.view_id = -3;
  req.timestep = 777;
  req.mode = Conditioning::image_text;
  req.prompt = "make it teal";
  req.latent = random_f32_grid(rng, 4, 3, 5);
  req.condition_image = random_f32_grid(rng, 3, 24, 40);
  req.hook_layers = {5, 8};
  req.injected[5] = random_f32_grid(rng, 2, 3, 5);
  const PredictorRequest back = decode_request(encode_request(req, true), true);
  EXPECT_EQ(back.view_id, -3);
  EXPECT_EQ(back.timestep, 777);
  EXPECT_EQ(back.mode, Conditioning::image_text);
  EXPECT_EQ(back.prompt, req.prompt);
  EXPECT_TRUE(bit_equal(back.latent, req.latent));
  EXPECT_TRUE(bit_equal(back.condition_image, req.condition_image));
  EXPECT_EQ(back.hook_layers, req.hook_layers);
  EXPECT_TRUE(bit_equal(back.injected.at(5), req.injected.at(5)));

  PredictorRequest uncond;
  uncond.latent = random_f32_grid(rng, 4, 2, 2);
  const PredictorRequest ub = decode_request(encode_request(uncond, false), false);
  EXPECT_TRUE(ub.condition_image.empty());

  PredictorResponse resp;
  resp.eps = random_f32_grid(rng, 4, 3, 5);
  resp.features[8] = random_f32_grid(rng, 1, 6, 10);
  const PredictorResponse rb = decode_response(encode_response(resp));
  EXPECT_TRUE(bit_equal(rb.eps, resp.eps));
  EXPECT_TRUE(bit_equal(rb.features.at(8), resp.features.at(8)));

  std::vector<std::uint8_t> bad = encode_request(req, false);
  bad[8] = 7; // mode byte
  EXPECT_THROW(decode_request(bad, false), PredictorProtocolError);
}

TEST(WireLoopback, EchoRepliesWithZeroNoiseAndFeatures)
{
  LoopbackServer server(std::make_unique<ZeroPredictor>(ResidualCodec{1}, 4));
  RemotePredictor remote(server.stream(), 4);
  std::mt19937_64 rng(1);
  PredictorRequest req;
  req.latent = random_f32_grid(rng, 4, 6, 7);
  req.hook_layers = {5, 8};
  const PredictorResponse r = remote.predict(req);
  ASSERT_TRUE(r.eps.same_shape(req.latent));
  for (double v : r.eps.values())
    EXPECT_EQ(v, 0.0);
  ASSERT_EQ(r.features.size(), 2u);
  EXPECT_TRUE(r.features.at(5).same_shape(req.latent));
  EXPECT_NO_THROW(check_response(req, r));
}

TEST(WireLoopback, BadMagicAnsweredAndConnectionSurvives)
{
  LoopbackServer server(std::make_unique<ZeroPredictor>());
  FdStream& s = server.raw;
  const std::uint8_t junk[] = {'N', 'O', 'P', 'E', 1, 3, 0, 0, 0, 9, 9, 9};
  s.write_all(junk, sizeof(junk));
  const auto reply = read_frame(s);
  ASSERT_TRUE(reply);
  EXPECT_EQ(reply->kind, static_cast<std::uint8_t>(MessageKind::error));
  const ErrorMessage e = decode_error(reply->payload);
  EXPECT_EQ(e.code, static_cast<std::uint32_t>(ErrorCode::bad_magic));
  EXPECT_EQ(e.message, "bad magic");

  PredictorRequest req;
  req.latent = GridTensor(3, 2, 2, 0.5);
  write_frame(s, MessageKind::noise_query, encode_request(req, false));
  const auto ok = read_frame(s);
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->kind, static_cast<std::uint8_t>(MessageKind::noise_reply));
  EXPECT_TRUE(decode_response(ok->payload).eps.same_shape(req.latent));
}

TEST(WireLoopback, ErrorsForMalformedAndUnsupportedFrames)
{
  LoopbackServer server(std::make_unique<ZeroPredictor>());
  FdStream& s = server.raw;
  auto expect_error = [&](MessageKind kind, std::vector<std::uint8_t> payload,
                          ErrorCode code) {
    write_frame(s, kind, payload);
    const auto f = read_frame(s);
    ASSERT_TRUE(f);
    ASSERT_EQ(f->kind, static_cast<std::uint8_t>(MessageKind::error));
    EXPECT_EQ(decode_error(f->payload).code, static_cast<std::uint32_t>(code));
  };
  expect_error(MessageKind::noise_query, {1, 2, 3}, ErrorCode::malformed);
  expect_error(MessageKind::noise_reply, {}, ErrorCode::unsupported);
  expect_error(static_cast<MessageKind>(200), {}, ErrorCode::unsupported);
  PayloadWriter w;
  w.i32(10);
  w.i32(5);
  w.tensor(GridTensor(1, 1, 1, 0.0));
  w.tensor(GridTensor(1, 1, 1, 0.0));
  expect_error(MessageKind::scheduler_step_query, w.bytes(), ErrorCode::unsupported);
}

TEST(WireLoopback, RemoteErrorsSurfaceAsProtocolErrors)
{
  LoopbackServer server(std::make_unique<SyntheticEditPredictor>(ResidualCodec{1},
                                                                 200.0, 0.08));
  RemotePredictor remote(server.stream(), 3, true);
  PredictorRequest req;
  req.latent = GridTensor(4, 2, 2, 0.0); // wrong channel count for the model
  EXPECT_THROW(remote.predict(req), PredictorProtocolError);
  // The synthetic model has no sampler of its own.
  EXPECT_THROW(remote.scheduler_step(GridTensor(3, 1, 1, 0.0), GridTensor(3, 1, 1, 0.0),
                                     10, 5),
               PredictorProtocolError);
}

TEST(WireLoopback, EncodeDecodeTravel)
{
  auto codec_pred = std::make_unique<ZeroPredictor>(ResidualCodec{2});
  LoopbackServer server(std::move(codec_pred));
  RemotePredictor remote(server.stream(), 3);
  std::mt19937_64 rng(2);
  const GridTensor img = random_f32_grid(rng, 3, 4, 6, 0, 1);
  const GridTensor lat = remote.encode(img, 1);
  EXPECT_EQ(lat.height(), 2);
  EXPECT_EQ(lat.width(), 3);
  const GridTensor dec = remote.decode(lat, 1);
  EXPECT_EQ(dec.height(), 4);
}

TEST(WireSubprocess, EchoServerRoundTripsThousandTensors)
{
  RemotePredictor remote(open_endpoint(std::string("stdio:") + SYNCNOISE_ECHO_PREDICTOR),
                         3);
  std::mt19937_64 rng(77);
  for (int i = 0; i < 1000; ++i)
  {
    // The echo codec decodes with clamping to [0, 1]; stay inside it.
    const GridTensor g =
      random_f32_grid(rng, 1 + int(rng() % 4), 1 + int(rng() % 16), 1 + int(rng() % 16), 0, 1);
    ASSERT_TRUE(bit_equal(remote.decode(g, i), g)) << "round trip " << i;
  }
  PredictorRequest req;
  req.latent = random_f32_grid(rng, 3, 5, 5);
  req.hook_layers = {5};
  const PredictorResponse r = remote.predict(req);
  EXPECT_EQ(r.eps.size(), req.latent.size());
  EXPECT_EQ(r.features.size(), 1u);
}

TEST(WireSubprocess, ReplaceWithSelfInjectionReproducesNoise)
{
  RemotePredictor remote(open_endpoint(std::string("stdio:") + SYNCNOISE_ECHO_PREDICTOR +
                                       " --model synthetic"),
                         3);
  std::mt19937_64 rng(78);
  double total = 0.0;
  std::size_t n = 0;
  for (Conditioning mode :
       {Conditioning::uncond, Conditioning::image, Conditioning::image_text})
  {
    PredictorRequest req;
    req.latent = random_f32_grid(rng, 3, 8, 8);
    req.timestep = 400;
    req.mode = mode;
    if (mode != Conditioning::uncond)
      req.condition_image = random_f32_grid(rng, 3, 8, 8, 0, 1);
    req.hook_layers = {5, 8};
    const PredictorResponse first = remote.predict(req);
    PredictorRequest again = req;
    again.hook_layers.clear();
    again.injected = first.features;
    const PredictorResponse second = remote.predict(again);
    for (std::size_t i = 0; i < first.eps.size(); ++i)
      total += std::abs(first.eps.values()[i] - second.eps.values()[i]);
    n += first.eps.size();
  }
  EXPECT_LT(total / static_cast<double>(n), 1e-5);
}

TEST(WireUnixSocket, ServesConcurrentConnections)
{
  testutil::TempDir dir;
  const std::string path = (dir / "p.sock").string();
  static ZeroPredictor predictor;
  std::thread([path] { serve_unix(path, predictor); }).detach();
  for (int i = 0; i < 200 && !std::filesystem::exists(path); ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  RemotePredictor a(open_endpoint("unix:" + path), 3);
  RemotePredictor b(open_endpoint("unix:" + path), 3);
  PredictorRequest req;
  req.latent = GridTensor(3, 3, 3, 0.25);
  EXPECT_TRUE(a.predict(req).eps.same_shape(req.latent));
  EXPECT_TRUE(b.predict(req).eps.same_shape(req.latent));
  EXPECT_EQ(a.decode(req.latent, 0)(0, 1, 1), 0.25);
}

TEST(WireEndpoint, RejectsUnknownSchemes)
{
  EXPECT_THROW(open_endpoint("tcp:localhost:9"), ConfigError);
}
