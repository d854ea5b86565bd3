#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "stepsteer/intervention.hpp"
#include "stepsteer/json_io.hpp"
#include "stepsteer/probe.hpp"

namespace stepsteer {

// Wire framing: 4-byte big-endian payload length, then a JSON object with
// a "type" field. Payloads are serialized with dump_json so transcripts are
// byte-stable.
inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

std::string encode_frame(const Json& message);

// Incremental decoder for a byte stream of frames.
class FrameDecoder {
 public:
  void feed(std::string_view bytes);
  // Next complete message, if any. Throws ProtocolError on an oversized
  // frame or a payload that is not a JSON object.
  std::optional<Json> next();
  std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

 private:
  std::string buffer_;
  std::size_t offset_ = 0;
};

namespace protocol_error {
inline constexpr std::string_view kBadMessage = "bad_message";
inline constexpr std::string_view kOutOfOrder = "out_of_order";
inline constexpr std::string_view kBadLayer = "bad_layer";
inline constexpr std::string_view kDimensionMismatch = "dimension_mismatch";
inline constexpr std::string_view kMissingScore = "missing_score";
}  // namespace protocol_error

Json make_error(std::string_view code, std::string_view detail);

// What the engine steers with. Shared read-only by all sessions.
struct EngineConfig {
  SteerPolicy policy;
  SteeringSet vectors;
  std::optional<ProbeFile> probe;
};

/// Request-response state machine for one connection.
///
///   HELLO{n_layers, hidden_dim, layers_requested, [q] | [pooled]}
///       -> HELLO_ACK{layers_granted, direction}
///   TOKEN{token_position, decoded_text, states{layer: [..]}}
///       -> STEER{states{layer: [..]}} with only the replaced layers, or PASS{}
///   BYE{} -> no reply, session closed
///
/// Any violation yields ERROR{code, detail} and closes the session.
/// Routing uses "q" when supplied, otherwise the engine's probe applied to
/// "pooled"; variants that do not route need neither.
class ProtocolSession {
 public:
  explicit ProtocolSession(const EngineConfig& engine) : engine_(&engine) {}

  std::optional<Json> handle(const Json& message);
  bool closed() const noexcept { return state_ == State::Closed; }
  std::size_t steered_tokens() const noexcept { return steered_tokens_; }

 private:
  enum class State { AwaitHello, Active, Closed };

  Json fail(std::string_view code, std::string_view detail);
  Json on_hello(const Json& message);
  Json on_token(const Json& message);

  const EngineConfig* engine_;
  State state_ = State::AwaitHello;
  int n_layers_ = 0;
  std::size_t hidden_dim_ = 0;
  std::set<int> granted_;
  std::unique_ptr<DelimiterSteerer> steerer_;
  std::size_t steered_tokens_ = 0;
};

// TCP server; one thread and one ProtocolSession per connection.
class ProtocolServer {
 public:
  explicit ProtocolServer(EngineConfig engine);
  ~ProtocolServer();
  ProtocolServer(const ProtocolServer&) = delete;
  ProtocolServer& operator=(const ProtocolServer&) = delete;

  // Binds host:port (port 0 picks a free port) and starts accepting.
  // Returns the bound port.
  std::uint16_t start(const std::string& host = "127.0.0.1", std::uint16_t port = 0);
  void stop();
  std::size_t sessions_served() const noexcept { return sessions_served_.load(); }

 private:
  void accept_loop();
  void serve_connection(int fd);

  EngineConfig engine_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::atomic<std::size_t> sessions_served_{0};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
};

// Blocking client used by tests and tooling.
class ProtocolClient {
 public:
  ProtocolClient(const std::string& host, std::uint16_t port);
  ~ProtocolClient();
  ProtocolClient(const ProtocolClient&) = delete;
  ProtocolClient& operator=(const ProtocolClient&) = delete;

  void send(const Json& message);
  void send_raw(std::string_view bytes);
  // Next reply, or nullopt once the server closed the connection.
  std::optional<Json> receive();
  std::optional<Json> request(const Json& message);

 private:
  int fd_ = -1;
  FrameDecoder decoder_;
};

}  // namespace stepsteer
