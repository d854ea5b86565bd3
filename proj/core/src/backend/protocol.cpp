#include "stepsteer/backend/protocol.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>

#include "stepsteer/error.hpp"

namespace stepsteer {

std::string encode_frame(const Json& message) {
  const std::string payload = dump_json(message);
  if (payload.size() > kMaxFrameBytes) throw Error(ErrorCode::ProtocolError, "frame too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
  out += payload;
  return out;
}

void FrameDecoder::feed(std::string_view bytes) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.append(bytes);
}

std::optional<Json> FrameDecoder::next() {
  if (buffered() < 4) return std::nullopt;
  const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + offset_);
  const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                          (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
  if (n > kMaxFrameBytes) throw Error(ErrorCode::ProtocolError, "frame length " + std::to_string(n) + " exceeds limit");
  if (buffered() < 4 + std::size_t{n}) return std::nullopt;
  const std::string_view payload(buffer_.data() + offset_ + 4, n);
  offset_ += 4 + n;
  Json msg;
  try {
    msg = Json::parse(payload);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::ProtocolError, std::string("payload is not JSON: ") + e.what());
  }
  if (!msg.is_object()) throw Error(ErrorCode::ProtocolError, "payload is not a JSON object");
  if (offset_ > (1u << 20)) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
  return msg;
}

Json make_error(std::string_view code, std::string_view detail) {
  return Json{{"type", "ERROR"}, {"code", code}, {"detail", detail}};
}

Json ProtocolSession::fail(std::string_view code, std::string_view detail) {
  state_ = State::Closed;
  steerer_.reset();
  return make_error(code, detail);
}

std::optional<Json> ProtocolSession::handle(const Json& message) {
  if (state_ == State::Closed) return std::nullopt;
  if (!message.is_object() || !message.contains("type") || !message.at("type").is_string()) {
    return fail(protocol_error::kBadMessage, "message has no string 'type'");
  }
  const std::string type = message.at("type").get<std::string>();
  try {
    if (type == "HELLO") {
      if (state_ != State::AwaitHello) return fail(protocol_error::kOutOfOrder, "repeated HELLO");
      return on_hello(message);
    }
    if (type == "TOKEN") {
      if (state_ != State::Active) return fail(protocol_error::kOutOfOrder, "TOKEN before HELLO");
      return on_token(message);
    }
    if (type == "BYE") {
      state_ = State::Closed;
      steerer_.reset();
      return std::nullopt;
    }
  } catch (const Json::exception& e) {
    return fail(protocol_error::kBadMessage, e.what());
  } catch (const Error& e) {
    return fail(e.code() == ErrorCode::DimensionMismatch ? protocol_error::kDimensionMismatch
                                                          : protocol_error::kBadMessage,
                e.detail());
  }
  return fail(protocol_error::kBadMessage, "unknown message type '" + type + "'");
}

Json ProtocolSession::on_hello(const Json& message) {
  n_layers_ = message.at("n_layers").get<int>();
  const int hidden = message.at("hidden_dim").get<int>();
  if (n_layers_ < 1 || hidden < 1) {
    return fail(protocol_error::kBadMessage, "n_layers and hidden_dim must be positive");
  }
  hidden_dim_ = static_cast<std::size_t>(hidden);
  const auto requested = message.at("layers_requested").get<std::vector<int>>();

  const SteerPolicy& policy = engine_->policy;
  granted_.clear();
  for (int layer : requested) {
    if (layer < 0 || layer >= n_layers_) {
      return fail(protocol_error::kBadLayer, "requested layer " + std::to_string(layer) + " is outside the model");
    }
    if (std::find(policy.layers.begin(), policy.layers.end(), layer) != policy.layers.end()) {
      granted_.insert(layer);
    }
  }

  const bool routed = (policy.variant == Variant::Uni || policy.variant == Variant::Bi) &&
                      policy.sample_adaptive;
  double q = 0.5;
  if (routed) {
    if (message.contains("q")) {
      q = message.at("q").get<double>();
      if (!(q >= 0.0 && q <= 1.0)) return fail(protocol_error::kBadMessage, "q outside [0,1]");
    } else if (message.contains("pooled") && engine_->probe) {
      const Vector pooled = vector_from_json(message.at("pooled"), "pooled");
      q = probe_forward(pooled, engine_->probe->weights);
    } else {
      return fail(protocol_error::kMissingScore, "routing needs 'q' or 'pooled' with a loaded probe");
    }
  }
  const Direction selected = route(q, policy);

  if (selected != Direction::None) {
    for (int layer : granted_) {
      const SteeringVector* v = engine_->vectors.find(selected, layer);
      if (v == nullptr) {
        return fail(protocol_error::kBadLayer, "engine has no vector for layer " + std::to_string(layer));
      }
      if (v->direction.size() != hidden_dim_) {
        return fail(protocol_error::kDimensionMismatch,
                    "engine vectors have dimension " + std::to_string(v->direction.size()));
      }
    }
  }
  steerer_ = std::make_unique<DelimiterSteerer>(policy, engine_->vectors, selected);
  state_ = State::Active;
  return Json{{"type", "HELLO_ACK"},
              {"layers_granted", std::vector<int>(granted_.begin(), granted_.end())},
              {"direction", std::string(to_string(selected))}};
}

Json ProtocolSession::on_token(const Json& message) {
  (void)message.at("token_position").get<std::int64_t>();
  (void)message.at("decoded_text").get<std::string>();
  const Json& states = message.at("states");
  if (!states.is_object()) return fail(protocol_error::kBadMessage, "'states' must be an object");

  Json replaced = Json::object();
  for (const auto& [key, value] : states.items()) {
    int layer = -1;
    const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), layer);
    if (ec != std::errc() || ptr != key.data() + key.size()) {
      return fail(protocol_error::kBadLayer, "layer key '" + key + "' is not an integer");
    }
    if (layer < 0 || layer >= n_layers_ || !granted_.contains(layer)) {
      return fail(protocol_error::kBadLayer, "layer " + key + " was not granted");
    }
    const Vector h = vector_from_json(value, "states");
    if (h.size() != hidden_dim_) {
      return fail(protocol_error::kDimensionMismatch,
                  "state of dimension " + std::to_string(h.size()) + " for hidden_dim " +
                      std::to_string(hidden_dim_));
    }
    if (!all_finite(h)) return fail(protocol_error::kBadMessage, "non-finite state");
    if (auto out = steerer_->steer(layer, h)) replaced[key] = vector_to_json(*out);
  }
  if (replaced.empty()) return Json{{"type", "PASS"}};
  ++steered_tokens_;
  return Json{{"type", "STEER"}, {"states", replaced}};
}

namespace {

bool send_all(int fd, std::string_view bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace

ProtocolServer::ProtocolServer(EngineConfig engine) : engine_(std::move(engine)) {
  engine_.policy.validate();
}

ProtocolServer::~ProtocolServer() { stop(); }

std::uint16_t ProtocolServer::start(const std::string& host, std::uint16_t port) {
  if (running_) throw Error(ErrorCode::ConfigError, "server already running");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
  const int yes = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::ConfigError, "bad IPv4 address '" + host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::IoError, "bind/listen: " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
  return ntohs(addr.sin_port);
}

void ProtocolServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  listen_fd_ = -1;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) {
    if (t.joinable()) t.join();
  }
}

void ProtocolServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    const int yes = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
    std::lock_guard lock(mu_);
    if (!running_) {
      ::close(fd);
      return;
    }
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void ProtocolServer::serve_connection(int fd) {
  ProtocolSession session(engine_);
  FrameDecoder decoder;
  char buf[1 << 16];
  bool open = true;
  while (open) {
    const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    decoder.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    try {
      while (auto msg = decoder.next()) {
        auto reply = session.handle(*msg);
        if (reply && !send_all(fd, encode_frame(*reply))) open = false;
        if (session.closed()) open = false;
        if (!open) break;
      }
    } catch (const Error& e) {
      send_all(fd, encode_frame(make_error(protocol_error::kBadMessage, e.detail())));
      open = false;
    }
  }
  ++sessions_served_;
  std::lock_guard lock(mu_);
  ::shutdown(fd, SHUT_RDWR);
  ::close(fd);
  std::erase(client_fds_, fd);
}

ProtocolClient::ProtocolClient(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw Error(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd_);
    fd_ = -1;
    throw Error(ErrorCode::IoError, "connect: " + why);
  }
}

ProtocolClient::~ProtocolClient() {
  if (fd_ >= 0) ::close(fd_);
}

void ProtocolClient::send(const Json& message) { send_raw(encode_frame(message)); }

void ProtocolClient::send_raw(std::string_view bytes) {
  if (!send_all(fd_, bytes)) throw Error(ErrorCode::IoError, "send failed");
}

std::optional<Json> ProtocolClient::receive() {
  char buf[1 << 16];
  while (true) {
    if (auto msg = decoder_.next()) return msg;
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return std::nullopt;
    decoder_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
  }
}

std::optional<Json> ProtocolClient::request(const Json& message) {
  send(message);
  return receive();
}

}  // namespace stepsteer
