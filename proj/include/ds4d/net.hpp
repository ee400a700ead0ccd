#pragma once

#include "ds4d/bus.hpp"
#include "ds4d/codec.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ds4d::net {

inline constexpr std::uint16_t kDefaultTcpPort = 7450;
inline constexpr std::uint16_t kDefaultWsPort = 7451;
inline constexpr const char* kWsPath = "/ws";

class NetError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ServerOptions {
  std::string address = "127.0.0.1";
  std::uint16_t tcp_port = kDefaultTcpPort;  // 0 picks a free port
  std::uint16_t ws_port = kDefaultWsPort;    // 0 picks a free port
  /// Bus topics pushed to every connected client.
  std::vector<std::string> forward = {"sim/state", "robot/command"};
  /// Outgoing frames queued per client before the oldest is dropped.
  std::size_t max_queue = 64;
};

struct ServerCounters {
  std::uint64_t frames_in = 0;
  std::uint64_t frames_out = 0;
  std::uint64_t rejected = 0;  // undecodable frames
  std::uint64_t dropped = 0;   // outgoing frames lost to a full client queue
  std::uint64_t clients = 0;   // connections accepted so far
};

/// Bridges a Bus to remote nodes. Frames received from clients are published
/// on the topic of their message type; frames on the forwarded topics are sent
/// to every client, binary envelopes over TCP and JSON text over WebSocket.
/// A malformed TCP frame closes that connection (the stream cannot be
/// resynchronized); a malformed WebSocket message is answered with an error
/// object and the connection stays open.
class Server {
public:
  Server(bus::Bus& bus, ServerOptions options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds both listeners and starts the I/O thread. Throws NetError.
  void start();
  void stop();

  std::uint16_t tcp_port() const;
  std::uint16_t ws_port() const;
  ServerCounters counters() const;
  std::size_t connected() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

using Clock = std::chrono::steady_clock;

/// Blocking binary-envelope client.
class TcpClient {
public:
  TcpClient(const std::string& host, std::uint16_t port);
  ~TcpClient();
  TcpClient(const TcpClient&) = delete;
  TcpClient& operator=(const TcpClient&) = delete;

  void send(const codec::Frame& f);
  void send_raw(const codec::Bytes& bytes);
  /// Next frame, or nullopt when nothing arrives within the timeout. Throws
  /// NetError once the server has closed the connection.
  std::optional<codec::Frame> receive(std::chrono::milliseconds timeout);
  void close();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking WebSocket client speaking the JSON variant.
class WsClient {
public:
  WsClient(const std::string& host, std::uint16_t port, const std::string& path = kWsPath);
  ~WsClient();
  WsClient(const WsClient&) = delete;
  WsClient& operator=(const WsClient&) = delete;

  void send(const codec::Frame& f);
  void send_text(const std::string& text);
  /// Next text message, or nullopt on timeout.
  std::optional<std::string> receive_text(std::chrono::milliseconds timeout);
  /// Next decodable frame, skipping error objects, or nullopt on timeout.
  std::optional<codec::Frame> receive(std::chrono::milliseconds timeout);
  void close();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ds4d::net
