#include "ds4d/net.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <mutex>
#include <set>
#include <thread>

namespace ds4d::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using boost::system::error_code;

namespace {

struct AtomicCounters {
  std::atomic<std::uint64_t> frames_in{0};
  std::atomic<std::uint64_t> frames_out{0};
  std::atomic<std::uint64_t> rejected{0};
  std::atomic<std::uint64_t> dropped{0};
  std::atomic<std::uint64_t> clients{0};
};

std::string bytes_to_string(const codec::Bytes& b) {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

// Shared by both transports: forwarded-topic subscriptions, a bounded
// outgoing queue and the write chain, all confined to one strand.
class Session : public std::enable_shared_from_this<Session> {
public:
  Session(asio::io_context& ioc, bus::Bus& bus, const ServerOptions& opt, AtomicCounters& counters)
      : strand_(asio::make_strand(ioc)), bus_(bus), opt_(opt), counters_(counters) {}
  virtual ~Session() = default;

  void subscribe() {
    for (const auto& name : opt_.forward) {
      if (!bus_.has_topic(name)) continue;
      auto sub = bus_.subscribe(name);
      sub.set_notifier([w = weak_from_this(), ex = strand_] {
        if (auto s = w.lock()) asio::post(ex, [s] { s->pump(); });
      });
      subs_.push_back(std::move(sub));
    }
  }

  virtual void start() = 0;
  virtual void close() = 0;
  bool closed() const { return closed_; }

protected:
  // Encodes one outgoing frame in the transport's format.
  virtual std::string encode(const codec::Frame& f) = 0;
  virtual void write_front() = 0;

  void pump() {
    if (closed_) return;
    for (auto& sub : subs_) {
      while (auto r = sub.poll_latest()) {
        enqueue(encode(codec::Frame{r->seq, r->timestamp_ns, *r->message}));
      }
    }
  }

  void enqueue(std::string data) {
    queue_.push_back(std::move(data));
    if (queue_.size() > opt_.max_queue) {
      // The front may be mid-write; drop the oldest one behind it.
      queue_.erase(queue_.begin() + (writing_ ? 1 : 0));
      ++counters_.dropped;
    }
    if (!writing_) {
      writing_ = true;
      write_front();
    }
  }

  void on_written(const error_code& ec) {
    if (ec) {
      close();
      return;
    }
    ++counters_.frames_out;
    queue_.pop_front();
    if (queue_.empty() || closed_) {
      writing_ = false;
    } else {
      write_front();
    }
  }

  void publish(const codec::Frame& f) {
    bus_.publish(default_topic(type_of(f.message)), f.message);
    ++counters_.frames_in;
  }

  void drop_subscriptions() { subs_.clear(); }

  asio::strand<asio::io_context::executor_type> strand_;
  bus::Bus& bus_;
  const ServerOptions& opt_;
  AtomicCounters& counters_;
  std::vector<bus::Subscription> subs_;
  std::deque<std::string> queue_;
  bool writing_ = false;
  bool closed_ = false;
};

class TcpSession final : public Session {
public:
  TcpSession(tcp::socket socket, asio::io_context& ioc, bus::Bus& bus, const ServerOptions& opt,
             AtomicCounters& counters)
      : Session(ioc, bus, opt, counters), socket_(std::move(socket)) {}

  void start() override {
    asio::dispatch(strand_, [self = shared()] {
      self->subscribe();
      self->read_header();
    });
  }

  void close() override {
    asio::dispatch(strand_, [self = shared()] {
      if (self->closed_) return;
      self->closed_ = true;
      self->drop_subscriptions();
      error_code ignored;
      self->socket_.shutdown(tcp::socket::shutdown_both, ignored);
      self->socket_.close(ignored);
    });
  }

private:
  std::shared_ptr<TcpSession> shared() { return std::static_pointer_cast<TcpSession>(shared_from_this()); }

  std::string encode(const codec::Frame& f) override { return bytes_to_string(codec::encode_frame(f)); }

  void write_front() override {
    asio::async_write(socket_, asio::buffer(queue_.front()),
                      asio::bind_executor(strand_, [self = shared()](error_code ec, std::size_t) {
                        self->on_written(ec);
                      }));
  }

  void read_header() {
    frame_.resize(codec::kHeaderSize);
    asio::async_read(socket_, asio::buffer(frame_),
                     asio::bind_executor(strand_, [self = shared()](error_code ec, std::size_t) {
                       if (ec) return self->close();
                       std::size_t total = 0;
                       try {
                         total = codec::frame_length(self->frame_);
                       } catch (const codec::CodecError&) {
                         ++self->counters_.rejected;
                         return self->close();
                       }
                       self->read_payload(total);
                     }));
  }

  void read_payload(std::size_t total) {
    frame_.resize(total);
    asio::async_read(socket_, asio::buffer(frame_.data() + codec::kHeaderSize, total - codec::kHeaderSize),
                     asio::bind_executor(strand_, [self = shared()](error_code ec, std::size_t) {
                       if (ec) return self->close();
                       try {
                         self->publish(codec::decode_frame(self->frame_));
                       } catch (const std::exception&) {
                         ++self->counters_.rejected;
                         return self->close();
                       }
                       self->read_header();
                     }));
  }

  tcp::socket socket_;
  codec::Bytes frame_;
};

class WsSession final : public Session {
public:
  WsSession(tcp::socket socket, asio::io_context& ioc, bus::Bus& bus, const ServerOptions& opt,
            AtomicCounters& counters)
      : Session(ioc, bus, opt, counters), ws_(std::move(socket)) {}

  void start() override {
    asio::dispatch(strand_, [self = shared()] { self->read_request(); });
  }

  void close() override {
    asio::dispatch(strand_, [self = shared()] {
      if (self->closed_) return;
      self->closed_ = true;
      self->drop_subscriptions();
      error_code ignored;
      beast::get_lowest_layer(self->ws_).socket().shutdown(tcp::socket::shutdown_both, ignored);
      beast::get_lowest_layer(self->ws_).close();
    });
  }

private:
  std::shared_ptr<WsSession> shared() { return std::static_pointer_cast<WsSession>(shared_from_this()); }

  std::string encode(const codec::Frame& f) override { return codec::to_json(f).dump(); }

  void write_front() override {
    ws_.text(true);
    ws_.async_write(asio::buffer(queue_.front()),
                    asio::bind_executor(strand_, [self = shared()](error_code ec, std::size_t) {
                      self->on_written(ec);
                    }));
  }

  void read_request() {
    http::async_read(beast::get_lowest_layer(ws_), buffer_, request_,
                     asio::bind_executor(strand_, [self = shared()](error_code ec, std::size_t) {
                       if (ec) return self->close();
                       if (!websocket::is_upgrade(self->request_) || self->request_.target() != kWsPath) {
                         return self->reject_request();
                       }
                       self->accept();
                     }));
  }

  void reject_request() {
    auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found,
                                                                    request_.version());
    res->set(http::field::content_type, "text/plain");
    res->body() = "websocket endpoint is " + std::string(kWsPath) + "\n";
    res->prepare_payload();
    http::async_write(beast::get_lowest_layer(ws_), *res,
                      asio::bind_executor(strand_, [self = shared(), res](error_code, std::size_t) {
                        self->close();
                      }));
  }

  void accept() {
    ws_.async_accept(request_, asio::bind_executor(strand_, [self = shared()](error_code ec) {
                       if (ec) return self->close();
                       self->subscribe();
                       self->read_message();
                     }));
  }

  void read_message() {
    buffer_.clear();
    ws_.async_read(buffer_, asio::bind_executor(strand_, [self = shared()](error_code ec, std::size_t) {
                     if (ec) return self->close();
                     self->handle(beast::buffers_to_string(self->buffer_.data()));
                     self->read_message();
                   }));
  }

  void handle(const std::string& text) {
    try {
      publish(codec::from_json(nlohmann::json::parse(text)));
    } catch (const codec::CodecError& e) {
      ++counters_.rejected;
      enqueue(nlohmann::json{{"error", codec::to_string(e.code())}, {"message", e.what()}}.dump());
    } catch (const nlohmann::json::exception& e) {
      ++counters_.rejected;
      enqueue(nlohmann::json{{"error", "InvalidJson"}, {"message", e.what()}}.dump());
    } catch (const bus::BusError& e) {
      ++counters_.rejected;
      enqueue(nlohmann::json{{"error", "Bus"}, {"message", e.what()}}.dump());
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Server

struct Server::Impl {
  Impl(bus::Bus& b, ServerOptions o) : bus(b), opt(std::move(o)), tcp_acceptor(ioc), ws_acceptor(ioc) {}

  bus::Bus& bus;
  ServerOptions opt;
  asio::io_context ioc;
  tcp::acceptor tcp_acceptor;
  tcp::acceptor ws_acceptor;
  std::thread thread;
  AtomicCounters counters;
  mutable std::mutex mutex;
  std::vector<std::weak_ptr<Session>> sessions;
  std::uint16_t tcp_port = 0;
  std::uint16_t ws_port = 0;
  bool running = false;

  std::uint16_t open(tcp::acceptor& acc, std::uint16_t port) {
    error_code ec;
    const auto address = asio::ip::make_address(opt.address, ec);
    if (ec) throw NetError("bad listen address " + opt.address);
    const tcp::endpoint ep(address, port);
    acc.open(ep.protocol(), ec);
    if (!ec) acc.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acc.bind(ep, ec);
    if (!ec) acc.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) {
      throw NetError("cannot listen on " + opt.address + ":" + std::to_string(port) + ": " + ec.message());
    }
    return acc.local_endpoint().port();
  }

  template <class SessionT>
  void accept(tcp::acceptor& acc) {
    acc.async_accept(asio::make_strand(ioc), [this, &acc](error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      auto s = std::make_shared<SessionT>(std::move(socket), ioc, bus, opt, counters);
      ++counters.clients;
      {
        const std::lock_guard lock(mutex);
        std::erase_if(sessions, [](const auto& w) {
          const auto p = w.lock();
          return !p || p->closed();
        });
        sessions.push_back(s);
      }
      s->start();
      accept<SessionT>(acc);
    });
  }
};

Server::Server(bus::Bus& bus, ServerOptions options) : impl_(std::make_unique<Impl>(bus, std::move(options))) {}

Server::~Server() { stop(); }

void Server::start() {
  if (impl_->running) return;
  impl_->tcp_port = impl_->open(impl_->tcp_acceptor, impl_->opt.tcp_port);
  impl_->ws_port = impl_->open(impl_->ws_acceptor, impl_->opt.ws_port);
  impl_->accept<TcpSession>(impl_->tcp_acceptor);
  impl_->accept<WsSession>(impl_->ws_acceptor);
  impl_->running = true;
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void Server::stop() {
  if (!impl_->running) return;
  impl_->running = false;
  asio::post(impl_->ioc, [this] {
    error_code ignored;
    impl_->tcp_acceptor.close(ignored);
    impl_->ws_acceptor.close(ignored);
    const std::lock_guard lock(impl_->mutex);
    for (auto& w : impl_->sessions) {
      if (auto s = w.lock()) s->close();
    }
  });
  // Sessions finish their close handlers, then the context runs out of work.
  impl_->thread.join();
}

std::uint16_t Server::tcp_port() const { return impl_->tcp_port; }
std::uint16_t Server::ws_port() const { return impl_->ws_port; }

ServerCounters Server::counters() const {
  const auto& c = impl_->counters;
  return {c.frames_in.load(), c.frames_out.load(), c.rejected.load(), c.dropped.load(), c.clients.load()};
}

std::size_t Server::connected() const {
  const std::lock_guard lock(impl_->mutex);
  std::size_t n = 0;
  for (const auto& w : impl_->sessions) {
    if (auto s = w.lock(); s && !s->closed()) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Clients

namespace {

tcp::socket connect_socket(asio::io_context& ioc, const std::string& host, std::uint16_t port) {
  tcp::resolver resolver(ioc);
  tcp::socket socket(ioc);
  error_code ec;
  const auto endpoints = resolver.resolve(host, std::to_string(port), ec);
  if (!ec) asio::connect(socket, endpoints, ec);
  if (ec) throw NetError("cannot connect to " + host + ":" + std::to_string(port) + ": " + ec.message());
  socket.set_option(tcp::no_delay(true), ec);
  return socket;
}

// Runs the context until `done` or the timeout; a pending read stays pending
// so that a later call picks it up without losing stream position.
bool run_until(asio::io_context& ioc, const bool& done, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  while (!done) {
    const auto now = Clock::now();
    if (now >= deadline) return false;
    if (ioc.stopped()) ioc.restart();
    ioc.run_one_for(deadline - now);
  }
  return true;
}

}  // namespace

struct TcpClient::Impl {
  asio::io_context ioc;
  tcp::socket socket{ioc};
  codec::Bytes buffer;
  std::array<std::byte, 4096> chunk{};
  bool reading = false;
  bool got = false;
  error_code error;

  std::optional<codec::Frame> extract() {
    if (buffer.size() < codec::kHeaderSize) return std::nullopt;
    const std::size_t total = codec::frame_length(buffer);
    if (buffer.size() < total) return std::nullopt;
    codec::Frame f = codec::decode_frame(std::span<const std::byte>(buffer).first(total));
    buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(total));
    return f;
  }
};

TcpClient::TcpClient(const std::string& host, std::uint16_t port) : impl_(std::make_unique<Impl>()) {
  impl_->socket = connect_socket(impl_->ioc, host, port);
}

TcpClient::~TcpClient() { close(); }

void TcpClient::send(const codec::Frame& f) { send_raw(codec::encode_frame(f)); }

void TcpClient::send_raw(const codec::Bytes& bytes) {
  error_code ec;
  asio::write(impl_->socket, asio::buffer(bytes), ec);
  if (ec) throw NetError("send failed: " + ec.message());
}

std::optional<codec::Frame> TcpClient::receive(std::chrono::milliseconds timeout) {
  Impl& m = *impl_;
  const auto deadline = Clock::now() + timeout;
  while (true) {
    if (auto f = m.extract()) return f;
    if (m.error) throw NetError("connection closed: " + m.error.message());
    if (!m.reading) {
      m.reading = true;
      m.got = false;
      m.socket.async_read_some(asio::buffer(m.chunk), [&m](error_code ec, std::size_t n) {
        m.reading = false;
        m.got = true;
        m.error = ec;
        m.buffer.insert(m.buffer.end(), m.chunk.begin(), m.chunk.begin() + static_cast<std::ptrdiff_t>(n));
      });
    }
    const auto now = Clock::now();
    if (now >= deadline || !run_until(m.ioc, m.got, std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now))) {
      return std::nullopt;
    }
  }
}

void TcpClient::close() {
  if (!impl_ || !impl_->socket.is_open()) return;
  error_code ignored;
  impl_->socket.shutdown(tcp::socket::shutdown_both, ignored);
  impl_->socket.close(ignored);
  impl_->ioc.restart();
  impl_->ioc.poll();
}

struct WsClient::Impl {
  asio::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};
  beast::flat_buffer buffer;
  bool reading = false;
  bool got = false;
  error_code error;
  std::deque<std::string> inbox;
};

WsClient::WsClient(const std::string& host, std::uint16_t port, const std::string& path)
    : impl_(std::make_unique<Impl>()) {
  impl_->ws.next_layer() = connect_socket(impl_->ioc, host, port);
  error_code ec;
  impl_->ws.handshake(host + ":" + std::to_string(port), path, ec);
  if (ec) throw NetError("websocket handshake failed: " + ec.message());
  impl_->ws.text(true);
}

WsClient::~WsClient() { close(); }

void WsClient::send(const codec::Frame& f) { send_text(codec::to_json(f).dump()); }

void WsClient::send_text(const std::string& text) {
  error_code ec;
  impl_->ws.write(asio::buffer(text), ec);
  if (ec) throw NetError("send failed: " + ec.message());
}

std::optional<std::string> WsClient::receive_text(std::chrono::milliseconds timeout) {
  Impl& m = *impl_;
  if (!m.inbox.empty()) {
    std::string s = std::move(m.inbox.front());
    m.inbox.pop_front();
    return s;
  }
  if (m.error) throw NetError("connection closed: " + m.error.message());
  if (!m.reading) {
    m.reading = true;
    m.got = false;
    m.ws.async_read(m.buffer, [&m](error_code ec, std::size_t) {
      m.reading = false;
      m.got = true;
      m.error = ec;
      if (!ec) m.inbox.push_back(beast::buffers_to_string(m.buffer.data()));
      m.buffer.clear();
    });
  }
  if (!run_until(m.ioc, m.got, timeout)) return std::nullopt;
  if (m.inbox.empty()) throw NetError("connection closed: " + m.error.message());
  std::string s = std::move(m.inbox.front());
  m.inbox.pop_front();
  return s;
}

std::optional<codec::Frame> WsClient::receive(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  while (true) {
    const auto now = Clock::now();
    if (now >= deadline) return std::nullopt;
    auto text = receive_text(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now));
    if (!text) return std::nullopt;
    const auto j = nlohmann::json::parse(*text, nullptr, false);
    if (j.is_discarded() || j.contains("error")) continue;
    return codec::from_json(j);
  }
}

void WsClient::close() {
  if (!impl_ || !impl_->ws.next_layer().is_open()) return;
  error_code ignored;
  impl_->ws.next_layer().shutdown(tcp::socket::shutdown_both, ignored);
  impl_->ws.next_layer().close(ignored);
  impl_->ioc.restart();
  impl_->ioc.poll();
}

}  // namespace ds4d::net
