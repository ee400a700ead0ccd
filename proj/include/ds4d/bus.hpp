#pragma once

#include "ds4d/messages.hpp"

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ds4d::bus {

enum class Errc { UnknownTopic, TypeMismatch, DuplicateTopic, Overflow };

class BusError : public std::runtime_error {
public:
  BusError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

private:
  Errc code_;
};

enum class Delivery {
  LatestWins,  // mailbox keeps only the newest unread message
  Bounded,     // FIFO of fixed depth
};

enum class OverflowPolicy {
  DropOldest,  // count the drop and keep going
  Error,       // latch an overflow; the next poll throws
};

struct TopicSpec {
  std::string name;
  MsgType type = MsgType::MasterState;
  Delivery delivery = Delivery::LatestWins;
  std::size_t depth = 1;
  OverflowPolicy overflow = OverflowPolicy::DropOldest;
};

/// The four control/data topics with their default delivery policies.
std::vector<TopicSpec> default_topics();

struct Received {
  std::uint64_t seq = 0;
  std::uint64_t timestamp_ns = 0;
  std::shared_ptr<const Message> message;

  template <class T>
  const T& as() const {
    return std::get<T>(*message);
  }
};

namespace detail {
struct Mailbox;
struct Topic;
}  // namespace detail

/// Consumer end of a topic. Owned by exactly one consumer; unsubscribes on
/// destruction.
class Subscription {
public:
  Subscription() = default;
  ~Subscription();
  Subscription(Subscription&&) noexcept;
  Subscription& operator=(Subscription&&) noexcept;
  Subscription(const Subscription&) = delete;
  Subscription& operator=(const Subscription&) = delete;

  /// Latest-wins topics: the newest unread message (older unread ones are
  /// dropped and counted). Bounded topics: the oldest queued message.
  std::optional<Received> poll_latest();

  /// Messages this subscription lost to latest-wins replacement or drop-oldest.
  std::uint64_t dropped() const;
  std::size_t pending() const;
  const std::string& topic() const;

  /// Called (from the publisher's thread, outside any bus lock) after each
  /// delivery to this subscription.
  void set_notifier(std::function<void()> fn);

  explicit operator bool() const { return static_cast<bool>(mailbox_); }

private:
  friend class Bus;
  explicit Subscription(std::shared_ptr<detail::Mailbox> mb) : mailbox_(std::move(mb)) {}
  std::shared_ptr<detail::Mailbox> mailbox_;
};

/// In-process topic bus. Safe for concurrent publishers and subscribers.
/// Publishing never blocks on consumers.
class Bus {
public:
  using Clock = std::function<std::uint64_t()>;

  /// Registers default_topics(); the clock stamps envelopes (steady clock by default).
  Bus();
  explicit Bus(std::vector<TopicSpec> topics, Clock clock = {});
  ~Bus();
  Bus(const Bus&) = delete;
  Bus& operator=(const Bus&) = delete;

  void register_topic(const TopicSpec& spec);
  bool has_topic(std::string_view name) const;
  const TopicSpec& spec(std::string_view name) const;

  /// Returns the sequence number assigned to the message (0, 1, 2, ... per topic).
  std::uint64_t publish(std::string_view topic, Message message);
  Subscription subscribe(std::string_view topic);

private:
  detail::Topic& find(std::string_view name) const;

  Clock clock_;
  mutable std::mutex mutex_;
  std::map<std::string, std::unique_ptr<detail::Topic>, std::less<>> topics_;
};

std::uint64_t steady_now_ns();

}  // namespace ds4d::bus
