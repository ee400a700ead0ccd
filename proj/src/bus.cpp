#include "ds4d/bus.hpp"

#include <algorithm>

namespace ds4d::bus {

namespace detail {

struct Mailbox {
  explicit Mailbox(const TopicSpec& s) : spec(s) {}

  const TopicSpec spec;
  mutable std::mutex mutex;
  std::deque<Received> queue;
  std::uint64_t dropped = 0;
  bool overflowed = false;
  std::function<void()> notifier;

  // Called with the topic lock held so deliveries stay in seq order.
  void deliver(const Received& r) {
    std::lock_guard lock(mutex);
    if (spec.delivery == Delivery::LatestWins) {
      dropped += queue.size();
      queue.clear();
      queue.push_back(r);
      return;
    }
    if (queue.size() >= spec.depth) {
      if (spec.overflow == OverflowPolicy::Error) {
        overflowed = true;
        ++dropped;
        return;
      }
      queue.pop_front();
      ++dropped;
    }
    queue.push_back(r);
  }
};

struct Topic {
  explicit Topic(TopicSpec s) : spec(std::move(s)) {}

  const TopicSpec spec;
  std::mutex mutex;
  std::uint64_t next_seq = 0;
  std::vector<std::weak_ptr<Mailbox>> subscribers;
};

}  // namespace detail

std::vector<TopicSpec> default_topics() {
  return {
      {std::string(topic::kMasterState), MsgType::MasterState, Delivery::LatestWins, 1,
       OverflowPolicy::DropOldest},
      {std::string(topic::kRobotCommand), MsgType::RobotCommand, Delivery::LatestWins, 1,
       OverflowPolicy::DropOldest},
      {std::string(topic::kSimState), MsgType::SimState, Delivery::LatestWins, 1,
       OverflowPolicy::DropOldest},
      // Episode data must never be lost silently.
      {std::string(topic::kRecordStep), MsgType::RecordStep, Delivery::Bounded, 256,
       OverflowPolicy::Error},
  };
}

std::uint64_t steady_now_ns() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                        std::chrono::steady_clock::now().time_since_epoch())
                                        .count());
}

Subscription::~Subscription() = default;
Subscription::Subscription(Subscription&&) noexcept = default;
Subscription& Subscription::operator=(Subscription&&) noexcept = default;

std::optional<Received> Subscription::poll_latest() {
  std::lock_guard lock(mailbox_->mutex);
  if (mailbox_->overflowed) {
    throw BusError(Errc::Overflow, "subscription to '" + mailbox_->spec.name +
                                       "' overflowed (depth " +
                                       std::to_string(mailbox_->spec.depth) + ")");
  }
  if (mailbox_->queue.empty()) {
    return std::nullopt;
  }
  Received r = std::move(mailbox_->queue.front());
  mailbox_->queue.pop_front();
  return r;
}

std::uint64_t Subscription::dropped() const {
  std::lock_guard lock(mailbox_->mutex);
  return mailbox_->dropped;
}

std::size_t Subscription::pending() const {
  std::lock_guard lock(mailbox_->mutex);
  return mailbox_->queue.size();
}

const std::string& Subscription::topic() const { return mailbox_->spec.name; }

void Subscription::set_notifier(std::function<void()> fn) {
  std::lock_guard lock(mailbox_->mutex);
  mailbox_->notifier = std::move(fn);
}

Bus::Bus() : Bus(default_topics()) {}

Bus::Bus(std::vector<TopicSpec> topics, Clock clock) : clock_(std::move(clock)) {
  if (!clock_) {
    clock_ = steady_now_ns;
  }
  for (const auto& t : topics) {
    register_topic(t);
  }
}

Bus::~Bus() = default;

void Bus::register_topic(const TopicSpec& spec) {
  if (spec.delivery == Delivery::Bounded && spec.depth == 0) {
    throw std::invalid_argument("bounded topic needs depth >= 1");
  }
  std::lock_guard lock(mutex_);
  if (topics_.contains(spec.name)) {
    throw BusError(Errc::DuplicateTopic, "topic already registered: " + spec.name);
  }
  topics_.emplace(spec.name, std::make_unique<detail::Topic>(spec));
}

bool Bus::has_topic(std::string_view name) const {
  std::lock_guard lock(mutex_);
  return topics_.find(name) != topics_.end();
}

detail::Topic& Bus::find(std::string_view name) const {
  std::lock_guard lock(mutex_);
  auto it = topics_.find(name);
  if (it == topics_.end()) {
    throw BusError(Errc::UnknownTopic, "unknown topic: " + std::string(name));
  }
  return *it->second;
}

const TopicSpec& Bus::spec(std::string_view name) const { return find(name).spec; }

std::uint64_t Bus::publish(std::string_view name, Message message) {
  detail::Topic& t = find(name);
  if (type_of(message) != t.spec.type) {
    throw BusError(Errc::TypeMismatch, "topic '" + t.spec.name + "' carries " +
                                           std::string(type_name(t.spec.type)) + ", got " +
                                           std::string(type_name(type_of(message))));
  }
  Received r;
  r.message = std::make_shared<const Message>(std::move(message));
  std::vector<std::function<void()>> notify;
  {
    std::lock_guard lock(t.mutex);
    r.seq = t.next_seq++;
    r.timestamp_ns = clock_();
    auto& subs = t.subscribers;
    subs.erase(std::remove_if(subs.begin(), subs.end(), [](const auto& w) { return w.expired(); }),
               subs.end());
    for (const auto& weak : subs) {
      if (auto mb = weak.lock()) {
        mb->deliver(r);
        std::lock_guard mlock(mb->mutex);
        if (mb->notifier) {
          notify.push_back(mb->notifier);
        }
      }
    }
  }
  for (auto& fn : notify) {
    fn();
  }
  return r.seq;
}

Subscription Bus::subscribe(std::string_view name) {
  detail::Topic& t = find(name);
  auto mb = std::make_shared<detail::Mailbox>(t.spec);
  std::lock_guard lock(t.mutex);
  t.subscribers.push_back(mb);
  return Subscription(std::move(mb));
}

}  // namespace ds4d::bus
