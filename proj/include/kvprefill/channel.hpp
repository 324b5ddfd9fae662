#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <vector>

#include "kvprefill/errors.hpp"

namespace kvprefill {

/// Ordered, reliable, typed point-to-point queue. recv blocks until a message
/// arrives or the channel closes; a close with an empty queue turns pending
/// and future receives into protocol errors, which is how missing messages
/// surface instead of deadlocking.
template <typename M>
class Channel {
  public:
    void send(M msg) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            if (closed_) throw ProtocolError("send on closed channel");
            queue_.push_back(std::move(msg));
        }
        cv_.notify_one();
    }

    M recv() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return !queue_.empty() || closed_; });
        if (queue_.empty()) throw ProtocolError("channel closed before message arrived");
        M msg = std::move(queue_.front());
        queue_.pop_front();
        return msg;
    }

    void close() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            closed_ = true;
        }
        cv_.notify_all();
    }

  private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<M> queue_;
    bool closed_ = false;
};

/// Cyclic barrier that can be aborted: blocked parties wake and throw instead
/// of waiting for ranks that will never arrive. Completed generations are the
/// engine's global synchronization count.
class AbortableBarrier {
  public:
    explicit AbortableBarrier(int64_t parties) : parties_(parties) {}

    void arrive_and_wait() {
        std::unique_lock<std::mutex> lock(mutex_);
        if (aborted_) throw ProtocolError("barrier aborted");
        if (++arrived_ == parties_) {
            arrived_ = 0;
            ++generation_;
            lock.unlock();
            cv_.notify_all();
            return;
        }
        const int64_t entered = generation_;
        cv_.wait(lock, [&] { return generation_ != entered || aborted_; });
        if (generation_ == entered) throw ProtocolError("barrier aborted");
    }

    void abort() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            aborted_ = true;
        }
        cv_.notify_all();
    }

    int64_t generations() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return generation_;
    }

  private:
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    int64_t parties_;
    int64_t arrived_ = 0;
    int64_t generation_ = 0;
    bool aborted_ = false;
};

/// All channels and the barrier for one run, plus first-error bookkeeping.
/// Any worker failure aborts everything so the remaining ranks unwind rather
/// than block; the first recorded error is rethrown to the caller.
template <typename M>
class Fabric {
  public:
    explicit Fabric(int64_t ranks)
        : ranks_(ranks), channels_(static_cast<size_t>(ranks * ranks)), barrier_(ranks) {
        for (auto& ch : channels_) ch = std::make_unique<Channel<M>>();
    }

    Channel<M>& channel(int64_t from, int64_t to) {
        return *channels_[static_cast<size_t>(from * ranks_ + to)];
    }

    AbortableBarrier& barrier() { return barrier_; }

    void close_outgoing(int64_t from) {
        for (int64_t to = 0; to < ranks_; ++to) channel(from, to).close();
    }

    void abort_all(std::exception_ptr error) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            if (!first_error_) first_error_ = error;
        }
        for (auto& ch : channels_) ch->close();
        barrier_.abort();
    }

    void rethrow_if_failed() {
        std::exception_ptr error;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            error = first_error_;
        }
        if (error) std::rethrow_exception(error);
    }

  private:
    int64_t ranks_;
    std::vector<std::unique_ptr<Channel<M>>> channels_;
    AbortableBarrier barrier_;
    std::mutex mutex_;
    std::exception_ptr first_error_;
};

}  // namespace kvprefill
