#pragma once

#include <cassert>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "hkv/types.hpp"

namespace hkv {

/// Backend-specific monitor (mutex + condition variable fused). Created
/// through Exec::make_monitor so the same blocking code runs both under
/// the deterministic fiber scheduler and under real threads.
class MonitorImpl {
public:
    virtual ~MonitorImpl() = default;
    virtual void lock() = 0;
    virtual void unlock() = 0;
    /// Caller must hold the lock. Atomically releases it and blocks;
    /// re-acquires before returning. wait_for returns false on timeout.
    virtual void wait() = 0;
    virtual bool wait_for(Nanos timeout) = 0;
    virtual void notify_one() = 0;
    virtual void notify_all() = 0;
};

/// Execution environment: task spawning, time, and blocking primitives.
/// Two implementations exist — a single-threaded fiber scheduler with a
/// virtual clock (deterministic, used by the simulated transport and all
/// protocol tests) and a plain std::thread backend used by the socket
/// transport. Application code is written against this interface only.
class Exec {
public:
    virtual ~Exec() = default;

    /// Start a detached task. The name shows up in scheduler diagnostics.
    virtual void spawn(std::string name, std::function<void()> fn) = 0;

    virtual Nanos now() = 0;
    virtual void sleep_for(Nanos d) = 0;
    virtual void yield() { sleep_for(0); }

    /// Drive tasks until none remain runnable (fiber backend) or join all
    /// spawned threads (thread backend). May be called repeatedly.
    virtual void run() = 0;

    /// Tear down all outstanding tasks. Fiber backend force-unwinds parked
    /// fibers; thread backend joins (callers must have signalled loops to
    /// stop first). Must be called before objects the tasks reference die.
    virtual void drain() = 0;

    virtual std::shared_ptr<MonitorImpl> make_monitor() = 0;

    /// One scratch pointer per task (per fiber / per thread). Used for
    /// attaching per-operation trace records without threading a context
    /// argument through every call layer.
    virtual void*& local_slot() = 0;
};

class Monitor {
public:
    explicit Monitor(Exec& ex) : impl_(ex.make_monitor()) {}
    void lock() { impl_->lock(); }
    void unlock() { impl_->unlock(); }
    void wait() { impl_->wait(); }
    bool wait_for(Nanos timeout) { return impl_->wait_for(timeout); }
    void notify_one() { impl_->notify_one(); }
    void notify_all() { impl_->notify_all(); }

private:
    std::shared_ptr<MonitorImpl> impl_;
};

class Lock {
public:
    explicit Lock(Monitor& m) : m_(m) { m_.lock(); }
    ~Lock() { m_.unlock(); }
    Lock(const Lock&) = delete;
    Lock& operator=(const Lock&) = delete;

private:
    Monitor& m_;
};

/// One-shot latch.
class Flag {
public:
    explicit Flag(Exec& ex) : m_(ex) {}
    void set() {
        Lock l(m_);
        set_ = true;
        m_.notify_all();
    }
    bool is_set() {
        Lock l(m_);
        return set_;
    }
    void wait() {
        Lock l(m_);
        while (!set_) m_.wait();
    }
    bool wait_for(Nanos timeout) {
        Lock l(m_);
        if (set_) return true;
        m_.wait_for(timeout);
        return set_;
    }

private:
    Monitor m_;
    bool set_ = false;
};

/// Unbounded MPMC queue with close semantics.
template <typename T>
class Chan {
public:
    explicit Chan(Exec& ex) : m_(ex) {}

    bool push(T v) {
        Lock l(m_);
        if (closed_) return false;
        q_.push_back(std::move(v));
        m_.notify_one();
        return true;
    }

    /// Blocks until an element or close. nullopt == closed and drained.
    std::optional<T> pop() {
        Lock l(m_);
        while (q_.empty() && !closed_) m_.wait();
        return take_locked();
    }

    /// nullopt == timeout or closed-and-drained.
    std::optional<T> pop_for(Nanos timeout) {
        Lock l(m_);
        if (q_.empty() && !closed_) m_.wait_for(timeout);
        return take_locked();
    }

    std::optional<T> try_pop() {
        Lock l(m_);
        return take_locked();
    }

    void close() {
        Lock l(m_);
        closed_ = true;
        m_.notify_all();
    }

    size_t size() {
        Lock l(m_);
        return q_.size();
    }

private:
    std::optional<T> take_locked() {
        if (q_.empty()) return std::nullopt;
        T v = std::move(q_.front());
        q_.pop_front();
        return v;
    }

    Monitor m_;
    std::deque<T> q_;
    bool closed_ = false;
};

/// Counts outstanding tasks; wait() blocks until the count returns to zero.
class WaitGroup {
public:
    explicit WaitGroup(Exec& ex) : m_(ex) {}
    void add(int n = 1) {
        Lock l(m_);
        count_ += n;
    }
    void done() {
        Lock l(m_);
        assert(count_ > 0);
        if (--count_ == 0) m_.notify_all();
    }
    void wait() {
        Lock l(m_);
        while (count_ > 0) m_.wait();
    }

private:
    Monitor m_;
    int count_ = 0;
};

template <typename T>
struct FutureState {
    explicit FutureState(Exec& ex) : m(ex) {}
    Monitor m;
    std::optional<T> val;
};

template <typename T>
class Future {
public:
    Future() = default;
    explicit Future(std::shared_ptr<FutureState<T>> st) : st_(std::move(st)) {}

    bool valid() const { return st_ != nullptr; }

    T get() {
        Lock l(st_->m);
        while (!st_->val) st_->m.wait();
        return *st_->val;
    }

    std::optional<T> get_for(Nanos timeout) {
        Lock l(st_->m);
        if (!st_->val) st_->m.wait_for(timeout);
        return st_->val;
    }

private:
    std::shared_ptr<FutureState<T>> st_;
};

template <typename T>
class Promise {
public:
    explicit Promise(Exec& ex) : st_(std::make_shared<FutureState<T>>(ex)) {}

    void set(T v) {
        Lock l(st_->m);
        assert(!st_->val && "promise set twice");
        st_->val = std::move(v);
        st_->m.notify_all();
    }

    Future<T> future() const { return Future<T>(st_); }

private:
    std::shared_ptr<FutureState<T>> st_;
};

}  // namespace hkv
