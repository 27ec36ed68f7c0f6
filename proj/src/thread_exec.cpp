#include "hkv/thread_exec.hpp"

#include <chrono>

namespace hkv {

namespace {

class ThreadMonitor : public MonitorImpl {
public:
    void lock() override { mu_.lock(); }
    void unlock() override { mu_.unlock(); }
    void wait() override {
        std::unique_lock<std::mutex> l(mu_, std::adopt_lock);
        cv_.wait(l);
        l.release();
    }
    bool wait_for(Nanos timeout) override {
        std::unique_lock<std::mutex> l(mu_, std::adopt_lock);
        auto st = cv_.wait_for(l, std::chrono::nanoseconds(timeout));
        l.release();
        return st == std::cv_status::no_timeout;
    }
    void notify_one() override { cv_.notify_one(); }
    void notify_all() override { cv_.notify_all(); }

private:
    std::mutex mu_;
    std::condition_variable cv_;
};

thread_local void* t_slot = nullptr;

Nanos steady_ns() {
    return Nanos(std::chrono::duration_cast<std::chrono::nanoseconds>(
                     std::chrono::steady_clock::now().time_since_epoch())
                     .count());
}

}  // namespace

ThreadExec::ThreadExec() : epoch_(steady_ns()) {}

ThreadExec::~ThreadExec() { drain(); }

void ThreadExec::spawn(std::string, std::function<void()> fn) {
    std::lock_guard<std::mutex> l(mu_);
    threads_.emplace_back(std::move(fn));
}

Nanos ThreadExec::now() { return steady_ns() - epoch_; }

void ThreadExec::sleep_for(Nanos d) {
    std::this_thread::sleep_for(std::chrono::nanoseconds(d));
}

void ThreadExec::run() { drain(); }

void ThreadExec::drain() {
    // Join whatever has been spawned so far; spawning can continue from
    // other threads, so loop until the list stays empty.
    for (;;) {
        std::vector<std::thread> batch;
        {
            std::lock_guard<std::mutex> l(mu_);
            batch.swap(threads_);
        }
        if (batch.empty()) return;
        for (auto& t : batch) t.join();
    }
}

std::shared_ptr<MonitorImpl> ThreadExec::make_monitor() {
    return std::make_shared<ThreadMonitor>();
}

void*& ThreadExec::local_slot() { return t_slot; }

}  // namespace hkv
