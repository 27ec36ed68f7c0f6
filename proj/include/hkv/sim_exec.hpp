#pragma once

#include <exception>
#include <memory>
#include <queue>
#include <vector>

#include "hkv/exec.hpp"

namespace hkv {

/// Deterministic cooperative scheduler: every task is a stackful fiber on
/// one OS thread, and time is a virtual nanosecond counter that jumps to
/// the next wake event. Runnable fibers with equal wake times run in FIFO
/// spawn/wake order, so a given program + workload seed replays the exact
/// same interleaving. Blocking (monitor waits, sleeps) costs nothing but
/// virtual time; a fiber models CPU consumption simply by sleeping.
class SimExec : public Exec {
public:
    SimExec();
    ~SimExec() override;
    SimExec(const SimExec&) = delete;
    SimExec& operator=(const SimExec&) = delete;

    void spawn(std::string name, std::function<void()> fn) override;
    Nanos now() override { return now_; }
    void sleep_for(Nanos d) override;
    void run() override;
    void drain() override;
    std::shared_ptr<MonitorImpl> make_monitor() override;
    void*& local_slot() override;

    /// Run fn in the scheduler context at virtual time `at` (monotone
    /// clamped). fn must not block; it may only touch primitives that are
    /// never held across a blocking call (futures, channels, flags) —
    /// that is what makes delayed message delivery cheap (no fiber spawn).
    void post_at(Nanos at, std::function<void()> fn);

    /// Number of fibers not yet finished (parked or runnable).
    size_t live_fibers() const { return live_; }

    bool tearing_down() const { return teardown_; }

private:
    struct Fiber;
    friend class SimMonitor;

    struct WakeToken {
        Fiber* fiber = nullptr;            // nullptr => deferred call
        std::function<void()> fn;
        bool consumed = false;   // popped from the heap or cancelled
        bool notified = false;   // woken by notify (vs timer/sleep)
    };
    using TokenPtr = std::shared_ptr<WakeToken>;

    struct HeapEntry {
        Nanos at;
        uint64_t seq;
        TokenPtr tok;
        bool operator>(const HeapEntry& o) const {
            return at != o.at ? at > o.at : seq > o.seq;
        }
    };

    /// Park the current fiber; it resumes when a scheduled token fires.
    void park();
    /// Make a wake token for the current fiber (to hand to a wait list).
    TokenPtr token_for_current();
    /// Arm a token: fiber wakes at `at` unless the token is consumed first.
    void schedule(const TokenPtr& tok, Nanos at);

    void resume(Fiber* f);
    Fiber* current_fiber() const { return current_; }

    Nanos now_ = 0;
    uint64_t next_seq_ = 0;
    size_t live_ = 0;
    Fiber* current_ = nullptr;
    bool running_ = false;
    bool teardown_ = false;
    void* main_slot_ = nullptr;
    std::exception_ptr fatal_;
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>> heap_;
    std::vector<std::unique_ptr<Fiber>> fibers_;
};

}  // namespace hkv
