#include "hkv/sim_exec.hpp"

#include <boost/context/continuation.hpp>

#include <algorithm>

namespace hkv {

namespace ctx = boost::context;

struct SimExec::Fiber {
    std::string name;
    std::function<void()> fn;
    ctx::continuation cont;   // fiber side, valid while suspended
    ctx::continuation sched;  // scheduler side, valid while fiber runs
    bool started = false;
    bool done = false;
    void* slot = nullptr;
};

/// Monitor for the fiber backend. The scheduler is single-threaded and
/// non-preemptive, so lock/unlock never race; parking only happens when a
/// fiber blocks while another holds the monitor or waits on the condition.
///
/// During executor teardown (drain), fibers are force-unwound and their
/// destructors may unlock/lock monitors; in that mode lock/unlock degrade
/// to plain owner bookkeeping and never park.
class SimMonitor : public MonitorImpl {
public:
    explicit SimMonitor(SimExec& ex) : ex_(ex) {}

    void lock() override {
        void* self = ident();
        if (ex_.tearing_down()) {
            owner_ = self;
            return;
        }
        if (self == sched_tag()) {
            // Deferred-delivery callbacks (post_at) lock monitors to set
            // futures / push channels. They run when no fiber is mid
            // critical section, so the lock must be free; blocking here is
            // impossible (nothing to park).
            assert(!owner_ && "scheduler-context lock would block");
            owner_ = self;
            return;
        }
        while (owner_) {
            lock_waiters_.push_back(ex_.token_for_current());
            ex_.park();
        }
        owner_ = self;
    }

    void unlock() override {
        if (ex_.tearing_down()) {
            owner_ = nullptr;
            return;
        }
        assert(owner_ == ident());
        owner_ = nullptr;
        wake_one(lock_waiters_);
    }

    void wait() override {
        assert(ex_.current_fiber() && "wait outside a fiber");
        wait_common(nullptr);
    }

    bool wait_for(Nanos timeout) override {
        assert(ex_.current_fiber() && "wait outside a fiber");
        bool notified = false;
        wait_common(&notified, timeout);
        return notified;
    }

    void notify_one() override {
        if (ex_.tearing_down()) return;
        wake_one(cv_waiters_);
    }

    void notify_all() override {
        if (ex_.tearing_down()) return;
        while (wake_one(cv_waiters_)) {
        }
    }

private:
    void wait_common(bool* notified, Nanos timeout = 0) {
        assert(owner_ == ident());
        auto tok = ex_.token_for_current();
        cv_waiters_.push_back(tok);
        if (notified) ex_.schedule(tok, ex_.now() + timeout);  // timer arm
        unlock();
        try {
            ex_.park();
        } catch (...) {
            // forced unwind: executor is tearing down, skip the relock
            // (unlock above already released; guards above us will hit the
            // teardown fast path).
            tok->consumed = true;
            throw;
        }
        if (notified) *notified = tok->notified;
        lock();
    }

    bool wake_one(std::deque<SimExec::TokenPtr>& q) {
        while (!q.empty()) {
            auto tok = std::move(q.front());
            q.pop_front();
            if (tok->consumed) continue;  // already woken by its timer
            tok->notified = true;
            ex_.schedule(tok, ex_.now());
            return true;
        }
        return false;
    }

    static void* sched_tag() {
        static char tag;
        return &tag;
    }
    void* ident() const {
        SimExec::Fiber* f = ex_.current_fiber();
        return f ? static_cast<void*>(f) : sched_tag();
    }

    SimExec& ex_;
    void* owner_ = nullptr;
    std::deque<SimExec::TokenPtr> lock_waiters_;
    std::deque<SimExec::TokenPtr> cv_waiters_;
};

SimExec::SimExec() = default;

SimExec::~SimExec() { drain(); }

void SimExec::spawn(std::string name, std::function<void()> fn) {
    assert(!teardown_);
    auto f = std::make_unique<Fiber>();
    f->name = std::move(name);
    f->fn = std::move(fn);
    auto tok = std::make_shared<WakeToken>();
    tok->fiber = f.get();
    schedule(tok, now_);
    live_++;
    fibers_.push_back(std::move(f));
}

void SimExec::sleep_for(Nanos d) {
    schedule(token_for_current(), now_ + d);
    park();
}

SimExec::TokenPtr SimExec::token_for_current() {
    assert(current_ && "blocking call outside a fiber");
    auto tok = std::make_shared<WakeToken>();
    tok->fiber = current_;
    return tok;
}

void SimExec::schedule(const TokenPtr& tok, Nanos at) {
    heap_.push(HeapEntry{at, next_seq_++, tok});
}

void SimExec::post_at(Nanos at, std::function<void()> fn) {
    auto tok = std::make_shared<WakeToken>();
    tok->fn = std::move(fn);
    schedule(tok, std::max(at, now_));
}

void SimExec::park() {
    assert(!teardown_ && "blocking call during teardown");
    Fiber* f = current_;
    f->sched = f->sched.resume();  // switch to scheduler; returns on wake
}

void SimExec::resume(Fiber* f) {
    current_ = f;
    ctx::continuation ret;
    if (!f->started) {
        f->started = true;
        ret = ctx::callcc([this, f](ctx::continuation&& sched) {
            f->sched = std::move(sched);
            try {
                f->fn();
            } catch (const ctx::detail::forced_unwind&) {
                f->done = true;
                throw;
            } catch (...) {
                if (!fatal_) fatal_ = std::current_exception();
            }
            f->done = true;
            return std::move(f->sched);
        });
    } else {
        ret = f->cont.resume();
    }
    f->cont = std::move(ret);
    current_ = nullptr;
    if (f->done) {
        live_--;
        auto it = std::find_if(fibers_.begin(), fibers_.end(),
                               [f](const auto& p) { return p.get() == f; });
        assert(it != fibers_.end());
        fibers_.erase(it);
    }
}

void SimExec::run() {
    assert(!running_ && "run() is not reentrant");
    running_ = true;
    while (!heap_.empty()) {
        HeapEntry e = heap_.top();
        heap_.pop();
        if (e.tok->consumed) continue;
        e.tok->consumed = true;
        if (e.at > now_) now_ = e.at;
        if (e.tok->fiber) {
            resume(e.tok->fiber);
        } else {
            try {
                e.tok->fn();
            } catch (...) {
                if (!fatal_) fatal_ = std::current_exception();
            }
        }
        if (fatal_) break;
    }
    running_ = false;
    if (fatal_) {
        auto ep = fatal_;
        fatal_ = nullptr;
        drain();
        std::rethrow_exception(ep);
    }
}

void SimExec::drain() {
    // Unwind parked fibers: destroying a suspended continuation raises
    // forced_unwind inside it, running destructors on that stack. Those
    // destructors may touch monitors (teardown fast paths) and push wake
    // tokens, so the event heap is cleared only after all fibers are gone.
    teardown_ = true;
    while (!fibers_.empty()) {
        auto f = std::move(fibers_.back());
        fibers_.pop_back();
        live_--;
        current_ = f.get();
        f->cont = ctx::continuation();  // triggers the unwind if suspended
        current_ = nullptr;
    }
    while (!heap_.empty()) heap_.pop();
    teardown_ = false;
}

std::shared_ptr<MonitorImpl> SimExec::make_monitor() {
    return std::make_shared<SimMonitor>(*this);
}

void*& SimExec::local_slot() {
    return current_ ? current_->slot : main_slot_;
}

}  // namespace hkv
