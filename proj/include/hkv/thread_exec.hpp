#pragma once

#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

#include "hkv/exec.hpp"

namespace hkv {

/// Real-thread executor used with the socket transport: tasks are
/// std::threads, time is the steady clock, monitors wrap std::mutex and
/// std::condition_variable. Not deterministic — used for the in-process
/// multi-node demo and the socket smoke tests, not for protocol checks.
class ThreadExec : public Exec {
public:
    ThreadExec();
    ~ThreadExec() override;

    void spawn(std::string name, std::function<void()> fn) override;
    Nanos now() override;
    void sleep_for(Nanos d) override;
    void run() override;
    void drain() override;
    std::shared_ptr<MonitorImpl> make_monitor() override;
    void*& local_slot() override;

private:
    std::mutex mu_;
    std::vector<std::thread> threads_;
    Nanos epoch_;
};

}  // namespace hkv
