#include "hkv/oplog.hpp"

#include <doctest.h>

#include "hkv/sim_exec.hpp"

using namespace hkv;

namespace {
LogEntry mk(OpKind kind, const std::string& key, uint64_t n) {
    LogEntry e;
    e.kind = kind;
    e.key = key;
    e.addr = ValueAddr(0, 8 * (n + 1));
    e.item_len = uint8_t(10 + n % 100);
    return e;
}
}  // namespace

TEST_CASE("partitions number independently and batches are dense") {
    SimExec ex;
    ex.spawn("main", [&] {
        OpLog log(ex, 4, 1024);

        CHECK(log.append(0, OpKind::Put, "a", ValueAddr(0, 8), 10) == 1);
        CHECK(log.append(1, OpKind::Put, "b", ValueAddr(0, 16), 10) == 1);
        CHECK(log.append(0, OpKind::Put, "c", ValueAddr(0, 24), 10) == 2);

        std::vector<LogEntry> batch;
        for (int i = 0; i < 5; i++) batch.push_back(mk(OpKind::Put, "k" + std::to_string(i), i));
        Seq first = log.append_batch(0, std::move(batch));
        CHECK(first == 3);
        CHECK(log.head(0) == 7);
        CHECK(log.head(1) == 1);

        auto got = log.fetch(0, 2, 100);
        REQUIRE(got.ok());
        REQUIRE(got.value().size() == 5);
        for (size_t i = 0; i < 5; i++) {
            CHECK(got.value()[i].seq == 3 + i);
            CHECK(got.value()[i].key == "k" + std::to_string(i));
        }
    });
    ex.run();
}

TEST_CASE("replica install enforces the dense-prefix rule") {
    SimExec ex;
    ex.spawn("main", [&] {
        OpLog primary(ex, 1, 1024);
        OpLog replica(ex, 1, 1024);

        for (int i = 0; i < 10; i++)
            primary.append(0, OpKind::Put, "k" + std::to_string(i), ValueAddr(0, 8 + 8 * i), 12);

        auto b1 = primary.fetch(0, 0, 4);
        auto b2 = primary.fetch(0, 4, 6);
        REQUIRE(b1.ok());
        REQUIRE(b2.ok());

        // Out-of-order install leaves a gap: rejected without change.
        CHECK(replica.append_replica(0, b2.value()).code() == Errc::Rejected);
        CHECK(replica.head(0) == 0);

        REQUIRE(replica.append_replica(0, b1.value()).ok());
        REQUIRE(replica.append_replica(0, b2.value()).ok());
        CHECK(replica.head(0) == 10);

        // The replica's log is now byte-for-byte the primary's prefix.
        auto p = primary.fetch(0, 0, 100);
        auto r = replica.fetch(0, 0, 100);
        CHECK(p.value() == r.value());

        // A batch with an internal gap is also rejected.
        std::vector<LogEntry> holey = {b1.value()[0]};
        holey[0].seq = 11;
        auto e2 = mk(OpKind::Put, "x", 1);
        e2.seq = 13;
        holey.push_back(e2);
        CHECK(replica.append_replica(0, holey).code() == Errc::Rejected);
    });
    ex.run();
}

TEST_CASE("applied watermark is monotone and waitable") {
    SimExec ex;
    ex.spawn("main", [&] {
        OpLog log(ex, 1, 1024);
        for (int i = 0; i < 20; i++) log.append(0, OpKind::Put, "k", ValueAddr(0, 8), 10);

        log.mark_applied(0, 10);
        log.mark_applied(0, 7);  // regression ignored
        CHECK(log.applied(0) == 10);

        CHECK(!log.wait_applied(0, 15, us(50)));  // times out at 50us

        ex.spawn("applier", [&] {
            ex.sleep_for(us(30));
            log.mark_applied(0, 15);
        });
        Nanos t0 = ex.now();
        CHECK(log.wait_applied(0, 15, us(1000)));
        CHECK(ex.now() - t0 == us(30));
    });
    ex.run();
}

TEST_CASE("truncation frees the ring but never drops unapplied entries") {
    SimExec ex;
    ex.spawn("main", [&] {
        OpLog log(ex, 1, 1024);
        for (int i = 0; i < 100; i++)
            log.append(0, OpKind::Put, "k" + std::to_string(i), ValueAddr(0, 8), 10);

        log.mark_applied(0, 60);
        log.truncate(0, 80);  // capped at applied
        CHECK(log.floor(0) == 60);
        CHECK(log.retained(0) == 40);

        CHECK(log.fetch(0, 59, 10).code() == Errc::Bounds);
        auto ok = log.fetch(0, 60, 10);
        REQUIRE(ok.ok());
        CHECK(ok.value().front().seq == 61);

        // Paused truncation is a no-op until resumed (recovery in flight).
        log.mark_applied(0, 100);
        log.pause_truncation(true);
        log.truncate(0, 100);
        CHECK(log.floor(0) == 60);
        log.pause_truncation(false);
        log.truncate(0, 100);
        CHECK(log.floor(0) == 100);
        CHECK(log.retained(0) == 0);
        CHECK(log.truncated_total() == 100);
    });
    ex.run();
}

TEST_CASE("appends block at capacity until truncation frees space") {
    SimExec ex;
    ex.spawn("main", [&] {
        OpLog log(ex, 1, 8);
        for (int i = 0; i < 8; i++) log.append(0, OpKind::Put, "k", ValueAddr(0, 8), 10);

        Nanos unblocked_at = 0;
        ex.spawn("blocked-appender", [&] {
            log.append(0, OpKind::Put, "late", ValueAddr(0, 16), 10);
            unblocked_at = ex.now();
        });

        ex.sleep_for(us(100));
        CHECK(unblocked_at == 0);  // still stuck at capacity

        log.mark_applied(0, 4);
        log.truncate(0, 4);
        ex.sleep_for(us(1));
        CHECK(unblocked_at == us(100));
        CHECK(log.head(0) == 9);
    });
    ex.run();
}
