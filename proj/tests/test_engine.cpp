#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "amdflow/engine.hpp"
#include "support.hpp"

using namespace amdflow;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

EngineOptions options_in(const fs::path& dir, int max_attempts = 2)
{
    return {dir / "ledger.jsonl", dir / "tasks", max_attempts};
}

TaskSpec spec(const std::string& payload, std::vector<TaskKey> inputs = {}, Stage stage = Stage::calc)
{
    return {stage, payload, std::move(inputs), ResourceClass::cpu};
}

/// Writes its payload tag as output and counts executions.
TaskFunction writer(std::atomic<int>& counter, const std::string& tag = "out")
{
    return [&counter, tag](const TaskContext& ctx) {
        ++counter;
        std::ofstream(ctx.staging_path) << tag;
        return TaskOutcome{};
    };
}

TaskFunction sleeper(std::chrono::milliseconds d, std::atomic<int>& counter)
{
    return [d, &counter](const TaskContext& ctx) {
        std::this_thread::sleep_for(d);
        ++counter;
        std::ofstream(ctx.staging_path) << "x";
        return TaskOutcome{};
    };
}

std::size_t ledger_lines(const fs::path& p)
{
    std::ifstream in(p);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line))
        ++n;
    return n;
}

} // namespace

TEST(TaskKey, IdempotentAndDistinct)
{
    EXPECT_EQ(task_key(spec("abc")), task_key(spec("abc")));
    EXPECT_NE(task_key(spec("abc")), task_key(spec("abd")));
    EXPECT_NE(task_key(spec("abc")), task_key(spec("abc", {}, Stage::screen)));
    const auto k1 = task_key(spec("x")), k2 = task_key(spec("y"));
    EXPECT_EQ(task_key(spec("z", {k1, k2})), task_key(spec("z", {k2, k1})));
    EXPECT_EQ(task_key(spec("")).size(), 64u);
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Engine, SameSpecTwiceRunsOnce)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 2);
    std::atomic<int> runs{0};
    const auto a = engine.submit(spec("same"), writer(runs));
    const auto b = engine.submit(spec("same"), writer(runs));
    EXPECT_EQ(a, b);
    const auto s = engine.run_to_completion();
    EXPECT_EQ(runs, 1);
    EXPECT_EQ(s.done, 1u);
    EXPECT_EQ(s.executed, 1u);
    EXPECT_EQ(testing_support::read_text(engine.outputs_path(a, Stage::calc)), "out");

    // A second run of the same engine has nothing to do.
    EXPECT_EQ(engine.run_to_completion().executed, 0u);
}

TEST(Engine, SubmitErrors)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    std::atomic<int> runs{0};
    EXPECT_THROW(engine.submit(spec("b", {task_key(spec("never"))}), writer(runs)), EngineError);
    EXPECT_THROW(Engine(options_in(dir / "other", 0)), EngineError);
}

TEST(Engine, EmptyDag)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    const auto s = engine.run_to_completion();
    EXPECT_EQ(s.done + s.failed + s.skipped + s.executed, 0u);
    EXPECT_TRUE(s.failures.empty());
}

TEST(Engine, MissingPoolIsFatalBeforeExecution)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("gpu", ResourceClass::accelerator, 1);
    std::atomic<int> runs{0};
    engine.submit(spec("a"), writer(runs));
    EXPECT_THROW(engine.run_to_completion(), EngineError);
    EXPECT_EQ(runs, 0);
    EXPECT_THROW(engine.add_pool("gpu", ResourceClass::cpu, 1), EngineError);
    EXPECT_THROW(engine.resize_pool("nope", 1), EngineError);
}

TEST(Engine, FailureSkipsDependents)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 2);
    std::atomic<int> runs{0}, b_attempts{0};
    const auto a = engine.submit(spec("a"), writer(runs));
    const auto b = engine.submit(spec("b", {a}), [&](const TaskContext& ctx) -> TaskOutcome {
        EXPECT_EQ(ctx.input_paths.size(), 1u);
        EXPECT_EQ(testing_support::read_text(ctx.input_paths[0]), "out");
        ++b_attempts;
        throw std::runtime_error("boom");
    });
    const auto c = engine.submit(spec("c", {b}), writer(runs));
    const auto s = engine.run_to_completion();
    EXPECT_EQ(engine.state(a), TaskState::done);
    EXPECT_EQ(engine.state(b), TaskState::failed);
    EXPECT_TRUE(engine.is_skipped(c));
    EXPECT_EQ(engine.state(c), TaskState::pending);
    EXPECT_EQ(s.done, 1u);
    EXPECT_EQ(s.failed, 1u);
    EXPECT_EQ(s.skipped, 1u);
    EXPECT_EQ(b_attempts, 2);
    ASSERT_EQ(s.failures.size(), 1u);
    EXPECT_EQ(s.failures[0].second, "boom");
    EXPECT_EQ(engine.records().at(b).attempts, 2);
}

TEST(Engine, RetrySucceedsOnSecondAttempt)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 1);
    std::atomic<int> attempts{0};
    const auto k = engine.submit(spec("flaky"), [&](const TaskContext& ctx) {
        if (++attempts == 1)
            throw std::runtime_error("transient");
        std::ofstream(ctx.staging_path) << "ok";
        return TaskOutcome{"second time lucky"};
    });
    const auto s = engine.run_to_completion();
    EXPECT_EQ(s.done, 1u);
    EXPECT_EQ(engine.records().at(k).note, "second time lucky");
    EXPECT_EQ(engine.records().at(k).attempts, 2);
}

TEST(Engine, TaskWithoutOutputFails)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path(), 1));
    engine.add_pool("cpu", ResourceClass::cpu, 1);
    const auto k = engine.submit(spec("lazy"), [](const TaskContext&) { return TaskOutcome{}; });
    const auto s = engine.run_to_completion();
    EXPECT_EQ(s.failed, 1u);
    EXPECT_EQ(engine.state(k), TaskState::failed);
    EXPECT_NE(engine.records().at(k).cause.find("no output"), std::string::npos);
}

TEST(Engine, HundredTasksRunConcurrently)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 4);
    std::atomic<int> runs{0}, active{0}, peak{0};
    for (int i = 0; i < 100; ++i)
        engine.submit(spec("t" + std::to_string(i)), [&](const TaskContext& ctx) {
            const int now = ++active;
            int p = peak.load();
            while (now > p && !peak.compare_exchange_weak(p, now)) {
            }
            std::this_thread::sleep_for(20ms);
            --active;
            ++runs;
            std::ofstream(ctx.staging_path) << "x";
            return TaskOutcome{};
        });
    const auto start = std::chrono::steady_clock::now();
    const auto s = engine.run_to_completion();
    const auto wall = std::chrono::steady_clock::now() - start;
    EXPECT_EQ(s.done, 100u);
    EXPECT_EQ(runs, 100);
    EXPECT_LE(peak, 4);
    EXPECT_GE(peak, 2);
    EXPECT_LT(wall, 100 * 20ms);
}

TEST(Engine, DependenciesRunInOrder)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 4);
    std::mutex m;
    std::vector<std::string> order;
    auto tagged = [&](const std::string& tag) {
        return [&, tag](const TaskContext& ctx) {
            {
                std::lock_guard lock(m);
                order.push_back(tag);
            }
            std::ofstream(ctx.staging_path) << tag;
            return TaskOutcome{};
        };
    };
    const auto root = engine.submit(spec("root"), tagged("root"));
    std::vector<TaskKey> mids;
    for (int i = 0; i < 5; ++i)
        mids.push_back(engine.submit(spec("mid" + std::to_string(i), {root}), tagged("mid")));
    engine.submit(spec("sink", mids), tagged("sink"));
    engine.run_to_completion();
    ASSERT_EQ(order.size(), 7u);
    EXPECT_EQ(order.front(), "root");
    EXPECT_EQ(order.back(), "sink");
}

TEST(Engine, ResizeToCurrentSizeIsNoOp)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 3);
    EXPECT_EQ(engine.resize_pool("cpu", 3), 3u);
    EXPECT_EQ(engine.pool_size("cpu"), 3u);
    EXPECT_EQ(engine.pool_names(), (std::vector<std::string>{"cpu"}));
}

TEST(Engine, GrowMidRunIncreasesThroughput)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 1);
    std::atomic<int> runs{0};
    constexpr int kTasks = 40;
    for (int i = 0; i < kTasks; ++i)
        engine.submit(spec("g" + std::to_string(i)), sleeper(25ms, runs));

    std::atomic<bool> finished{false};
    double before_rate = 0, after_rate = 0;
    std::thread resizer([&] {
        const auto t0 = std::chrono::steady_clock::now();
        while (runs < 8)
            std::this_thread::sleep_for(1ms);
        const auto t1 = std::chrono::steady_clock::now();
        const int r1 = runs;
        before_rate = r1 / std::chrono::duration<double>(t1 - t0).count();
        engine.resize_pool("cpu", 4);
        while (!finished)
            std::this_thread::sleep_for(1ms);
        const auto t2 = std::chrono::steady_clock::now();
        after_rate = (kTasks - r1) / std::chrono::duration<double>(t2 - t1).count();
    });
    const auto s = engine.run_to_completion();
    finished = true;
    resizer.join();
    EXPECT_EQ(s.done, static_cast<std::size_t>(kTasks));
    EXPECT_EQ(runs, kTasks);
    EXPECT_GT(after_rate, 1.5 * before_rate) << before_rate << " -> " << after_rate;
}

TEST(Engine, ShrinkToZeroDrainsRunningTask)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 4);
    std::atomic<int> started{0}, finished{0};
    std::atomic<bool> release{false};
    // The first task blocks until released; it is the only one started before the shrink.
    engine.submit(spec("first"), [&](const TaskContext& ctx) {
        ++started;
        while (!release)
            std::this_thread::sleep_for(1ms);
        ++finished;
        std::ofstream(ctx.staging_path) << "x";
        return TaskOutcome{};
    });
    const auto first = task_key(spec("first"));
    for (int i = 0; i < 6; ++i)
        engine.submit(spec("later" + std::to_string(i), {first}), [&](const TaskContext& ctx) {
            ++started;
            ++finished;
            std::ofstream(ctx.staging_path) << "x";
            return TaskOutcome{};
        });

    RunSummary summary;
    std::thread runner([&] { summary = engine.run_to_completion(); });
    while (started < 1)
        std::this_thread::sleep_for(1ms);
    engine.resize_pool("cpu", 0);
    release = true;
    while (finished < 1)
        std::this_thread::sleep_for(1ms);
    std::this_thread::sleep_for(200ms);
    EXPECT_EQ(started, 1);
    EXPECT_EQ(finished, 1);
    EXPECT_EQ(engine.state(first), TaskState::done);

    engine.resize_pool("cpu", 2);
    runner.join();
    EXPECT_EQ(summary.done, 7u);
    EXPECT_EQ(finished, 7);
}

TEST(Engine, PoolsFileResizes)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 1);
    engine.add_pool("gpu", ResourceClass::accelerator, 1);
    testing_support::write_text(dir / "pools.conf", "# sizes\ncpu = 3\ngpu=1\nbogus=2\ncpu_typo\n");
    PoolsFileWatcher watcher(engine, dir / "pools.conf", std::chrono::hours(1));
    EXPECT_EQ(watcher.poll(), 1u);
    EXPECT_EQ(engine.pool_size("cpu"), 3u);
    EXPECT_EQ(watcher.poll(), 0u);
    testing_support::write_text(dir / "pools.conf", "cpu=-1\ngpu=0\n");
    EXPECT_EQ(watcher.poll(), 1u);
    EXPECT_EQ(engine.pool_size("cpu"), 3u);
    EXPECT_EQ(engine.pool_size("gpu"), 0u);
}

TEST(Engine, PoolsFileWatcherPolls)
{
    testing_support::TempDir dir;
    Engine engine(options_in(dir.path()));
    engine.add_pool("cpu", ResourceClass::cpu, 1);
    PoolsFileWatcher watcher(engine, dir / "pools.conf", 20ms);
    testing_support::write_text(dir / "pools.conf", "cpu=5\n");
    for (int i = 0; i < 200 && engine.pool_size("cpu") != 5; ++i)
        std::this_thread::sleep_for(5ms);
    EXPECT_EQ(engine.pool_size("cpu"), 5u);
}

TEST(Engine, KillAfterThreeOfFiveThenResume)
{
    testing_support::TempDir dir;
    const auto opts = options_in(dir.path());
    auto submit_all = [](Engine& e, const TaskFunction& fn) {
        TaskKey prev;
        for (int i = 0; i < 5; ++i)
            prev = e.submit(spec("k" + std::to_string(i), prev.empty() ? std::vector<TaskKey>{} : std::vector{prev}), fn);
    };

    const pid_t child = ::fork();
    ASSERT_GE(child, 0);
    if (child == 0) {
        Engine engine(opts);
        engine.add_pool("cpu", ResourceClass::cpu, 1);
        int n = 0;
        submit_all(engine, [&n](const TaskContext& ctx) {
            if (++n == 4)
                ::raise(SIGKILL);
            std::ofstream(ctx.staging_path) << "x";
            return TaskOutcome{};
        });
        engine.run_to_completion();
        ::_exit(0);
    }
    int wstatus = 0;
    ::waitpid(child, &wstatus, 0);
    ASSERT_TRUE(WIFSIGNALED(wstatus));

    const auto mid = amdflow::status(opts.ledger_path);
    EXPECT_EQ(mid.counts.at(TaskState::done), 3u);
    EXPECT_EQ(mid.counts.at(TaskState::running), 1u);

    Engine engine(opts);
    EXPECT_EQ(engine.recovery().done, 3u);
    EXPECT_EQ(engine.recovery().reset_running, 1u);
    engine.add_pool("cpu", ResourceClass::cpu, 2);
    std::atomic<int> runs{0};
    submit_all(engine, writer(runs));
    const auto s = engine.run_to_completion();
    EXPECT_EQ(s.executed, 2u);
    EXPECT_EQ(runs, 2);
    EXPECT_EQ(s.done, 5u);

    const auto after = amdflow::status(opts.ledger_path);
    EXPECT_EQ(after.counts.at(TaskState::done), 5u);
    EXPECT_EQ(after.total(), 5u);

    // Fixpoint: a third engine does nothing.
    Engine again(opts);
    again.add_pool("cpu", ResourceClass::cpu, 1);
    submit_all(again, writer(runs));
    const auto s3 = again.run_to_completion();
    EXPECT_EQ(s3.executed, 0u);
    EXPECT_EQ(s3.done, 5u);
}

TEST(Engine, CommittedOutputOfRunningTaskIsAdopted)
{
    testing_support::TempDir dir;
    const auto opts = options_in(dir.path());
    const auto key = task_key(spec("adopt"));
    {
        RunLedger ledger(opts.ledger_path);
        TaskRecord r{key, Stage::calc, TaskState::running, 1, (opts.outputs_root / "calc" / (key + ".json")).string()};
        ledger.append(r);
    }
    testing_support::write_text(opts.outputs_root / "calc" / (key + ".json"), "done");
    Engine engine(opts);
    EXPECT_EQ(engine.recovery().adopted, 1u);
    engine.add_pool("cpu", ResourceClass::cpu, 1);
    std::atomic<int> runs{0};
    engine.submit(spec("adopt"), writer(runs));
    EXPECT_EQ(engine.run_to_completion().executed, 0u);
    EXPECT_EQ(runs, 0);
}

TEST(Engine, DeletedOutputReExecutes)
{
    testing_support::TempDir dir;
    const auto opts = options_in(dir.path());
    std::atomic<int> runs{0};
    TaskKey k;
    {
        Engine engine(opts);
        engine.add_pool("cpu", ResourceClass::cpu, 1);
        k = engine.submit(spec("again"), writer(runs));
        engine.run_to_completion();
    }
    fs::remove(opts.outputs_root / "calc" / (k + ".json"));
    Engine engine(opts);
    EXPECT_EQ(engine.recovery().missing_outputs, 1u);
    engine.add_pool("cpu", ResourceClass::cpu, 1);
    engine.submit(spec("again"), writer(runs));
    EXPECT_EQ(engine.run_to_completion().executed, 1u);
    EXPECT_EQ(runs, 2);
}

TEST(Engine, FailedTasksAreTerminalAcrossRestarts)
{
    testing_support::TempDir dir;
    const auto opts = options_in(dir.path());
    std::atomic<int> attempts{0};
    auto failing = [&](const TaskContext&) -> TaskOutcome {
        ++attempts;
        throw std::runtime_error("always");
    };
    {
        Engine engine(opts);
        engine.add_pool("cpu", ResourceClass::cpu, 1);
        engine.submit(spec("bad"), failing);
        EXPECT_EQ(engine.run_to_completion().failed, 1u);
    }
    Engine engine(opts);
    EXPECT_EQ(engine.recovery().failed, 1u);
    engine.add_pool("cpu", ResourceClass::cpu, 1);
    engine.submit(spec("bad"), failing);
    const auto s = engine.run_to_completion();
    EXPECT_EQ(s.executed, 0u);
    EXPECT_EQ(s.failed, 1u);
    EXPECT_EQ(attempts, 2);
}

TEST(RunLedger, TornTailIsTruncated)
{
    testing_support::TempDir dir;
    const auto path = dir / "ledger.jsonl";
    const TaskRecord r{std::string(64, 'a'), Stage::screen, TaskState::done, 1, "/x", "s", "e"};
    {
        RunLedger ledger(path);
        ledger.append(r);
    }
    const std::string good = testing_support::read_text(path);
    std::ofstream(path, std::ios::app) << "{\"key\": \"bbb";
    const auto replay = RunLedger::replay(path);
    EXPECT_TRUE(replay.torn_tail);
    EXPECT_EQ(replay.records, 1u);
    EXPECT_EQ(replay.valid_bytes, good.size());
    {
        RunLedger ledger(path);
        EXPECT_TRUE(ledger.recovered().torn_tail);
        EXPECT_EQ(testing_support::read_text(path), good);
        ledger.append(r);
    }
    EXPECT_EQ(ledger_lines(path), 2u);
    EXPECT_EQ(RunLedger::replay(path).latest.at(r.key), r);
}

TEST(RunLedger, CorruptMiddleRecordNamesIndex)
{
    testing_support::TempDir dir;
    const auto path = dir / "ledger.jsonl";
    TaskRecord r{std::string(64, 'a'), Stage::calc, TaskState::pending, 0, "/x"};
    {
        RunLedger ledger(path);
        ledger.append(r);
        r.key = std::string(64, 'b');
        ledger.append(r);
    }
    std::string text = testing_support::read_text(path);
    text += "not json\n";
    text += serialize_record(r) + "\n";
    testing_support::write_text(path, text);
    try {
        RunLedger::replay(path);
        FAIL() << "expected EngineError";
    } catch (const EngineError& e) {
        EXPECT_NE(std::string(e.what()).find("record 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(Engine(options_in(dir.path())), EngineError);
    EXPECT_THROW(RunLedger::replay(dir / "missing.jsonl"), EngineError);
}

TEST(RunLedger, ReplayMatchesInMemoryState)
{
    testing_support::TempDir dir;
    const auto opts = options_in(dir.path());
    Engine engine(opts);
    engine.add_pool("cpu", ResourceClass::cpu, 3);
    std::atomic<int> runs{0};
    for (int i = 0; i < 20; ++i) {
        if (i % 7 == 3)
            engine.submit(spec("f" + std::to_string(i)),
                          [](const TaskContext&) -> TaskOutcome { throw std::runtime_error("x"); });
        else
            engine.submit(spec("d" + std::to_string(i)), writer(runs));
    }
    engine.run_to_completion();
    EXPECT_EQ(RunLedger::replay(opts.ledger_path).latest, engine.records());
}

TEST(Status, CountsAndFormatting)
{
    testing_support::TempDir dir;
    const auto path = dir / "ledger.jsonl";
    {
        RunLedger ledger(path);
        for (int i = 0; i < 10; ++i)
            ledger.append({sha256_hex(std::to_string(i)), Stage::calc, TaskState::pending});
    }
    auto st = amdflow::status(path);
    EXPECT_EQ(st.counts.at(TaskState::pending), 10u);
    EXPECT_EQ(st.total(), 10u);

    testing_support::write_text(dir / "empty.jsonl", "");
    const auto empty = amdflow::status(dir / "empty.jsonl");
    EXPECT_EQ(empty.total(), 0u);
    EXPECT_THROW(amdflow::status(dir / "none.jsonl"), EngineError);

    {
        RunLedger ledger(path);
        TaskRecord f{sha256_hex("0"), Stage::calc, TaskState::failed, 2};
        f.cause = "calculator failed: exit 3";
        ledger.append(f);
    }
    st = amdflow::status(path);
    const std::string text = format_status(st);
    EXPECT_NE(text.find("calc"), std::string::npos);
    EXPECT_NE(text.find("calculator failed: exit 3"), std::string::npos);
    EXPECT_NE(text.find("total"), std::string::npos);
}
