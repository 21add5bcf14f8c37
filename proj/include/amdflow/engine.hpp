#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "amdflow/screening.hpp" // ResourceClass

namespace amdflow {

/// Lower-case hex SHA-256.
using TaskKey = std::string;

enum class Stage { generate, screen, filter, calc, postprocess };
enum class TaskState { pending, running, done, failed };

std::string_view to_string(Stage s);
std::string_view to_string(TaskState s);
Stage stage_from(std::string_view s);
TaskState task_state_from(std::string_view s);

std::string sha256_hex(std::string_view bytes);

class EngineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TaskSpec {
    Stage stage;
    /// Canonical bytes describing the task input; part of the key.
    std::string payload;
    std::vector<TaskKey> inputs;
    ResourceClass resource_class = ResourceClass::cpu;
};

/// SHA-256 over the stage name, the payload, and the sorted dependency keys.
TaskKey task_key(const TaskSpec& spec);

struct TaskRecord {
    TaskKey key;
    Stage stage = Stage::generate;
    TaskState state = TaskState::pending;
    int attempts = 0;
    std::string outputs_path;
    std::string started; // ISO-8601 UTC
    std::string ended;
    std::string cause; // failure message
    std::string note;  // informational, e.g. a calculation that ran but did not converge

    bool operator==(const TaskRecord&) const = default;
};

std::string iso8601_now();

/// Append-only line-delimited JSON ledger of task state transitions.
class RunLedger {
public:
    struct Replay {
        std::map<TaskKey, TaskRecord> latest;
        std::size_t records = 0;
        bool torn_tail = false;
        std::size_t valid_bytes = 0; // length of the well-formed prefix
    };

    /// Replays the file. A malformed final line is dropped; any other malformed
    /// line throws EngineError naming its 0-based record index. A missing file
    /// throws EngineError.
    static Replay replay(const std::filesystem::path& path);

    /// Opens (creating if needed) for appending, replaying existing content and
    /// truncating a torn final line.
    explicit RunLedger(std::filesystem::path path);

    const Replay& recovered() const { return recovered_; }
    const std::filesystem::path& path() const { return path_; }

    /// One line per call; thread-safe.
    void append(const TaskRecord& record);

private:
    std::filesystem::path path_;
    Replay recovered_;
    std::mutex mutex_;
};

std::string serialize_record(const TaskRecord& r);

struct TaskContext {
    TaskKey key;
    Stage stage;
    /// Write the task output here; the engine commits it to outputs_path atomically.
    std::filesystem::path staging_path;
    std::filesystem::path outputs_path;
    /// Committed outputs of the dependencies, in TaskSpec::inputs order.
    std::vector<std::filesystem::path> input_paths;
};

struct TaskOutcome {
    std::string note;
};

/// Returning is success; throwing is a failed attempt.
using TaskFunction = std::function<TaskOutcome(const TaskContext&)>;

struct RunSummary {
    std::size_t done = 0;
    std::size_t failed = 0;
    std::size_t skipped = 0;
    /// Task attempts started by this call.
    std::size_t executed = 0;
    std::vector<std::pair<TaskKey, std::string>> failures;
};

struct RecoveryReport {
    std::size_t done = 0;            // done with outputs present
    std::size_t missing_outputs = 0; // done, but outputs_path gone: will re-run
    std::size_t reset_running = 0;   // running at crash time: back to pending
    std::size_t adopted = 0;         // running at crash time, output already committed
    std::size_t failed = 0;
    bool torn_tail = false;
};

struct EngineOptions {
    std::filesystem::path ledger_path;
    std::filesystem::path outputs_root;
    int max_attempts = 2;
};

/// Content-addressed DAG scheduler with named worker pools per resource class.
///
/// Construction replays the ledger, so a new Engine over an existing ledger
/// resumes: resubmitted tasks that are already done (with outputs) do not run
/// again. Pools can be resized from any thread while run_to_completion() is in
/// progress; shrinking lets busy workers finish their current task first.
class Engine {
public:
    explicit Engine(EngineOptions options);
    ~Engine();

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    const RecoveryReport& recovery() const { return recovery_; }

    /// Idempotent. Dependencies must already be submitted.
    TaskKey submit(const TaskSpec& spec, TaskFunction fn);

    std::filesystem::path outputs_path(const TaskKey& key, Stage stage) const;
    TaskState state(const TaskKey& key) const;
    bool is_skipped(const TaskKey& key) const;

    void add_pool(const std::string& name, ResourceClass cls, std::size_t size);
    /// Returns the acknowledged size. Throws EngineError for an unknown pool.
    std::size_t resize_pool(const std::string& name, std::size_t size);
    std::size_t pool_size(const std::string& name) const;
    std::vector<std::string> pool_names() const;

    /// Runs every submitted, runnable task. Throws EngineError before starting
    /// anything if a needed resource class has no pool.
    RunSummary run_to_completion();

    /// Latest record of every key known from the ledger or this session.
    std::map<TaskKey, TaskRecord> records() const;

private:
    struct Node {
        TaskSpec spec;
        TaskFunction fn;
        TaskRecord record;
        std::vector<TaskKey> dependents;
        std::size_t unmet = 0;
        bool skipped = false;
    };
    struct Pool {
        std::string name;
        ResourceClass cls;
        std::size_t target = 0;
        std::size_t active = 0;
    };

    void spawn_workers_locked(Pool& pool);
    void worker_loop(Pool* pool);
    void finish_locked(Node& node, bool ok, const std::string& cause, const std::string& note);
    void skip_dependents_locked(const Node& node);
    void record_locked(const TaskRecord& r);

    EngineOptions options_;
    RunLedger ledger_;
    RecoveryReport recovery_;

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::map<TaskKey, TaskRecord> known_;
    std::map<TaskKey, Node> nodes_;
    std::vector<TaskKey> order_;
    std::map<std::string, Pool> pools_;
    std::map<ResourceClass, std::deque<TaskKey>> ready_;
    std::vector<std::thread> threads_;
    bool running_ = false;
    std::size_t outstanding_ = 0;
    std::size_t executed_ = 0;
};

struct StatusReport {
    std::map<TaskState, std::size_t> counts;
    std::map<Stage, std::map<TaskState, std::size_t>> per_stage;
    std::vector<TaskRecord> failures;
    std::vector<TaskRecord> noted; // done tasks carrying a note
    std::size_t total() const;
};

/// Read-only summary of a ledger. Throws EngineError when the file is missing.
StatusReport status(const std::filesystem::path& ledger_path);
std::string format_status(const StatusReport& report);

/// Polls a `name=<size>` file and applies sizes to the engine's pools.
class PoolsFileWatcher {
public:
    PoolsFileWatcher(Engine& engine, std::filesystem::path file,
                     std::chrono::milliseconds interval = std::chrono::seconds(2));
    ~PoolsFileWatcher();

    /// Reads the file once; returns the number of pools resized.
    std::size_t poll();

private:
    Engine& engine_;
    std::filesystem::path file_;
    std::chrono::milliseconds interval_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool stop_ = false;
    std::thread thread_;
};

} // namespace amdflow
