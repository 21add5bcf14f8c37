#include "amdflow/engine.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fcntl.h>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "json.hpp"
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

namespace amdflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 5> kStages = {"generate", "screen", "filter", "calc", "postprocess"};
constexpr std::array<std::string_view, 4> kStates = {"pending", "running", "done", "failed"};

TaskRecord record_from_json(const json& j)
{
    TaskRecord r;
    r.key = j.at("key").get<std::string>();
    r.stage = stage_from(j.at("stage").get<std::string>());
    r.state = task_state_from(j.at("state").get<std::string>());
    r.attempts = j.at("attempts").get<int>();
    r.outputs_path = j.at("outputs_path").get<std::string>();
    r.started = j.value("started", "");
    r.ended = j.value("ended", "");
    r.cause = j.value("cause", "");
    r.note = j.value("note", "");
    if (r.key.size() != 64)
        throw std::invalid_argument("bad key");
    return r;
}

std::string trim(std::string s)
{
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

} // namespace

std::string_view to_string(Stage s)
{
    return kStages[static_cast<std::size_t>(s)];
}

std::string_view to_string(TaskState s)
{
    return kStates[static_cast<std::size_t>(s)];
}

Stage stage_from(std::string_view s)
{
    for (std::size_t i = 0; i < kStages.size(); ++i)
        if (kStages[i] == s)
            return static_cast<Stage>(i);
    throw std::invalid_argument("unknown stage '" + std::string(s) + "'");
}

TaskState task_state_from(std::string_view s)
{
    for (std::size_t i = 0; i < kStates.size(); ++i)
        if (kStates[i] == s)
            return static_cast<TaskState>(i);
    throw std::invalid_argument("unknown task state '" + std::string(s) + "'");
}

std::string sha256_hex(std::string_view bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw EngineError("SHA-256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

TaskKey task_key(const TaskSpec& spec)
{
    auto deps = spec.inputs;
    std::sort(deps.begin(), deps.end());
    std::string bytes(to_string(spec.stage));
    bytes += '\0';
    bytes += std::to_string(spec.payload.size());
    bytes += '\0';
    bytes += spec.payload;
    for (const auto& d : deps) {
        bytes += '\0';
        bytes += d;
    }
    return sha256_hex(bytes);
}

std::string iso8601_now()
{
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

std::string serialize_record(const TaskRecord& r)
{
    json j = {{"key", r.key},
              {"stage", to_string(r.stage)},
              {"state", to_string(r.state)},
              {"attempts", r.attempts},
              {"outputs_path", r.outputs_path},
              {"started", r.started},
              {"ended", r.ended}};
    if (!r.cause.empty())
        j["cause"] = r.cause;
    if (!r.note.empty())
        j["note"] = r.note;
    return j.dump();
}

// ---------------------------------------------------------------- ledger

RunLedger::Replay RunLedger::replay(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw EngineError("ledger not found: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    Replay out;
    std::size_t pos = 0;
    std::size_t index = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const bool terminated = nl != std::string::npos;
        const std::size_t end = terminated ? nl : text.size();
        const std::string line = text.substr(pos, end - pos);
        const std::size_t next = terminated ? nl + 1 : text.size();
        const bool last = next >= text.size();

        if (trim(line).empty()) {
            if (!terminated) {
                out.torn_tail = true;
                break;
            }
            pos = next;
            out.valid_bytes = pos;
            continue;
        }
        try {
            if (!terminated)
                throw std::invalid_argument("unterminated record");
            TaskRecord r = record_from_json(json::parse(line));
            out.latest[r.key] = std::move(r);
            ++out.records;
        } catch (const std::exception& e) {
            if (last) {
                out.torn_tail = true;
                break;
            }
            throw EngineError("ledger " + path.string() + " is corrupt at record " + std::to_string(index) + ": " +
                              e.what());
        }
        ++index;
        pos = next;
        out.valid_bytes = pos;
    }
    return out;
}

RunLedger::RunLedger(fs::path path)
    : path_(std::move(path))
{
    if (path_.has_parent_path())
        fs::create_directories(path_.parent_path());
    if (!fs::exists(path_))
        std::ofstream(path_, std::ios::binary).flush();
    recovered_ = replay(path_);
    if (recovered_.torn_tail) {
        spdlog::warn("ledger {}: dropping torn final record", path_.string());
        fs::resize_file(path_, recovered_.valid_bytes);
    }
}

void RunLedger::append(const TaskRecord& record)
{
    const std::string line = serialize_record(record) + "\n";
    std::lock_guard lock(mutex_);
    const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0)
        throw EngineError("cannot append to ledger " + path_.string());
    std::size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
        if (n <= 0) {
            ::close(fd);
            throw EngineError("ledger write failed: " + path_.string());
        }
        written += static_cast<std::size_t>(n);
    }
    ::close(fd);
}

// ---------------------------------------------------------------- engine

Engine::Engine(EngineOptions options)
    : options_(std::move(options))
    , ledger_(options_.ledger_path)
{
    if (options_.max_attempts < 1)
        throw EngineError("max_attempts must be at least 1");
    const auto& replay = ledger_.recovered();
    recovery_.torn_tail = replay.torn_tail;
    for (const auto& [key, rec] : replay.latest) {
        TaskRecord r = rec;
        const bool have_output = !r.outputs_path.empty() && fs::exists(r.outputs_path);
        switch (r.state) {
        case TaskState::done:
            if (have_output) {
                ++recovery_.done;
            } else {
                r.state = TaskState::pending;
                ++recovery_.missing_outputs;
            }
            break;
        case TaskState::running:
            if (have_output) {
                // Output was committed but the done record never made it to disk.
                r.state = TaskState::done;
                r.ended = iso8601_now();
                r.note = "recovered committed output";
                ledger_.append(r);
                ++recovery_.adopted;
            } else {
                r.state = TaskState::pending;
                ++recovery_.reset_running;
            }
            break;
        case TaskState::failed:
            if (r.attempts >= options_.max_attempts)
                ++recovery_.failed;
            else
                r.state = TaskState::pending;
            break;
        case TaskState::pending:
            break;
        }
        known_[key] = std::move(r);
    }
}

Engine::~Engine()
{
    for (auto& t : threads_)
        if (t.joinable())
            t.join();
}

fs::path Engine::outputs_path(const TaskKey& key, Stage stage) const
{
    return options_.outputs_root / std::string(to_string(stage)) / (key + ".json");
}

TaskKey Engine::submit(const TaskSpec& spec, TaskFunction fn)
{
    const TaskKey key = task_key(spec);
    std::lock_guard lock(mutex_);
    if (nodes_.count(key))
        return key;
    if (running_)
        throw EngineError("cannot submit new tasks while running");
    for (const auto& dep : spec.inputs) {
        if (dep == key)
            throw EngineError("task " + key + " depends on itself");
        if (!nodes_.count(dep))
            throw EngineError("unknown dependency " + dep);
    }

    Node node{spec, std::move(fn), {}, {}, 0, false};
    auto it = known_.find(key);
    if (it != known_.end()) {
        node.record = it->second;
    } else {
        node.record.key = key;
        node.record.stage = spec.stage;
    }
    node.record.outputs_path = outputs_path(key, spec.stage).string();

    std::set<TaskKey> distinct(spec.inputs.begin(), spec.inputs.end());
    for (const auto& dep : distinct)
        nodes_.at(dep).dependents.push_back(key);
    nodes_.emplace(key, std::move(node));
    order_.push_back(key);
    return key;
}

TaskState Engine::state(const TaskKey& key) const
{
    std::lock_guard lock(mutex_);
    if (auto it = nodes_.find(key); it != nodes_.end())
        return it->second.record.state;
    if (auto it = known_.find(key); it != known_.end())
        return it->second.state;
    throw EngineError("unknown task " + key);
}

bool Engine::is_skipped(const TaskKey& key) const
{
    std::lock_guard lock(mutex_);
    auto it = nodes_.find(key);
    return it != nodes_.end() && it->second.skipped;
}

void Engine::add_pool(const std::string& name, ResourceClass cls, std::size_t size)
{
    std::lock_guard lock(mutex_);
    if (pools_.count(name))
        throw EngineError("duplicate pool " + name);
    auto& pool = pools_[name];
    pool.name = name;
    pool.cls = cls;
    pool.target = size;
    if (running_)
        spawn_workers_locked(pool);
}

std::size_t Engine::resize_pool(const std::string& name, std::size_t size)
{
    std::lock_guard lock(mutex_);
    auto it = pools_.find(name);
    if (it == pools_.end())
        throw EngineError("unknown pool " + name);
    auto& pool = it->second;
    if (pool.target != size)
        spdlog::info("pool {}: {} -> {} workers", name, pool.target, size);
    pool.target = size;
    if (running_)
        spawn_workers_locked(pool);
    cv_.notify_all();
    return pool.target;
}

std::size_t Engine::pool_size(const std::string& name) const
{
    std::lock_guard lock(mutex_);
    auto it = pools_.find(name);
    if (it == pools_.end())
        throw EngineError("unknown pool " + name);
    return it->second.target;
}

std::vector<std::string> Engine::pool_names() const
{
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [name, pool] : pools_)
        out.push_back(name);
    return out;
}

void Engine::spawn_workers_locked(Pool& pool)
{
    while (pool.active < pool.target) {
        ++pool.active;
        threads_.emplace_back(&Engine::worker_loop, this, &pool);
    }
}

void Engine::record_locked(const TaskRecord& r)
{
    known_[r.key] = r;
    ledger_.append(r);
}

void Engine::worker_loop(Pool* pool)
{
    std::unique_lock lock(mutex_);
    for (;;) {
        auto& queue = ready_[pool->cls];
        cv_.wait(lock, [&] { return pool->active > pool->target || !running_ || !queue.empty(); });
        if (pool->active > pool->target || !running_) {
            --pool->active;
            cv_.notify_all();
            return;
        }
        const TaskKey key = queue.front();
        queue.pop_front();
        Node& node = nodes_.at(key);
        node.record.state = TaskState::running;
        ++node.record.attempts;
        node.record.started = iso8601_now();
        node.record.ended.clear();
        node.record.cause.clear();
        node.record.note.clear();
        record_locked(node.record);
        ++executed_;

        TaskContext ctx{key, node.spec.stage, {}, node.record.outputs_path, {}};
        ctx.staging_path = ctx.outputs_path;
        ctx.staging_path += ".tmp";
        for (const auto& dep : node.spec.inputs)
            ctx.input_paths.emplace_back(nodes_.at(dep).record.outputs_path);
        TaskFunction fn = node.fn;
        lock.unlock();

        bool ok = false;
        std::string cause, note;
        try {
            fs::create_directories(ctx.outputs_path.parent_path());
            fs::remove(ctx.staging_path);
            note = fn(ctx).note;
            if (!fs::exists(ctx.staging_path))
                throw EngineError("task wrote no output");
            fs::rename(ctx.staging_path, ctx.outputs_path);
            ok = true;
        } catch (const std::exception& e) {
            cause = e.what();
        } catch (...) {
            cause = "unknown exception";
        }

        lock.lock();
        finish_locked(node, ok, cause, note);
    }
}

void Engine::finish_locked(Node& node, bool ok, const std::string& cause, const std::string& note)
{
    node.record.ended = iso8601_now();
    if (ok) {
        node.record.state = TaskState::done;
        node.record.note = note;
        record_locked(node.record);
        spdlog::debug("{} {} done", to_string(node.spec.stage), node.record.key.substr(0, 12));
        for (const auto& dep_key : node.dependents) {
            Node& dep = nodes_.at(dep_key);
            if (dep.skipped || dep.record.state != TaskState::pending)
                continue;
            if (--dep.unmet == 0)
                ready_[dep.spec.resource_class].push_back(dep_key);
        }
        --outstanding_;
    } else {
        node.record.state = TaskState::failed;
        node.record.cause = cause;
        record_locked(node.record);
        if (node.record.attempts < options_.max_attempts) {
            spdlog::warn("{} {} failed (attempt {}), retrying: {}", to_string(node.spec.stage),
                         node.record.key.substr(0, 12), node.record.attempts, cause);
            node.record.state = TaskState::pending;
            ready_[node.spec.resource_class].push_back(node.record.key);
        } else {
            spdlog::error("{} {} failed: {}", to_string(node.spec.stage), node.record.key.substr(0, 12), cause);
            --outstanding_;
            skip_dependents_locked(node);
        }
    }
    cv_.notify_all();
}

void Engine::skip_dependents_locked(const Node& node)
{
    for (const auto& dep_key : node.dependents) {
        Node& dep = nodes_.at(dep_key);
        if (dep.skipped || dep.record.state != TaskState::pending)
            continue;
        dep.skipped = true;
        --outstanding_;
        skip_dependents_locked(dep);
    }
}

RunSummary Engine::run_to_completion()
{
    std::unique_lock lock(mutex_);
    if (running_)
        throw EngineError("run_to_completion is already in progress");

    std::map<ResourceClass, std::deque<TaskKey>> ready;
    std::set<ResourceClass> needed;
    std::size_t outstanding = 0;
    for (const auto& key : order_) {
        Node& n = nodes_.at(key);
        n.skipped = false;
        n.unmet = 0;
        if (n.record.state != TaskState::pending)
            continue;
        for (const auto& dep : n.spec.inputs) {
            const Node& d = nodes_.at(dep);
            if (d.skipped || d.record.state == TaskState::failed)
                n.skipped = true;
            else if (d.record.state != TaskState::done)
                ++n.unmet;
        }
        if (n.skipped)
            continue;
        ++outstanding;
        needed.insert(n.spec.resource_class);
        if (n.unmet == 0)
            ready[n.spec.resource_class].push_back(key);
    }
    for (ResourceClass cls : needed) {
        const bool have = std::any_of(pools_.begin(), pools_.end(), [&](const auto& p) { return p.second.cls == cls; });
        if (!have)
            throw EngineError("no worker pool for resource class " + std::string(to_string(cls)));
    }

    executed_ = 0;
    if (outstanding > 0) {
        ready_ = std::move(ready);
        outstanding_ = outstanding;
        running_ = true;
        for (auto& [name, pool] : pools_)
            spawn_workers_locked(pool);
        cv_.wait(lock, [&] { return outstanding_ == 0; });
        running_ = false;
        cv_.notify_all();
        auto threads = std::move(threads_);
        threads_.clear();
        lock.unlock();
        for (auto& t : threads)
            t.join();
        lock.lock();
        ready_.clear();
    }

    RunSummary summary;
    summary.executed = executed_;
    for (const auto& key : order_) {
        const Node& n = nodes_.at(key);
        if (n.skipped) {
            ++summary.skipped;
        } else if (n.record.state == TaskState::done) {
            ++summary.done;
        } else if (n.record.state == TaskState::failed) {
            ++summary.failed;
            summary.failures.emplace_back(key, n.record.cause);
        }
    }
    return summary;
}

std::map<TaskKey, TaskRecord> Engine::records() const
{
    std::lock_guard lock(mutex_);
    return known_;
}

// ---------------------------------------------------------------- status

std::size_t StatusReport::total() const
{
    std::size_t n = 0;
    for (const auto& [state, count] : counts)
        n += count;
    return n;
}

StatusReport status(const fs::path& ledger_path)
{
    const auto replay = RunLedger::replay(ledger_path);
    StatusReport report;
    for (const auto& [key, r] : replay.latest) {
        ++report.counts[r.state];
        ++report.per_stage[r.stage][r.state];
        if (r.state == TaskState::failed)
            report.failures.push_back(r);
        else if (r.state == TaskState::done && !r.note.empty())
            report.noted.push_back(r);
    }
    return report;
}

std::string format_status(const StatusReport& report)
{
    std::ostringstream out;
    auto count = [](const std::map<TaskState, std::size_t>& m, TaskState s) {
        auto it = m.find(s);
        return it == m.end() ? std::size_t{0} : it->second;
    };
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-12s %8s %8s %8s %8s\n", "stage", "pending", "running", "done", "failed");
    out << buf;
    for (std::size_t i = 0; i < kStages.size(); ++i) {
        const auto stage = static_cast<Stage>(i);
        auto it = report.per_stage.find(stage);
        const std::map<TaskState, std::size_t> empty;
        const auto& m = it == report.per_stage.end() ? empty : it->second;
        std::snprintf(buf, sizeof buf, "%-12s %8zu %8zu %8zu %8zu\n", std::string(kStages[i]).c_str(),
                      count(m, TaskState::pending), count(m, TaskState::running), count(m, TaskState::done),
                      count(m, TaskState::failed));
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "%-12s %8zu %8zu %8zu %8zu\n", "total", count(report.counts, TaskState::pending),
                  count(report.counts, TaskState::running), count(report.counts, TaskState::done),
                  count(report.counts, TaskState::failed));
    out << buf;
    for (const auto& f : report.failures)
        out << "failed " << to_string(f.stage) << " " << f.key.substr(0, 12) << ": " << f.cause << "\n";
    for (const auto& n : report.noted)
        out << "note   " << to_string(n.stage) << " " << n.key.substr(0, 12) << ": " << n.note << "\n";
    return out.str();
}

// ---------------------------------------------------------------- pools file

PoolsFileWatcher::PoolsFileWatcher(Engine& engine, fs::path file, std::chrono::milliseconds interval)
    : engine_(engine)
    , file_(std::move(file))
    , interval_(interval)
{
    thread_ = std::thread([this] {
        std::unique_lock lock(mutex_);
        while (!cv_.wait_for(lock, interval_, [this] { return stop_; })) {
            lock.unlock();
            try {
                poll();
            } catch (const std::exception& e) {
                spdlog::warn("pools file {}: {}", file_.string(), e.what());
            }
            lock.lock();
        }
    });
}

PoolsFileWatcher::~PoolsFileWatcher()
{
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
}

std::size_t PoolsFileWatcher::poll()
{
    std::ifstream in(file_);
    if (!in)
        return 0;
    const auto names = engine_.pool_names();
    std::size_t changed = 0;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line.front() == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            continue;
        const std::string name = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (std::find(names.begin(), names.end(), name) == names.end()) {
            spdlog::warn("pools file names unknown pool '{}'", name);
            continue;
        }
        std::size_t size = 0;
        try {
            std::size_t used = 0;
            const long v = std::stol(value, &used);
            if (used != value.size() || v < 0)
                throw std::invalid_argument(value);
            size = static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            spdlog::warn("pools file: bad size '{}' for pool {}", value, name);
            continue;
        }
        if (engine_.pool_size(name) != size) {
            engine_.resize_pool(name, size);
            ++changed;
        }
    }
    return changed;
}

} // namespace amdflow
