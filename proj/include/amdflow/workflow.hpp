#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "amdflow/calculator.hpp"
#include "amdflow/config.hpp"
#include "amdflow/engine.hpp"

namespace amdflow {

/// Fixed file layout of a work directory.
struct WorkLayout {
    std::filesystem::path root;

    std::filesystem::path ledger() const { return root / "ledger.jsonl"; }
    std::filesystem::path snapshot() const { return root / "config.snapshot.toml"; }
    std::filesystem::path pools_file() const { return root / "pools.conf"; }
    std::filesystem::path lock_file() const { return root / ".lock"; }
    std::filesystem::path tasks() const { return root / "tasks"; }
    std::filesystem::path candidates() const { return root / "candidates"; }
    std::filesystem::path screen() const { return root / "screen"; }
    std::filesystem::path filtered_ids() const { return root / "filtered" / "ids.txt"; }
    std::filesystem::path calc(const std::string& id) const { return root / "calc" / id; }
    std::filesystem::path calc_result(const std::string& id) const { return calc(id) / "calc_result.json"; }
    std::filesystem::path hull_table() const { return root / "hull.tsv"; }
    std::filesystem::path phase_diagram() const { return root / "phase_diagram.svg"; }
    std::filesystem::path promoted() const { return root / "promoted"; }
    std::filesystem::path promoted_ids() const { return promoted() / "ids.txt"; }
};

/// Exclusive ownership of a work directory through `<work_dir>/.lock`, which
/// holds the owner's PID. A lock whose PID is no longer alive is taken over.
class WorkDirLock {
public:
    explicit WorkDirLock(const std::filesystem::path& work_dir);
    ~WorkDirLock();
    WorkDirLock(const WorkDirLock&) = delete;
    WorkDirLock& operator=(const WorkDirLock&) = delete;

private:
    std::filesystem::path path_;
};

class LockError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Problems with stored results that only the user can fix (e.g. nothing converged).
class ResultsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string calc_result_to_json(const CalcResult& r);
CalcResult calc_result_from_json(const std::string& text);

struct ThermoSummary {
    std::size_t entries = 0; // converged results on the hull input
    std::vector<std::string> promoted;
    std::string notice; // set when the plot was skipped
};

/// Hull, hull.tsv, phase_diagram.svg and promoted/ from calculation results.
/// Non-converged results are ignored; none converged throws ResultsError.
ThermoSummary run_thermo(const RunConfig& cfg, std::vector<CalcResult> results);

struct WorkflowReport {
    std::size_t candidates = 0;
    std::size_t filtered = 0;
    std::size_t calc_done = 0;
    std::size_t calc_failed = 0;
    /// Task attempts started by this invocation, over all phases.
    std::size_t executed = 0;
    bool postprocess_done = false;
    ThermoSummary thermo;
    std::vector<std::pair<TaskKey, std::string>> failures;
};

/// generate -> screen batches -> filter -> calc per candidate -> postprocess, on
/// an engine whose ledger lives in the work directory, so calling this again on
/// the same directory resumes. Calculation failures do not stop the run; a fatal
/// stage failure throws EngineError.
WorkflowReport run_workflow(const RunConfig& cfg);

/// Re-runs only the thermodynamic analysis from the stored calculation results.
ThermoSummary run_report(const RunConfig& cfg);

} // namespace amdflow
