#include "amdflow/workflow.hpp"

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <fcntl.h>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <unistd.h>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "amdflow/fingerprint.hpp"
#include "amdflow/hull.hpp"
#include "amdflow/poscar.hpp"
#include "amdflow/screening.hpp"
#include "amdflow/substitution.hpp"

namespace amdflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    out.close();
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

/// Writes via a sibling temporary so readers never see a partial file.
void write_file_atomic(const fs::path& path, const std::string& text)
{
    fs::path tmp = path;
    tmp += ".tmp";
    write_file(tmp, text);
    fs::rename(tmp, path);
}

json read_json(const fs::path& path)
{
    return json::parse(read_file(path));
}

std::string lines_of(const std::vector<std::string>& items)
{
    std::string out;
    for (const auto& s : items)
        out += s + "\n";
    return out;
}

bool pid_alive(pid_t pid)
{
    return pid > 0 && (::kill(pid, 0) == 0 || errno == EPERM);
}

std::string templates_digest(const fs::path& dir)
{
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file())
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::string out;
    for (const auto& f : files)
        out += f.filename().string() + "\t" + sha256_hex(read_file(f)) + "\n";
    return out;
}

std::string joined(const std::vector<std::string>& v, char sep = ' ')
{
    std::string out;
    for (const auto& s : v) {
        if (!out.empty())
            out += sep;
        out += s;
    }
    return out;
}

std::string number(double v)
{
    return format_round_trip(v);
}

// Task bodies. Each writes its committed output to ctx.staging_path; other files
// it touches are deterministic functions of the payload.

TaskOutcome generate_task(const RunConfig& cfg, const WorkLayout& work, const TaskContext& ctx)
{
    const TemplateSet templates = ingest_templates(cfg.templates_dir);
    for (const auto& w : templates.warnings)
        spdlog::warn("templates: {}", w);
    SubstitutionSpec spec;
    spec.targets = cfg.system;
    spec.max_candidates = cfg.max_candidates;
    spec.allow_fewer = cfg.allow_fewer;
    const GenerationResult gen = enumerate_substitutions(templates, spec);
    for (const auto& w : gen.warnings)
        spdlog::warn("generate: {}", w);

    fs::remove_all(work.candidates());
    fs::create_directories(work.candidates());
    json out = {{"truncated", gen.truncated}, {"warnings", gen.warnings}, {"candidates", json::array()}};
    for (const auto& c : gen.candidates) {
        const std::string text = write_poscar(c.structure.with_label(c.id));
        write_file(work.candidates() / (c.id + ".vasp"), text);
        out["candidates"].push_back({{"id", c.id},
                                     {"template", templates.templates[c.template_index].source},
                                     {"formula", composition_of(c.structure).reduced().formula()},
                                     {"sha256", sha256_hex(text)}});
    }
    write_file(ctx.staging_path, out.dump(1));
    TaskOutcome outcome;
    if (gen.truncated)
        outcome.note = "truncated at max_candidates=" + std::to_string(cfg.max_candidates);
    spdlog::info("generate: {} candidates from {} templates", gen.candidates.size(), templates.templates.size());
    return outcome;
}

TaskOutcome screen_task(const RunConfig& cfg, const WorkLayout& work, const std::vector<std::string>& ids,
                        const TaskContext& ctx)
{
    std::vector<IdentifiedStructure> batch;
    for (const auto& id : ids)
        batch.push_back({id, read_poscar_file(work.candidates() / (id + ".vasp"))});
    const fs::path scratch = work.screen() / ctx.key.substr(0, 16);
    std::vector<EnergyPrediction> preds;
    try {
        preds = predict_batch(batch, cfg.predictor, scratch);
    } catch (const PredictionError& e) {
        throw EngineError(std::string(e.what()) + " [" + joined(e.ids()) + "]");
    }
    json out = {{"predictions", json::array()}};
    for (const auto& p : preds)
        out["predictions"].push_back(
            {{"id", p.structure_id}, {"predicted_ef", p.predicted_ef}, {"predictor", p.predictor_name}});
    write_file(ctx.staging_path, out.dump(1));
    if (cfg.predictor.kind == PredictorConfig::Kind::external)
        fs::remove_all(scratch);
    return {};
}

TaskOutcome filter_task(const RunConfig& cfg, const WorkLayout& work, const TaskContext& ctx)
{
    std::vector<EnergyPrediction> preds;
    for (const auto& path : ctx.input_paths) {
        const json batch = read_json(path);
        for (const auto& p : batch.at("predictions"))
            preds.push_back({p.at("id").get<std::string>(), p.at("predicted_ef").get<double>(),
                             p.at("predictor").get<std::string>()});
    }
    const auto selected = select_candidates(preds, cfg.predictor);
    std::map<std::string, double> energy;
    for (const auto& p : preds)
        energy[p.structure_id] = p.predicted_ef;

    std::vector<DedupItem> items;
    for (const auto& id : selected) {
        const auto s = read_poscar_file(work.candidates() / (id + ".vasp"));
        items.push_back({id, energy.at(id), composition_of(s).reduced(), fingerprint(s, cfg.fingerprint)});
    }
    const auto kept = items.empty() ? std::vector<std::string>{} : dedup(items, cfg.dedup_threshold);
    write_file_atomic(work.filtered_ids(), lines_of(kept));

    json out = {{"selected", selected.size()}, {"kept", kept}};
    write_file(ctx.staging_path, out.dump(1));
    spdlog::info("screen: {} of {} predictions selected; filter kept {}", selected.size(), preds.size(),
                 kept.size());
    TaskOutcome outcome;
    if (kept.empty())
        outcome.note = "no candidates survived screening and filtering";
    return outcome;
}

TaskOutcome calc_task(const RunConfig& cfg, const WorkLayout& work, const std::string& id, const TaskContext& ctx)
{
    fs::remove(work.calc_result(id));
    const auto structure = read_poscar_file(work.candidates() / (id + ".vasp"));
    const CalcResult r = run_calculation(cfg.calculator.job(id, structure), work.calc(id));
    if (!r.cause.empty())
        throw EngineError("calculation " + id + ": " + r.cause);
    const std::string text = calc_result_to_json(r);
    write_file_atomic(work.calc_result(id), text);
    write_file(ctx.staging_path, text);
    TaskOutcome outcome;
    if (!r.converged)
        outcome.note = "calculation " + id + " did not converge";
    return outcome;
}

TaskOutcome postprocess_task(const RunConfig& cfg, const TaskContext& ctx, ThermoSummary& summary)
{
    std::vector<CalcResult> results;
    for (const auto& path : ctx.input_paths)
        results.push_back(calc_result_from_json(read_file(path)));
    summary = run_thermo(cfg, std::move(results));
    json out = {{"entries", summary.entries}, {"promoted", summary.promoted}, {"notice", summary.notice}};
    write_file(ctx.staging_path, out.dump(1));
    return {summary.notice};
}

// Payload fragments. Paths are left out so that equal configs in different
// directories produce equal keys.

std::string predictor_payload(const PredictorConfig& p)
{
    return std::string("kind=") + (p.kind == PredictorConfig::Kind::builtin ? "builtin" : "external") +
           "\ncommand=" + joined(p.command, '\x1f') + "\ntimeout=" + number(p.timeout_seconds) + "\n";
}

std::string calculator_payload(const CalculatorConfig& c)
{
    return std::string("kind=") + (c.kind == CalcJobSpec::Kind::mock ? "mock" : "external") +
           "\ncommand=" + joined(c.command, '\x1f') + "\ntime_limit=" + number(c.time_limit_seconds) + "\n";
}

std::string system_payload(const RunConfig& cfg)
{
    std::vector<std::string> names;
    for (const auto& e : cfg.system)
        names.push_back(e.str());
    return "system=" + joined(names, ',') + "\n";
}

void log_summary(const char* phase, const RunSummary& s)
{
    spdlog::debug("{}: {} done, {} failed, {} skipped, {} executed", phase, s.done, s.failed, s.skipped,
                  s.executed);
    for (const auto& [key, cause] : s.failures)
        spdlog::error("{} task {} failed: {}", phase, key.substr(0, 12), cause);
}

} // namespace

// ---------------------------------------------------------------- lock

WorkDirLock::WorkDirLock(const fs::path& work_dir)
    : path_(WorkLayout{work_dir}.lock_file())
{
    fs::create_directories(work_dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
        if (fd >= 0) {
            const std::string pid = std::to_string(::getpid()) + "\n";
            const bool ok = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
            ::close(fd);
            if (!ok)
                throw LockError("cannot write lock file " + path_.string());
            return;
        }
        if (errno != EEXIST)
            throw LockError("cannot create lock file " + path_.string());
        long owner = 0;
        std::ifstream(path_) >> owner;
        if (owner > 0 && pid_alive(static_cast<pid_t>(owner)))
            throw LockError(work_dir.string() + " is in use by process " + std::to_string(owner));
        spdlog::warn("removing stale lock {} (process {} is gone)", path_.string(), owner);
        fs::remove(path_);
    }
    throw LockError("cannot acquire lock " + path_.string());
}

WorkDirLock::~WorkDirLock()
{
    std::error_code ec;
    fs::remove(path_, ec);
}

// ---------------------------------------------------------------- results

std::string calc_result_to_json(const CalcResult& r)
{
    json j = {{"structure_id", r.structure_id},
              {"total_energy", r.total_energy},
              {"converged", r.converged},
              {"wall_time", r.wall_time},
              {"cause", r.cause},
              {"final_structure", write_poscar(r.final_structure)}};
    return j.dump(1) + "\n";
}

CalcResult calc_result_from_json(const std::string& text)
{
    const json j = json::parse(text);
    return CalcResult{j.at("structure_id").get<std::string>(), j.at("total_energy").get<double>(),
                      parse_poscar(j.at("final_structure").get<std::string>()), j.at("converged").get<bool>(),
                      j.at("wall_time").get<double>(), j.value("cause", "")};
}

ThermoSummary run_thermo(const RunConfig& cfg, std::vector<CalcResult> results)
{
    std::sort(results.begin(), results.end(),
              [](const CalcResult& a, const CalcResult& b) { return a.structure_id < b.structure_id; });
    std::vector<PhaseEntry> entries;
    std::map<std::string, CrystalStructure> structures;
    for (const auto& r : results) {
        if (!r.converged)
            continue;
        const auto comp = composition_of(r.final_structure);
        entries.push_back({r.structure_id, comp.reduced(), r.total_energy / static_cast<double>(comp.total()), false});
        structures.emplace(r.structure_id, r.final_structure.with_label(r.structure_id));
    }
    if (entries.empty())
        throw ResultsError("no converged calculation results to analyse");

    std::map<ElementSymbol, double> user_refs;
    if (cfg.references)
        user_refs = read_references_tsv(*cfg.references);
    const ReferenceSet refs = ReferenceSet::from_entries(entries, user_refs);
    const ConvexHullResult hull = build_hull(entries, refs, cfg.system);

    const WorkLayout work{cfg.work_dir};
    const auto files = export_phase_diagram(hull, entries, cfg.work_dir);
    if (!files.svg)
        fs::remove(work.phase_diagram());

    ThermoSummary summary;
    summary.entries = entries.size();
    summary.notice = files.notice;
    summary.promoted = promote_candidates(entries, hull, cfg.e_cut_promote, work.promoted(),
                                          [&](const std::string& id) { return structures.at(id); });
    write_file_atomic(work.promoted_ids(), lines_of(summary.promoted));
    spdlog::info("postprocess: {} entries on the hull input, {} promoted", entries.size(), summary.promoted.size());
    return summary;
}

// ---------------------------------------------------------------- workflow

WorkflowReport run_workflow(const RunConfig& cfg)
{
    const WorkLayout work{fs::absolute(cfg.work_dir)};
    fs::create_directories(work.root);

    Engine engine(EngineOptions{work.ledger(), work.tasks(), cfg.max_attempts});
    const auto& rec = engine.recovery();
    if (rec.done + rec.missing_outputs + rec.reset_running + rec.adopted + rec.failed > 0)
        spdlog::info("ledger: {} done, {} re-run (outputs missing), {} interrupted, {} adopted, {} failed",
                     rec.done, rec.missing_outputs, rec.reset_running, rec.adopted, rec.failed);

    {
        std::string conf;
        for (const auto& p : cfg.pools) {
            engine.add_pool(p.name, p.resource_class, p.size);
            conf += p.name + "=" + std::to_string(p.size) + "\n";
        }
        write_file_atomic(work.pools_file(), conf);
    }
    PoolsFileWatcher watcher(engine, work.pools_file());

    WorkflowReport report;
    auto run_phase = [&](const char* name) {
        const RunSummary s = engine.run_to_completion();
        report.executed += s.executed;
        log_summary(name, s);
        return s;
    };

    // generate
    const std::string gen_payload = system_payload(cfg) + "max_candidates=" + std::to_string(cfg.max_candidates) +
                                    "\nallow_fewer=" + (cfg.allow_fewer ? "1" : "0") + "\n" +
                                    templates_digest(cfg.templates_dir);
    const TaskKey gen = engine.submit({Stage::generate, gen_payload, {}, ResourceClass::cpu},
                                      [&](const TaskContext& ctx) { return generate_task(cfg, work, ctx); });
    run_phase("generate");
    if (engine.state(gen) != TaskState::done)
        throw EngineError("candidate generation failed: " + engine.records().at(gen).cause);

    std::vector<std::pair<std::string, std::string>> candidates; // id, sha256
    const json generated = read_json(engine.outputs_path(gen, Stage::generate));
    for (const auto& c : generated.at("candidates"))
        candidates.emplace_back(c.at("id").get<std::string>(), c.at("sha256").get<std::string>());
    report.candidates = candidates.size();

    // screen + filter
    std::vector<TaskKey> screens;
    const std::string pred_payload = predictor_payload(cfg.predictor);
    for (std::size_t begin = 0; begin < candidates.size(); begin += cfg.predictor.batch_size) {
        const std::size_t end = std::min(candidates.size(), begin + cfg.predictor.batch_size);
        std::vector<std::string> ids;
        std::string payload = pred_payload;
        for (std::size_t i = begin; i < end; ++i) {
            ids.push_back(candidates[i].first);
            payload += candidates[i].first + "\t" + candidates[i].second + "\n";
        }
        screens.push_back(engine.submit({Stage::screen, payload, {gen}, cfg.predictor.resource_class},
                                        [&cfg, &work, ids](const TaskContext& ctx) {
                                            return screen_task(cfg, work, ids, ctx);
                                        }));
    }
    std::string filter_payload = "threshold_ef=" +
                                 (cfg.predictor.threshold_ef ? number(*cfg.predictor.threshold_ef) : "none") +
                                 "\ntop_k=" + (cfg.predictor.top_k ? std::to_string(*cfg.predictor.top_k) : "none") +
                                 "\ndedup_threshold=" + number(cfg.dedup_threshold) +
                                 "\nfingerprint=" + number(cfg.fingerprint.cutoff) + "," +
                                 number(cfg.fingerprint.bin_width) + "," + number(cfg.fingerprint.smearing_sigma) +
                                 "\n";
    const TaskKey filter = engine.submit({Stage::filter, filter_payload, screens, ResourceClass::cpu},
                                         [&](const TaskContext& ctx) { return filter_task(cfg, work, ctx); });
    run_phase("screen/filter");
    if (engine.state(filter) != TaskState::done) {
        std::string cause = engine.records().at(filter).cause;
        for (const auto& s : screens)
            if (engine.state(s) == TaskState::failed)
                cause = "screening failed: " + engine.records().at(s).cause;
        throw EngineError(cause.empty() ? "filter stage did not run" : cause);
    }
    const auto kept =
        read_json(engine.outputs_path(filter, Stage::filter)).at("kept").get<std::vector<std::string>>();
    report.filtered = kept.size();

    // calc fan-out
    std::map<std::string, std::string> sha;
    for (const auto& [id, digest] : candidates)
        sha[id] = digest;
    std::vector<std::pair<std::string, TaskKey>> calcs;
    const std::string calc_payload = calculator_payload(cfg.calculator);
    for (const auto& id : kept) {
        const std::string payload = calc_payload + id + "\t" + sha.at(id) + "\n";
        calcs.emplace_back(id, engine.submit({Stage::calc, payload, {filter}, cfg.calculator.resource_class},
                                             [&cfg, &work, id](const TaskContext& ctx) {
                                                 return calc_task(cfg, work, id, ctx);
                                             }));
    }
    run_phase("calc");

    // postprocess over whatever calculations succeeded
    std::sort(calcs.begin(), calcs.end());
    std::vector<TaskKey> done_calcs;
    std::string post_payload = system_payload(cfg) + "e_cut_promote=" + number(cfg.e_cut_promote) + "\n";
    if (cfg.references)
        post_payload += "references=" + sha256_hex(read_file(*cfg.references)) + "\n";
    for (const auto& [id, key] : calcs) {
        if (engine.state(key) == TaskState::done) {
            done_calcs.push_back(key);
            ++report.calc_done;
        } else {
            post_payload += "failed=" + id + "\n";
            ++report.calc_failed;
        }
    }
    const TaskKey post = engine.submit({Stage::postprocess, post_payload, done_calcs, ResourceClass::cpu},
                                       [&](const TaskContext& ctx) {
                                           return postprocess_task(cfg, ctx, report.thermo);
                                       });
    run_phase("postprocess");

    for (const auto& [key, r] : engine.records())
        if (r.state == TaskState::failed)
            report.failures.emplace_back(key, r.cause);
    report.postprocess_done = engine.state(post) == TaskState::done;
    if (report.postprocess_done && report.thermo.entries == 0) {
        // Memoized from an earlier invocation: report what it recorded.
        const json out = read_json(engine.outputs_path(post, Stage::postprocess));
        report.thermo.entries = out.at("entries").get<std::size_t>();
        report.thermo.promoted = out.at("promoted").get<std::vector<std::string>>();
        report.thermo.notice = out.at("notice").get<std::string>();
    }
    return report;
}

ThermoSummary run_report(const RunConfig& cfg)
{
    const WorkLayout work{fs::absolute(cfg.work_dir)};
    if (!fs::exists(work.filtered_ids()))
        throw ResultsError("no filtered candidates in " + work.root.string() + "; has the run reached the calc stage?");
    std::vector<CalcResult> results;
    std::ifstream in(work.filtered_ids());
    std::string id;
    while (std::getline(in, id)) {
        if (id.empty())
            continue;
        if (fs::exists(work.calc_result(id)))
            results.push_back(calc_result_from_json(read_file(work.calc_result(id))));
    }
    return run_thermo(cfg, std::move(results));
}

} // namespace amdflow
