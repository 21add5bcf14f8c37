#include "amdflow/screening.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "amdflow/poscar.hpp"
#include "amdflow/process.hpp"

namespace amdflow {

std::string_view to_string(ResourceClass c)
{
    return c == ResourceClass::cpu ? "cpu" : "accelerator";
}

ResourceClass resource_class_from(std::string_view s)
{
    if (s == "cpu")
        return ResourceClass::cpu;
    if (s == "accelerator")
        return ResourceClass::accelerator;
    throw InvariantError("unknown resource class '" + std::string(s) + "'");
}

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t& state)
{
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double unit_interval(std::uint64_t bits)
{
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

PairParameters surrogate_pair_parameters(const ElementSymbol& a, const ElementSymbol& b)
{
    const auto& lo = std::min(a, b).str();
    const auto& hi = std::max(a, b).str();
    std::uint64_t state = fnv1a64("pair:" + lo + "|" + hi);
    const double u1 = unit_interval(splitmix64(state));
    const double u2 = unit_interval(splitmix64(state));
    const double u3 = unit_interval(splitmix64(state));
    return {0.5 + 1.5 * u1, 1.0 + 3.0 * u2, 1.5 + 1.5 * u3};
}

double surrogate_element_shift(const ElementSymbol& e)
{
    std::uint64_t state = fnv1a64("element:" + e.str());
    return -6.0 + 4.0 * unit_interval(splitmix64(state));
}

double surrogate_pair_energy_per_atom(const CrystalStructure& s)
{
    std::map<std::pair<ElementSymbol, ElementSymbol>, PairParameters> cache;
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& ei = s.sites()[i].element;
        for_each_neighbor(s, i, kSurrogateCutoff, [&](std::size_t j, double d) {
            const auto& ej = s.sites()[j].element;
            auto key = std::minmax(ei, ej);
            auto it = cache.find({key.first, key.second});
            if (it == cache.end())
                it = cache.emplace(std::pair{key.first, key.second}, surrogate_pair_parameters(ei, ej)).first;
            const auto& p = it->second;
            sum += -p.attraction * std::exp(-d / p.range) + p.repulsion * std::exp(-2.0 * d / p.range);
        });
    }
    return 0.5 * sum / static_cast<double>(s.size());
}

double surrogate_energy_per_atom(const CrystalStructure& s)
{
    double shift = 0.0;
    for (const auto& site : s.sites())
        shift += surrogate_element_shift(site.element);
    return surrogate_pair_energy_per_atom(s) + shift / static_cast<double>(s.size());
}

void PredictorConfig::validate() const
{
    if (kind == Kind::external && command.empty())
        throw InvariantError("external predictor needs a command");
    if (batch_size < 1)
        throw InvariantError("predictor batch_size must be positive");
    if (!threshold_ef && !top_k)
        throw InvariantError("predictor needs threshold_ef, top_k, or both");
    if (threshold_ef && !std::isfinite(*threshold_ef))
        throw InvariantError("threshold_ef must be finite");
    if (top_k && *top_k < 1)
        throw InvariantError("top_k must be positive");
    if (!(timeout_seconds > 0))
        throw InvariantError("predictor timeout must be positive");
}

namespace {

std::vector<EnergyPrediction> predict_external(const std::vector<IdentifiedStructure>& batch,
                                               const PredictorConfig& cfg, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    std::vector<std::string> ids;
    for (const auto& item : batch)
        ids.push_back(item.id);
    if (dir.empty())
        throw PredictionError("external predictor needs a scratch directory", ids);

    fs::remove_all(dir);
    fs::create_directories(dir / "input");
    fs::create_directories(dir / "output");
    for (const auto& item : batch)
        write_poscar_file(dir / "input" / (item.id + ".vasp"), item.structure);

    auto argv = cfg.command;
    argv.push_back(fs::absolute(dir).string());
    const auto proc = run_process(argv, dir, std::chrono::duration<double>(cfg.timeout_seconds), "predictor");
    if (!proc.ok())
        throw PredictionError("external predictor failed: " + proc.describe(), ids);

    std::ifstream in(dir / "output" / "energies.tsv");
    if (!in)
        throw PredictionError("external predictor wrote no output/energies.tsv", ids);
    std::map<std::string, double> values;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw PredictionError("energies.tsv line " + std::to_string(lineno) + " has no tab", ids);
        const std::string id = line.substr(0, tab);
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(line.substr(tab + 1), &used);
        } catch (const std::exception&) {
            throw PredictionError("energies.tsv line " + std::to_string(lineno) + " has a bad energy", {id});
        }
        if (!std::isfinite(v))
            throw PredictionError("non-finite energy for " + id, {id});
        values[id] = v;
    }

    std::vector<std::string> missing, unknown;
    std::set<std::string> wanted(ids.begin(), ids.end());
    for (const auto& id : ids)
        if (!values.count(id))
            missing.push_back(id);
    for (const auto& [id, v] : values)
        if (!wanted.count(id))
            unknown.push_back(id);
    if (!missing.empty())
        throw PredictionError("external predictor gave no energy for " + std::to_string(missing.size()) +
                                  " structure(s)",
                              missing);
    if (!unknown.empty())
        throw PredictionError("external predictor returned unknown ids", unknown);

    std::vector<EnergyPrediction> out;
    const std::string name = fs::path(cfg.command.front()).filename().string();
    for (const auto& id : ids)
        out.push_back({id, values.at(id), name});
    return out;
}

} // namespace

std::vector<EnergyPrediction> predict_batch(const std::vector<IdentifiedStructure>& batch,
                                            const PredictorConfig& cfg, const std::filesystem::path& scratch_dir)
{
    if (batch.empty())
        throw PredictionError("empty prediction batch", {});
    if (cfg.kind == PredictorConfig::Kind::external)
        return predict_external(batch, cfg, scratch_dir);

    std::vector<EnergyPrediction> out;
    out.reserve(batch.size());
    for (const auto& item : batch)
        out.push_back({item.id, surrogate_pair_energy_per_atom(item.structure), "builtin-surrogate"});
    return out;
}

std::vector<std::string> select_candidates(const std::vector<EnergyPrediction>& predictions,
                                           const PredictorConfig& cfg)
{
    std::vector<const EnergyPrediction*> sorted;
    for (const auto& p : predictions)
        sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
        if (a->predicted_ef != b->predicted_ef)
            return a->predicted_ef < b->predicted_ef;
        return a->structure_id < b->structure_id;
    });
    std::set<std::string> seen;
    std::erase_if(sorted, [&](const auto* p) { return !seen.insert(p->structure_id).second; });
    if (cfg.top_k && sorted.size() > *cfg.top_k)
        sorted.resize(*cfg.top_k);

    std::vector<std::string> out;
    for (const auto* p : sorted)
        if (!cfg.threshold_ef || p->predicted_ef <= *cfg.threshold_ef)
            out.push_back(p->structure_id);
    return out;
}

} // namespace amdflow
