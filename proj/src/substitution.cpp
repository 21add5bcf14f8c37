#include "amdflow/substitution.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <unordered_set>

#include "amdflow/poscar.hpp"

namespace amdflow {

namespace {

bool is_template_file(const std::filesystem::path& p)
{
    const auto name = p.filename().string();
    const auto ext = p.extension().string();
    return ext == ".vasp" || ext == ".poscar" || name.rfind("POSCAR", 0) == 0;
}

void extend(std::size_t n, std::size_t k, std::vector<std::size_t>& prefix, std::vector<bool>& used,
            std::vector<std::vector<std::size_t>>& out)
{
    if (prefix.size() == k) {
        out.push_back(prefix);
        return;
    }
    for (std::size_t t = 0; t < n; ++t) {
        if (used[t])
            continue;
        used[t] = true;
        prefix.push_back(t);
        extend(n, k, prefix, used, out);
        prefix.pop_back();
        used[t] = false;
    }
}

} // namespace

TemplateSet ingest_templates(const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec))
        throw GenerationError("template directory does not exist: " + dir.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_template_file(entry.path()))
            files.push_back(entry.path());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

    TemplateSet set;
    for (const auto& file : files) {
        try {
            set.templates.push_back(Template{read_poscar_file(file), file.filename().string()});
        } catch (const std::exception& e) {
            set.warnings.push_back(file.filename().string() + ": " + e.what());
        }
    }
    if (set.templates.empty())
        throw GenerationError("no usable templates in " + dir.string());
    return set;
}

void SubstitutionSpec::validate() const
{
    if (targets.empty() || targets.size() > 6)
        throw InvariantError("substitution needs between 1 and 6 target elements");
    std::set<ElementSymbol> seen(targets.begin(), targets.end());
    if (seen.size() != targets.size())
        throw InvariantError("target elements must be distinct");
    if (max_candidates < 1)
        throw InvariantError("max_candidates must be positive");
}

std::vector<std::vector<std::size_t>> injective_assignments(std::size_t n, std::size_t k)
{
    std::vector<std::vector<std::size_t>> out;
    if (k > n)
        return out;
    std::vector<std::size_t> prefix;
    std::vector<bool> used(n, false);
    extend(n, k, prefix, used, out);
    return out;
}

std::string candidate_id(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "c%06zu", index);
    return buf;
}

GenerationResult enumerate_substitutions(const TemplateSet& templates, const SubstitutionSpec& spec)
{
    spec.validate();
    GenerationResult result;
    std::unordered_set<std::string> seen;
    const std::size_t n = spec.targets.size();

    for (std::size_t ti = 0; ti < templates.templates.size() && !result.truncated; ++ti) {
        const auto& tmpl = templates.templates[ti];
        const auto species = tmpl.structure.species();
        const std::size_t k = species.size();
        if (k > n) {
            result.warnings.push_back(tmpl.source + ": " + std::to_string(k) + " species but only " +
                                      std::to_string(n) + " targets, skipped");
            continue;
        }
        if (k < n && !spec.allow_fewer)
            continue;

        for (const auto& assignment : injective_assignments(n, k)) {
            std::vector<Site> sites = tmpl.structure.sites();
            for (auto& site : sites) {
                const auto pos = std::find(species.begin(), species.end(), site.element) - species.begin();
                site.element = spec.targets[assignment[pos]];
            }
            std::string label = tmpl.source;
            std::vector<ElementSymbol> mapped;
            for (std::size_t s = 0; s < k; ++s) {
                mapped.push_back(spec.targets[assignment[s]]);
                label += " " + species[s].str() + "->" + mapped.back().str();
            }
            CrystalStructure candidate(tmpl.structure.lattice(), std::move(sites), std::move(label));

            if (!seen.insert(write_poscar(candidate.with_label({}))).second)
                continue;
            if (result.candidates.size() == spec.max_candidates) {
                result.truncated = true;
                break;
            }
            result.candidates.push_back(
                Candidate{candidate_id(result.candidates.size()), std::move(candidate), ti, std::move(mapped)});
        }
    }
    if (result.candidates.empty())
        throw GenerationError("substitution produced no candidates");
    return result;
}

} // namespace amdflow
