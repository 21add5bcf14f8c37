#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "amdflow/structure.hpp"

namespace amdflow {

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Template {
    CrystalStructure structure;
    std::string source; // file name the template was read from
};

struct TemplateSet {
    std::vector<Template> templates;
    /// One message per file that could not be read or parsed.
    std::vector<std::string> warnings;
};

/// Reads every *.vasp, *.poscar and POSCAR* file in `dir` in lexicographic
/// file-name order. Unparsable files become warnings; zero usable templates
/// (or a missing directory) throws GenerationError.
TemplateSet ingest_templates(const std::filesystem::path& dir);

struct SubstitutionSpec {
    std::vector<ElementSymbol> targets;
    std::size_t max_candidates = 100000;
    bool allow_fewer = true;

    /// Throws InvariantError unless targets are distinct, 1..6 of them, and max_candidates >= 1.
    void validate() const;
};

struct Candidate {
    std::string id;
    CrystalStructure structure;
    std::size_t template_index;
    /// assignment[i] is the target that replaced the template's i-th species (canonical order).
    std::vector<ElementSymbol> assignment;
};

struct GenerationResult {
    std::vector<Candidate> candidates;
    bool truncated = false;
    std::vector<std::string> warnings;
};

/// All injective maps from k labels into n targets, as index tuples in lexicographic order.
std::vector<std::vector<std::size_t>> injective_assignments(std::size_t n, std::size_t k);

/// Label-wise decoration of each template with every injective assignment of the
/// targets. Output is deduplicated by exact canonical geometry, ordered by template
/// then assignment, truncated at max_candidates, and given ids c000000, c000001, ...
/// Throws GenerationError when nothing can be generated.
GenerationResult enumerate_substitutions(const TemplateSet& templates, const SubstitutionSpec& spec);

std::string candidate_id(std::size_t index);

} // namespace amdflow
