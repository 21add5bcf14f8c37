#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "amdflow/structure.hpp"

namespace amdflow {

/// Fatal analysis problems: missing references, degenerate systems.
class HullError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PhaseEntry {
    std::string id;
    Composition composition; // reduced
    double energy_per_atom;  // total energy per atom, eV/atom
    bool is_reference = false;
};

/// Elemental reference energies, eV/atom, with the id each came from.
class ReferenceSet {
public:
    ReferenceSet() = default;

    /// Lowest-energy elemental entry per element, lowered further by any
    /// user-supplied value that is smaller.
    static ReferenceSet from_entries(const std::vector<PhaseEntry>& entries,
                                     const std::map<ElementSymbol, double>& user_refs = {});

    void set(const ElementSymbol& e, double energy_per_atom, std::string source_id);
    bool contains(const ElementSymbol& e) const { return energies_.count(e) != 0; }
    /// Throws HullError naming the element when absent.
    double energy(const ElementSymbol& e) const;
    const std::string& source_id(const ElementSymbol& e) const;
    const std::map<ElementSymbol, double>& energies() const { return energies_; }

private:
    std::map<ElementSymbol, double> energies_;
    std::map<ElementSymbol, std::string> sources_;
};

/// Reads `<element>\t<energy_eV_per_atom>` lines.
std::map<ElementSymbol, double> read_references_tsv(const std::filesystem::path& path);

/// (total_energy - sum_e counts[e] * ref[e]) / natoms. Throws HullError on a missing reference.
double formation_energy_per_atom(double total_energy, const Composition& comp, const ReferenceSet& refs);

/// Formation energy of an entry whose energy is given per atom.
double formation_energy(const PhaseEntry& entry, const ReferenceSet& refs);

struct Decomposition {
    std::vector<std::pair<std::string, double>> parts; // (entry id, atomic-fraction weight)
    double hull_energy = 0.0;                           // eV/atom
};

/// A composition embedded in the simplex with its formation energy.
struct HullPoint {
    std::string id;
    Composition composition;
    std::vector<double> fractions; // one per hull element, summing to 1
    double formation_energy;
};

inline constexpr double kHullTolerance = 1e-8;

/// Lower convex hull of formation energy over the composition simplex of `elements()`.
class ConvexHullResult {
public:
    const std::vector<ElementSymbol>& elements() const { return elements_; }
    std::size_t dimension() const { return elements_.size(); }
    const ReferenceSet& references() const { return refs_; }
    double tolerance() const { return tolerance_; }

    /// Hull input: lowest-energy point per reduced composition, element corners first.
    const std::vector<HullPoint>& points() const { return points_; }
    /// Facets as indices into points(); each lists dimension() affinely independent points.
    const std::vector<std::vector<std::size_t>>& facets() const { return facets_; }
    std::vector<std::vector<std::string>> facet_ids() const;
    /// Ids of points that are facet vertices, in points() order.
    std::vector<std::string> vertices() const;

    std::vector<double> fractions_of(const Composition& comp) const;
    double formation_energy(const PhaseEntry& entry) const;

    /// Hull surface at `comp`, eV/atom.
    double hull_energy(const Composition& comp) const;
    double energy_above_hull(const PhaseEntry& entry) const;
    Decomposition decompose(const Composition& comp) const;

private:
    friend ConvexHullResult build_hull(const std::vector<PhaseEntry>&, const ReferenceSet&,
                                       const std::vector<ElementSymbol>&);

    struct Location {
        std::size_t facet;
        std::vector<double> weights;
    };
    Location locate(const std::vector<double>& fractions) const;

    std::vector<ElementSymbol> elements_;
    ReferenceSet refs_;
    double tolerance_ = kHullTolerance;
    std::vector<HullPoint> points_;
    std::vector<std::vector<std::size_t>> facets_;
};

/// Builds the lower hull over `elements` (default: every element in the entries,
/// alphabetically). Binary systems use a monotone chain; higher orders enumerate
/// candidate facets exactly, resolving coplanar ties by symbolic perturbation on
/// point index. Throws HullError for missing references or fewer than 2 elements.
ConvexHullResult build_hull(const std::vector<PhaseEntry>& entries, const ReferenceSet& refs,
                            const std::vector<ElementSymbol>& elements = {});

/// Copies the structure of every entry with energy_above_hull <= e_cut into
/// dest/<id>.vasp (stale *.vasp files in dest are removed first). Returns the
/// promoted ids sorted by energy above hull, then id.
std::vector<std::string> promote_candidates(const std::vector<PhaseEntry>& entries, const ConvexHullResult& hull,
                                            double e_cut, const std::filesystem::path& dest,
                                            const std::function<CrystalStructure(const std::string&)>& structure_of);

struct PhaseDiagramFiles {
    std::filesystem::path table;
    std::optional<std::filesystem::path> svg;
    std::string notice; // set when the plot was skipped
};

/// Writes hull.tsv for any dimension, and phase_diagram.svg for binary (energy vs
/// composition) and ternary (Gibbs triangle) systems. Output is byte-deterministic.
PhaseDiagramFiles export_phase_diagram(const ConvexHullResult& hull, const std::vector<PhaseEntry>& entries,
                                       const std::filesystem::path& out_dir);

std::string hull_table(const ConvexHullResult& hull, const std::vector<PhaseEntry>& entries);
std::string phase_diagram_svg(const ConvexHullResult& hull, const std::vector<PhaseEntry>& entries);

} // namespace amdflow
