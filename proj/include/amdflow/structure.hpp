#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace amdflow {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b)
{
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a);

/// Thrown when a value violates a domain-type invariant.
class InvariantError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// One of the 118 IUPAC element symbols in canonical case ("Fe", not "FE").
class ElementSymbol {
public:
    /// Throws InvariantError for anything that is not a known symbol.
    explicit ElementSymbol(std::string_view symbol);

    static bool is_valid(std::string_view symbol);

    const std::string& str() const { return symbol_; }
    int atomic_number() const;

    auto operator<=>(const ElementSymbol&) const = default;

private:
    std::string symbol_;
};

/// Lattice vectors as rows, in Angstrom. Right-handed with volume > 1e-6.
class Lattice {
public:
    explicit Lattice(const Mat3& rows);

    const Mat3& rows() const { return rows_; }
    const Vec3& row(std::size_t i) const { return rows_[i]; }
    double volume() const;

    Vec3 to_cartesian(const Vec3& frac) const;
    Vec3 to_fractional(const Vec3& cart) const;

    /// Distance between opposite faces of the cell, per lattice direction.
    Vec3 perpendicular_widths() const;

    bool operator==(const Lattice&) const = default;

private:
    Mat3 rows_;
};

/// x - floor(x), with the 1.0 that rounding can produce for tiny negatives folded to 0.0.
double wrap_unit(double x);

struct Site {
    ElementSymbol element;
    Vec3 frac;

    bool operator==(const Site&) const = default;
};

/// Periodic crystal structure in canonical form: every fractional coordinate in [0, 1),
/// sites ordered by element symbol then by coordinates (1e-9 tie tolerance).
class CrystalStructure {
public:
    /// Wraps coordinates and sorts sites; throws InvariantError when sites is empty.
    CrystalStructure(Lattice lattice, std::vector<Site> sites, std::string label = {});

    const Lattice& lattice() const { return lattice_; }
    const std::vector<Site>& sites() const { return sites_; }
    const std::string& label() const { return label_; }
    std::size_t size() const { return sites_.size(); }

    /// Distinct elements in canonical order.
    std::vector<ElementSymbol> species() const;

    CrystalStructure with_label(std::string label) const;

    /// Same geometry and labels (ignores the provenance label).
    bool same_geometry(const CrystalStructure& other) const;

    bool operator==(const CrystalStructure&) const = default;

private:
    Lattice lattice_;
    std::vector<Site> sites_;
    std::string label_;
};

/// Tolerant ordering used for canonical site sorting.
bool canonical_site_less(const Site& a, const Site& b);

class Composition {
public:
    Composition() = default;
    /// Throws InvariantError for a non-positive count or an empty map.
    explicit Composition(std::map<ElementSymbol, long> counts);

    const std::map<ElementSymbol, long>& counts() const { return counts_; }
    long total() const;
    long count(const ElementSymbol& e) const;
    bool empty() const { return counts_.empty(); }

    Composition reduced() const;
    double fraction(const ElementSymbol& e) const;
    std::vector<ElementSymbol> elements() const;
    bool is_elemental() const { return counts_.size() == 1; }

    /// Hill-free alphabetical formula with unit counts omitted, e.g. "CeFe2In".
    std::string formula() const;

    auto operator<=>(const Composition&) const = default;

private:
    std::map<ElementSymbol, long> counts_;
};

Composition composition_of(const CrystalStructure& s);

/// Minimum distance between site i and any periodic image of site j (the zero
/// translation is excluded when i == j). Throws std::out_of_range on bad indices.
double min_image_distance(const CrystalStructure& s, std::size_t i, std::size_t j);

/// Calls visit(j, distance) for every site j image within cutoff of site i,
/// excluding i itself at zero translation.
template <typename Visitor>
void for_each_neighbor(const CrystalStructure& s, std::size_t i, double cutoff, Visitor&& visit);

/// Integer translation bound per axis that covers every image within `reach` Angstrom
/// of a point inside the cell.
std::array<int, 3> image_search_bounds(const Lattice& lattice, double reach);

} // namespace amdflow

#include "amdflow/detail/neighbors.hpp"
