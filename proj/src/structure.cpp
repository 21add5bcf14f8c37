#include "amdflow/structure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace amdflow {

namespace {

constexpr std::array<std::string_view, 118> kElements = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",  "S",
    "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge",
    "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd",
    "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn",
    "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

constexpr double kSiteTieTolerance = 1e-9;
constexpr double kMinVolume = 1e-6;

double det(const Mat3& m)
{
    return dot(m[0], cross(m[1], m[2]));
}

} // namespace

double norm(const Vec3& a)
{
    return std::sqrt(dot(a, a));
}

ElementSymbol::ElementSymbol(std::string_view symbol)
    : symbol_(symbol)
{
    if (!is_valid(symbol))
        throw InvariantError("unknown element symbol '" + std::string(symbol) + "'");
}

bool ElementSymbol::is_valid(std::string_view symbol)
{
    return std::find(kElements.begin(), kElements.end(), symbol) != kElements.end();
}

int ElementSymbol::atomic_number() const
{
    return static_cast<int>(std::find(kElements.begin(), kElements.end(), symbol_) - kElements.begin()) + 1;
}

Lattice::Lattice(const Mat3& rows)
    : rows_(rows)
{
    const double v = det(rows_);
    if (!std::isfinite(v) || v <= kMinVolume)
        throw InvariantError("lattice must be right-handed with volume > 1e-6 A^3");
}

double Lattice::volume() const
{
    return det(rows_);
}

Vec3 Lattice::to_cartesian(const Vec3& f) const
{
    return {f[0] * rows_[0][0] + f[1] * rows_[1][0] + f[2] * rows_[2][0],
            f[0] * rows_[0][1] + f[1] * rows_[1][1] + f[2] * rows_[2][1],
            f[0] * rows_[0][2] + f[1] * rows_[1][2] + f[2] * rows_[2][2]};
}

Vec3 Lattice::to_fractional(const Vec3& cart) const
{
    // Reciprocal rows: frac_i = (b_j x b_k) . r / V
    const double v = volume();
    const Vec3 r0 = cross(rows_[1], rows_[2]);
    const Vec3 r1 = cross(rows_[2], rows_[0]);
    const Vec3 r2 = cross(rows_[0], rows_[1]);
    return {dot(r0, cart) / v, dot(r1, cart) / v, dot(r2, cart) / v};
}

Vec3 Lattice::perpendicular_widths() const
{
    const double v = volume();
    return {v / norm(cross(rows_[1], rows_[2])), v / norm(cross(rows_[2], rows_[0])),
            v / norm(cross(rows_[0], rows_[1]))};
}

std::array<int, 3> image_search_bounds(const Lattice& lattice, double reach)
{
    const Vec3 w = lattice.perpendicular_widths();
    std::array<int, 3> out{};
    for (int k = 0; k < 3; ++k)
        out[k] = static_cast<int>(std::ceil(reach / w[k])) + 1;
    return out;
}

double wrap_unit(double x)
{
    double w = x - std::floor(x);
    if (w >= 1.0)
        w = 0.0;
    return w == 0.0 ? 0.0 : w; // no -0.0
}

bool canonical_site_less(const Site& a, const Site& b)
{
    if (a.element != b.element)
        return a.element < b.element;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(a.frac[k] - b.frac[k]) > kSiteTieTolerance)
            return a.frac[k] < b.frac[k];
    }
    return false;
}

CrystalStructure::CrystalStructure(Lattice lattice, std::vector<Site> sites, std::string label)
    : lattice_(std::move(lattice))
    , sites_(std::move(sites))
    , label_(std::move(label))
{
    if (sites_.empty())
        throw InvariantError("a structure needs at least one site");
    for (auto& site : sites_) {
        for (double& x : site.frac) {
            if (!std::isfinite(x))
                throw InvariantError("non-finite fractional coordinate");
            x = wrap_unit(x);
        }
    }
    std::stable_sort(sites_.begin(), sites_.end(), canonical_site_less);
}

std::vector<ElementSymbol> CrystalStructure::species() const
{
    std::vector<ElementSymbol> out;
    for (const auto& site : sites_)
        if (out.empty() || out.back() != site.element)
            out.push_back(site.element);
    return out;
}

CrystalStructure CrystalStructure::with_label(std::string label) const
{
    CrystalStructure copy = *this;
    copy.label_ = std::move(label);
    return copy;
}

bool CrystalStructure::same_geometry(const CrystalStructure& other) const
{
    return lattice_ == other.lattice_ && sites_ == other.sites_;
}

Composition::Composition(std::map<ElementSymbol, long> counts)
    : counts_(std::move(counts))
{
    if (counts_.empty())
        throw InvariantError("composition must contain at least one element");
    for (const auto& [element, n] : counts_)
        if (n < 1)
            throw InvariantError("composition count for " + element.str() + " must be >= 1");
}

long Composition::total() const
{
    long sum = 0;
    for (const auto& [element, n] : counts_)
        sum += n;
    return sum;
}

long Composition::count(const ElementSymbol& e) const
{
    auto it = counts_.find(e);
    return it == counts_.end() ? 0 : it->second;
}

Composition Composition::reduced() const
{
    if (counts_.empty())
        return {};
    long g = 0;
    for (const auto& [element, n] : counts_)
        g = std::gcd(g, n);
    auto out = counts_;
    for (auto& [element, n] : out)
        n /= g;
    return Composition(std::move(out));
}

double Composition::fraction(const ElementSymbol& e) const
{
    return static_cast<double>(count(e)) / static_cast<double>(total());
}

std::vector<ElementSymbol> Composition::elements() const
{
    std::vector<ElementSymbol> out;
    for (const auto& [element, n] : counts_)
        out.push_back(element);
    return out;
}

std::string Composition::formula() const
{
    std::string out;
    for (const auto& [element, n] : counts_) {
        out += element.str();
        if (n != 1)
            out += std::to_string(n);
    }
    return out;
}

Composition composition_of(const CrystalStructure& s)
{
    std::map<ElementSymbol, long> counts;
    for (const auto& site : s.sites())
        ++counts[site.element];
    return Composition(std::move(counts));
}

double min_image_distance(const CrystalStructure& s, std::size_t i, std::size_t j)
{
    if (i >= s.size() || j >= s.size())
        throw std::out_of_range("site index out of range");
    const auto& lattice = s.lattice();
    Vec3 delta = s.sites()[j].frac - s.sites()[i].frac;
    for (double& x : delta)
        x -= std::round(x);

    // The wrapped image bounds the answer from above, so no image farther than that
    // along any lattice direction can beat it. For i == j the shortest row is the bound.
    double best = std::numeric_limits<double>::infinity();
    double reach = norm(lattice.to_cartesian(delta));
    if (i == j)
        reach = std::min({norm(lattice.row(0)), norm(lattice.row(1)), norm(lattice.row(2))});
    const auto bounds = image_search_bounds(lattice, reach);
    for (int a = -bounds[0]; a <= bounds[0]; ++a)
        for (int b = -bounds[1]; b <= bounds[1]; ++b)
            for (int c = -bounds[2]; c <= bounds[2]; ++c) {
                if (i == j && a == 0 && b == 0 && c == 0)
                    continue;
                const Vec3 shifted{delta[0] + a, delta[1] + b, delta[2] + c};
                best = std::min(best, norm(lattice.to_cartesian(shifted)));
            }
    return best;
}

} // namespace amdflow
