#include "amdflow/hull.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "amdflow/poscar.hpp"

namespace amdflow {

namespace {

std::string fmt10(double v)
{
    if (v == 0.0)
        v = 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string px(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    return s == "-0.00" ? "0.00" : s;
}

std::string xml_escape(const std::string& in)
{
    std::string out;
    for (char c : in) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

struct Row {
    const PhaseEntry* entry;
    double e_form;
    double e_above;
};

std::vector<Row> rows_by_id(const ConvexHullResult& hull, const std::vector<PhaseEntry>& entries)
{
    std::vector<Row> rows;
    for (const auto& e : entries)
        rows.push_back({&e, hull.formation_energy(e), hull.energy_above_hull(e)});
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.entry->id < b.entry->id; });
    return rows;
}

void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

constexpr double kWidth = 640.0;
constexpr double kHeight = 560.0;

std::string svg_header()
{
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(kWidth) + "\" height=\"" + px(kHeight) +
           "\" viewBox=\"0 0 " + px(kWidth) + " " + px(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n"
           "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string line(double x1, double y1, double x2, double y2, const char* cls, const char* stroke, double width)
{
    return "<line class=\"" + std::string(cls) + "\" x1=\"" + px(x1) + "\" y1=\"" + px(y1) + "\" x2=\"" + px(x2) +
           "\" y2=\"" + px(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + px(width) + "\"/>\n";
}

std::string circle(double x, double y, double r, const char* cls, const char* fill, const std::string& title)
{
    return "<circle class=\"" + std::string(cls) + "\" cx=\"" + px(x) + "\" cy=\"" + px(y) + "\" r=\"" + px(r) +
           "\" fill=\"" + fill + "\"><title>" + xml_escape(title) + "</title></circle>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle")
{
    return "<text x=\"" + px(x) + "\" y=\"" + px(y) + "\" text-anchor=\"" + anchor + "\">" + xml_escape(s) +
           "</text>\n";
}

std::set<std::size_t> vertex_indices(const ConvexHullResult& hull)
{
    std::set<std::size_t> out;
    for (const auto& f : hull.facets())
        out.insert(f.begin(), f.end());
    return out;
}

std::string binary_svg(const ConvexHullResult& hull, const std::vector<Row>& rows)
{
    const double left = 80, right = kWidth - 40, top = 40, bottom = kHeight - 70;
    double lo = 0.0, hi = 0.0;
    for (const auto& p : hull.points())
        lo = std::min(lo, p.formation_energy);
    for (const auto& r : rows) {
        lo = std::min(lo, r.e_form);
        hi = std::max(hi, r.e_form);
    }
    const double pad = 0.05 * std::max(hi - lo, 0.1);
    lo -= pad;
    hi += pad;
    const auto& el = hull.elements();
    auto sx = [&](double x) { return left + x * (right - left); };
    auto sy = [&](double e) { return bottom - (e - lo) / (hi - lo) * (bottom - top); };

    std::string out = svg_header();
    out += line(left, bottom, right, bottom, "axis", "black", 1.0);
    out += line(left, top, left, bottom, "axis", "black", 1.0);
    out += line(left, sy(0.0), right, sy(0.0), "zero", "#bbbbbb", 0.5);
    out += text((left + right) / 2, kHeight - 25, "x(" + el[1].str() + ")");
    out += text(20, (top + bottom) / 2, "E_f (eV/atom)");
    out += text(left, bottom + 18, el[0].str());
    out += text(right, bottom + 18, el[1].str());
    for (int t = 0; t <= 4; ++t) {
        const double e = lo + (hi - lo) * t / 4.0;
        out += text(left - 6, sy(e) + 4, fmt10(std::round(e * 1000.0) / 1000.0), "end");
    }

    const auto& pts = hull.points();
    for (const auto& f : hull.facets())
        out += line(sx(pts[f[0]].fractions[1]), sy(pts[f[0]].formation_energy), sx(pts[f[1]].fractions[1]),
                    sy(pts[f[1]].formation_energy), "tie-line", "#1f4e79", 1.5);
    for (const auto& r : rows) {
        if (r.e_above <= hull.tolerance())
            continue;
        out += circle(sx(r.entry->composition.fraction(el[1])), sy(r.e_form), 3.0, "entry", "#999999",
                      r.entry->id + " " + r.entry->composition.formula() + " +" + fmt10(r.e_above));
    }
    for (std::size_t i : vertex_indices(hull)) {
        const auto& p = pts[i];
        out += circle(sx(p.fractions[1]), sy(p.formation_energy), 5.0, "hull-vertex", "#c00000",
                      p.id + " " + p.composition.formula());
        out += text(sx(p.fractions[1]), sy(p.formation_energy) + 18, p.composition.formula());
    }
    out += "</svg>\n";
    return out;
}

std::string ternary_svg(const ConvexHullResult& hull, const std::vector<Row>& rows)
{
    const double side = 520.0;
    const double x0 = (kWidth - side) / 2, y0 = kHeight - 70;
    const std::array<std::array<double, 2>, 3> corner{{{x0, y0}, {x0 + side, y0}, {x0 + side / 2, y0 - side * std::sqrt(3.0) / 2}}};
    auto at = [&](const std::vector<double>& f) {
        std::array<double, 2> p{0.0, 0.0};
        for (int k = 0; k < 3; ++k) {
            p[0] += f[k] * corner[k][0];
            p[1] += f[k] * corner[k][1];
        }
        return p;
    };
    const auto& el = hull.elements();
    const auto& pts = hull.points();

    std::string out = svg_header();
    out += text(corner[0][0] - 10, corner[0][1] + 22, el[0].str());
    out += text(corner[1][0] + 10, corner[1][1] + 22, el[1].str());
    out += text(corner[2][0], corner[2][1] - 12, el[2].str());

    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (const auto& f : hull.facets())
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = a + 1; b < 3; ++b)
                edges.insert(std::minmax(f[a], f[b]));
    for (const auto& [a, b] : edges) {
        const auto pa = at(pts[a].fractions), pb = at(pts[b].fractions);
        out += line(pa[0], pa[1], pb[0], pb[1], "tie-line", "#1f4e79", 1.2);
    }
    for (const auto& r : rows) {
        if (r.e_above <= hull.tolerance())
            continue;
        const auto p = at(hull.fractions_of(r.entry->composition));
        out += circle(p[0], p[1], 3.0, "entry", "#999999",
                      r.entry->id + " " + r.entry->composition.formula() + " +" + fmt10(r.e_above));
    }
    for (std::size_t i : vertex_indices(hull)) {
        const auto p = at(pts[i].fractions);
        out += circle(p[0], p[1], 5.0, "hull-vertex", "#c00000",
                      pts[i].id + " " + pts[i].composition.formula() + " " + fmt10(pts[i].formation_energy));
        if (!pts[i].composition.is_elemental())
            out += text(p[0], p[1] - 8, pts[i].composition.formula());
    }
    out += "</svg>\n";
    return out;
}

} // namespace

std::string hull_table(const ConvexHullResult& hull, const std::vector<PhaseEntry>& entries)
{
    std::string out = "id\tformula";
    for (const auto& e : hull.elements())
        out += "\tx_" + e.str();
    out += "\te_form_eV_per_atom\te_above_hull_eV_per_atom\ton_hull\n";
    for (const auto& r : rows_by_id(hull, entries)) {
        out += r.entry->id + "\t" + r.entry->composition.formula();
        for (double x : hull.fractions_of(r.entry->composition))
            out += "\t" + fmt10(x);
        out += "\t" + fmt10(r.e_form) + "\t" + fmt10(r.e_above) + "\t" +
               (r.e_above <= hull.tolerance() ? "true" : "false") + "\n";
    }
    return out;
}

std::string phase_diagram_svg(const ConvexHullResult& hull, const std::vector<PhaseEntry>& entries)
{
    const auto rows = rows_by_id(hull, entries);
    if (hull.dimension() == 2)
        return binary_svg(hull, rows);
    if (hull.dimension() == 3)
        return ternary_svg(hull, rows);
    throw HullError("phase diagrams are drawn for binary and ternary systems only");
}

PhaseDiagramFiles export_phase_diagram(const ConvexHullResult& hull, const std::vector<PhaseEntry>& entries,
                                       const std::filesystem::path& out_dir)
{
    std::filesystem::create_directories(out_dir);
    PhaseDiagramFiles files;
    files.table = out_dir / "hull.tsv";
    write_file(files.table, hull_table(hull, entries));
    if (hull.dimension() <= 3) {
        files.svg = out_dir / "phase_diagram.svg";
        write_file(*files.svg, phase_diagram_svg(hull, entries));
    } else {
        files.notice = std::to_string(hull.dimension()) + "-element system: phase diagram plot skipped, table only";
    }
    return files;
}

std::vector<std::string> promote_candidates(const std::vector<PhaseEntry>& entries, const ConvexHullResult& hull,
                                            double e_cut, const std::filesystem::path& dest,
                                            const std::function<CrystalStructure(const std::string&)>& structure_of)
{
    namespace fs = std::filesystem;
    std::vector<std::pair<double, std::string>> picked;
    std::set<std::string> seen;
    for (const auto& e : entries) {
        const double above = hull.energy_above_hull(e);
        if (above <= e_cut && seen.insert(e.id).second)
            picked.emplace_back(above, e.id);
    }
    std::sort(picked.begin(), picked.end());

    fs::create_directories(dest);
    for (const auto& item : fs::directory_iterator(dest))
        if (item.is_regular_file() && item.path().extension() == ".vasp")
            fs::remove(item.path());

    std::vector<std::string> ids;
    for (const auto& [above, id] : picked) {
        write_poscar_file(dest / (id + ".vasp"), structure_of(id));
        ids.push_back(id);
    }
    return ids;
}

} // namespace amdflow
