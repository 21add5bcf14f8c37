#include "amdflow/poscar.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

namespace amdflow {

namespace {

std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        lines.push_back(line);
        if (end == text.size())
            break;
        start = end + 1;
    }
    // A final newline does not open a new line.
    if (!lines.empty() && lines.back().empty() && !text.empty() && text.back() == '\n')
        lines.pop_back();
    return lines;
}

std::vector<std::string_view> tokens(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t'))
            ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t')
            ++j;
        if (j > i)
            out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

bool parse_double(std::string_view tok, double& out)
{
    if (!tok.empty() && tok.front() == '+')
        tok.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return ec == std::errc{} && ptr == tok.data() + tok.size() && std::isfinite(out);
}

bool parse_long(std::string_view tok, long& out)
{
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return ec == std::errc{} && ptr == tok.data() + tok.size();
}

class LineReader {
public:
    explicit LineReader(std::string_view text)
        : lines_(split_lines(text))
    {
    }

    std::string_view next(const char* what)
    {
        if (pos_ >= lines_.size())
            throw PoscarError(PoscarErrorKind::truncated, static_cast<int>(pos_) + 1,
                              std::string("unexpected end of file, expected ") + what);
        return lines_[pos_++];
    }

    std::string_view peek() const { return pos_ < lines_.size() ? lines_[pos_] : std::string_view{}; }
    bool at_end() const { return pos_ >= lines_.size(); }
    int line_number() const { return static_cast<int>(pos_); }

    Vec3 next_vector(const char* what, PoscarErrorKind short_kind)
    {
        const auto line = next(what);
        const auto toks = tokens(line);
        Vec3 v{};
        if (toks.size() < 3)
            throw PoscarError(short_kind, line_number(), std::string("expected 3 numbers for ") + what);
        for (int k = 0; k < 3; ++k)
            if (!parse_double(toks[k], v[k]))
                throw PoscarError(PoscarErrorKind::malformed_line, line_number(),
                                  "bad number '" + std::string(toks[k]) + "' in " + what);
        return v;
    }

private:
    std::vector<std::string_view> lines_;
    std::size_t pos_ = 0;
};

double raw_det(const Mat3& m)
{
    return dot(m[0], cross(m[1], m[2]));
}

} // namespace

PoscarError::PoscarError(PoscarErrorKind kind, int line, const std::string& what)
    : std::runtime_error("POSCAR line " + std::to_string(line) + ": " + what)
    , kind_(kind)
    , line_(line)
{
}

CrystalStructure parse_poscar(std::string_view text)
{
    LineReader in(text);
    std::string label(in.next("comment line"));

    const auto scale_toks = tokens(in.next("scale factor"));
    const int scale_line = in.line_number();
    std::vector<double> scale;
    for (auto t : scale_toks) {
        double v = 0;
        if (!parse_double(t, v))
            throw PoscarError(PoscarErrorKind::malformed_line, scale_line, "bad scale factor");
        scale.push_back(v);
    }
    if (scale.size() != 1 && scale.size() != 3)
        throw PoscarError(PoscarErrorKind::malformed_line, scale_line, "expected 1 or 3 scale factors");
    if (scale.size() == 3 && (scale[0] <= 0 || scale[1] <= 0 || scale[2] <= 0))
        throw PoscarError(PoscarErrorKind::malformed_line, scale_line, "per-axis scale factors must be positive");
    if (scale.size() == 1 && scale[0] == 0.0)
        throw PoscarError(PoscarErrorKind::malformed_line, scale_line, "scale factor is zero");

    Mat3 rows{};
    for (int r = 0; r < 3; ++r)
        rows[r] = in.next_vector("lattice vector", PoscarErrorKind::malformed_line);
    const int lattice_line = in.line_number();

    Vec3 axis_scale{1.0, 1.0, 1.0};
    if (scale.size() == 3) {
        axis_scale = {scale[0], scale[1], scale[2]};
    } else if (scale[0] < 0) {
        const double v = raw_det(rows);
        if (!(v > 0))
            throw PoscarError(PoscarErrorKind::bad_lattice, lattice_line, "non-positive cell volume");
        const double f = std::cbrt(-scale[0] / v);
        axis_scale = {f, f, f};
    } else {
        axis_scale = {scale[0], scale[0], scale[0]};
    }
    for (auto& row : rows)
        for (int k = 0; k < 3; ++k)
            row[k] *= axis_scale[k];

    std::optional<Lattice> lattice;
    try {
        lattice.emplace(rows);
    } catch (const InvariantError&) {
        throw PoscarError(PoscarErrorKind::bad_lattice, lattice_line, "non-positive cell volume");
    }

    const auto species_toks = tokens(in.next("species line"));
    const int species_line = in.line_number();
    std::vector<ElementSymbol> species;
    for (auto t : species_toks) {
        if (!ElementSymbol::is_valid(t))
            throw PoscarError(PoscarErrorKind::unknown_element, species_line,
                              "unknown element symbol '" + std::string(t) + "'");
        species.emplace_back(t);
    }
    if (species.empty())
        throw PoscarError(PoscarErrorKind::malformed_line, species_line, "empty species line");

    const auto count_toks = tokens(in.next("counts line"));
    const int counts_line = in.line_number();
    std::vector<long> counts;
    for (auto t : count_toks) {
        long n = 0;
        if (!parse_long(t, n) || n < 1)
            throw PoscarError(PoscarErrorKind::malformed_line, counts_line, "bad atom count '" + std::string(t) + "'");
        counts.push_back(n);
    }
    if (counts.size() != species.size())
        throw PoscarError(PoscarErrorKind::count_mismatch, counts_line,
                          "species line has " + std::to_string(species.size()) + " entries but counts line has " +
                              std::to_string(counts.size()));

    auto mode_toks = tokens(in.next("coordinate mode line"));
    if (!mode_toks.empty() && (mode_toks.front().front() == 'S' || mode_toks.front().front() == 's'))
        mode_toks = tokens(in.next("coordinate mode line"));
    bool cartesian = false;
    if (mode_toks.empty())
        throw PoscarError(PoscarErrorKind::bad_mode, in.line_number(), "empty coordinate mode line");
    switch (mode_toks.front().front()) {
    case 'D':
    case 'd':
        break;
    case 'C':
    case 'c':
    case 'K':
    case 'k':
        cartesian = true;
        break;
    default:
        throw PoscarError(PoscarErrorKind::bad_mode, in.line_number(),
                          "unknown coordinate mode '" + std::string(mode_toks.front()) + "'");
    }

    std::vector<Site> sites;
    for (std::size_t s = 0; s < species.size(); ++s) {
        for (long n = 0; n < counts[s]; ++n) {
            if (in.at_end() || tokens(in.peek()).empty())
                throw PoscarError(PoscarErrorKind::coordinate_block, in.line_number() + 1,
                                  "coordinate block ends after " + std::to_string(sites.size()) + " sites");
            Vec3 v = in.next_vector("coordinates", PoscarErrorKind::coordinate_block);
            if (cartesian) {
                for (int k = 0; k < 3; ++k)
                    v[k] *= axis_scale[k];
                v = lattice->to_fractional(v);
            }
            sites.push_back(Site{species[s], v});
        }
    }
    return CrystalStructure(*lattice, std::move(sites), std::move(label));
}

std::string format_round_trip(double value)
{
    if (value == 0.0)
        value = 0.0; // fold -0.0
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

std::string write_poscar(const CrystalStructure& s)
{
    std::string out;
    std::string label = s.label();
    for (char& c : label)
        if (c == '\n' || c == '\r')
            c = ' ';
    out += label;
    out += "\n1.0\n";
    for (const auto& row : s.lattice().rows()) {
        out += "  " + format_round_trip(row[0]) + " " + format_round_trip(row[1]) + " " +
               format_round_trip(row[2]) + "\n";
    }
    const auto species = s.species();
    const auto comp = composition_of(s);
    std::string names, counts;
    for (const auto& e : species) {
        names += (names.empty() ? "" : " ") + e.str();
        counts += (counts.empty() ? "" : " ") + std::to_string(comp.count(e));
    }
    out += names + "\n" + counts + "\nDirect\n";
    for (const auto& site : s.sites()) {
        out += "  " + format_round_trip(site.frac[0]) + " " + format_round_trip(site.frac[1]) + " " +
               format_round_trip(site.frac[2]) + "\n";
    }
    return out;
}

CrystalStructure read_poscar_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_poscar(buf.str());
}

void write_poscar_file(const std::filesystem::path& path, const CrystalStructure& s)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << write_poscar(s);
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

} // namespace amdflow
