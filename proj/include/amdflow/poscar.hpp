#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "amdflow/structure.hpp"

namespace amdflow {

enum class PoscarErrorKind {
    truncated,        // file ends before a required line
    malformed_line,   // a line has the wrong number or type of fields
    unknown_element,  // species line names something that is not an element
    count_mismatch,   // species and counts lines disagree in length
    coordinate_block, // fewer coordinate lines than the counts line promises
    bad_lattice,      // non-positive cell volume
    bad_mode,         // neither Direct nor Cartesian
};

class PoscarError : public std::runtime_error {
public:
    PoscarError(PoscarErrorKind kind, int line, const std::string& what);

    PoscarErrorKind kind() const { return kind_; }
    /// 1-based line number the error was detected on.
    int line() const { return line_; }

private:
    PoscarErrorKind kind_;
    int line_;
};

/// Parses VASP 5 POSCAR/CONTCAR text. Selective-dynamics flags and any trailing
/// velocity block are ignored. A negative scale factor is a target cell volume.
CrystalStructure parse_poscar(std::string_view text);

/// Canonical POSCAR text: scale 1.0, Direct mode, shortest round-trip numbers.
/// parse_poscar(write_poscar(s)) == s holds exactly.
std::string write_poscar(const CrystalStructure& s);

CrystalStructure read_poscar_file(const std::filesystem::path& path);
void write_poscar_file(const std::filesystem::path& path, const CrystalStructure& s);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_round_trip(double value);

} // namespace amdflow
