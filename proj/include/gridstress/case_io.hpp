#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gridstress/errors.hpp"

namespace gridstress {

enum class BusKind { load, generator };

struct BusRecord {
    int id = 0;
    BusKind kind = BusKind::load;
    double p_demand = 0.0;   // p.u., positive = consumption
    double q_demand = 0.0;   // p.u., positive = consumption
    double shunt_b = 0.0;    // p.u. shunt susceptance (capacitive positive)
    double v_setpoint = 1.0; // p.u., meaningful for generator buses

    bool operator==(const BusRecord&) const = default;
};

struct BranchRecord {
    int from = 0;
    int to = 0;
    double reactance_x = 0.0; // p.u., > 0
    double charging_b = 0.0;  // p.u. total line-charging susceptance

    bool operator==(const BranchRecord&) const = default;
};

struct GenRecord {
    int bus = 0;
    double p_gen = 0.0;      // p.u. scheduled active injection
    double v_setpoint = 1.0; // p.u. regulated voltage magnitude

    bool operator==(const GenRecord&) const = default;
};

/// Validated, per-unit snapshot of a grid case.
struct GridCase {
    double base_mva = 100.0;
    std::vector<BusRecord> buses;
    std::vector<BranchRecord> branches;
    std::vector<GenRecord> gens;

    bool operator==(const GridCase&) const = default;

    const BusRecord& bus_by_id(int id) const;
};

/// Non-fatal notes produced while parsing (dropped demand at PV bus, discarded resistance, ...).
struct ParseWarnings {
    std::vector<std::string> messages;
};

/// Parse a MATPOWER-style case (mpc.baseMVA / mpc.bus / mpc.gen / mpc.branch matrices).
/// Throws MalformedCase or InvalidTopology.
GridCase parse_matpower_case(std::istream& text, ParseWarnings* warnings = nullptr);
GridCase parse_matpower_case(const std::string& text, ParseWarnings* warnings = nullptr);

/// Parse the native JSON case document.
GridCase parse_native_case(std::istream& text, ParseWarnings* warnings = nullptr);
GridCase parse_native_case(const std::string& text, ParseWarnings* warnings = nullptr);

/// Serialize a case to the native document. Numbers are rendered with 17
/// significant digits so parse_native_case(write_native_case(c)) == c exactly.
std::string write_native_case(const GridCase& c);

/// Render a double with 17 significant digits (shared by native writer and CSV output).
std::string format_number(double v);

} // namespace gridstress
