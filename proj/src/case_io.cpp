#include "gridstress/case_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gridstress {

namespace {

void warn(ParseWarnings* w, const std::string& msg) {
    if (w) w->messages.push_back(msg);
}

bool is_finite(double v) { return std::isfinite(v); }

// ---------------------------------------------------------------------------
// Shared validation / normalization
// ---------------------------------------------------------------------------

// Checks the GridCase invariants, merges parallel branches and sorts records.
// Both parsers funnel through here.
GridCase finalize_case(GridCase c, ParseWarnings* w) {
    if (!(c.base_mva > 0.0) || !is_finite(c.base_mva))
        throw MalformedCase("base_mva must be positive");

    std::set<int> ids;
    for (const auto& b : c.buses) {
        if (!ids.insert(b.id).second)
            throw InvalidTopology("duplicate bus id " + std::to_string(b.id));
        if (!is_finite(b.p_demand) || !is_finite(b.q_demand) || !is_finite(b.shunt_b))
            throw MalformedCase("non-finite value at bus " + std::to_string(b.id));
        if (!(b.v_setpoint > 0.0))
            throw InvalidTopology("non-positive voltage set-point at bus " + std::to_string(b.id));
    }
    for (const auto& br : c.branches) {
        if (!ids.count(br.from) || !ids.count(br.to))
            throw InvalidTopology("branch " + std::to_string(br.from) + "-" +
                                  std::to_string(br.to) + " references an unknown bus");
        if (br.from == br.to)
            throw InvalidTopology("self-loop branch at bus " + std::to_string(br.from));
        if (!(br.reactance_x > 0.0) || !is_finite(br.reactance_x))
            throw InvalidTopology("branch " + std::to_string(br.from) + "-" +
                                  std::to_string(br.to) + " needs reactance_x > 0");
    }
    std::set<int> gen_buses;
    for (const auto& g : c.gens) {
        if (!ids.count(g.bus))
            throw InvalidTopology("generator references unknown bus " + std::to_string(g.bus));
        gen_buses.insert(g.bus);
    }
    bool any_gen_bus = std::any_of(c.buses.begin(), c.buses.end(), [](const BusRecord& b) {
        return b.kind == BusKind::generator;
    });
    if (!any_gen_bus)
        throw InvalidTopology("case has no generator bus");
    for (auto& b : c.buses) {
        if (b.kind == BusKind::generator && !gen_buses.count(b.id))
            throw InvalidTopology("voltage-regulated bus " + std::to_string(b.id) +
                                  " has no generator record");
        if (b.kind == BusKind::generator && (b.p_demand != 0.0 || b.q_demand != 0.0)) {
            warn(w, "demand at voltage-regulated bus " + std::to_string(b.id) + " ignored");
            b.p_demand = 0.0;
            b.q_demand = 0.0;
        }
    }

    // merge parallel branches: susceptances add, charging adds
    std::map<std::pair<int, int>, BranchRecord> merged;
    for (const auto& br : c.branches) {
        auto key = std::minmax(br.from, br.to);
        auto it = merged.find(key);
        if (it == merged.end()) {
            BranchRecord r = br;
            r.from = key.first;
            r.to = key.second;
            merged.emplace(key, r);
        } else {
            warn(w, "merging parallel branch " + std::to_string(key.first) + "-" +
                        std::to_string(key.second));
            BranchRecord& r = it->second;
            r.reactance_x = 1.0 / (1.0 / r.reactance_x + 1.0 / br.reactance_x);
            r.charging_b += br.charging_b;
        }
    }
    c.branches.clear();
    for (const auto& [key, r] : merged) c.branches.push_back(r);

    std::sort(c.buses.begin(), c.buses.end(),
              [](const BusRecord& a, const BusRecord& b) { return a.id < b.id; });
    std::sort(c.gens.begin(), c.gens.end(),
              [](const GenRecord& a, const GenRecord& b) { return a.bus < b.bus; });
    return c;
}

// ---------------------------------------------------------------------------
// MATPOWER parser
// ---------------------------------------------------------------------------

std::string strip_comments(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_comment = false;
    for (char ch : text) {
        if (ch == '%') in_comment = true;
        if (ch == '\n') in_comment = false;
        out.push_back(in_comment ? ' ' : ch);
    }
    return out;
}

// Extracts the bracketed numeric matrix following "mpc.<name> = [".
std::vector<std::vector<double>> parse_matrix(const std::string& text, const std::string& name) {
    const std::string key = "mpc." + name;
    size_t pos = text.find(key);
    while (pos != std::string::npos) {
        size_t after = pos + key.size();
        if (after < text.size() && (std::isalnum(static_cast<unsigned char>(text[after])) ||
                                    text[after] == '_')) {
            pos = text.find(key, after);
            continue;
        }
        break;
    }
    if (pos == std::string::npos)
        throw MalformedCase("missing required section " + key);
    size_t open = text.find('[', pos);
    if (open == std::string::npos)
        throw MalformedCase("section " + key + " has no matrix");
    size_t close = text.find(']', open);
    if (close == std::string::npos)
        throw MalformedCase("section " + key + " is not closed");

    std::vector<std::vector<double>> rows;
    std::vector<double> row;
    std::string tok;
    auto flush_token = [&]() {
        if (tok.empty()) return;
        size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            throw MalformedCase("non-numeric token '" + tok + "' in " + key);
        }
        if (used != tok.size())
            throw MalformedCase("non-numeric token '" + tok + "' in " + key);
        row.push_back(v);
        tok.clear();
    };
    auto flush_row = [&]() {
        flush_token();
        if (!row.empty()) {
            rows.push_back(row);
            row.clear();
        }
    };
    for (size_t i = open + 1; i < close; ++i) {
        char ch = text[i];
        if (ch == ';' || ch == '\n') {
            flush_row();
        } else if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',') {
            flush_token();
        } else {
            tok.push_back(ch);
        }
    }
    flush_row();
    if (rows.empty())
        throw MalformedCase("section " + key + " is empty");
    for (const auto& r : rows)
        if (r.size() != rows.front().size())
            throw MalformedCase("ragged rows in " + key);
    return rows;
}

double parse_scalar(const std::string& text, const std::string& name) {
    const std::string key = "mpc." + name;
    size_t pos = text.find(key);
    if (pos == std::string::npos)
        throw MalformedCase("missing required section " + key);
    size_t eq = text.find('=', pos);
    if (eq == std::string::npos)
        throw MalformedCase("section " + key + " has no value");
    std::istringstream in(text.substr(eq + 1));
    double v = 0.0;
    if (!(in >> v))
        throw MalformedCase("section " + key + " has a non-numeric value");
    return v;
}

} // namespace

const BusRecord& GridCase::bus_by_id(int id) const {
    for (const auto& b : buses)
        if (b.id == id) return b;
    throw InvalidTopology("unknown bus id " + std::to_string(id));
}

GridCase parse_matpower_case(std::istream& text, ParseWarnings* warnings) {
    std::ostringstream ss;
    ss << text.rdbuf();
    return parse_matpower_case(ss.str(), warnings);
}

GridCase parse_matpower_case(const std::string& raw, ParseWarnings* warnings) {
    const std::string text = strip_comments(raw);
    GridCase c;
    c.base_mva = parse_scalar(text, "baseMVA");
    if (!(c.base_mva > 0.0))
        throw MalformedCase("baseMVA must be positive");

    auto bus_rows = parse_matrix(text, "bus");
    auto gen_rows = parse_matrix(text, "gen");
    auto branch_rows = parse_matrix(text, "branch");

    if (bus_rows.front().size() < 6)
        throw MalformedCase("bus matrix needs at least 6 columns (BUS_I..BS)");
    if (gen_rows.front().size() < 6)
        throw MalformedCase("gen matrix needs at least 6 columns (GEN_BUS..VG)");
    if (branch_rows.front().size() < 5)
        throw MalformedCase("branch matrix needs at least 5 columns (F_BUS..BR_B)");

    std::set<int> gen_bus_set;
    for (const auto& r : gen_rows) gen_bus_set.insert(static_cast<int>(r[0]));

    bool warned_gs = false;
    for (const auto& r : bus_rows) {
        BusRecord b;
        b.id = static_cast<int>(r[0]);
        int type = static_cast<int>(r[1]);
        if (type == 1) {
            b.kind = BusKind::load;
        } else if (type == 2 || type == 3) {
            b.kind = BusKind::generator;
        } else {
            throw MalformedCase("unsupported bus type " + std::to_string(type) + " at bus " +
                                std::to_string(b.id));
        }
        b.p_demand = r[2] / c.base_mva;
        b.q_demand = r[3] / c.base_mva;
        if (r[4] != 0.0 && !warned_gs) {
            warn(warnings, "shunt conductance GS ignored (lossless model)");
            warned_gs = true;
        }
        b.shunt_b = r[5] / c.base_mva;
        c.buses.push_back(b);
    }

    std::map<int, BusRecord*> by_id;
    for (auto& b : c.buses) by_id[b.id] = &b;

    for (const auto& r : gen_rows) {
        GenRecord g;
        g.bus = static_cast<int>(r[0]);
        g.p_gen = r[1] / c.base_mva;
        g.v_setpoint = r[5];
        auto it = by_id.find(g.bus);
        if (it == by_id.end())
            throw InvalidTopology("generator references unknown bus " + std::to_string(g.bus));
        if (it->second->kind == BusKind::load) {
            warn(warnings, "generator record at load (type 1) bus " + std::to_string(g.bus) +
                               " dropped");
            continue;
        }
        // several units at one bus: schedules add, set-points must agree
        bool dup = false;
        for (auto& prev : c.gens) {
            if (prev.bus == g.bus) {
                if (prev.v_setpoint != g.v_setpoint)
                    warn(warnings, "conflicting set-points at bus " + std::to_string(g.bus) +
                                       "; keeping the first");
                prev.p_gen += g.p_gen;
                dup = true;
                break;
            }
        }
        if (dup) continue;
        it->second->v_setpoint = g.v_setpoint;
        c.gens.push_back(g);
    }

    double worst_rx = 0.0;
    for (const auto& r : branch_rows) {
        BranchRecord br;
        br.from = static_cast<int>(r[0]);
        br.to = static_cast<int>(r[1]);
        const double resistance = r[2];
        br.reactance_x = r[3];
        br.charging_b = r[4];
        if (br.reactance_x > 0.0)
            worst_rx = std::max(worst_rx, resistance / br.reactance_x);
        c.branches.push_back(br);
    }
    if (worst_rx > 0.25)
        warn(warnings, "branch resistance discarded although r/x reaches " +
                           std::to_string(worst_rx) + "; lossless model may be inaccurate");

    return finalize_case(std::move(c), warnings);
}

// ---------------------------------------------------------------------------
// Native format (JSON document with the type field names)
// ---------------------------------------------------------------------------

namespace {

double get_num(const nlohmann::json& j, const char* key, double fallback,
               bool required = false) {
    if (!j.contains(key)) {
        if (required) throw MalformedCase(std::string("missing field ") + key);
        return fallback;
    }
    if (!j[key].is_number())
        throw MalformedCase(std::string("field ") + key + " must be a number");
    return j[key].get<double>();
}

} // namespace

GridCase parse_native_case(std::istream& text, ParseWarnings* warnings) {
    std::ostringstream ss;
    ss << text.rdbuf();
    return parse_native_case(ss.str(), warnings);
}

GridCase parse_native_case(const std::string& text, ParseWarnings* warnings) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedCase(std::string("native case is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("base_mva") || !j.contains("buses") ||
        !j.contains("branches") || !j.contains("gens"))
        throw MalformedCase("native case needs base_mva, buses, branches, gens");

    GridCase c;
    c.base_mva = get_num(j, "base_mva", 0.0, true);
    for (const auto& jb : j["buses"]) {
        BusRecord b;
        b.id = static_cast<int>(get_num(jb, "id", 0.0, true));
        std::string kind = jb.value("kind", "");
        if (kind == "load") {
            b.kind = BusKind::load;
        } else if (kind == "generator") {
            b.kind = BusKind::generator;
        } else {
            throw MalformedCase("bus " + std::to_string(b.id) + " has kind '" + kind + "'");
        }
        b.p_demand = get_num(jb, "p_demand", 0.0);
        b.q_demand = get_num(jb, "q_demand", 0.0);
        b.shunt_b = get_num(jb, "shunt_b", 0.0);
        b.v_setpoint = get_num(jb, "v_setpoint", 1.0);
        c.buses.push_back(b);
    }
    for (const auto& jb : j["branches"]) {
        BranchRecord br;
        br.from = static_cast<int>(get_num(jb, "from", 0.0, true));
        br.to = static_cast<int>(get_num(jb, "to", 0.0, true));
        br.reactance_x = get_num(jb, "reactance_x", 0.0, true);
        br.charging_b = get_num(jb, "charging_b", 0.0);
        c.branches.push_back(br);
    }
    for (const auto& jg : j["gens"]) {
        GenRecord g;
        g.bus = static_cast<int>(get_num(jg, "bus", 0.0, true));
        g.p_gen = get_num(jg, "p_gen", 0.0);
        g.v_setpoint = get_num(jg, "v_setpoint", 1.0);
        c.gens.push_back(g);
    }
    return finalize_case(std::move(c), warnings);
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string write_native_case(const GridCase& c) {
    std::ostringstream out;
    out << "{\n  \"base_mva\": " << format_number(c.base_mva) << ",\n  \"buses\": [\n";
    for (size_t i = 0; i < c.buses.size(); ++i) {
        const auto& b = c.buses[i];
        out << "    {\"id\": " << b.id << ", \"kind\": \""
            << (b.kind == BusKind::load ? "load" : "generator")
            << "\", \"p_demand\": " << format_number(b.p_demand)
            << ", \"q_demand\": " << format_number(b.q_demand)
            << ", \"shunt_b\": " << format_number(b.shunt_b)
            << ", \"v_setpoint\": " << format_number(b.v_setpoint) << "}"
            << (i + 1 < c.buses.size() ? "," : "") << "\n";
    }
    out << "  ],\n  \"branches\": [\n";
    for (size_t i = 0; i < c.branches.size(); ++i) {
        const auto& br = c.branches[i];
        out << "    {\"from\": " << br.from << ", \"to\": " << br.to
            << ", \"reactance_x\": " << format_number(br.reactance_x)
            << ", \"charging_b\": " << format_number(br.charging_b) << "}"
            << (i + 1 < c.branches.size() ? "," : "") << "\n";
    }
    out << "  ],\n  \"gens\": [\n";
    for (size_t i = 0; i < c.gens.size(); ++i) {
        const auto& g = c.gens[i];
        out << "    {\"bus\": " << g.bus << ", \"p_gen\": " << format_number(g.p_gen)
            << ", \"v_setpoint\": " << format_number(g.v_setpoint) << "}"
            << (i + 1 < c.gens.size() ? "," : "") << "\n";
    }
    out << "  ]\n}\n";
    return out.str();
}

} // namespace gridstress
