#pragma once

// Run configuration: a flat INI dialect (sections, key = value, comma lists,
// # or ; comments), typed lookup with line-numbered errors, and the
// translation into a grid plus problem definition.

#include "ccfold/continuation.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ccfold::app {

using Json = nlohmann::ordered_json;

struct GridConfig {
    int dim = 1;
    std::vector<double> lengths{1.0};
    std::vector<int> n{127};
};

struct ProblemConfig {
    int m = 1;
    int space_dim = 0; // 0: grid dimension
    std::vector<double> q{0.5};
    std::vector<double> a{1.0};
    std::string family = "scalar-power";
    double b = 1.0;
    std::vector<double> b_diag{0.0};
    double gamma = 3.0;
    double gamma0 = 0.0; // 0: gamma
    double c0 = 0.0, c1 = 0.0, c2 = 0.0, c3 = 0.0;
    std::vector<double> knots;
    std::map<std::string, std::vector<double>> table; // values_i_j / slopes_i_j
    std::map<int, std::vector<double>> a_nodes;       // per-node a_i, overrides a
    std::vector<double> b_nodes;                      // per-node b, overrides b
};

struct SolverConfig {
    double tol_newton = 1e-10;
    int max_newton_iter = 50;
    double delta_floor = -1.0;
    double ds0 = 0.02;
    double ds_max = 0.05;
    double ds_min_factor = 1e-6;
    double lambda_min = 0.0;
    double lambda_max = std::numeric_limits<double>::infinity();
    double arclength_budget = 50.0;
    double post_fold_arclength = 2.0;
    int max_steps = 2000;
    double stability_tol = -1.0;
    double fold_tol_F = 1e-10;
    double fold_tol_Fv = 1e-8;
    int fold_max_iter = 40;
    int probe_trials = 100;
    int nonexistence_seeds = 20;
};

struct OutputConfig {
    std::string dir = "out";
    std::vector<std::string> formats{"csv", "json"};
    bool write_states = true;
};

struct RunConfig {
    std::uint64_t seed = 1;
    GridConfig grid;
    ProblemConfig problem;
    SolverConfig solver;
    OutputConfig output;
    std::vector<int> sweep_n{31, 63, 127};
    std::vector<std::string> defaults_used; // keys absent from the file

    [[nodiscard]] bool wants(const std::string& fmt) const
    {
        return std::find(output.formats.begin(), output.formats.end(), fmt) != output.formats.end();
    }
};

namespace detail {

struct Entry {
    std::string value;
    int line = 0;
};

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

inline bool is_table_key(const std::string& key)
{
    auto numbered = [&](const std::string& prefix, int parts) {
        if (key.rfind(prefix, 0) != 0) return false;
        const std::string rest = key.substr(prefix.size());
        int count = 0;
        std::stringstream ss(rest);
        std::string piece;
        while (std::getline(ss, piece, '_')) {
            if (piece.empty() || piece.find_first_not_of("0123456789") != std::string::npos) return false;
            ++count;
        }
        return count == parts;
    };
    return numbered("problem.values_", 2) || numbered("problem.slopes_", 2) ||
           numbered("problem.a_nodes_", 1);
}

inline const std::set<std::string>& known_keys()
{
    static const std::set<std::string> keys{
        "seed",
        "grid.dim", "grid.lengths", "grid.n",
        "problem.m", "problem.space_dim", "problem.q", "problem.a", "problem.family", "problem.b",
        "problem.b_diag", "problem.gamma", "problem.gamma0", "problem.c0", "problem.c1",
        "problem.c2", "problem.c3", "problem.knots", "problem.b_nodes",
        "solver.tol_newton", "solver.max_newton_iter", "solver.delta_floor", "solver.ds0",
        "solver.ds_max", "solver.ds_min_factor", "solver.lambda_min", "solver.lambda_max",
        "solver.arclength_budget", "solver.post_fold_arclength", "solver.max_steps",
        "solver.stability_tol", "solver.fold_tol_F", "solver.fold_tol_Fv", "solver.fold_max_iter",
        "solver.probe_trials", "solver.nonexistence_seeds",
        "output.dir", "output.formats", "output.write_states",
        "sweep.n_values"};
    return keys;
}

class Reader {
public:
    explicit Reader(std::map<std::string, Entry> entries) : e_(std::move(entries)) {}

    template <class T>
    void get(const std::string& key, T& out, std::vector<std::string>& defaults)
    {
        const auto it = e_.find(key);
        if (it == e_.end()) {
            defaults.push_back(key);
            return;
        }
        out = convert<T>(it->second, key);
    }

    template <class T>
    T convert(const Entry& en, const std::string& key) const
    {
        if constexpr (std::is_same_v<T, std::string>) {
            return en.value;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (en.value == "true") return true;
            if (en.value == "false") return false;
            fail(en, key, "expected true or false");
        } else if constexpr (std::is_same_v<T, double>) {
            return to_double(en, key, en.value);
        } else if constexpr (std::is_same_v<T, int>) {
            return static_cast<int>(to_integer(en, key, en.value));
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!en.value.empty() && en.value[0] == '-') fail(en, key, "expected a non-negative integer");
            return static_cast<std::uint64_t>(to_integer(en, key, en.value));
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            std::vector<double> v;
            for (const auto& s : split_list(en.value)) v.push_back(to_double(en, key, s));
            return v;
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
            std::vector<int> v;
            for (const auto& s : split_list(en.value)) v.push_back(static_cast<int>(to_integer(en, key, s)));
            return v;
        } else {
            std::vector<std::string> v = split_list(en.value);
            return v;
        }
    }

    [[nodiscard]] const std::map<std::string, Entry>& entries() const { return e_; }

private:
    [[noreturn]] static void fail(const Entry& en, const std::string& key, const std::string& what)
    {
        throw Error(ErrorCode::TypeError,
                    "line " + std::to_string(en.line) + ": " + key + " = '" + en.value + "': " + what);
    }
    static double to_double(const Entry& en, const std::string& key, const std::string& s)
    {
        if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || *end != '\0' || !std::isfinite(v)) fail(en, key, "expected a real number");
        return v;
    }
    static long long to_integer(const Entry& en, const std::string& key, const std::string& s)
    {
        char* end = nullptr;
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (s.empty() || *end != '\0') fail(en, key, "expected an integer");
        return v;
    }

    std::map<std::string, Entry> e_;
};

} // namespace detail

/// Parses configuration text. Unknown keys, duplicate keys and malformed
/// values are rejected with the offending line.
inline RunConfig parse_config(const std::string& text)
{
    std::map<std::string, detail::Entry> entries;
    std::stringstream in(text);
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto cut = raw.find_first_of("#;");
        const std::string s = detail::trim(cut == std::string::npos ? raw : raw.substr(0, cut));
        if (s.empty()) continue;
        if (s.front() == '[') {
            CCFOLD_THROW_IF(s.back() != ']', ErrorCode::TypeError,
                            "line " + std::to_string(line) + ": malformed section header");
            section = detail::trim(s.substr(1, s.size() - 2));
            continue;
        }
        const auto eq = s.find('=');
        CCFOLD_THROW_IF(eq == std::string::npos, ErrorCode::TypeError,
                        "line " + std::to_string(line) + ": expected key = value");
        const std::string key = (section.empty() ? "" : section + ".") + detail::trim(s.substr(0, eq));
        CCFOLD_THROW_IF(!detail::known_keys().count(key) && !detail::is_table_key(key),
                        ErrorCode::UnknownKey, "line " + std::to_string(line) + ": unknown key '" + key + "'");
        CCFOLD_THROW_IF(entries.count(key), ErrorCode::InvariantViolation,
                        "line " + std::to_string(line) + ": duplicate key '" + key + "'");
        entries[key] = {detail::trim(s.substr(eq + 1)), line};
    }

    RunConfig c;
    detail::Reader r(entries);
    auto& d = c.defaults_used;
    r.get("seed", c.seed, d);
    r.get("grid.dim", c.grid.dim, d);
    r.get("grid.lengths", c.grid.lengths, d);
    r.get("grid.n", c.grid.n, d);
    auto& P = c.problem;
    r.get("problem.m", P.m, d);
    r.get("problem.space_dim", P.space_dim, d);
    r.get("problem.q", P.q, d);
    r.get("problem.a", P.a, d);
    r.get("problem.family", P.family, d);
    r.get("problem.b", P.b, d);
    r.get("problem.b_diag", P.b_diag, d);
    r.get("problem.gamma", P.gamma, d);
    r.get("problem.gamma0", P.gamma0, d);
    r.get("problem.c0", P.c0, d);
    r.get("problem.c1", P.c1, d);
    r.get("problem.c2", P.c2, d);
    r.get("problem.c3", P.c3, d);
    r.get("problem.knots", P.knots, d);
    r.get("problem.b_nodes", P.b_nodes, d);
    for (const auto& [key, en] : entries) {
        if (!detail::is_table_key(key)) continue;
        const std::string name = key.substr(std::string("problem.").size());
        if (name.rfind("a_nodes_", 0) == 0)
            P.a_nodes[std::stoi(name.substr(8))] = r.convert<std::vector<double>>(en, key);
        else
            P.table[name] = r.convert<std::vector<double>>(en, key);
    }
    auto& S = c.solver;
    r.get("solver.tol_newton", S.tol_newton, d);
    r.get("solver.max_newton_iter", S.max_newton_iter, d);
    r.get("solver.delta_floor", S.delta_floor, d);
    r.get("solver.ds0", S.ds0, d);
    r.get("solver.ds_max", S.ds_max, d);
    r.get("solver.ds_min_factor", S.ds_min_factor, d);
    r.get("solver.lambda_min", S.lambda_min, d);
    r.get("solver.lambda_max", S.lambda_max, d);
    r.get("solver.arclength_budget", S.arclength_budget, d);
    r.get("solver.post_fold_arclength", S.post_fold_arclength, d);
    r.get("solver.max_steps", S.max_steps, d);
    r.get("solver.stability_tol", S.stability_tol, d);
    r.get("solver.fold_tol_F", S.fold_tol_F, d);
    r.get("solver.fold_tol_Fv", S.fold_tol_Fv, d);
    r.get("solver.fold_max_iter", S.fold_max_iter, d);
    r.get("solver.probe_trials", S.probe_trials, d);
    r.get("solver.nonexistence_seeds", S.nonexistence_seeds, d);
    r.get("output.dir", c.output.dir, d);
    r.get("output.formats", c.output.formats, d);
    r.get("output.write_states", c.output.write_states, d);
    r.get("sweep.n_values", c.sweep_n, d);

    for (const auto& f : c.output.formats)
        CCFOLD_THROW_IF(f != "csv" && f != "json", ErrorCode::InvariantViolation,
                        "output.formats accepts csv and json, got '" + f + "'");
    CCFOLD_THROW_IF(!(S.tol_newton > 0.0), ErrorCode::InvariantViolation, "solver.tol_newton must be > 0");
    CCFOLD_THROW_IF(S.max_newton_iter < 1 || S.max_steps < 0 || S.fold_max_iter < 1,
                    ErrorCode::InvariantViolation, "iteration limits must be positive");
    CCFOLD_THROW_IF(!(S.ds0 > 0.0 && S.ds_max >= S.ds0), ErrorCode::InvariantViolation,
                    "need 0 < solver.ds0 <= solver.ds_max");
    CCFOLD_THROW_IF(S.probe_trials < 1 || S.nonexistence_seeds < 0, ErrorCode::InvariantViolation,
                    "solver.probe_trials must be >= 1 and solver.nonexistence_seeds >= 0");
    return c;
}

inline RunConfig load_config(const std::string& path)
{
    std::ifstream f(path);
    CCFOLD_THROW_IF(!f, ErrorCode::Io, "cannot read config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

struct ProblemSetup {
    Grid grid;
    ProblemSpec problem;
};

/// Grid and problem from a config; runs the model's invariant checks.
inline ProblemSetup build_setup(const RunConfig& c)
{
    ProblemSetup s;
    s.grid = build_grid(c.grid.dim, c.grid.lengths, c.grid.n);
    const Grid& g = s.grid;
    const Index N = g.size();
    const auto& P = c.problem;
    CCFOLD_THROW_IF(P.m < 1, ErrorCode::InvariantViolation, "problem.m must be >= 1");
    const auto mm = static_cast<std::size_t>(P.m);
    auto per_component = [&](const std::vector<double>& v, const char* name) {
        CCFOLD_THROW_IF(v.size() != 1 && v.size() != mm, ErrorCode::ShapeError,
                        std::string(name) + " needs 1 or m entries");
        return v.size() == 1 ? std::vector<double>(mm, v[0]) : v;
    };
    auto nodal = [&](const std::vector<double>& v, const std::string& name) {
        CCFOLD_THROW_IF(static_cast<Index>(v.size()) != N, ErrorCode::ShapeError,
                        name + " needs one value per interior node (" + std::to_string(N) + ")");
        return GridField(Eigen::Map<const GridField>(v.data(), N));
    };

    ProblemSpec& p = s.problem;
    p.m = P.m;
    p.space_dim = P.space_dim > 0 ? P.space_dim : g.dim();
    p.q = per_component(P.q, "problem.q");
    const std::vector<double> a = per_component(P.a, "problem.a");
    for (std::size_t i = 0; i < mm; ++i) {
        const auto it = P.a_nodes.find(static_cast<int>(i));
        p.a.push_back(it != P.a_nodes.end() ? nodal(it->second, "problem.a_nodes_" + std::to_string(i))
                                             : GridField::Constant(N, a[i]));
    }
    for (const auto& [i, v] : P.a_nodes)
        CCFOLD_THROW_IF(i < 0 || i >= P.m, ErrorCode::ShapeError,
                        "problem.a_nodes_" + std::to_string(i) + " names no component");
    const GridField b = P.b_nodes.empty() ? GridField::Constant(N, P.b) : nodal(P.b_nodes, "problem.b_nodes");
    p.gamma = P.gamma;
    p.gamma0 = P.gamma0 > 0.0 ? P.gamma0 : P.gamma;
    p.c0 = P.c0;
    p.c1 = P.c1;
    p.c2 = P.c2;
    p.c3 = P.c3;

    if (P.family == "scalar-power") {
        p.family = ScalarPower{b};
    } else if (P.family == "power-coupled") {
        std::vector<GridField> bd;
        for (double x : per_component(P.b_diag, "problem.b_diag")) bd.push_back(GridField::Constant(N, x));
        p.family = PowerCoupled{std::move(bd), b};
    } else if (P.family == "custom-table") {
        CustomTable ct;
        ct.knots = P.knots;
        ct.b = b;
        for (int i = 0; i < P.m; ++i)
            for (int j = 0; j < P.m; ++j) {
                const std::string ij = std::to_string(i) + "_" + std::to_string(j);
                const auto v = P.table.find("values_" + ij), d = P.table.find("slopes_" + ij);
                CCFOLD_THROW_IF(v == P.table.end() || d == P.table.end(), ErrorCode::ShapeError,
                                "custom table needs problem.values_" + ij + " and problem.slopes_" + ij);
                ct.values.push_back(v->second);
                ct.slopes.push_back(d->second);
            }
        for (const auto& [key, v] : P.table) {
            const auto us = key.find('_');
            const std::string ij = key.substr(us + 1);
            const int i = std::stoi(ij.substr(0, ij.find('_'))), j = std::stoi(ij.substr(ij.find('_') + 1));
            CCFOLD_THROW_IF(i >= P.m || j >= P.m, ErrorCode::ShapeError,
                            "problem." + key + " is outside the m x m table");
        }
        p.family = std::move(ct);
    } else {
        throw Error(ErrorCode::InvariantViolation,
                    "problem.family must be scalar-power, power-coupled or custom-table, got '" +
                        P.family + "'");
    }
    validate_spec(p, g);
    if (const auto* ct = std::get_if<CustomTable>(&p.family)) {
        const TableConsistency tc = check_table_consistency(*ct);
        CCFOLD_THROW_IF(!tc.pass, ErrorCode::InvariantViolation,
                        "custom table slopes disagree with value secants (relative mismatch " +
                            fmt_num(tc.worst_mismatch) + ")");
    }
    return s;
}

/// Every effective setting, in a fixed order; the basis of the config hash.
inline Json effective_json(const RunConfig& c)
{
    Json j;
    j["seed"] = c.seed;
    j["grid"] = {{"dim", c.grid.dim}, {"lengths", c.grid.lengths}, {"n", c.grid.n}};
    const auto& P = c.problem;
    Json pj = {{"m", P.m},         {"space_dim", P.space_dim}, {"q", P.q},
               {"a", P.a},         {"family", P.family},       {"b", P.b},
               {"b_diag", P.b_diag}, {"gamma", P.gamma},       {"gamma0", P.gamma0},
               {"c0", P.c0},       {"c1", P.c1},               {"c2", P.c2},
               {"c3", P.c3},       {"knots", P.knots},         {"b_nodes", P.b_nodes}};
    for (const auto& [k, v] : P.table) pj[k] = v;
    for (const auto& [i, v] : P.a_nodes) pj["a_nodes_" + std::to_string(i)] = v;
    j["problem"] = pj;
    const auto& S = c.solver;
    // infinity has no JSON literal; spell it
    auto real = [](double x) { return std::isinf(x) ? Json(x > 0 ? "inf" : "-inf") : Json(x); };
    j["solver"] = {{"tol_newton", S.tol_newton},
                   {"max_newton_iter", S.max_newton_iter},
                   {"delta_floor", S.delta_floor},
                   {"ds0", S.ds0},
                   {"ds_max", S.ds_max},
                   {"ds_min_factor", S.ds_min_factor},
                   {"lambda_min", real(S.lambda_min)},
                   {"lambda_max", real(S.lambda_max)},
                   {"arclength_budget", real(S.arclength_budget)},
                   {"post_fold_arclength", real(S.post_fold_arclength)},
                   {"max_steps", S.max_steps},
                   {"stability_tol", S.stability_tol},
                   {"fold_tol_F", S.fold_tol_F},
                   {"fold_tol_Fv", S.fold_tol_Fv},
                   {"fold_max_iter", S.fold_max_iter},
                   {"probe_trials", S.probe_trials},
                   {"nonexistence_seeds", S.nonexistence_seeds}};
    j["output"] = {{"dir", c.output.dir}, {"formats", c.output.formats}, {"write_states", c.output.write_states}};
    j["sweep"] = {{"n_values", c.sweep_n}};
    return j;
}

/// 64-bit FNV-1a, hex.
inline std::string fnv1a_hex(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Hash of the settings a traced branch depends on (grid, problem, solver).
inline std::string branch_hash(const RunConfig& c)
{
    const Json j = effective_json(c);
    return fnv1a_hex(Json{{"grid", j["grid"]}, {"problem", j["problem"]}, {"solver", j["solver"]}}.dump());
}

inline ContinuationOptions continuation_options(const RunConfig& c)
{
    const auto& S = c.solver;
    ContinuationOptions o;
    o.tol = S.tol_newton;
    o.ds0 = S.ds0;
    o.ds_max = S.ds_max;
    o.ds_min_factor = S.ds_min_factor;
    o.lambda_min = S.lambda_min;
    o.lambda_max = S.lambda_max;
    o.arclength_budget = S.arclength_budget;
    o.post_fold_arclength = S.post_fold_arclength;
    o.max_steps = S.max_steps;
    o.stability_tol = S.stability_tol;
    o.eig.seed = c.seed + 6;
    return o;
}

inline NewtonOptions newton_options(const RunConfig& c)
{
    NewtonOptions o;
    o.tol = c.solver.tol_newton;
    o.max_iter = c.solver.max_newton_iter;
    o.delta_floor = c.solver.delta_floor;
    return o;
}

} // namespace ccfold::app
