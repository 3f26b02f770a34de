#pragma once

// Subcommands behind the command-line tool. Each takes a resolved config,
// writes its artifacts under the output directory and reports through the
// run manifest. Exit codes: 0 success, 2 bad configuration, 3 solver
// failure, 4 verification failure.

#include "ccfold/app/config.hpp"
#include "ccfold/app/io.hpp"

#include <chrono>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifndef CCFOLD_VERSION
#define CCFOLD_VERSION "0.0.0"
#endif

namespace ccfold::app {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitSolver = 3, kExitVerify = 4 };

struct CommandArgs {
    std::string command;
    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> tol_newton;
    std::optional<int> max_steps;
    std::optional<double> lambda_max;
    int point = -1; // quotient: branch index, -1 for the fold state
};

/// Command-line overrides replace file values and count as explicitly set.
inline void apply_overrides(RunConfig& c, const CommandArgs& a)
{
    auto set = [&](const std::string& key) {
        std::erase(c.defaults_used, key);
    };
    if (a.out_dir) { c.output.dir = *a.out_dir; set("output.dir"); }
    if (a.seed) { c.seed = *a.seed; set("seed"); }
    if (a.tol_newton) {
        CCFOLD_THROW_IF(!(*a.tol_newton > 0.0), ErrorCode::InvariantViolation, "--tol-newton must be > 0");
        c.solver.tol_newton = *a.tol_newton;
        set("solver.tol_newton");
    }
    if (a.max_steps) {
        CCFOLD_THROW_IF(*a.max_steps < 0, ErrorCode::InvariantViolation, "--max-steps must be >= 0");
        c.solver.max_steps = *a.max_steps;
        set("solver.max_steps");
    }
    if (a.lambda_max) { c.solver.lambda_max = *a.lambda_max; set("solver.lambda_max"); }
}

class Context {
public:
    Context(RunConfig cfg, ProblemSetup setup) : cfg(std::move(cfg)), setup(std::move(setup)), out(this->cfg.output.dir) {}

    RunConfig cfg;
    ProblemSetup setup;
    fs::path out;
    std::vector<std::string> outputs;

    [[nodiscard]] const Grid& g() const { return setup.grid; }
    [[nodiscard]] const ProblemSpec& p() const { return setup.problem; }

    void emit(const std::string& name, const std::string& content)
    {
        write_atomic(out / name, content);
        outputs.push_back(name);
    }
    void emit_json(const std::string& name, const Json& j)
    {
        if (cfg.wants("json")) emit(name, j.dump(2) + "\n");
    }
    void emit_csv(const std::string& name, const Csv& csv)
    {
        if (cfg.wants("csv")) emit(name, csv.str());
    }
};

// -- helpers -------------------------------------------------------------------

inline std::vector<std::string> coord_header(const Grid& g)
{
    return g.dim() == 2 ? std::vector<std::string>{"node", "x", "y"} : std::vector<std::string>{"node", "x"};
}

inline std::vector<std::string> coord_cells(const Grid& g, Index k)
{
    const auto& c = g.coords()[static_cast<std::size_t>(k)];
    std::vector<std::string> row{std::to_string(k), exact(c[0])};
    if (g.dim() == 2) row.push_back(exact(c[1]));
    return row;
}

/// Node table with one column per component of each field.
inline Csv field_table(const Grid& g, const std::vector<std::pair<std::string, const StateVector*>>& fields)
{
    std::vector<std::string> head = coord_header(g);
    for (const auto& [name, s] : fields)
        for (int i = 0; i < s->components(); ++i) head.push_back(name + "_" + std::to_string(i));
    Csv csv(head);
    for (Index k = 0; k < g.size(); ++k) {
        std::vector<std::string> row = coord_cells(g, k);
        for (const auto& [name, s] : fields)
            for (int i = 0; i < s->components(); ++i) row.push_back(exact((*s)(i, k)));
        csv.row_strings(row);
    }
    return csv;
}

inline Json real_or_string(double x)
{
    if (std::isfinite(x)) return x;
    return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
}

inline Json grid_json(const Grid& g)
{
    Json n = Json::array(), h = Json::array();
    for (int k = 0; k < g.dim(); ++k) {
        n.push_back(g.n(k));
        h.push_back(g.h(k));
    }
    return {{"dim", g.dim()}, {"n", n}, {"h", h}};
}

// -- baseline --------------------------------------------------------------------

inline Json run_baseline(Context& ctx)
{
    const BaselineResult b = baseline_state(ctx.p(), ctx.g());
    const auto& r = b.report;
    Json j = {{"lambda1", r.lambda1},
              {"lambda1_tol", r.lambda1_tol},
              {"stable", r.stable},
              {"delta_bar", r.delta_bar},
              {"residuals", r.residuals},
              {"fixed_point_iterations", r.iterations},
              {"energy", energy(ctx.p(), ctx.g(), b.w)},
              {"grid", grid_json(ctx.g())}};
    ctx.emit_csv("baseline.csv", field_table(ctx.g(), {{"w", &b.w}}));
    ctx.emit_json("baseline.json", j);
    std::cout << "baseline: lambda_1 = " << fmt_num(r.lambda1) << ", delta_bar = " << fmt_num(r.delta_bar)
              << "\n";
    return j;
}

// -- branch ----------------------------------------------------------------------

inline void write_branch(Context& ctx, const Branch& br)
{
    Csv table({"s", "lambda", "h1norm", "lgamma0_norm", "lgamma_norm", "lambda1", "stability", "min_u_over_d",
               "residual"});
    for (const auto& b : br.points)
        table.row_strings({exact(b.arclength), exact(b.lambda), exact(b.norms.h1), exact(b.norms.lgamma0),
                           exact(b.norms.lgamma), exact(b.lambda1), to_string(b.stability.kind),
                           exact(b.min_u_over_d), exact(b.residual)});
    ctx.emit_csv("branch.csv", table);

    if (ctx.cfg.output.write_states && ctx.cfg.wants("csv")) {
        std::vector<std::string> head{"point", "s", "lambda", "dlambda_ds"};
        const Index N = br.points.front().state.flat().size();
        for (Index k = 0; k < N; ++k) head.push_back("u" + std::to_string(k));
        Csv states(head);
        for (std::size_t k = 0; k < br.points.size(); ++k) {
            const auto& b = br.points[k];
            std::vector<std::string> row{std::to_string(k), exact(b.arclength), exact(b.lambda),
                                         exact(b.dlambda_ds)};
            for (Index i = 0; i < N; ++i) row.push_back(exact(b.state.flat()[i]));
            states.row_strings(row);
        }
        ctx.emit_csv("branch_states.csv", states);
    }

    std::size_t stable = 0;
    for (const auto& b : br.points) stable += b.stability.kind == Stability::AsymptoticallyStable;
    Json markers = Json::array();
    for (auto k : br.fold_markers) markers.push_back({{"index", k}, {"lambda", br.points[k].lambda}});
    ctx.emit_json("branch.json", {{"config_hash", branch_hash(ctx.cfg)},
                                  {"points", br.points.size()},
                                  {"asymptotically_stable_points", stable},
                                  {"stop_reason", br.stop_reason},
                                  {"fold_markers", markers},
                                  {"lambda_scale", br.lambda_scale},
                                  {"state_scale", br.state_scale},
                                  {"lambda_max_reached", br.points.back().lambda},
                                  {"grid", grid_json(ctx.g())}});
}

/// Rebuilds a branch stored by an earlier run with the same settings.
inline std::optional<Branch> load_branch(const Context& ctx)
{
    const fs::path js = ctx.out / "branch.json", st = ctx.out / "branch_states.csv";
    if (!fs::exists(js) || !fs::exists(st)) return std::nullopt;
    Json meta;
    try {
        meta = Json::parse(read_file(js));
    } catch (const Json::exception&) {
        return std::nullopt;
    }
    if (meta.value("config_hash", std::string()) != branch_hash(ctx.cfg)) return std::nullopt;

    const auto rows = parse_csv_body(read_file(st));
    const int m = ctx.p().m;
    const Index N = static_cast<Index>(m) * ctx.g().size();
    ContinuationOptions o = continuation_options(ctx.cfg);
    Branch br;
    for (const auto& r : rows) {
        if (static_cast<Index>(r.size()) != 4 + N) return std::nullopt;
        Eigen::VectorXd u(N);
        for (Index i = 0; i < N; ++i) u[i] = std::strtod(r[static_cast<std::size_t>(4 + i)].c_str(), nullptr);
        br.points.push_back(make_branch_point(ctx.p(), ctx.g(), StateVector(m, std::move(u)),
                                              std::strtod(r[2].c_str(), nullptr),
                                              std::strtod(r[1].c_str(), nullptr),
                                              std::strtod(r[3].c_str(), nullptr), o));
    }
    if (br.points.empty()) return std::nullopt;
    for (const auto& mk : meta["fold_markers"]) br.fold_markers.push_back(mk["index"].get<std::size_t>());
    br.stop_reason = meta["stop_reason"].get<std::string>();
    br.lambda_scale = meta["lambda_scale"].get<double>();
    br.state_scale = meta["state_scale"].get<double>();
    return br;
}

inline Branch trace(const Context& ctx)
{
    const ContinuationOptions o = continuation_options(ctx.cfg);
    return trace_branch(ctx.p(), ctx.g(), baseline_point(ctx.p(), ctx.g(), o), o);
}

inline Branch run_continue(Context& ctx)
{
    Branch br = trace(ctx);
    write_branch(ctx, br);
    std::cout << "continue: " << br.points.size() << " points, stop reason " << br.stop_reason << ", "
              << br.fold_markers.size() << " fold marker(s)\n";
    return br;
}

/// Stored branch when its settings hash matches, else a fresh trace.
inline Branch obtain_branch(Context& ctx)
{
    if (auto br = load_branch(ctx)) {
        std::cout << "reusing stored branch (" << br->points.size() << " points)\n";
        return std::move(*br);
    }
    return run_continue(ctx);
}

// -- fold ------------------------------------------------------------------------

struct FoldRun {
    FoldBracket bracket;
    FoldPoint fold;
};

inline FoldRun locate_fold(const Context& ctx, const Branch& br)
{
    const auto brackets = detect_fold(br);
    MooreSpenceOptions o;
    o.tol_F = ctx.cfg.solver.fold_tol_F;
    o.tol_Fv = ctx.cfg.solver.fold_tol_Fv;
    o.max_iter = ctx.cfg.solver.fold_max_iter;
    o.eig.seed = ctx.cfg.seed + 6;
    return {brackets.front(), refine_fold_moore_spence(ctx.p(), ctx.g(), br, brackets.front(), o)};
}

inline Json fold_json(const Context& ctx, const FoldRun& f)
{
    const FoldPoint& fp = f.fold;
    const double ft = fold_tol(ctx.g());
    return {{"lambda_star", fp.lambda_star},
            {"residual_F", fp.residual_F},
            {"residual_Fv", fp.residual_Fv},
            {"lambda1_sym", fp.lambda1_sym},
            {"smallest_singular_value", fp.smallest_singular_value},
            {"grid", grid_json(ctx.g())},
            {"normalization_id", fp.normalization_id},
            {"diagnostics",
             {{"lambda1_principal", fp.lambda1_principal},
              {"normalization_error", fp.normalization_error},
              {"iterations", fp.iterations},
              {"fold_tol", ft},
              {"certified", std::abs(fp.lambda1_sym) <= ft && fp.residual_F <= ctx.cfg.solver.fold_tol_F &&
                                fp.residual_Fv <= ctx.cfg.solver.fold_tol_Fv},
              {"bracket",
               {{"lo", f.bracket.lo},
                {"hi", f.bracket.hi},
                {"eigen_lo", f.bracket.eigen_lo},
                {"tangent_lo", f.bracket.tangent_lo}}}}}};
}

inline FoldRun run_fold(Context& ctx, const Branch& br)
{
    FoldRun f = locate_fold(ctx, br);
    ctx.emit_json("fold.json", fold_json(ctx, f));
    ctx.emit_csv("fold_state.csv", field_table(ctx.g(), {{"u", &f.fold.state}, {"v", &f.fold.null_vector}}));
    std::cout << "fold: lambda* = " << exact(f.fold.lambda_star) << ", |F| = " << fmt_num(f.fold.residual_F)
              << ", |F_u v| = " << fmt_num(f.fold.residual_Fv) << "\n";
    return f;
}

// -- quotient --------------------------------------------------------------------

inline Json run_quotient(Context& ctx, const Branch& br, int point)
{
    const ProblemSpec& p = ctx.p();
    const Grid& g = ctx.g();
    StateVector u, v;
    double lambda = 0.0;
    Json where;
    if (point < 0) {
        const FoldRun f = locate_fold(ctx, br);
        u = f.fold.state;
        v = f.fold.null_vector;
        lambda = f.fold.lambda_star;
        where = "fold";
    } else {
        CCFOLD_THROW_IF(static_cast<std::size_t>(point) >= br.points.size(), ErrorCode::ShapeError,
                        "--point " + std::to_string(point) + " is outside the branch (" +
                            std::to_string(br.points.size()) + " points)");
        const BranchPoint& b = br.points[static_cast<std::size_t>(point)];
        u = b.state;
        lambda = b.lambda;
        EigenOptions eo;
        eo.seed = ctx.cfg.seed + 6;
        v = principal_eigenpair(assemble_jacobian(p, g, u, lambda), g, eo).phi;
        where = point;
    }
    const QuotientValue self = rayleigh_extended(p, g, u, u);
    ProbeOptions po;
    po.trials = ctx.cfg.solver.probe_trials;
    po.seed = ctx.cfg.seed;
    po.keep_states = false;
    const InfProbeResult probe = inner_inf_probe(p, g, u, po);
    Json cert = Json::array();
    for (const auto& s : probe.certificate) cert.push_back(s.value);
    const MinimizingSequenceReport ms = minimizing_sequence_test(p, g, u, 20);
    const EquivalenceReport eq = criticality_equivalence_check(p, g, u, v, lambda);
    Json j = {{"point", where},
              {"lambda", lambda},
              {"R_uu", self.value},
              {"denominator", self.denominator},
              {"probe",
               {{"kind", probe.kind == ProbeKind::Constant ? "constant" : "unbounded-below"},
                {"value", probe.value},
                {"spread", probe.spread},
                {"residual", probe.residual},
                {"certificate", cert}}},
              {"minimizing_sequence",
               {{"quotient", ms.quotient},
                {"grad_norm", ms.grad_norm},
                {"full_grad_norm", ms.full_grad_norm},
                {"envelope", ms.envelope},
                {"vanishing", ms.vanishing},
                {"tol", ms.tol}}},
              {"equivalence",
               {{"lambda_gap", eq.lambda_gap},
                {"grad_v", eq.grad_v},
                {"grad_u", eq.grad_u},
                {"residual_F", eq.residual_F},
                {"residual_Fv", eq.residual_Fv},
                {"asymmetry", eq.asymmetry},
                {"K_right_from_left", eq.K_right_from_left},
                {"K_left_from_right", eq.K_left_from_right},
                {"consistent", eq.consistent}}}};
    ctx.emit_json("quotient.json", j);
    std::cout << "quotient: R(u,u) = " << exact(self.value) << ", probe " << j["probe"]["kind"].get<std::string>()
              << "\n";
    return j;
}

// -- verify ----------------------------------------------------------------------

inline Json nonexistence_json(const NonexistenceReport& r)
{
    Json seeds = Json::array();
    for (const auto& s : r.seeds)
        seeds.push_back({{"kind", s.seed_kind},
                         {"scale", s.seed_scale},
                         {"converged", s.converged},
                         {"lambda1", s.lambda1},
                         {"stable", s.stable},
                         {"error", s.error}});
    return {{"lambda", r.lambda},
            {"converged", r.converged},
            {"stable_found", r.stable_found},
            {"falsified", r.falsified},
            {"seeds", seeds}};
}

/// Returns true when every check passes.
inline bool run_verify(Context& ctx, const Branch& br)
{
    const ProblemSpec& p = ctx.p();
    const Grid& g = ctx.g();
    const StateVector w = baseline_state(p, g).w;
    std::optional<FoldRun> f;
    Json fold_note = nullptr;
    try {
        f = locate_fold(ctx, br);
    } catch (const Error& e) {
        fold_note = e.what();
    }
    VerifyOptions vo;
    vo.stability_tol = ctx.cfg.solver.stability_tol;
    const VerifyReport rep = verify_branch(p, g, br, w, f ? &f->fold : nullptr, vo);
    Json checks = Json::array();
    for (const auto& c : rep.checks)
        checks.push_back({{"name", c.name}, {"pass", c.pass}, {"worst", real_or_string(c.worst)}, {"detail", c.detail}});

    bool pass = rep.pass() && f.has_value();
    Json j = {{"pass", false}, {"checks", checks}};
    if (f) {
        const int seeds = ctx.cfg.solver.nonexistence_seeds;
        const auto above = nonexistence_probe(p, g, 1.1 * f->fold.lambda_star, seeds, w, &br, ctx.cfg.seed);
        const auto below = nonexistence_probe(p, g, 0.9 * f->fold.lambda_star, seeds, w, &br, ctx.cfg.seed);
        pass = pass && !above.falsified;
        j["lambda_star"] = f->fold.lambda_star;
        j["nonexistence"] = {{"above", nonexistence_json(above)}, {"below", nonexistence_json(below)}};
    } else {
        j["fold_error"] = fold_note;
    }
    j["pass"] = pass;
    ctx.emit_json("verify.json", j);
    std::cout << "verify: " << (pass ? "pass" : "FAIL") << "\n";
    for (const auto& c : rep.checks)
        if (!c.pass) std::cout << "  failed: " << c.name << " (" << c.detail << ")\n";
    return pass;
}

// -- sweep -----------------------------------------------------------------------

struct SweepLevel {
    int n = 0;
    double h = 0.0;
    double lambda_star = 0.0;
    std::size_t points = 0;
    double residual_F = 0.0;
};

/// Runs continue + fold for every n in sweep.n_values concurrently, each in
/// out/n_<n>/, and estimates the observed order from the finest three levels.
inline Json run_sweep(Context& ctx)
{
    CCFOLD_THROW_IF(ctx.cfg.sweep_n.empty(), ErrorCode::InvariantViolation, "sweep.n_values is empty");
    std::vector<std::future<SweepLevel>> jobs;
    for (int n : ctx.cfg.sweep_n) {
        RunConfig c = ctx.cfg;
        c.grid.n.assign(static_cast<std::size_t>(c.grid.dim), n);
        c.output.dir = (ctx.out / ("n_" + std::to_string(n))).string();
        jobs.push_back(std::async(std::launch::async, [c]() {
            Context sub(c, build_setup(c));
            const Branch br = trace(sub);
            write_branch(sub, br);
            FoldRun f = locate_fold(sub, br);
            sub.emit_json("fold.json", fold_json(sub, f));
            return SweepLevel{c.grid.n[0], sub.g().h(0), f.fold.lambda_star, br.points.size(), f.fold.residual_F};
        }));
    }
    std::vector<SweepLevel> levels;
    for (auto& jb : jobs) levels.push_back(jb.get());

    Json lv = Json::array();
    for (const auto& l : levels) {
        lv.push_back({{"n", l.n}, {"h", l.h}, {"lambda_star", l.lambda_star}, {"points", l.points},
                      {"residual_F", l.residual_F}});
        ctx.outputs.push_back("n_" + std::to_string(l.n) + "/fold.json");
    }
    Json j = {{"levels", lv}};
    if (levels.size() >= 3) {
        auto sorted = levels;
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.h > b.h; });
        const std::size_t k = sorted.size() - 3;
        const double f1 = sorted[k].lambda_star, f2 = sorted[k + 1].lambda_star, f3 = sorted[k + 2].lambda_star;
        const double ratio = sorted[k].h / sorted[k + 1].h;
        const double order = std::log(std::abs((f1 - f2) / (f2 - f3))) / std::log(ratio);
        const double extrapolated = f3 + (f3 - f2) / (std::pow(ratio, order) - 1.0);
        j["richardson"] = {{"order", real_or_string(order)},
                           {"extrapolated", real_or_string(extrapolated)},
                           {"error_estimate", real_or_string(std::abs(extrapolated - f3))},
                           {"levels_used", {sorted[k].n, sorted[k + 1].n, sorted[k + 2].n}}};
        std::cout << "sweep: observed order " << fmt_num(order) << ", extrapolated lambda* = "
                  << exact(extrapolated) << "\n";
    }
    ctx.emit_json("sweep.json", j);
    return j;
}

// -- entry point -------------------------------------------------------------------

inline Json error_json(const std::string& stage, const std::string& code, const std::string& message)
{
    return {{"error", {{"stage", stage}, {"code", code}, {"message", message}}}};
}

/// Runs one subcommand end to end and returns the process exit code.
inline int run_command(const CommandArgs& a)
{
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<Context> ctx;
    std::string stage = "config";
    std::string code_name;
    int code = kExitOk;
    Json err;
    try {
        RunConfig cfg = load_config(a.config_path);
        apply_overrides(cfg, a);
        ProblemSetup setup = build_setup(cfg);
        ctx.emplace(std::move(cfg), std::move(setup));
        fs::create_directories(ctx->out);

        stage = "solve";
        const std::string& cmd = a.command;
        if (cmd == "baseline") {
            run_baseline(*ctx);
        } else if (cmd == "continue") {
            run_continue(*ctx);
        } else if (cmd == "fold") {
            const Branch br = obtain_branch(*ctx);
            run_fold(*ctx, br);
        } else if (cmd == "quotient") {
            const Branch br = obtain_branch(*ctx);
            run_quotient(*ctx, br, a.point);
        } else if (cmd == "verify") {
            const Branch br = obtain_branch(*ctx);
            if (!run_verify(*ctx, br)) code = kExitVerify;
        } else if (cmd == "sweep") {
            run_sweep(*ctx);
        } else {
            throw Error(ErrorCode::InvariantViolation, "unknown subcommand '" + cmd + "'");
        }
    } catch (const Error& e) {
        code = stage == "config" ? kExitConfig : kExitSolver;
        err = error_json(stage, std::string(to_string(e.code())), e.what());
    } catch (const std::exception& e) {
        code = stage == "config" ? kExitConfig : kExitSolver;
        err = error_json(stage, "internal", e.what());
    }
    if (!err.is_null()) std::cerr << err.dump() << "\n";

    // Manifest and error report go wherever the output would have gone.
    const fs::path out = ctx ? ctx->out : fs::path(a.out_dir.value_or("out"));
    try {
        std::error_code ec;
        fs::create_directories(out, ec);
        if (!err.is_null()) write_json(out / "error.json", err);
        Json m = {{"version", CCFOLD_VERSION}, {"command", a.command}, {"config_path", a.config_path},
                  {"exit_code", code}};
        if (ctx) {
            m["config_hash"] = fnv1a_hex(effective_json(ctx->cfg).dump());
            m["branch_hash"] = branch_hash(ctx->cfg);
            m["effective_config"] = effective_json(ctx->cfg);
            m["defaults_used"] = ctx->cfg.defaults_used;
            m["outputs"] = ctx->outputs;
        }
        m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_json(out / "run_manifest.json", m);
    } catch (const std::exception& e) {
        std::cerr << error_json("manifest", "io-error", e.what()).dump() << "\n";
        if (code == kExitOk) code = kExitSolver;
    }
    return code;
}

} // namespace ccfold::app
