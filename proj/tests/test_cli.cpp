#include "ccfold/app/run.hpp"

#include <gtest/gtest.h>

using namespace ccfold;
using namespace ccfold::app;

namespace {

const char* kAbc = R"(
seed = 1
[grid]
n = 63
[problem]
family = scalar-power
q = 0.5
a = 1
b = 1
gamma = 3
)";

/// Fresh directory under the system temp dir holding a config file.
struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name, const std::string& config = kAbc)
        : dir(fs::temp_directory_path() / ("ccfold_cli_" + name))
    {
        fs::remove_all(dir);
        fs::create_directories(dir);
        write_atomic(dir / "run.ini", config);
    }
    ~Scratch() { fs::remove_all(dir); }

    [[nodiscard]] int run(const std::string& cmd, const std::string& out = "out", int point = -1) const
    {
        CommandArgs a;
        a.command = cmd;
        a.config_path = (dir / "run.ini").string();
        a.out_dir = (dir / out).string();
        a.point = point;
        return run_command(a);
    }
    [[nodiscard]] Json json(const std::string& rel) const { return Json::parse(read_file(dir / rel)); }
};

ErrorCode parse_error(const std::string& text)
{
    try {
        (void)build_setup(parse_config(text));
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "config was accepted";
    return ErrorCode::Io;
}

} // namespace

TEST(Config, RejectsConcaveExponentAboveOne)
{
    EXPECT_EQ(parse_error("[problem]\nq = 1.2\n"), ErrorCode::InvariantViolation);
    Scratch s("q_above_one", "[problem]\nq = 1.2\n");
    EXPECT_EQ(s.run("fold"), kExitConfig);
    const Json e = s.json("out/error.json");
    EXPECT_EQ(e["error"]["code"], "invariant-violation");
    EXPECT_EQ(e["error"]["stage"], "config");
    EXPECT_TRUE(s.json("out/run_manifest.json").contains("exit_code"));
}

TEST(Config, RejectsGamma0AboveGamma)
{
    EXPECT_EQ(parse_error("[problem]\ngamma = 3\ngamma0 = 4\n"), ErrorCode::InvariantViolation);
}

TEST(Config, UnknownKeyReportsLine)
{
    try {
        (void)parse_config("seed = 2\n\n[grid]\nnn = 3\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownKey);
        EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("grid.nn"), std::string::npos);
    }
}

TEST(Config, TypeErrorsReportLine)
{
    for (const char* bad : {"[grid]\nn = abc\n", "[problem]\ngamma = 3x\n", "[output]\nwrite_states = yes\n",
                            "seed = -4\n", "[grid]\nlengths = 1,,2\n"}) {
        try {
            (void)parse_config(bad);
            ADD_FAILURE() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::TypeError) << bad;
            EXPECT_NE(std::string(e.what()).find("line "), std::string::npos);
        }
    }
    Scratch s("type_error", "[grid]\nn = abc\n");
    EXPECT_EQ(s.run("continue"), kExitConfig);
}

TEST(Config, DuplicateKeysAndMalformedLinesRejected)
{
    EXPECT_THROW((void)parse_config("[grid]\nn = 3\nn = 4\n"), Error);
    EXPECT_THROW((void)parse_config("[grid\n"), Error);
    EXPECT_THROW((void)parse_config("[grid]\njust words\n"), Error);
}

TEST(Config, ListsCommentsAndInfinity)
{
    const RunConfig c = parse_config(
        "# leading comment\n[grid]\ndim = 2 ; trailing\nlengths = 1, 2\nn = 7,9\n[solver]\nlambda_max = inf\n");
    EXPECT_EQ(c.grid.dim, 2);
    EXPECT_EQ(c.grid.lengths, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(c.grid.n, (std::vector<int>{7, 9}));
    EXPECT_TRUE(std::isinf(c.solver.lambda_max));
    const ProblemSetup s = build_setup(c);
    EXPECT_EQ(s.grid.size(), 63);
    EXPECT_EQ(s.problem.space_dim, 2);
}

TEST(Config, PerComponentAndNodalFields)
{
    const ProblemSetup s = build_setup(parse_config(
        "[grid]\nn = 3\n[problem]\nm = 2\nfamily = power-coupled\nq = 0.3, 0.6\na = 1, 2\n"
        "a_nodes_1 = 1, 2, 3\nb_diag = 0.5\nb_nodes = 0, 1, 0\n"));
    EXPECT_EQ(s.problem.q, (std::vector<double>{0.3, 0.6}));
    EXPECT_DOUBLE_EQ(s.problem.a[0][2], 1.0);
    EXPECT_DOUBLE_EQ(s.problem.a[1][2], 3.0);
    const auto& pc = std::get<PowerCoupled>(s.problem.family);
    EXPECT_DOUBLE_EQ(pc.b[1], 1.0);
    EXPECT_DOUBLE_EQ(pc.b_diag[1][0], 0.5);
    EXPECT_EQ(parse_error("[grid]\nn = 3\n[problem]\nb_nodes = 1, 1\n"), ErrorCode::ShapeError);
    EXPECT_EQ(parse_error("[problem]\nm = 2\nq = 0.1, 0.2, 0.3\nfamily = power-coupled\n"), ErrorCode::ShapeError);
    EXPECT_EQ(parse_error("[problem]\nfamily = other\n"), ErrorCode::InvariantViolation);
}

TEST(Config, CustomTableFromCubic)
{
    // G(t) = t^3 tabulated with exact slopes on a step of 0.1
    std::string knots = "knots = 0", values = "values_0_0 = 0", slopes = "slopes_0_0 = 0";
    for (int k = 1; k <= 10; ++k) {
        const double t = 0.1 * k;
        knots += ", " + exact(t);
        values += ", " + exact(t * t * t);
        slopes += ", " + exact(3.0 * t * t);
    }
    const ProblemSetup s = build_setup(parse_config("[grid]\nn = 15\n[problem]\nfamily = custom-table\n" +
                                                    knots + "\n" + values + "\n" + slopes + "\n"));
    const auto& ct = std::get<CustomTable>(s.problem.family);
    EXPECT_EQ(ct.knots.size(), 11u);
    // slopes that contradict the values
    EXPECT_EQ(parse_error("[problem]\nfamily = custom-table\nknots = 0, 1\nvalues_0_0 = 0, 1\n"
                          "slopes_0_0 = 5, 5\n"),
              ErrorCode::InvariantViolation);
    EXPECT_EQ(parse_error("[problem]\nfamily = custom-table\nknots = 0, 1\nvalues_0_0 = 0, 1\n"),
              ErrorCode::ShapeError);
}

TEST(Cli, DefaultsAndOverridesInManifest)
{
    Scratch s("defaults", "[grid]\nn = 31\n");
    CommandArgs a;
    a.command = "baseline";
    a.config_path = (s.dir / "run.ini").string();
    a.out_dir = (s.dir / "out").string();
    a.max_steps = 17;
    ASSERT_EQ(run_command(a), kExitOk);
    const Json m = s.json("out/run_manifest.json");
    const auto defaults = m["defaults_used"].get<std::vector<std::string>>();
    auto has = [&](const char* k) { return std::find(defaults.begin(), defaults.end(), k) != defaults.end(); };
    EXPECT_TRUE(has("solver.tol_newton"));
    EXPECT_TRUE(has("problem.q"));
    EXPECT_FALSE(has("grid.n"));
    EXPECT_FALSE(has("solver.max_steps"));
    EXPECT_FALSE(has("output.dir"));
    EXPECT_EQ(m["effective_config"]["solver"]["tol_newton"], 1e-10);
    EXPECT_EQ(m["effective_config"]["solver"]["max_steps"], 17);
    EXPECT_EQ(m["effective_config"]["solver"]["lambda_max"], "inf");
    EXPECT_EQ(m["version"], CCFOLD_VERSION);
    EXPECT_TRUE(fs::exists(s.dir / "out/baseline.csv"));
    EXPECT_TRUE(s.json("out/baseline.json")["stable"].get<bool>());
}

TEST(Cli, ContinueThenFoldReusesBranch)
{
    Scratch s("continue_fold");
    ASSERT_EQ(s.run("continue"), kExitOk);
    const Json br = s.json("out/branch.json");
    EXPECT_EQ(br["stop_reason"], "post-fold-arclength");
    EXPECT_EQ(br["fold_markers"].size(), 1u);
    const auto rows = parse_csv_body(read_file(s.dir / "out/branch.csv"));
    EXPECT_EQ(rows.size(), br["points"].get<std::size_t>());
    EXPECT_EQ(rows.front().size(), 9u);

    ASSERT_EQ(s.run("fold"), kExitOk);
    const auto outputs = s.json("out/run_manifest.json")["outputs"].get<std::vector<std::string>>();
    EXPECT_EQ(std::count(outputs.begin(), outputs.end(), "branch.csv"), 0) << "branch was retraced";

    // same answer as the library run in-process
    const Grid g = build_grid_1d(1.0, 63);
    const ProblemSpec p = make_scalar_power(g, 0.5, 1.0, 1.0, 3.0);
    const Branch ref = trace_branch(p, g, baseline_point(p, g));
    const FoldPoint fp = refine_fold_moore_spence(p, g, ref, detect_fold(ref).front());
    const Json f = s.json("out/fold.json");
    EXPECT_EQ(f["lambda_star"].get<double>(), fp.lambda_star);
    EXPECT_LE(f["residual_F"].get<double>(), 1e-10);
    EXPECT_LE(f["residual_Fv"].get<double>(), 1e-8);
    EXPECT_EQ(f["grid"]["n"][0], 63);
    EXPECT_EQ(f["normalization_id"], "l2-unit-mass/positive-at-max-abs");
    EXPECT_TRUE(f["diagnostics"]["certified"].get<bool>());
    EXPECT_TRUE(fs::exists(s.dir / "out/fold_state.csv"));
}

TEST(Cli, StaleBranchIsRetraced)
{
    Scratch s("stale");
    ASSERT_EQ(s.run("continue"), kExitOk);
    write_atomic(s.dir / "run.ini", std::string(kAbc) + "[solver]\nds_max = 0.04\n");
    ASSERT_EQ(s.run("fold"), kExitOk);
    const auto outputs = s.json("out/run_manifest.json")["outputs"].get<std::vector<std::string>>();
    EXPECT_EQ(std::count(outputs.begin(), outputs.end(), "branch.csv"), 1);
}

TEST(Cli, VerifyAndQuotient)
{
    Scratch s("verify");
    ASSERT_EQ(s.run("verify"), kExitOk);
    const Json v = s.json("out/verify.json");
    EXPECT_TRUE(v["pass"].get<bool>());
    EXPECT_EQ(v["nonexistence"]["above"]["stable_found"], 0);
    EXPECT_FALSE(v["nonexistence"]["above"]["falsified"].get<bool>());
    EXPECT_GE(v["nonexistence"]["below"]["stable_found"].get<int>(), 1);

    ASSERT_EQ(s.run("quotient"), kExitOk);
    const Json q = s.json("out/quotient.json");
    EXPECT_EQ(q["probe"]["kind"], "constant");
    EXPECT_NEAR(q["R_uu"].get<double>(), v["lambda_star"].get<double>(), 1e-6);
    EXPECT_TRUE(q["equivalence"]["consistent"].get<bool>());

    EXPECT_EQ(s.run("quotient", "out", 100000), kExitSolver);
    EXPECT_EQ(s.json("out/error.json")["error"]["code"], "shape-error");
}

TEST(Cli, NoFoldIsSolverFailure)
{
    Scratch s("no_fold", std::string(kAbc) + "[solver]\nlambda_max = 100\n");
    EXPECT_EQ(s.run("fold"), kExitSolver);
    EXPECT_EQ(s.json("out/error.json")["error"]["code"], "no-fold-found");
}

TEST(Cli, SweepReportsOrder)
{
    Scratch s("sweep", std::string(kAbc) + "[sweep]\nn_values = 31, 63, 127\n");
    ASSERT_EQ(s.run("sweep"), kExitOk);
    const Json j = s.json("out/sweep.json");
    ASSERT_EQ(j["levels"].size(), 3u);
    EXPECT_NEAR(j["richardson"]["order"].get<double>(), 2.0, 0.3);
    EXPECT_TRUE(fs::exists(s.dir / "out/n_127/fold.json"));
}

TEST(Cli, RepeatedRunsAreByteIdentical)
{
    Scratch s("determinism");
    for (const char* out : {"a", "b"})
        for (const char* cmd : {"baseline", "continue", "fold", "quotient", "verify"})
            ASSERT_EQ(s.run(cmd, out), kExitOk) << cmd;
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(s.dir / "a")) {
        const std::string name = e.path().filename().string();
        if (name == "run_manifest.json") continue;
        EXPECT_EQ(read_file(e.path()), read_file(s.dir / "b" / name)) << name;
        ++compared;
    }
    EXPECT_EQ(compared, 9u);
}
