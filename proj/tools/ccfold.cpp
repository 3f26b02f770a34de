#include "ccfold/app/run.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv)
{
    using namespace ccfold::app;
    CLI::App app{"Fold (saddle-node) analysis for concave-convex elliptic systems"};
    app.set_version_flag("--version", CCFOLD_VERSION);
    app.require_subcommand(1);

    CommandArgs args;
    std::uint64_t seed = 0;
    double tol_newton = 0.0, lambda_max = 0.0;
    int max_steps = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "run configuration (INI)")->required();
        sub->add_option_function<std::string>("--out-dir", [&](const std::string& s) { args.out_dir = s; },
                                              "output directory (overrides output.dir)");
        sub->add_option("--seed", seed, "seed for probes and eigen solves")
            ->each([&](const std::string&) { args.seed = seed; });
        sub->add_option("--tol-newton", tol_newton, "Newton / corrector tolerance")
            ->each([&](const std::string&) { args.tol_newton = tol_newton; });
        sub->add_option("--max-steps", max_steps, "continuation step limit")
            ->each([&](const std::string&) { args.max_steps = max_steps; });
        sub->add_option("--lambda-max", lambda_max, "stop tracing above this lambda")
            ->each([&](const std::string&) { args.lambda_max = lambda_max; });
    };

    const std::vector<std::pair<std::string, std::string>> commands{
        {"baseline", "solve the lambda = 0 problem"},
        {"continue", "trace the solution branch from the baseline"},
        {"fold", "locate and refine the fold point"},
        {"quotient", "evaluate the quotient functional at a branch point or the fold"},
        {"verify", "run the invariant suite and the nonexistence probe"},
        {"sweep", "fold values over a sequence of grids"}};
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub);
        if (name == "quotient")
            sub->add_option("--point", args.point, "branch index; -1 selects the fold state")->capture_default_str();
        sub->callback([&args, n = name]() { args.command = n; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }
    return run_command(args);
}
