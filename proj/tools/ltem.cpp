#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ltem/cli.hpp"

int main(int argc, char** argv) {
    using namespace ltem::cli;
    Options opt;
    CLI::App app{"EM for latent Gaussian tree models"};
    app.require_subcommand(1);

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", opt.seed, "RNG seed (falls back to LTEM_SEED, then 1)");
    };

    auto* simulate = app.add_subcommand("simulate", "draw leaf samples from a model file");
    simulate->add_option("--topology", opt.topology, "model file (edge list)")->required();
    simulate->add_option("--samples,-m", opt.samples, "number of rows")->required();
    simulate->add_option("--out", opt.out, "CSV output path")->required();
    simulate->add_option("--report", opt.report, "report path (default stdout)");
    add_seed(simulate);

    auto* fit = app.add_subcommand("fit", "fit a model by EM");
    fit->add_option("--topology", opt.topology, "model file giving the topology")->required();
    fit->add_option("--data", opt.data, "CSV of leaf samples");
    fit->add_option("--population", opt.population, "truth model file for population EM");
    fit->add_option("--truth", opt.truth, "truth model file for error reporting (sample mode)");
    fit->add_option("--tol", opt.tol, "stopping tolerance on the l-infinity step");
    fit->add_option("--max-iter", opt.max_iter, "iteration cap");
    fit->add_option("--init", opt.init, "initialization")->check(CLI::IsMember({"half", "random"}));
    fit->add_option("--out,--report", opt.out, "report path (default stdout)");
    add_seed(fit);

    auto* landscape = app.add_subcommand("landscape", "stationary points and classification");
    landscape->add_option("--topology", opt.topology, "model file giving the topology")->required();
    landscape->add_option("--truth", opt.truth, "truth model file")->required();
    landscape->add_option("--points", opt.points, "file with one parameter vector per line");
    landscape->add_flag("--enumerate-analytic", opt.enumerate_analytic, "list the analytic stationary points");
    landscape->add_option("--out,--report", opt.out, "report path (default stdout)");
    add_seed(landscape);

    auto* verify = app.add_subcommand("verify", "run a property suite");
    verify->add_option("suite", opt.suite, "algebra | star | tree | fixpoint | sampling")->required();
    verify->add_option("--out,--report", opt.out, "report path (default stdout)");
    add_seed(verify);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }
    return dispatch(app.get_subcommands().front()->get_name(), opt, std::cout, std::cerr);
}
