#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ltem/error.hpp"
#include "ltem/gaussian_ops.hpp"
#include "ltem/model.hpp"
#include "ltem/report.hpp"
#include "ltem/sampling.hpp"
#include "ltem/star_em.hpp"
#include "ltem/tree_em.hpp"
#include "ltem/verify.hpp"

namespace ltem::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 2, kDataError = 3, kPropertyViolation = 4 };

/// Usage mistakes (bad flag values, unsupported combinations).
class UsageError : public Error {
public:
    using Error::Error;
};

struct Options {
    std::string topology;
    std::string data;
    std::string population;
    std::string truth;
    std::string points;
    /// CSV path for simulate; report path for the other commands.
    std::string out;
    /// Report path (simulate writes its report here; defaults to stdout).
    std::string report;
    std::string init = "half";
    std::string suite;
    std::optional<std::uint64_t> seed;
    std::size_t samples = 0;
    double tol = 1e-10;
    std::size_t max_iter = 100000;
    bool enumerate_analytic = false;
};

/// --seed, else LTEM_SEED, else 1.
inline std::uint64_t resolve_seed(const Options& opt) {
    if (opt.seed) return *opt.seed;
    if (const char* env = std::getenv("LTEM_SEED"); env && *env) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw UsageError("LTEM_SEED must be a nonnegative integer");
    }
    return 1;
}

namespace detail {

inline nlohmann::json to_json_vector(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline void emit_report(RunReport& report, const Options& opt, std::ostream& out) {
    report.finished_at = utc_timestamp();
    const auto text = serialize(report);
    const auto& path = !opt.report.empty() ? opt.report : (report.command == "simulate" ? opt.report : opt.out);
    if (path.empty()) {
        out << text << '\n';
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write report to '" + path + "'");
    f << text << '\n';
}

inline RunReport start_report(const std::string& command, std::uint64_t seed) {
    RunReport r;
    r.command = command;
    r.seed = seed;
    r.started_at = utc_timestamp();
    return r;
}

/// CSV columns re-ordered to the topology's leaf order; names must match as sets.
inline LeafSampleMatrix align_columns(const LeafSampleMatrix& csv, const TreeTopology& topo) {
    const auto leaves = topo.leaf_names();
    const std::set<std::string> header(csv.leaf_names.begin(), csv.leaf_names.end());
    if (header.size() != csv.leaf_names.size()) throw DataError("CSV header contains a duplicate column name");
    for (const auto& h : csv.leaf_names) {
        if (!std::count(leaves.begin(), leaves.end(), h)) throw DataError("CSV column '" + h + "' is not a leaf of the topology");
    }
    for (const auto& l : leaves) {
        if (!header.count(l)) throw DataError("leaf '" + l + "' is missing from the CSV header");
    }
    LeafSampleMatrix out;
    out.leaf_names = leaves;
    out.data.resize(csv.data.rows(), static_cast<Eigen::Index>(leaves.size()));
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        const auto src = std::find(csv.leaf_names.begin(), csv.leaf_names.end(), leaves[k]) - csv.leaf_names.begin();
        out.data.col(static_cast<Eigen::Index>(k)) = csv.data.col(src);
    }
    return out;
}

/// Point file: one parameter vector per line, entries separated by spaces or commas.
inline std::vector<Vector> load_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open point file '" + path + "'");
    std::vector<Vector> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        std::vector<double> vals;
        for (std::string tok; ls >> tok;) vals.push_back(ltem::detail::parse_number(tok, line_no, "coordinate"));
        if (vals.empty()) continue;
        out.push_back(Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
    return out;
}

inline ModelParams initial_model(const TreeTopology& topo, const Options& opt, std::uint64_t seed) {
    std::vector<double> rho(topo.edge_count(), 0.5);
    if (opt.init == "random") {
        UniformStream rng(seed, 77);
        for (auto& r : rho) r = rng.uniform(0.1, 0.9);
    } else if (opt.init != "half") {
        throw UsageError("--init must be 'half' or 'random'");
    }
    return {topo, std::move(rho)};
}

inline double linf(const ModelParams& a, const ModelParams& b) {
    double out = 0.0;
    for (std::size_t e = 0; e < a.rho().size(); ++e) out = std::max(out, std::abs(a.rho(e) - b.rho(e)));
    return out;
}

}  // namespace detail

/// Draws `samples` rows from the topology file's model and writes them as CSV.
inline int cmd_simulate(const Options& opt, std::ostream& out) {
    if (opt.topology.empty()) throw UsageError("simulate requires --topology");
    if (opt.out.empty()) throw UsageError("simulate requires --out");
    if (opt.samples == 0) throw UsageError("--samples must be at least 1");
    const auto seed = resolve_seed(opt);
    auto report = detail::start_report("simulate", seed);
    const auto truth = load_model(opt.topology);
    report.input_digests[opt.topology] = file_digest(opt.topology);
    const auto draws = sample(truth, opt.samples, seed);
    const auto text = to_csv(draws.leaves);
    {
        std::ofstream f(opt.out, std::ios::binary);
        if (!f) throw DataError("cannot write CSV to '" + opt.out + "'");
        f << text;
        if (!f) throw DataError("failed writing '" + opt.out + "'");
    }
    report.set_parameters(truth);
    report.details["samples"] = opt.samples;
    report.details["csv"] = opt.out;
    report.details["csv_digest"] = fnv1a_hex(text);
    report.details["eta"] = representativeness(empirical_stats(draws.leaves), truth);
    detail::emit_report(report, opt, out);
    return kSuccess;
}

/// Fits the topology's model by EM to CSV data (--data) or to the exact leaf
/// covariance of a truth model (--population).
inline int cmd_fit(const Options& opt, std::ostream& out) {
    if (opt.topology.empty()) throw UsageError("fit requires --topology");
    if (opt.data.empty() == opt.population.empty()) throw UsageError("fit requires exactly one of --data or --population");
    const auto seed = resolve_seed(opt);
    auto report = detail::start_report("fit", seed);
    const auto shape = load_model(opt.topology);
    const auto& topo = shape.topology();
    report.input_digests[opt.topology] = file_digest(opt.topology);

    std::optional<ModelParams> truth;
    GaussianMoments moments;
    std::optional<EmpiricalStats> stats;
    if (!opt.population.empty()) {
        truth = load_model(opt.population);
        report.input_digests[opt.population] = file_digest(opt.population);
        if (truth->topology().nodes() != topo.nodes() || truth->topology().leaf_names() != topo.leaf_names()) {
            throw DataError("population model does not have the topology's nodes");
        }
        moments = leaf_moments(*truth);
    } else {
        report.input_digests[opt.data] = file_digest(opt.data);
        const auto csv = detail::align_columns(load_csv(opt.data), topo);
        stats = empirical_stats(csv);
        moments = stats->moments();
        if (!opt.truth.empty()) {
            truth = load_model(opt.truth);
            report.input_digests[opt.truth] = file_digest(opt.truth);
        }
    }
    const auto init = detail::initial_model(topo, opt, seed);
    ModelParams fitted;
    if (topo.is_star()) {
        EmOptions eo;
        eo.max_iter = opt.max_iter;
        eo.tol = opt.tol;
        eo.record_stride = 0;
        auto state = star_state_from_model(init);
        EmTrace trace;
        if (stats) {
            if (truth) eo.truth = PopulationTarget(star_rho(*truth), star_state_from_model(*truth).sigma_x);
            trace = run_em(state, *stats, eo);
        } else {
            const auto ts = star_state_from_model(*truth);
            trace = run_em(state, PopulationTarget(ts.rho, ts.sigma_x), eo);
        }
        fitted = star_state_to_model(trace.final_state);
        report.trace = {trace.iterations, trace.converged, trace.final_step, trace.monotonicity_violations,
                        trace.final_objective};
        report.clamp_fired = trace.clamp_fired;
        report.warnings = trace.warnings;
        report.details["mode"] = stats ? "sample" : "population";
        report.details["min_rho"] = trace.min_rho;
        report.details["max_rho"] = trace.max_rho;
        if (truth) report.classification = classify_point(trace.final_state.rho, star_rho(*truth)).label();
    } else {
        TreeEmOptions to;
        to.max_iter = opt.max_iter;
        to.tol = opt.tol;
        const auto trace = run_tree_em(init, moments, to);
        fitted = trace.final_params;
        report.trace = {trace.iterations, trace.converged, trace.final_step, trace.monotonicity_violations, trace.final_kl};
        report.clamp_fired = trace.clamp_fired;
        report.warnings = trace.warnings;
        report.details["mode"] = stats ? "sample" : "population";
    }
    report.set_parameters(fitted);
    for (auto i : topo.internals()) {
        if (topo.degree(i) < 3) report.warnings.push_back("internal node '" + topo.name(i) + "' has degree < 3");
    }
    report.details["loglik"] = leaf_loglikelihood(fitted, moments);
    if (truth) report.details["linf_error"] = detail::linf(fitted, *truth);
    const bool violated = report.trace.monotonicity_violations > 0 || report.clamp_fired;
    report.exit_code = violated ? kPropertyViolation : kSuccess;
    detail::emit_report(report, opt, out);
    return report.exit_code;
}

/// Stationary points of a star truth and classification of supplied points;
/// for other trees, per-edge fixpoint residuals of the supplied points.
inline int cmd_landscape(const Options& opt, std::ostream& out) {
    if (opt.topology.empty() || opt.truth.empty()) throw UsageError("landscape requires --topology and --truth");
    if (opt.points.empty() && !opt.enumerate_analytic) throw UsageError("landscape requires --points or --enumerate-analytic");
    const auto seed = resolve_seed(opt);
    auto report = detail::start_report("landscape", seed);
    const auto shape = load_model(opt.topology);
    const auto truth = load_model(opt.truth);
    report.input_digests[opt.topology] = file_digest(opt.topology);
    report.input_digests[opt.truth] = file_digest(opt.truth);
    const auto& topo = shape.topology();
    if (truth.topology().nodes() != topo.nodes()) throw DataError("truth model does not have the topology's nodes");
    const auto target = leaf_moments(truth);
    report.set_parameters(truth);

    if (!topo.is_star()) {
        if (opt.enumerate_analytic) {
            throw UsageError("--enumerate-analytic is unsupported for non-star topologies (residual-only mode)");
        }
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : detail::load_points(opt.points)) {
            if (static_cast<std::size_t>(p.size()) != topo.edge_count()) {
                throw DataError("point has " + std::to_string(p.size()) + " coordinates, expected one per edge");
            }
            const auto model = truth.with_rho(std::vector<double>(p.data(), p.data() + p.size()));
            const auto res = fixpoint_residual(model, target);
            pts.push_back({{"rho", detail::to_json_vector(p)}, {"status", res.status},
                           {"max_residual", res.ok ? nlohmann::json(res.max()) : nlohmann::json(nullptr)}});
        }
        report.details["points"] = pts;
        detail::emit_report(report, opt, out);
        return kSuccess;
    }

    const Vector truth_rho = star_rho(truth);
    auto gradient_at = [&](const Vector& p) {
        const Vector inside = p.cwiseMax(1e-6).cwiseMin(1.0 - 1e-6);
        const bool moved = (inside - p).lpNorm<Eigen::Infinity>() > 0.0;
        const auto model = truth.with_rho(star_state_to_model(StarState(inside)).rho());
        const double step = moved ? 1e-8 : std::min(1e-5, 0.5 * std::min(inside.minCoeff(), 1.0 - inside.maxCoeff()));
        return std::pair{gradient_norm(numeric_loglik_gradient(model, target, step)), moved};
    };
    if (opt.enumerate_analytic) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& p : analytic_stationary_points(truth_rho)) {
            const auto [g, moved] = gradient_at(p.point);
            list.push_back({{"kind", p.label()}, {"rho", detail::to_json_vector(p.point)}, {"gradient_norm", g},
                            {"gradient_evaluated_inside", moved}});
        }
        report.details["analytic_points"] = list;
    }
    if (!opt.points.empty()) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : detail::load_points(opt.points)) {
            if (p.size() != truth_rho.size()) throw DataError("point dimension does not match the number of leaves");
            const auto cls = classify_point(p, truth_rho);
            const auto [g, moved] = gradient_at(p);
            pts.push_back({{"rho", detail::to_json_vector(p)}, {"classification", cls.label()}, {"distance", cls.distance},
                           {"gradient_norm", g}, {"gradient_evaluated_inside", moved}});
        }
        report.details["points"] = pts;
        if (pts.size() == 1) report.classification = pts[0]["classification"];
    }
    detail::emit_report(report, opt, out);
    return kSuccess;
}

inline int cmd_verify(const Options& opt, std::ostream& out) {
    const auto& names = verify_suites();
    if (std::find(names.begin(), names.end(), opt.suite) == names.end()) {
        throw UsageError("unknown suite '" + opt.suite + "' (expected algebra, star, tree, fixpoint or sampling)");
    }
    const auto seed = resolve_seed(opt);
    auto report = detail::start_report("verify", seed);
    const auto result = run_verify_suite(opt.suite, seed);
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : result.checks) {
        checks.push_back({{"name", c.name}, {"passed", c.passed}, {"cases", c.cases}, {"detail", c.detail}});
    }
    report.details["suite"] = opt.suite;
    report.details["checks"] = checks;
    report.classification = result.passed() ? "pass" : "fail";
    report.exit_code = result.passed() ? kSuccess : kPropertyViolation;
    detail::emit_report(report, opt, out);
    return report.exit_code;
}

/// Runs `command` and maps library errors to exit codes; messages go to `err`.
inline int dispatch(const std::string& command, const Options& opt, std::ostream& out, std::ostream& err) {
    try {
        if (command == "simulate") return cmd_simulate(opt, out);
        if (command == "fit") return cmd_fit(opt, out);
        if (command == "landscape") return cmd_landscape(opt, out);
        if (command == "verify") return cmd_verify(opt, out);
        err << "error: unknown command '" << command << "'\n";
        return kUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const InvalidArgument& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
}

}  // namespace ltem::cli
