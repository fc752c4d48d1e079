#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltem/error.hpp"
#include "ltem/model.hpp"

namespace ltem {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

/// FNV-1a 64-bit digest as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a_hex(ss.str());
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

struct TraceSummary {
    std::size_t iterations = 0;
    bool converged = false;
    double final_step = 0.0;
    std::size_t monotonicity_violations = 0;
    double final_objective = 0.0;
};

/// Machine-readable record of one CLI invocation.
struct RunReport {
    int schema_version = kSchemaVersion;
    std::string command;
    std::uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::string version = kVersion;
    std::map<std::string, std::string> input_digests;
    /// Edge "a-b" -> correlation.
    std::map<std::string, double> rho;
    /// Node -> standard deviation.
    std::map<std::string, double> sigma;
    TraceSummary trace;
    std::string classification;
    bool clamp_fired = false;
    /// Internal nodes are reported but not identifiable; degree < 3 nodes also listed here.
    std::vector<std::string> non_identifiable;
    std::vector<std::string> warnings;
    int exit_code = 0;
    nlohmann::json details = nlohmann::json::object();

    void set_parameters(const ModelParams& p) {
        rho.clear();
        sigma.clear();
        const auto& topo = p.topology();
        for (std::size_t e = 0; e < topo.edge_count(); ++e) {
            const auto [a, b] = topo.edge_key(e);
            rho[a + "-" + b] = p.rho(e);
        }
        for (auto i : topo.leaves()) sigma[topo.name(i)] = p.sigma(i);
        non_identifiable.clear();
        for (auto i : topo.internals()) {
            if (topo.degree(i) < 3) non_identifiable.push_back(topo.name(i));
        }
    }
};

/// JSON has no NaN; non-finite values are written as null and read back as NaN.
inline double number_or_nan(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline void to_json(nlohmann::json& j, const TraceSummary& t) {
    j = {{"iterations", t.iterations},
         {"converged", t.converged},
         {"final_step", t.final_step},
         {"monotonicity_violations", t.monotonicity_violations},
         {"final_objective", t.final_objective}};
}

inline void from_json(const nlohmann::json& j, TraceSummary& t) {
    j.at("iterations").get_to(t.iterations);
    j.at("converged").get_to(t.converged);
    t.final_step = number_or_nan(j.at("final_step"));
    j.at("monotonicity_violations").get_to(t.monotonicity_violations);
    t.final_objective = number_or_nan(j.at("final_objective"));
}

inline void to_json(nlohmann::json& j, const RunReport& r) {
    j = {{"schema_version", r.schema_version},
         {"command", r.command},
         {"seed", r.seed},
         {"started_at", r.started_at},
         {"finished_at", r.finished_at},
         {"version", r.version},
         {"input_digests", r.input_digests},
         {"rho", r.rho},
         {"sigma", r.sigma},
         {"trace", r.trace},
         {"classification", r.classification},
         {"clamp_fired", r.clamp_fired},
         {"non_identifiable", r.non_identifiable},
         {"warnings", r.warnings},
         {"exit_code", r.exit_code},
         {"details", r.details}};
}

inline void from_json(const nlohmann::json& j, RunReport& r) {
    j.at("schema_version").get_to(r.schema_version);
    if (r.schema_version != kSchemaVersion) throw DataError("unsupported report schema version");
    j.at("command").get_to(r.command);
    j.at("seed").get_to(r.seed);
    j.at("started_at").get_to(r.started_at);
    j.at("finished_at").get_to(r.finished_at);
    j.at("version").get_to(r.version);
    j.at("input_digests").get_to(r.input_digests);
    j.at("rho").get_to(r.rho);
    j.at("sigma").get_to(r.sigma);
    j.at("trace").get_to(r.trace);
    j.at("classification").get_to(r.classification);
    j.at("clamp_fired").get_to(r.clamp_fired);
    j.at("non_identifiable").get_to(r.non_identifiable);
    j.at("warnings").get_to(r.warnings);
    j.at("exit_code").get_to(r.exit_code);
    r.details = j.at("details");
}

inline bool operator==(const RunReport& a, const RunReport& b) {
    return nlohmann::json(a) == nlohmann::json(b);
}

inline std::string serialize(const RunReport& r) { return nlohmann::json(r).dump(2); }

inline RunReport parse_report(const std::string& text) {
    try {
        return nlohmann::json::parse(text).get<RunReport>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed run report: ") + e.what());
    }
}

}  // namespace ltem
