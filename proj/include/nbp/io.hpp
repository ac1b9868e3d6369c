#ifndef NBP_IO_HPP
#define NBP_IO_HPP

#include "nbp/analysis.hpp"
#include "nbp/bp.hpp"
#include "nbp/error.hpp"
#include "nbp/factor_graph.hpp"
#include "nbp/free_energy.hpp"
#include "nbp/model.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

// JSON interchange. Input graph files:
//   { "q": 2, "variables": ["1","2"],
//     "factors": [{"name": "a", "vars": ["1","2"], "table": [...]}],
//     "phi": {"1": [...]} }            // optional, missing entries are all-ones
// Output uses ordered_json so reports are byte-stable.

namespace nbp {

using Json = nlohmann::ordered_json;

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Json parse_json_text(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, what + ": " + e.what());
    }
}

namespace detail {

template <class T>
T json_get(const Json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::ParseError, where + ": missing '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, where + ": bad '" + key + "': " + e.what());
    }
}

inline std::vector<double> json_numbers(const Json& j, const std::string& where) {
    if (!j.is_array()) throw Error(ErrorCode::ParseError, where + ": expected an array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number()) throw Error(ErrorCode::ParseError, where + ": expected an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace detail

inline Model model_from_json(const Json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "graph file must be a JSON object");
    if (!j.contains("q") || !j.at("q").is_number_integer()) {
        throw Error(ErrorCode::ParseError, "graph file: 'q' must be an integer");
    }
    const auto q = j.at("q").get<long long>();
    if (q < 2) throw Error(ErrorCode::BadCardinality, "q must be at least 2, got " + std::to_string(q));
    const auto vars = detail::json_get<std::vector<std::string>>(j, "variables", "graph file");
    if (!j.contains("factors") || !j.at("factors").is_array()) {
        throw Error(ErrorCode::ParseError, "graph file: 'factors' must be an array");
    }
    std::vector<FactorSpec> specs;
    std::vector<Table> psi;
    for (const auto& f : j.at("factors")) {
        const auto name = detail::json_get<std::string>(f, "name", "factor");
        specs.push_back({name, detail::json_get<std::vector<std::string>>(f, "vars", "factor '" + name + "'")});
        if (!f.contains("table")) throw Error(ErrorCode::ParseError, "factor '" + name + "': missing 'table'");
        psi.push_back(detail::json_numbers(f.at("table"), "factor '" + name + "' table"));
    }
    FactorGraph g = FactorGraph::build(static_cast<std::size_t>(q), vars, std::move(specs));
    std::vector<Table> phi(g.num_variables(), Table(g.q(), 1.0));
    if (j.contains("phi")) {
        const auto& p = j.at("phi");
        if (!p.is_object()) throw Error(ErrorCode::ParseError, "'phi' must be an object keyed by variable id");
        for (const auto& [key, value] : p.items()) {
            phi[g.variable_index(key)] = detail::json_numbers(value, "phi of '" + key + "'");
        }
    }
    return Model(std::move(g), std::move(phi), std::move(psi));
}

inline Json model_to_json(const Model& model) {
    const auto& g = model.graph();
    Json j;
    j["q"] = g.q();
    j["variables"] = g.variable_names();
    Json factors = Json::array();
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        Json f;
        f["name"] = g.factor_name(a);
        Json vs = Json::array();
        for (auto i : g.members(a)) vs.push_back(g.variable_name(i));
        f["vars"] = vs;
        f["table"] = model.psi_tables()[a];
        factors.push_back(f);
    }
    j["factors"] = factors;
    Json phi = Json::object();
    for (std::size_t i = 0; i < g.num_variables(); ++i) phi[g.variable_name(i)] = model.phi_tables()[i];
    j["phi"] = phi;
    return j;
}

inline Json beliefs_to_json(const FactorGraph& g, const BeliefSet& b) {
    Json j;
    Json vars = Json::object();
    Json facs = Json::object();
    for (std::size_t i = 0; i < g.num_variables(); ++i) vars[g.variable_name(i)] = b.variables[i];
    for (std::size_t a = 0; a < g.num_factors(); ++a) facs[g.factor_name(a)] = b.factors[a];
    j["variables"] = vars;
    j["factors"] = facs;
    if (b.z_variables.size() == g.num_variables() && b.z_factors.size() == g.num_factors()) {
        Json zv = Json::object();
        Json zf = Json::object();
        for (std::size_t i = 0; i < g.num_variables(); ++i) zv[g.variable_name(i)] = b.z_variables[i];
        for (std::size_t a = 0; a < g.num_factors(); ++a) zf[g.factor_name(a)] = b.z_factors[a];
        j["Z_variables"] = zv;
        j["Z_factors"] = zf;
    }
    return j;
}

inline BeliefSet beliefs_from_json(const FactorGraph& g, const Json& j) {
    if (!j.is_object() || !j.contains("variables") || !j.contains("factors")) {
        throw Error(ErrorCode::ParseError, "belief file needs 'variables' and 'factors' objects");
    }
    BeliefSet b;
    b.variables.resize(g.num_variables());
    b.factors.resize(g.num_factors());
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        const auto& name = g.variable_name(i);
        if (!j["variables"].contains(name)) throw Error(ErrorCode::ParseError, "no belief for variable '" + name + "'");
        b.variables[i] = detail::json_numbers(j["variables"][name], "belief of '" + name + "'");
    }
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        const auto& name = g.factor_name(a);
        if (!j["factors"].contains(name)) throw Error(ErrorCode::ParseError, "no belief for factor '" + name + "'");
        b.factors[a] = detail::json_numbers(j["factors"][name], "belief of '" + name + "'");
    }
    b.z_variables.assign(g.num_variables(), 1.0);
    b.z_factors.assign(g.num_factors(), 1.0);
    check_belief_shape(g, b);
    return b;
}

inline Json messages_to_json(const FactorGraph& g, const MessageState& m) {
    Json j;
    j["q"] = m.q;
    j["iteration"] = m.iteration;
    Json edges = Json::array();
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto& ed = g.edge(e);
        Json x;
        x["factor"] = g.factor_name(ed.factor);
        x["variable"] = g.variable_name(ed.variable);
        x["values"] = std::vector<double>(m.edge(e).begin(), m.edge(e).end());
        edges.push_back(x);
    }
    j["edges"] = edges;
    return j;
}

inline MessageState messages_from_json(const FactorGraph& g, const Json& j) {
    if (!j.is_object() || !j.contains("edges") || !j.at("edges").is_array()) {
        throw Error(ErrorCode::ParseError, "message state needs an 'edges' array");
    }
    MessageState m = MessageState::constant(g, 1.0);
    std::vector<char> seen(g.num_edges(), 0);
    for (const auto& x : j.at("edges")) {
        const auto a = g.factor_index(detail::json_get<std::string>(x, "factor", "message"));
        const auto i = g.variable_index(detail::json_get<std::string>(x, "variable", "message"));
        const auto e = g.edge_index(a, i);
        const auto v = detail::json_numbers(x.contains("values") ? x.at("values") : Json(), "message values");
        if (v.size() != g.q()) throw Error(ErrorCode::SizeMismatch, "message has wrong length");
        std::copy(v.begin(), v.end(), m.edge(e).begin());
        seen[e] = 1;
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
        throw Error(ErrorCode::ParseError, "message state does not cover every edge");
    }
    for (double v : m.values) {
        if (!(v > 0.0)) throw Error(ErrorCode::NonPositiveMessage, "messages must be positive");
    }
    return m;
}

inline constexpr std::size_t history_keep = 100;

// First and last 100 entries plus summary statistics.
inline Json history_to_json(const std::vector<double>& h) {
    Json j;
    j["length"] = h.size();
    if (h.empty()) {
        j["min"] = nullptr;
        j["max"] = nullptr;
    } else {
        j["min"] = *std::min_element(h.begin(), h.end());
        j["max"] = *std::max_element(h.begin(), h.end());
    }
    const std::size_t head = std::min(h.size(), history_keep);
    j["head"] = std::vector<double>(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(head));
    const std::size_t tail_from = h.size() > 2 * history_keep ? h.size() - history_keep : head;
    j["tail"] = std::vector<double>(h.begin() + static_cast<std::ptrdiff_t>(tail_from), h.end());
    return j;
}

inline Json run_options_to_json(const RunOptions& o) {
    Json j;
    j["norm"] = to_string(o.normalization);
    j["schedule"] = to_string(o.schedule);
    j["init"] = to_string(o.init);
    j["seed"] = o.seed;
    j["tol"] = o.tol;
    j["max_iter"] = o.max_iter;
    j["track"] = to_string(o.track);
    return j;
}

inline Json run_report_to_json(const FactorGraph& g, const RunReport& r) {
    Json j;
    j["status"] = to_string(r.status);
    j["iterations"] = r.iterations;
    j["converged"] = {{"messages", r.converged_messages},
                      {"beliefs", r.converged_beliefs},
                      {"quotient", r.converged_quotient}};
    j["diagnostic"] = r.diagnostic;
    j["residuals"] = {{"messages", history_to_json(r.message_residuals)},
                      {"beliefs", history_to_json(r.belief_residuals)},
                      {"quotient", history_to_json(r.quotient_residuals)}};
    j["beliefs"] = beliefs_to_json(g, r.final_beliefs);
    j["final_messages"] = messages_to_json(g, r.final_state);
    return j;
}

inline Json stability_to_json(const StabilityReport& s) {
    Json j;
    j["C"] = s.C;
    j["lambda1"] = s.lambda1;
    j["mu2"] = s.mu2;
    j["mu2_B"] = s.mu2_B;
    j["lambda1_mu2"] = s.lambda1_mu2();
    j["rho_J"] = s.rho_J;
    j["rho_Jtilde"] = s.rho_Jtilde;
    j["rho_Jquotient"] = s.rho_Jquotient;
    j["A_irreducible"] = s.A_irreducible;
    j["J_irreducible"] = s.J_irreducible;
    j["homogeneous"] = s.homogeneous;
    j["fixed_point_residual"] = s.fixed_point_residual;
    Json v;
    v["plain"] = s.plain_verdict();
    v["plain_unstable"] = s.plain_unstable();
    v["sufficient_stable"] = s.sufficient_stable();
    v["normalized"] = s.normalized_verdict();
    if (const auto gap = s.homogeneous_gap()) {
        v["homogeneous_gap"] = *gap;
    } else {
        v["homogeneous_gap"] = nullptr;
    }
    j["verdicts"] = v;
    return j;
}

inline Json free_energy_to_json(const FreeEnergyReport& f) {
    Json j;
    j["F_bethe"] = f.F_bethe;
    j["C"] = f.C;
    if (f.scale) {
        j["Z_hat"] = f.scale->z_hat;
        j["F_hat"] = f.scale->f_hat;
        j["Z_numeric"] = f.scale->z_numeric;
        j["Z_relative_error"] = f.scale->relative_error;
        j["extremum"] = f.scale->maximum ? "maximum" : "minimum";
    } else {
        j["Z_hat"] = nullptr;
    }
    return j;
}

inline Json exact_to_json(const FactorGraph& g, const ExactResult& r) {
    Json j;
    j["Z_joint"] = r.z_joint;
    j["log_Z"] = r.log_z;
    j["neg_log_Z"] = -r.log_z;
    BeliefSet b = r.marginals;
    b.z_variables.clear();
    b.z_factors.clear();
    j["marginals"] = beliefs_to_json(g, b);
    return j;
}

}  // namespace nbp

#endif  // NBP_IO_HPP
