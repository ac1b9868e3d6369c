#ifndef NBP_MODEL_HPP
#define NBP_MODEL_HPP

#include "nbp/error.hpp"
#include "nbp/factor_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nbp {

using Table = std::vector<double>;

inline constexpr std::uint64_t default_state_cap = std::uint64_t{1} << 20;

// Pairwise-positive Markov random field p(x) ∝ prod_i phi_i(x_i) prod_a psi_a(x_a).
// Factor tables are row-major with the first listed member most significant.
class Model {
public:
    Model(FactorGraph graph, std::vector<Table> phi, std::vector<Table> psi)
        : graph_(std::move(graph)), phi_(std::move(phi)), psi_(std::move(psi)) {
        if (phi_.size() != graph_.num_variables()) {
            throw Error(ErrorCode::SizeMismatch, "expected " + std::to_string(graph_.num_variables()) +
                                                     " variable tables, got " + std::to_string(phi_.size()));
        }
        if (psi_.size() != graph_.num_factors()) {
            throw Error(ErrorCode::SizeMismatch, "expected " + std::to_string(graph_.num_factors()) +
                                                     " factor tables, got " + std::to_string(psi_.size()));
        }
        for (std::size_t i = 0; i < phi_.size(); ++i) {
            check_table(phi_[i], graph_.q(), "variable '" + graph_.variable_name(i) + "'");
        }
        for (std::size_t a = 0; a < psi_.size(); ++a) {
            check_table(psi_[a], graph_.table_size(a), "factor '" + graph_.factor_name(a) + "'");
        }
    }

    // All-ones potentials.
    static Model uniform(FactorGraph graph) {
        std::vector<Table> phi(graph.num_variables(), Table(graph.q(), 1.0));
        std::vector<Table> psi;
        for (std::size_t a = 0; a < graph.num_factors(); ++a) psi.emplace_back(graph.table_size(a), 1.0);
        return Model(std::move(graph), std::move(phi), std::move(psi));
    }

    const FactorGraph& graph() const noexcept { return graph_; }
    std::span<const double> phi(std::size_t i) const { return phi_.at(i); }
    std::span<const double> psi(std::size_t a) const { return psi_.at(a); }
    const std::vector<Table>& phi_tables() const noexcept { return phi_; }
    const std::vector<Table>& psi_tables() const noexcept { return psi_; }

private:
    static void check_table(const Table& t, std::size_t expected, const std::string& what) {
        if (t.size() != expected) {
            throw Error(ErrorCode::SizeMismatch, what + " table has " + std::to_string(t.size()) +
                                                     " entries, expected " + std::to_string(expected));
        }
        for (double v : t) {
            if (!(v > 0.0) || !std::isfinite(v)) {
                throw Error(ErrorCode::NonPositivePotential, what + " table has a non-positive entry");
            }
        }
    }

    FactorGraph graph_;
    std::vector<Table> phi_;
    std::vector<Table> psi_;
};

// Single-variable and factor beliefs with the constants that normalized them.
struct BeliefSet {
    std::vector<Table> variables;
    std::vector<Table> factors;
    std::vector<double> z_variables;
    std::vector<double> z_factors;
};

// b_{i|a}: marginal of the factor belief b_a on its member at `position`.
inline Table factor_marginal(const FactorGraph& g, std::size_t a, std::span<const double> b_a,
                             std::size_t position) {
    Table out(g.q(), 0.0);
    const std::size_t stride = g.stride(a, position);
    for (std::size_t c = 0; c < b_a.size(); ++c) out[(c / stride) % g.q()] += b_a[c];
    return out;
}

// max over edges and states of |b_{i|a}(x) - b_i(x)|.
inline double compatibility_residual(const FactorGraph& g, const BeliefSet& b) {
    double r = 0.0;
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto& ed = g.edge(e);
        const Table m = factor_marginal(g, ed.factor, b.factors.at(ed.factor), ed.position);
        for (std::size_t x = 0; x < g.q(); ++x) r = std::max(r, std::abs(m[x] - b.variables.at(ed.variable)[x]));
    }
    return r;
}

// max over all tables of |sum - 1|.
inline double normalization_residual(const BeliefSet& b) {
    double r = 0.0;
    auto check = [&](const Table& t) {
        double s = 0.0;
        for (double v : t) s += v;
        r = std::max(r, std::abs(s - 1.0));
    };
    for (const auto& t : b.variables) check(t);
    for (const auto& t : b.factors) check(t);
    return r;
}

inline void check_belief_shape(const FactorGraph& g, const BeliefSet& b) {
    if (b.variables.size() != g.num_variables() || b.factors.size() != g.num_factors()) {
        throw Error(ErrorCode::SizeMismatch, "belief set does not match graph");
    }
    for (const auto& t : b.variables) {
        if (t.size() != g.q()) throw Error(ErrorCode::SizeMismatch, "variable belief has wrong length");
    }
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        if (b.factors[a].size() != g.table_size(a)) {
            throw Error(ErrorCode::SizeMismatch, "factor belief of '" + g.factor_name(a) + "' has wrong length");
        }
    }
}

inline BeliefSet uniform_beliefs(const FactorGraph& g) {
    BeliefSet b;
    const double q = static_cast<double>(g.q());
    b.variables.assign(g.num_variables(), Table(g.q(), 1.0 / q));
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        const auto n = g.table_size(a);
        b.factors.emplace_back(n, 1.0 / static_cast<double>(n));
    }
    b.z_variables.assign(g.num_variables(), 1.0);
    b.z_factors.assign(g.num_factors(), 1.0);
    return b;
}

struct ExactResult {
    BeliefSet marginals;  // the z_* fields hold Z_joint, the mass of every unnormalized marginal
    double z_joint = 0.0;
    double log_z = 0.0;
};

// Brute-force marginals by enumerating all q^|V| joint states.
inline ExactResult exact_marginals(const Model& model, std::uint64_t state_cap = default_state_cap) {
    const auto& g = model.graph();
    const std::size_t n = g.num_variables();
    const std::size_t q = g.q();
    std::uint64_t states = 1;
    for (std::size_t i = 0; i < n; ++i) {
        if (states > state_cap / q) {
            throw Error(ErrorCode::StateSpaceTooLarge, "q^|V| = " + std::to_string(q) + "^" + std::to_string(n) +
                                                           " exceeds cap " + std::to_string(state_cap));
        }
        states *= q;
    }
    if (states > state_cap) {
        throw Error(ErrorCode::StateSpaceTooLarge, "joint state space exceeds cap " + std::to_string(state_cap));
    }

    ExactResult r;
    r.marginals.variables.assign(n, Table(q, 0.0));
    for (std::size_t a = 0; a < g.num_factors(); ++a) r.marginals.factors.emplace_back(g.table_size(a), 0.0);

    std::vector<std::size_t> x(n, 0);
    std::vector<std::size_t> config(g.num_factors());
    for (std::uint64_t s = 0; s < states; ++s) {
        double w = 1.0;
        for (std::size_t i = 0; i < n; ++i) w *= model.phi(i)[x[i]];
        for (std::size_t a = 0; a < g.num_factors(); ++a) {
            std::size_t c = 0;
            for (auto i : g.members(a)) c = c * q + x[i];
            config[a] = c;
            w *= model.psi(a)[c];
        }
        r.z_joint += w;
        for (std::size_t i = 0; i < n; ++i) r.marginals.variables[i][x[i]] += w;
        for (std::size_t a = 0; a < g.num_factors(); ++a) r.marginals.factors[a][config[a]] += w;
        // odometer, last variable fastest
        for (std::size_t k = n; k-- > 0;) {
            if (++x[k] < q) break;
            x[k] = 0;
        }
    }
    for (auto& t : r.marginals.variables) {
        for (auto& v : t) v /= r.z_joint;
    }
    for (auto& t : r.marginals.factors) {
        for (auto& v : t) v /= r.z_joint;
    }
    r.marginals.z_variables.assign(n, r.z_joint);
    r.marginals.z_factors.assign(g.num_factors(), r.z_joint);
    r.log_z = std::log(r.z_joint);
    return r;
}

// Potentials phi_i = b_i, psi_a = b_a / prod_{i in a} b_i, for which the
// all-ones message vector is a plain BP fixed point with beliefs equal to target.
inline Model prescribed_belief_model(const FactorGraph& g, const BeliefSet& target, double tol = 1e-9) {
    check_belief_shape(g, target);
    auto positive = [](const Table& t) { return std::all_of(t.begin(), t.end(), [](double v) { return v > 0.0; }); };
    for (const auto& t : target.variables) {
        if (!positive(t)) throw Error(ErrorCode::NonPositiveBeliefs, "variable belief has a non-positive entry");
    }
    for (const auto& t : target.factors) {
        if (!positive(t)) throw Error(ErrorCode::NonPositiveBeliefs, "factor belief has a non-positive entry");
    }
    if (const double r = normalization_residual(target); r > tol) {
        throw Error(ErrorCode::IncompatibleBeliefs, "beliefs not normalized (residual " + std::to_string(r) + ")");
    }
    if (const double r = compatibility_residual(g, target); r > tol) {
        throw Error(ErrorCode::IncompatibleBeliefs,
                    "factor beliefs do not marginalize to variable beliefs (residual " + std::to_string(r) + ")");
    }
    std::vector<Table> phi = target.variables;
    std::vector<Table> psi;
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        Table t = target.factors[a];
        const auto mem = g.members(a);
        for (std::size_t c = 0; c < t.size(); ++c) {
            double denom = 1.0;
            for (std::size_t p = 0; p < mem.size(); ++p) denom *= target.variables[mem[p]][g.state_of(a, c, p)];
            t[c] /= denom;
        }
        psi.push_back(std::move(t));
    }
    return Model(g, std::move(phi), std::move(psi));
}

// Log-potentials i.i.d. uniform in [-strength, strength].
inline Model random_model(const FactorGraph& g, std::uint64_t seed, double strength) {
    if (!(strength > 0.0)) throw Error(ErrorCode::InvalidArgument, "strength must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-strength, strength);
    std::vector<Table> phi(g.num_variables(), Table(g.q()));
    for (auto& t : phi) {
        for (auto& v : t) v = std::exp(u(rng));
    }
    std::vector<Table> psi;
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        Table t(g.table_size(a));
        for (auto& v : t) v = std::exp(u(rng));
        psi.push_back(std::move(t));
    }
    return Model(g, std::move(phi), std::move(psi));
}

}  // namespace nbp

#endif  // NBP_MODEL_HPP
