#ifndef NBP_FACTOR_GRAPH_HPP
#define NBP_FACTOR_GRAPH_HPP

#include "nbp/error.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <queue>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace nbp {

struct FactorSpec {
    std::string name;
    std::vector<std::string> vars;
};

// Bipartite graph of variables and factors with a common state count q.
//
// Edges (a,i) are indexed densely in factor-major order: all edges of factor 0
// in the member order given at construction, then factor 1, and so on. Every
// per-edge vector and matrix in the library uses this order.
class FactorGraph {
public:
    struct Edge {
        std::size_t factor;
        std::size_t variable;
        std::size_t position;  // index of the variable inside the factor
    };

    static FactorGraph build(std::size_t q, std::vector<std::string> variables,
                             std::vector<FactorSpec> factors) {
        if (q < 2) {
            throw Error(ErrorCode::BadCardinality, "q must be at least 2, got " + std::to_string(q));
        }
        if (variables.empty()) {
            throw Error(ErrorCode::InvalidArgument, "graph has no variables");
        }
        FactorGraph g;
        g.q_ = q;
        g.variable_names_ = std::move(variables);
        for (std::size_t i = 0; i < g.variable_names_.size(); ++i) {
            if (!g.variable_lookup_.emplace(g.variable_names_[i], i).second) {
                throw Error(ErrorCode::DuplicateId, "variable '" + g.variable_names_[i] + "' declared twice");
            }
        }
        g.variable_edges_.resize(g.variable_names_.size());
        for (std::size_t a = 0; a < factors.size(); ++a) {
            auto& spec = factors[a];
            if (!g.factor_lookup_.emplace(spec.name, a).second) {
                throw Error(ErrorCode::DuplicateId, "factor '" + spec.name + "' declared twice");
            }
            if (spec.vars.empty()) {
                throw Error(ErrorCode::EmptyFactor, "factor '" + spec.name + "' has no variables");
            }
            std::vector<std::size_t> members;
            std::unordered_set<std::size_t> seen;
            for (const auto& v : spec.vars) {
                auto it = g.variable_lookup_.find(v);
                if (it == g.variable_lookup_.end()) {
                    throw Error(ErrorCode::UnknownVariable,
                                "factor '" + spec.name + "' references unknown variable '" + v + "'");
                }
                if (!seen.insert(it->second).second) {
                    throw Error(ErrorCode::DuplicateMembership,
                                "variable '" + v + "' listed twice in factor '" + spec.name + "'");
                }
                members.push_back(it->second);
            }
            g.factor_first_edge_.push_back(g.edges_.size());
            for (std::size_t p = 0; p < members.size(); ++p) {
                g.variable_edges_[members[p]].push_back(g.edges_.size());
                g.edges_.push_back({a, members[p], p});
            }
            g.factor_names_.push_back(std::move(spec.name));
            g.members_.push_back(std::move(members));
        }
        g.factor_first_edge_.push_back(g.edges_.size());
        g.check_connected();
        return g;
    }

    std::size_t q() const noexcept { return q_; }
    std::size_t num_variables() const noexcept { return variable_names_.size(); }
    std::size_t num_factors() const noexcept { return factor_names_.size(); }
    std::size_t num_edges() const noexcept { return edges_.size(); }

    const std::string& variable_name(std::size_t i) const { return variable_names_.at(i); }
    const std::string& factor_name(std::size_t a) const { return factor_names_.at(a); }
    const std::vector<std::string>& variable_names() const noexcept { return variable_names_; }
    const std::vector<std::string>& factor_names() const noexcept { return factor_names_; }

    std::size_t variable_index(const std::string& name) const {
        auto it = variable_lookup_.find(name);
        if (it == variable_lookup_.end()) throw Error(ErrorCode::UnknownVariable, "no variable '" + name + "'");
        return it->second;
    }
    std::size_t factor_index(const std::string& name) const {
        auto it = factor_lookup_.find(name);
        if (it == factor_lookup_.end()) throw Error(ErrorCode::InvalidArgument, "no factor '" + name + "'");
        return it->second;
    }

    std::span<const std::size_t> members(std::size_t a) const { return members_.at(a); }
    std::span<const std::size_t> variable_edges(std::size_t i) const { return variable_edges_.at(i); }
    std::size_t first_edge(std::size_t a) const { return factor_first_edge_.at(a); }
    const Edge& edge(std::size_t e) const { return edges_.at(e); }

    std::size_t edge_index(std::size_t a, std::size_t i) const {
        const auto m = members(a);
        for (std::size_t p = 0; p < m.size(); ++p) {
            if (m[p] == i) return factor_first_edge_[a] + p;
        }
        throw Error(ErrorCode::InvalidArgument,
                    "variable '" + variable_name(i) + "' is not in factor '" + factor_name(a) + "'");
    }

    std::size_t factor_degree(std::size_t a) const { return members_.at(a).size(); }
    std::size_t variable_degree(std::size_t i) const { return variable_edges_.at(i).size(); }

    // Number of independent cycles, |E| - |F| - |V| + 1.
    long cycle_count() const noexcept {
        return static_cast<long>(num_edges()) - static_cast<long>(num_factors()) -
               static_cast<long>(num_variables()) + 1;
    }

    // Number of joint configurations of a factor, q^{d_a}.
    std::size_t table_size(std::size_t a) const {
        std::size_t n = 1;
        for (std::size_t k = 0; k < factor_degree(a); ++k) n *= q_;
        return n;
    }

    // Stride of member `position` in a factor table (row-major, first member
    // most significant).
    std::size_t stride(std::size_t a, std::size_t position) const {
        std::size_t s = 1;
        for (std::size_t k = position + 1; k < factor_degree(a); ++k) s *= q_;
        return s;
    }

    // State of member `position` inside the flat configuration index.
    std::size_t state_of(std::size_t a, std::size_t config, std::size_t position) const {
        return (config / stride(a, position)) % q_;
    }

private:
    FactorGraph() = default;

    void check_connected() const {
        const std::size_t nf = num_factors();
        const std::size_t nodes = nf + num_variables();
        std::vector<char> seen(nodes, 0);
        std::queue<std::size_t> todo;
        // Start from variable 0; factors are nodes [0, nf), variables [nf, nodes).
        seen[nf] = 1;
        todo.push(nf);
        std::size_t visited = 1;
        while (!todo.empty()) {
            const std::size_t u = todo.front();
            todo.pop();
            auto visit = [&](std::size_t v) {
                if (!seen[v]) {
                    seen[v] = 1;
                    ++visited;
                    todo.push(v);
                }
            };
            if (u < nf) {
                for (auto i : members_[u]) visit(nf + i);
            } else {
                for (auto e : variable_edges_[u - nf]) visit(edges_[e].factor);
            }
        }
        if (visited != nodes) {
            throw Error(ErrorCode::DisconnectedGraph,
                        "factor graph has " + std::to_string(nodes - visited) + " unreachable nodes");
        }
    }

    std::size_t q_ = 2;
    std::vector<std::string> variable_names_;
    std::vector<std::string> factor_names_;
    std::unordered_map<std::string, std::size_t> variable_lookup_;
    std::unordered_map<std::string, std::size_t> factor_lookup_;
    std::vector<std::vector<std::size_t>> members_;
    std::vector<std::vector<std::size_t>> variable_edges_;
    std::vector<std::size_t> factor_first_edge_;
    std::vector<Edge> edges_;
};

// 0-1 adjacency of the oriented line graph: A[(a,i),(a',j)] = 1 iff j is shared
// by a and a', j != i and a' != a. Row (a,i) lists the messages that feed the
// update of m_{a->i}.
inline Eigen::MatrixXd line_graph_adjacency(const FactorGraph& g) {
    const auto n = static_cast<Eigen::Index>(g.num_edges());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const std::size_t a = g.edge(e).factor;
        const std::size_t i = g.edge(e).variable;
        for (auto j : g.members(a)) {
            if (j == i) continue;
            for (auto f : g.variable_edges(j)) {
                if (g.edge(f).factor != a) A(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(f)) = 1.0;
            }
        }
    }
    return A;
}

// Strong connectivity of the directed graph given by the nonzero pattern of M.
inline bool is_irreducible(const Eigen::MatrixXd& M, double zero_tol = 0.0) {
    const Eigen::Index n = M.rows();
    if (n == 0) return false;
    auto reaches_all = [&](bool transpose) {
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        std::vector<Eigen::Index> stack{0};
        seen[0] = 1;
        Eigen::Index count = 1;
        while (!stack.empty()) {
            const Eigen::Index u = stack.back();
            stack.pop_back();
            for (Eigen::Index v = 0; v < n; ++v) {
                const double w = transpose ? M(v, u) : M(u, v);
                if (std::abs(w) > zero_tol && !seen[static_cast<std::size_t>(v)]) {
                    seen[static_cast<std::size_t>(v)] = 1;
                    ++count;
                    stack.push_back(v);
                }
            }
        }
        return count == n;
    };
    return reaches_all(false) && reaches_all(true);
}

}  // namespace nbp

#endif  // NBP_FACTOR_GRAPH_HPP
