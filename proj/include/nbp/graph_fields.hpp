#ifndef NBP_GRAPH_FIELDS_HPP
#define NBP_GRAPH_FIELDS_HPP

#include "nbp/error.hpp"
#include "nbp/factor_graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

// Calculus on the nodes and edges of a factor graph.
//
// Scalar fields live on the nodes: factors first (index a), then variables
// (index |F| + i). Vector fields live on the edges in EdgeIndex order.

namespace nbp {

struct ScalarField {
    Eigen::VectorXd values;

    static ScalarField zeros(const FactorGraph& g) {
        return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.num_factors() + g.num_variables()))};
    }
    double& factor(const FactorGraph&, std::size_t a) { return values(static_cast<Eigen::Index>(a)); }
    double& variable(const FactorGraph& g, std::size_t i) {
        return values(static_cast<Eigen::Index>(g.num_factors() + i));
    }
    double factor(const FactorGraph&, std::size_t a) const { return values(static_cast<Eigen::Index>(a)); }
    double variable(const FactorGraph& g, std::size_t i) const {
        return values(static_cast<Eigen::Index>(g.num_factors() + i));
    }
};

struct VectorField {
    Eigen::VectorXd values;

    static VectorField zeros(const FactorGraph& g) {
        return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.num_edges()))};
    }
};

struct DivergenceDefect {
    Eigen::VectorXd factor_sums;    // sum_{i in a} w_ai
    Eigen::VectorXd variable_sums;  // sum_{a ni i} w_ai

    double max_abs() const {
        double m = 0.0;
        if (factor_sums.size() > 0) m = std::max(m, factor_sums.cwiseAbs().maxCoeff());
        if (variable_sums.size() > 0) m = std::max(m, variable_sums.cwiseAbs().maxCoeff());
        return m;
    }
};

struct FieldDecomposition {
    VectorField gradient;
    VectorField divergenceless;
    ScalarField potential;  // least-squares potential with gradient = grad(potential)
};

namespace detail {

inline void check_scalar(const FactorGraph& g, const ScalarField& u) {
    const auto n = static_cast<Eigen::Index>(g.num_factors() + g.num_variables());
    if (u.values.size() != n) {
        throw Error(ErrorCode::SizeMismatch, "scalar field has " + std::to_string(u.values.size()) +
                                                 " entries, graph has " + std::to_string(n) + " nodes");
    }
}

inline void check_vector(const FactorGraph& g, const VectorField& w) {
    const auto n = static_cast<Eigen::Index>(g.num_edges());
    if (w.values.size() != n) {
        throw Error(ErrorCode::SizeMismatch, "vector field has " + std::to_string(w.values.size()) +
                                                 " entries, graph has " + std::to_string(n) + " edges");
    }
}

}  // namespace detail

// Matrix of the gradient operator, |E| x (|F|+|V|): row (a,i) has +1 on a and -1 on i.
// Its Gram matrix G^T G is the graph Laplacian.
inline Eigen::MatrixXd gradient_operator(const FactorGraph& g) {
    const auto nf = g.num_factors();
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.num_edges()),
                                              static_cast<Eigen::Index>(nf + g.num_variables()));
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto& ed = g.edge(e);
        G(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(ed.factor)) = 1.0;
        G(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(nf + ed.variable)) = -1.0;
    }
    return G;
}

inline DivergenceDefect divergence_defect(const FactorGraph& g, const VectorField& w) {
    detail::check_vector(g, w);
    DivergenceDefect d{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.num_factors())),
                       Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.num_variables()))};
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto& ed = g.edge(e);
        const double v = w.values(static_cast<Eigen::Index>(e));
        d.factor_sums(static_cast<Eigen::Index>(ed.factor)) += v;
        d.variable_sums(static_cast<Eigen::Index>(ed.variable)) += v;
    }
    return d;
}

inline VectorField gradient_field(const FactorGraph& g, const ScalarField& u) {
    detail::check_scalar(g, u);
    VectorField w = VectorField::zeros(g);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto& ed = g.edge(e);
        w.values(static_cast<Eigen::Index>(e)) = u.factor(g, ed.factor) - u.variable(g, ed.variable);
    }
    return w;
}

// Orthogonal split w = gradient + divergenceless, by least-squares projection
// onto the range of the gradient operator.
inline FieldDecomposition decompose(const FactorGraph& g, const VectorField& w) {
    detail::check_vector(g, w);
    const Eigen::MatrixXd G = gradient_operator(g);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(G);
    ScalarField u{cod.solve(w.values)};
    VectorField grad{G * u.values};
    VectorField div{w.values - grad.values};
    return {std::move(grad), std::move(div), std::move(u)};
}

inline ScalarField laplace_apply(const FactorGraph& g, const ScalarField& u) {
    detail::check_scalar(g, u);
    ScalarField out = ScalarField::zeros(g);
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        double s = static_cast<double>(g.factor_degree(a)) * u.factor(g, a);
        for (auto i : g.members(a)) s -= u.variable(g, i);
        out.factor(g, a) = s;
    }
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        double s = static_cast<double>(g.variable_degree(i)) * u.variable(g, i);
        for (auto e : g.variable_edges(i)) s -= u.factor(g, g.edge(e).factor);
        out.variable(g, i) = s;
    }
    return out;
}

// sum_a u_a + sum_i (1 - d_i) u_i. Invariant under constant shifts of u when C = 1.
inline double single_cycle_compatibility(const FactorGraph& g, const ScalarField& u) {
    detail::check_scalar(g, u);
    double s = 0.0;
    for (std::size_t a = 0; a < g.num_factors(); ++a) s += u.factor(g, a);
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        s += (1.0 - static_cast<double>(g.variable_degree(i))) * u.variable(g, i);
    }
    return s;
}

struct SolveOptions {
    double gradient_tol = 1e-8;       // relative divergenceless residual accepted in y
    double compatibility_tol = 1e-9;  // |sum_a y_a + sum_i (1-d_i) y_i| accepted when C = 1
    double residual_tol = 1e-9;       // max-norm of (I - A)x - y
};

// Minimum-norm solution of (I - A) x = y for a gradient field y.
inline VectorField solve_identity_minus_A(const FactorGraph& g, const VectorField& y,
                                          const SolveOptions& opts = {}) {
    detail::check_vector(g, y);
    const auto parts = decompose(g, y);
    const double ynorm = y.values.norm();
    if (parts.divergenceless.values.norm() > opts.gradient_tol * ynorm) {
        throw Error(ErrorCode::NotGradientInput,
                    "right-hand side has divergenceless component of norm " +
                        std::to_string(parts.divergenceless.values.norm()));
    }
    if (g.cycle_count() == 1) {
        const double s = single_cycle_compatibility(g, parts.potential);
        if (std::abs(s) > opts.compatibility_tol) {
            throw Error(ErrorCode::IncompatibleC1,
                        "single-cycle graph: sum_a y_a + sum_i (1-d_i) y_i = " + std::to_string(s));
        }
    }
    const auto n = static_cast<Eigen::Index>(g.num_edges());
    const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) - line_graph_adjacency(g);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(M);
    VectorField x{cod.solve(y.values)};
    const double residual = n == 0 ? 0.0 : (M * x.values - y.values).cwiseAbs().maxCoeff();
    if (!(residual <= opts.residual_tol)) {
        throw Error(g.cycle_count() == 1 ? ErrorCode::IncompatibleC1 : ErrorCode::InvalidArgument,
                    "(I - A) x = y left residual " + std::to_string(residual));
    }
    return x;
}

}  // namespace nbp

#endif  // NBP_GRAPH_FIELDS_HPP
