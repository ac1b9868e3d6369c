#ifndef NBP_ANALYSIS_HPP
#define NBP_ANALYSIS_HPP

#include "nbp/bp.hpp"
#include "nbp/error.hpp"
#include "nbp/factor_graph.hpp"
#include "nbp/linalg.hpp"
#include "nbp/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace nbp {

// Conditional beliefs for one ordered pair (i, a, j) of distinct members of a
// factor: B(k, l) = b_a(x_j = l | x_i = k), K = B^(iaj) B^(jai).
struct PairKernel {
    std::size_t factor = 0;
    std::size_t from = 0;  // variable i
    std::size_t to = 0;    // variable j
    std::size_t from_edge = 0;
    std::size_t to_edge = 0;
    Eigen::MatrixXd B;
    Eigen::MatrixXd K;
    double k_second = 0.0;   // second eigenvalue of K (real, in [0, 1])
    double b_second = 0.0;   // modulus of the second eigenvalue of B
    double mu2 = 0.0;        // sqrt(k_second)
};

struct ConditionalKernels {
    std::size_t q = 0;
    std::vector<PairKernel> pairs;

    // Index of the pair (i, a, j), given the edges (a,i) and (a,j).
    const PairKernel& at(std::size_t from_edge, std::size_t to_edge) const {
        for (const auto& p : pairs) {
            if (p.from_edge == from_edge && p.to_edge == to_edge) return p;
        }
        throw Error(ErrorCode::InvalidArgument, "no kernel for the requested pair");
    }
};

namespace detail {

inline void check_positive_beliefs(const BeliefSet& b) {
    for (const auto& t : b.variables) {
        for (double v : t) {
            if (!(v > 0.0)) throw Error(ErrorCode::NonPositiveBeliefs, "variable belief has a non-positive entry");
        }
    }
    for (const auto& t : b.factors) {
        for (double v : t) {
            if (!(v > 0.0)) throw Error(ErrorCode::NonPositiveBeliefs, "factor belief has a non-positive entry");
        }
    }
}

// Joint marginal of b_a on the members at positions p and r.
inline Eigen::MatrixXd pair_marginal(const FactorGraph& g, std::size_t a, const Table& b_a, std::size_t p,
                                     std::size_t r) {
    const auto q = static_cast<Eigen::Index>(g.q());
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(q, q);
    for (std::size_t c = 0; c < b_a.size(); ++c) {
        P(static_cast<Eigen::Index>(g.state_of(a, c, p)), static_cast<Eigen::Index>(g.state_of(a, c, r))) += b_a[c];
    }
    return P;
}

}  // namespace detail

inline ConditionalKernels conditional_kernels(const FactorGraph& g, const BeliefSet& b, double tol = 1e-9) {
    check_belief_shape(g, b);
    detail::check_positive_beliefs(b);
    if (const double r = compatibility_residual(g, b); r > tol) {
        throw Error(ErrorCode::IncompatibleBeliefs, "beliefs violate marginal compatibility (residual " +
                                                        std::to_string(r) + ")");
    }
    ConditionalKernels out;
    out.q = g.q();
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        const auto mem = g.members(a);
        const std::size_t first = g.first_edge(a);
        for (std::size_t p = 0; p < mem.size(); ++p) {
            for (std::size_t r = 0; r < mem.size(); ++r) {
                if (p == r) continue;
                const Eigen::MatrixXd P = detail::pair_marginal(g, a, b.factors[a], p, r);
                const Eigen::VectorXd row = P.rowwise().sum();
                const Eigen::VectorXd col = P.colwise().sum().transpose();
                PairKernel k;
                k.factor = a;
                k.from = mem[p];
                k.to = mem[r];
                k.from_edge = first + p;
                k.to_edge = first + r;
                k.B = row.asDiagonal().inverse() * P;
                const Eigen::MatrixXd Brev = col.asDiagonal().inverse() * P.transpose();
                k.K = k.B * Brev;
                // K is reversible w.r.t. b_i: its eigenvalues are the squared
                // singular values of D_i^{-1/2} P D_j^{-1/2}.
                const Eigen::MatrixXd Q =
                    row.cwiseSqrt().cwiseInverse().asDiagonal() * P * col.cwiseSqrt().cwiseInverse().asDiagonal();
                Eigen::JacobiSVD<Eigen::MatrixXd> svd(Q);
                const auto sv = svd.singularValues();
                k.mu2 = sv.size() > 1 ? sv(1) : 0.0;
                k.k_second = k.mu2 * k.mu2;
                auto ev = eigenvalues(k.B);
                std::sort(ev.begin(), ev.end(), [](auto x, auto y) { return std::abs(x) > std::abs(y); });
                k.b_second = ev.size() > 1 ? std::abs(ev[1]) : 0.0;
                out.pairs.push_back(std::move(k));
            }
        }
    }
    return out;
}

// Recovers the messages of a BP fixed point from its beliefs. log(b_a / psi_a /
// prod_i b_i) must split into a sum of per-member terms, each of which is
// -log m_{a->i} up to a constant, and b_i must then be proportional to
// phi_i prod_a m_{a->i}. Returned messages sum to one per edge.
inline MessageState messages_from_beliefs(const Model& model, const BeliefSet& b, double tol = 1e-7) {
    const auto& g = model.graph();
    check_belief_shape(g, b);
    detail::check_positive_beliefs(b);
    if (const double r = compatibility_residual(g, b); r > tol) {
        throw Error(ErrorCode::NotAFixedPoint, "beliefs violate marginal compatibility (residual " +
                                                   std::to_string(r) + ")");
    }
    if (const double r = normalization_residual(b); r > tol) {
        throw Error(ErrorCode::NotAFixedPoint, "beliefs are not normalized (residual " + std::to_string(r) + ")");
    }
    const std::size_t q = g.q();
    MessageState m = MessageState::constant(g, 1.0);
    std::vector<double> logm(m.values.size(), 0.0);
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        const auto mem = g.members(a);
        const auto psi = model.psi(a);
        const std::size_t n = psi.size();
        std::vector<double> L(n);
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            double v = std::log(b.factors[a][c]) - std::log(psi[c]);
            for (std::size_t p = 0; p < mem.size(); ++p) v -= std::log(b.variables[mem[p]][g.state_of(a, c, p)]);
            L[c] = v;
            mean += v;
        }
        mean /= static_cast<double>(n);
        std::vector<double> gp(mem.size() * q, 0.0);
        const double per_state = static_cast<double>(n / q);
        for (std::size_t c = 0; c < n; ++c) {
            for (std::size_t p = 0; p < mem.size(); ++p) gp[p * q + g.state_of(a, c, p)] += L[c] / per_state;
        }
        for (auto& v : gp) v -= mean;
        double worst = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            double r = mean;
            for (std::size_t p = 0; p < mem.size(); ++p) r += gp[p * q + g.state_of(a, c, p)];
            worst = std::max(worst, std::abs(L[c] - r));
        }
        if (worst > tol) {
            throw Error(ErrorCode::NotAFixedPoint, "belief of factor '" + g.factor_name(a) +
                                                       "' is not of BP form (residual " + std::to_string(worst) + ")");
        }
        const std::size_t first = g.first_edge(a);
        for (std::size_t p = 0; p < mem.size(); ++p) {
            for (std::size_t x = 0; x < q; ++x) logm[(first + p) * q + x] = -gp[p * q + x];
        }
    }
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t x = 0; x < q; ++x) {
            double v = std::log(b.variables[i][x]) - std::log(model.phi(i)[x]);
            for (auto e : g.variable_edges(i)) v -= logm[e * q + x];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo > tol) {
            throw Error(ErrorCode::NotAFixedPoint, "belief of variable '" + g.variable_name(i) +
                                                       "' is inconsistent with the factor beliefs (residual " +
                                                       std::to_string(hi - lo) + ")");
        }
    }
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        double s = 0.0;
        for (std::size_t x = 0; x < q; ++x) s += (m.values[e * q + x] = std::exp(logm[e * q + x]));
        for (std::size_t x = 0; x < q; ++x) m.values[e * q + x] /= s;
    }
    return m;
}

// Jacobian of the plain update in log-message coordinates at a fixed point:
// J[(ai,k),(a'j,l)] = B^(iaj)(k,l) A[(ai),(a'j)].
inline Eigen::MatrixXd jacobian_plain(const FactorGraph& g, const ConditionalKernels& ker) {
    const auto q = static_cast<Eigen::Index>(g.q());
    const auto n = static_cast<Eigen::Index>(g.num_edges());
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n * q, n * q);
    for (const auto& pk : ker.pairs) {
        // messages m_{a'->j} with a' != a feed m_{a->i}
        for (auto f : g.variable_edges(pk.to)) {
            if (g.edge(f).factor == pk.factor) continue;
            J.block(static_cast<Eigen::Index>(pk.from_edge) * q, static_cast<Eigen::Index>(f) * q, q, q) = pk.B;
        }
    }
    return J;
}

// Per-edge projector 1 m_e^T with m_e normalized to sum one.
inline Eigen::MatrixXd normalization_projector(const FactorGraph& g, const MessageState& m) {
    const auto q = static_cast<Eigen::Index>(g.q());
    const auto n = static_cast<Eigen::Index>(g.num_edges());
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n * q, n * q);
    for (Eigen::Index e = 0; e < n; ++e) {
        const auto v = m.edge(static_cast<std::size_t>(e));
        double s = 0.0;
        for (double x : v) s += x;
        for (Eigen::Index k = 0; k < q; ++k) {
            for (Eigen::Index l = 0; l < q; ++l) M(e * q + k, e * q + l) = v[static_cast<std::size_t>(l)] / s;
        }
    }
    return M;
}

// Per-edge uniform averaging 1 1^T / q.
inline Eigen::MatrixXd averaging_projector(const FactorGraph& g) {
    const auto q = static_cast<Eigen::Index>(g.q());
    const auto n = static_cast<Eigen::Index>(g.num_edges());
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n * q, n * q);
    for (Eigen::Index e = 0; e < n; ++e) M.block(e * q, e * q, q, q).setConstant(1.0 / static_cast<double>(q));
    return M;
}

// Jacobian of the mess-normalized update: (I - M) J.
inline Eigen::MatrixXd jacobian_normalized(const FactorGraph& g, const ConditionalKernels& ker,
                                           const MessageState& m) {
    const Eigen::MatrixXd J = jacobian_plain(g, ker);
    return J - normalization_projector(g, m) * J;
}

// J acting on log-messages modulo per-edge constants: (I - M0) J.
inline Eigen::MatrixXd jacobian_quotient(const FactorGraph& g, const ConditionalKernels& ker) {
    const Eigen::MatrixXd J = jacobian_plain(g, ker);
    return J - averaging_projector(g) * J;
}

// Model-level entry points: the beliefs are first checked to be a BP fixed point.
inline Eigen::MatrixXd jacobian_plain(const Model& model, const BeliefSet& b, double fp_tol = 1e-7) {
    messages_from_beliefs(model, b, fp_tol);
    return jacobian_plain(model.graph(), conditional_kernels(model.graph(), b, fp_tol));
}
inline Eigen::MatrixXd jacobian_normalized(const Model& model, const BeliefSet& b, double fp_tol = 1e-7) {
    const auto m = messages_from_beliefs(model, b, fp_tol);
    return jacobian_normalized(model.graph(), conditional_kernels(model.graph(), b, fp_tol), m);
}
inline Eigen::MatrixXd jacobian_quotient(const Model& model, const BeliefSet& b, double fp_tol = 1e-7) {
    messages_from_beliefs(model, b, fp_tol);
    return jacobian_quotient(model.graph(), conditional_kernels(model.graph(), b, fp_tol));
}

// Copies an edge vector across the q states of every edge.
inline Eigen::VectorXcd lift_edge_vector(const Eigen::VectorXcd& v, std::size_t q) {
    const auto Q = static_cast<Eigen::Index>(q);
    Eigen::VectorXcd out(v.size() * Q);
    for (Eigen::Index e = 0; e < v.size(); ++e) out.segment(e * Q, Q).setConstant(v(e));
    return out;
}

inline constexpr double marginal_band = 1e-9;

inline std::string classify_radius(double rho) {
    if (rho > 1.0 + marginal_band) return "unstable";
    if (rho < 1.0 - marginal_band) return "stable";
    return "marginal";
}

struct StabilityReport {
    long C = 0;
    double lambda1 = 0.0;
    double mu2 = 0.0;      // max over pairs of sqrt(second eigenvalue of K)
    double mu2_B = 0.0;    // max over pairs of |second eigenvalue of B|
    double rho_J = 0.0;
    double rho_Jtilde = 0.0;
    double rho_Jquotient = 0.0;
    bool A_irreducible = false;
    bool J_irreducible = false;
    bool homogeneous = false;  // all B^(iaj) identical
    double fixed_point_residual = 0.0;

    double lambda1_mu2() const { return lambda1 * mu2; }
    // Plain BP cannot have a stable fixed point when C > 1 and J is irreducible.
    bool plain_unstable() const { return C > 1 && J_irreducible; }
    std::string plain_verdict() const {
        if (!J_irreducible) return rho_J == 0.0 ? "stable" : "inconclusive";
        return classify_radius(rho_J);
    }
    bool sufficient_stable() const { return lambda1 * mu2 < 1.0; }
    std::string normalized_verdict() const { return classify_radius(rho_Jtilde); }
    std::optional<double> homogeneous_gap() const {
        if (!homogeneous) return std::nullopt;
        return std::abs(rho_Jtilde - lambda1 * mu2_B);
    }
};

struct StabilityOptions {
    double fixed_point_tol = 1e-7;
    double homogeneous_tol = 1e-12;
};

inline StabilityReport stability_report(const Model& model, const BeliefSet& b, const StabilityOptions& opts = {}) {
    const auto& g = model.graph();
    const MessageState m = messages_from_beliefs(model, b, opts.fixed_point_tol);
    const auto ker = conditional_kernels(g, b, opts.fixed_point_tol);
    StabilityReport r;
    r.C = g.cycle_count();
    r.fixed_point_residual = relative_fixed_point_residual(model, m, Normalization::Mess);
    const Eigen::MatrixXd A = line_graph_adjacency(g);
    r.lambda1 = spectral_radius(A);
    r.A_irreducible = is_irreducible(A);
    for (const auto& pk : ker.pairs) {
        r.mu2 = std::max(r.mu2, pk.mu2);
        r.mu2_B = std::max(r.mu2_B, pk.b_second);
    }
    r.homogeneous = !ker.pairs.empty();
    for (const auto& pk : ker.pairs) {
        if ((pk.B - ker.pairs.front().B).cwiseAbs().maxCoeff() > opts.homogeneous_tol) r.homogeneous = false;
    }
    const Eigen::MatrixXd J = jacobian_plain(g, ker);
    r.J_irreducible = is_irreducible(J);
    r.rho_J = spectral_radius(J);
    r.rho_Jtilde = spectral_radius(J - normalization_projector(g, m) * J);
    r.rho_Jquotient = spectral_radius(J - averaging_projector(g) * J);
    return r;
}

}  // namespace nbp

#endif  // NBP_ANALYSIS_HPP
