#ifndef NBP_LINALG_HPP
#define NBP_LINALG_HPP

#include "nbp/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <utility>
#include <vector>

namespace nbp {

using Spectrum = std::vector<std::complex<double>>;

inline constexpr Eigen::Index dense_eigen_limit = 4096;

// Strongly connected components of the nonzero pattern of M (Tarjan),
// returned in no particular order.
inline std::vector<std::vector<Eigen::Index>> strong_components(const Eigen::MatrixXd& M) {
    const Eigen::Index n = M.rows();
    std::vector<std::vector<Eigen::Index>> adj(static_cast<std::size_t>(n));
    for (Eigen::Index u = 0; u < n; ++u) {
        for (Eigen::Index v = 0; v < n; ++v) {
            if (M(u, v) != 0.0) adj[static_cast<std::size_t>(u)].push_back(v);
        }
    }
    std::vector<long> index(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0);
    std::vector<char> on_stack(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Index> stack;
    std::vector<std::vector<Eigen::Index>> out;
    long counter = 0;
    // iterative DFS: frames of (node, next neighbour position)
    std::vector<std::pair<Eigen::Index, std::size_t>> frames;
    for (Eigen::Index root = 0; root < n; ++root) {
        if (index[static_cast<std::size_t>(root)] >= 0) continue;
        frames.push_back({root, 0});
        while (!frames.empty()) {
            auto& [u, pos] = frames.back();
            const auto us = static_cast<std::size_t>(u);
            if (pos == 0 && index[us] < 0) {
                index[us] = low[us] = counter++;
                stack.push_back(u);
                on_stack[us] = 1;
            }
            if (pos < adj[us].size()) {
                const Eigen::Index v = adj[us][pos++];
                const auto vs = static_cast<std::size_t>(v);
                if (index[vs] < 0) {
                    frames.push_back({v, 0});
                } else if (on_stack[vs]) {
                    low[us] = std::min(low[us], index[vs]);
                }
                continue;
            }
            if (low[us] == index[us]) {
                std::vector<Eigen::Index> comp;
                Eigen::Index w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[static_cast<std::size_t>(w)] = 0;
                    comp.push_back(w);
                } while (w != u);
                out.push_back(std::move(comp));
            }
            const Eigen::Index done = u;
            frames.pop_back();
            if (!frames.empty()) {
                const auto ps = static_cast<std::size_t>(frames.back().first);
                low[ps] = std::min(low[ps], low[static_cast<std::size_t>(done)]);
            }
        }
    }
    return out;
}

// Eigenvalues of M. The matrix is block triangular in the order of the strong
// components of its pattern, so each component is solved on its own; acyclic
// parts then contribute exact zeros instead of rounding noise.
inline Spectrum eigenvalues(const Eigen::MatrixXd& M) {
    if (M.rows() != M.cols()) throw Error(ErrorCode::SizeMismatch, "eigenvalues of a non-square matrix");
    Spectrum out;
    out.reserve(static_cast<std::size_t>(M.rows()));
    for (const auto& comp : strong_components(M)) {
        const auto k = static_cast<Eigen::Index>(comp.size());
        if (k == 1) {
            out.emplace_back(M(comp[0], comp[0]), 0.0);
            continue;
        }
        Eigen::MatrixXd S(k, k);
        for (Eigen::Index r = 0; r < k; ++r) {
            for (Eigen::Index c = 0; c < k; ++c) S(r, c) = M(comp[static_cast<std::size_t>(r)], comp[static_cast<std::size_t>(c)]);
        }
        Eigen::EigenSolver<Eigen::MatrixXd> es(S, false);
        if (es.info() != Eigen::Success) throw Error(ErrorCode::InvalidArgument, "eigenvalue iteration failed");
        const auto ev = es.eigenvalues();
        out.insert(out.end(), ev.data(), ev.data() + ev.size());
    }
    return out;
}

// Power iteration for the spectral radius. The shift by the identity breaks
// the periodicity of nonnegative matrices so the iteration converges to the
// Perron value; for signed matrices it is only an estimate of rho.
inline double power_spectral_radius(const Eigen::MatrixXd& M, double tol = 1e-12, int max_iter = 100000,
                                    double shift = 0.0) {
    const Eigen::Index n = M.rows();
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
    double lambda = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd w = M * v + shift * v;
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        w /= norm;
        const double next = norm - shift;
        const bool done = std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next));
        lambda = next;
        v = w;
        if (done) break;
    }
    return std::abs(lambda);
}

inline double spectral_radius(const Eigen::MatrixXd& M) {
    if (M.rows() == 0) return 0.0;
    if (M.rows() <= dense_eigen_limit) {
        double r = 0.0;
        for (const auto& z : eigenvalues(M)) r = std::max(r, std::abs(z));
        return r;
    }
    const bool nonnegative = (M.array() >= 0.0).all();
    return power_spectral_radius(M, 1e-12, 100000, nonnegative ? 1.0 : 0.0);
}

// Greedy nearest matching of every `small` value (with modulus above
// zero_tol) into `large`. Returns the worst matched distance, or +inf if some
// value found no partner.
inline double submultiset_distance(const Spectrum& small, const Spectrum& large, double zero_tol) {
    std::vector<char> used(large.size(), 0);
    double worst = 0.0;
    for (const auto& z : small) {
        if (std::abs(z) <= zero_tol) continue;
        double best = std::numeric_limits<double>::infinity();
        std::size_t at = large.size();
        for (std::size_t k = 0; k < large.size(); ++k) {
            if (used[k]) continue;
            const double d = std::abs(z - large[k]);
            if (d < best) {
                best = d;
                at = k;
            }
        }
        if (at == large.size()) return std::numeric_limits<double>::infinity();
        used[at] = 1;
        worst = std::max(worst, best);
    }
    return worst;
}

// Symmetric Hausdorff distance between the nonzero parts of two spectra.
inline double nonzero_spectrum_distance(const Spectrum& a, const Spectrum& b, double zero_tol) {
    return std::max(submultiset_distance(a, b, zero_tol), submultiset_distance(b, a, zero_tol));
}

}  // namespace nbp

#endif  // NBP_LINALG_HPP
