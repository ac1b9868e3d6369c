#ifndef NBP_FREE_ENERGY_HPP
#define NBP_FREE_ENERGY_HPP

#include "nbp/error.hpp"
#include "nbp/model.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace nbp {

// Bethe free energy of the measure beta = scale * b, evaluated term by term:
//   sum_a sum beta_a log(beta_a / psi_a) + sum_i sum beta_i log(beta_i^{1-d_i} / phi_i).
inline double bethe_free_energy(const Model& model, const BeliefSet& b, double scale = 1.0) {
    const auto& g = model.graph();
    check_belief_shape(g, b);
    if (!(scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "scale must be positive");
    double F = 0.0;
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        const auto psi = model.psi(a);
        for (std::size_t c = 0; c < psi.size(); ++c) {
            const double beta = scale * b.factors[a][c];
            if (beta > 0.0) F += beta * std::log(beta / psi[c]);
        }
    }
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        const double d = static_cast<double>(g.variable_degree(i));
        const auto phi = model.phi(i);
        for (std::size_t x = 0; x < g.q(); ++x) {
            const double beta = scale * b.variables[i][x];
            if (beta > 0.0) F += beta * ((1.0 - d) * std::log(beta) - std::log(phi[x]));
        }
    }
    return F;
}

// |F(Zb) - Z (F(b) + (1 - C) log Z)|
inline double free_energy_scaling_check(const Model& model, const BeliefSet& b, double Z) {
    const double C = static_cast<double>(model.graph().cycle_count());
    const double lhs = bethe_free_energy(model, b, Z);
    const double rhs = Z * (bethe_free_energy(model, b) + (1.0 - C) * std::log(Z));
    return std::abs(lhs - rhs);
}

struct ScaleResult {
    double z_hat = 0.0;
    double f_hat = 0.0;         // F at the optimal scale, (C-1) Z_hat
    double z_numeric = 0.0;     // extremum of Z -> F(Zb) found by golden-section search
    double relative_error = 0.0;
    bool maximum = false;       // the stationary point is a maximum when C > 1
};

namespace detail {

// Golden-section search for the maximizer of f on [lo, hi].
template <class F>
double golden_max(F f, double lo, double hi, double tol = 1e-12) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - r * (hi - lo);
    double x2 = lo + r * (hi - lo);
    double f1 = f(x1);
    double f2 = f(x2);
    while (hi - lo > tol * std::max(1.0, std::abs(lo) + std::abs(hi))) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

// Stationary scale of Z -> F(Zb): log Z_hat = F(b)/(C-1) - 1. The closed form
// is cross-checked by a grid plus golden-section search over log Z.
inline ScaleResult optimal_scale(const Model& model, const BeliefSet& b) {
    const long C = model.graph().cycle_count();
    if (C == 1) {
        throw Error(ErrorCode::SingleCycleUndefined, "scale optimization is undefined on a single-cycle graph");
    }
    const double F = bethe_free_energy(model, b);
    const double c1 = static_cast<double>(C) - 1.0;
    ScaleResult r;
    r.z_hat = std::exp(F / c1 - 1.0);
    r.f_hat = c1 * r.z_hat;
    r.maximum = C > 1;
    // F(Zb) evaluated directly as a function of log Z; the sign makes the
    // extremum a maximum in both cases.
    const double sign = r.maximum ? 1.0 : -1.0;
    auto h = [&](double t) { return sign * bethe_free_energy(model, b, std::exp(t)); };
    double best_t = -200.0;
    double best = h(best_t);
    for (double t = -200.0; t <= 200.0; t += 0.25) {
        if (const double v = h(t); v > best) {
            best = v;
            best_t = t;
        }
    }
    const double t = detail::golden_max(h, best_t - 0.25, best_t + 0.25);
    r.z_numeric = std::exp(t);
    r.relative_error = std::abs(r.z_numeric - r.z_hat) / r.z_hat;
    return r;
}

struct FreeEnergyReport {
    double F_bethe = 0.0;
    long C = 0;
    std::optional<ScaleResult> scale;  // absent when C = 1
};

inline FreeEnergyReport free_energy_report(const Model& model, const BeliefSet& b) {
    FreeEnergyReport r;
    r.F_bethe = bethe_free_energy(model, b);
    r.C = model.graph().cycle_count();
    if (r.C != 1) r.scale = optimal_scale(model, b);
    return r;
}

}  // namespace nbp

#endif  // NBP_FREE_ENERGY_HPP
