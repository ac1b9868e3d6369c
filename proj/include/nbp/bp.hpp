#ifndef NBP_BP_HPP
#define NBP_BP_HPP

#include "nbp/error.hpp"
#include "nbp/factor_graph.hpp"
#include "nbp/graph_fields.hpp"
#include "nbp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nbp {

// Per-edge denominator Z_ai applied to the raw update Theta_ai.
enum class Normalization {
    None,         // plain BP, Z_ai = 1
    Mess,         // sum_x Theta_ai,x
    Max,          // max_x Theta_ai,x
    First,        // Theta_ai,1
    Bel,          // Z_a(m) / Z_i(m)
    Variational,  // constant exp(-(d_i - 2)/(d_i - 1))
    BadMaxRatio,  // sum_x Theta_ai,x / max_x m_ai(x); has no fixed point
};

enum class Schedule { Parallel, Sequential };
enum class Tracker { Messages, Beliefs, Quotient };
enum class Init { Uniform, Random };

inline constexpr std::string_view to_string(Normalization n) noexcept {
    switch (n) {
        case Normalization::None: return "none";
        case Normalization::Mess: return "mess";
        case Normalization::Max: return "max";
        case Normalization::First: return "first";
        case Normalization::Bel: return "bel";
        case Normalization::Variational: return "variational";
        case Normalization::BadMaxRatio: return "badmaxratio";
    }
    return "none";
}
inline constexpr std::string_view to_string(Schedule s) noexcept {
    return s == Schedule::Parallel ? "parallel" : "sequential";
}
inline constexpr std::string_view to_string(Tracker t) noexcept {
    switch (t) {
        case Tracker::Messages: return "messages";
        case Tracker::Beliefs: return "beliefs";
        case Tracker::Quotient: return "quotient";
    }
    return "messages";
}
inline constexpr std::string_view to_string(Init i) noexcept { return i == Init::Uniform ? "uniform" : "random"; }

inline Normalization parse_normalization(std::string_view s) {
    for (auto n : {Normalization::None, Normalization::Mess, Normalization::Max, Normalization::First,
                   Normalization::Bel, Normalization::Variational, Normalization::BadMaxRatio}) {
        if (to_string(n) == s) return n;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown normalization '" + std::string(s) + "'");
}
inline Schedule parse_schedule(std::string_view s) {
    if (s == "parallel") return Schedule::Parallel;
    if (s == "sequential") return Schedule::Sequential;
    throw Error(ErrorCode::InvalidArgument, "unknown schedule '" + std::string(s) + "'");
}
inline Tracker parse_tracker(std::string_view s) {
    if (s == "messages") return Tracker::Messages;
    if (s == "beliefs") return Tracker::Beliefs;
    if (s == "quotient") return Tracker::Quotient;
    throw Error(ErrorCode::InvalidArgument, "unknown tracker '" + std::string(s) + "'");
}
inline Init parse_init(std::string_view s) {
    if (s == "uniform") return Init::Uniform;
    if (s == "random") return Init::Random;
    throw Error(ErrorCode::InvalidArgument, "unknown init '" + std::string(s) + "'");
}

// Factor-to-variable messages m_{a->i}, q values per edge in EdgeIndex order.
struct MessageState {
    std::size_t q = 0;
    std::vector<double> values;
    std::size_t iteration = 0;

    static MessageState constant(const FactorGraph& g, double v) {
        return {g.q(), std::vector<double>(g.num_edges() * g.q(), v), 0};
    }

    // log m uniform in [-1, 1]
    static MessageState random(const FactorGraph& g, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        MessageState m = constant(g, 1.0);
        for (auto& v : m.values) v = std::exp(u(rng));
        return m;
    }

    std::size_t num_edges() const noexcept { return q == 0 ? 0 : values.size() / q; }
    std::span<double> edge(std::size_t e) { return {values.data() + e * q, q}; }
    std::span<const double> edge(std::size_t e) const { return {values.data() + e * q, q}; }
};

inline MessageState initial_messages(const FactorGraph& g, Normalization norm, Init init, std::uint64_t seed = 0) {
    if (init == Init::Random) return MessageState::random(g, seed);
    return MessageState::constant(g, norm == Normalization::Mess ? 1.0 / static_cast<double>(g.q()) : 1.0);
}

inline constexpr double message_floor = 1e-300;
inline constexpr double message_ceiling = 1e300;

namespace detail {

inline void check_state(const FactorGraph& g, const MessageState& m) {
    if (m.q != g.q() || m.values.size() != g.num_edges() * g.q()) {
        throw Error(ErrorCode::SizeMismatch, "message state does not match graph");
    }
}

// n_{i->a}(x) = phi_i(x) prod_{a' ni i, a' != a} m_{a'->i}(x), for every edge.
inline std::vector<double> variable_to_factor(const Model& model, const MessageState& m) {
    const auto& g = model.graph();
    const std::size_t q = g.q();
    std::vector<double> n(g.num_edges() * q);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const std::size_t i = g.edge(e).variable;
        for (std::size_t x = 0; x < q; ++x) {
            double v = model.phi(i)[x];
            for (auto f : g.variable_edges(i)) {
                if (f != e) v *= m.values[f * q + x];
            }
            n[e * q + x] = v;
        }
    }
    return n;
}

// Accumulates Theta for every member of factor a from precomputed n.
inline void factor_theta(const Model& model, std::size_t a, std::span<const double> n, std::span<double> out) {
    const auto& g = model.graph();
    const std::size_t q = g.q();
    const std::size_t d = g.factor_degree(a);
    const std::size_t first = g.first_edge(a);
    const auto psi = model.psi(a);
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<std::size_t> x(d, 0);
    for (std::size_t c = 0; c < psi.size(); ++c) {
        for (std::size_t p = 0; p < d; ++p) {
            double w = psi[c];
            for (std::size_t r = 0; r < d; ++r) {
                if (r != p) w *= n[(first + r) * q + x[r]];
            }
            out[p * q + x[p]] += w;
        }
        for (std::size_t k = d; k-- > 0;) {
            if (++x[k] < q) break;
            x[k] = 0;
        }
    }
}

inline double variational_factor(std::size_t degree) {
    // Leaves (d_i = 1) have no finite multiplier; they are left unscaled.
    if (degree < 2) return 1.0;
    const double d = static_cast<double>(degree);
    return std::exp(-(d - 2.0) / (d - 1.0));
}

inline void guard(const FactorGraph& g, std::size_t e, std::span<const double> v, std::size_t iteration) {
    for (double x : v) {
        if (!(x >= message_floor && x <= message_ceiling)) {
            const auto& ed = g.edge(e);
            throw Error(ErrorCode::NumericalOverflow,
                        "message " + g.factor_name(ed.factor) + "->" + g.variable_name(ed.variable) +
                            " left [1e-300, 1e300] at iteration " + std::to_string(iteration) +
                            " (value " + std::to_string(x) + ")");
        }
    }
}

}  // namespace detail

// Theta_{ai,x}(m) = sum_{x_{a\i}} psi_a prod_{j in a\i} [phi_j prod_{a' ni j, a' != a} m_{a'->j}].
inline Table theta(const Model& model, const MessageState& m, std::size_t e) {
    const auto& g = model.graph();
    detail::check_state(g, m);
    const std::size_t q = g.q();
    const auto& ed = g.edge(e);
    const std::size_t d = g.factor_degree(ed.factor);
    const std::size_t first = g.first_edge(ed.factor);
    std::vector<double> n(d * q);
    for (std::size_t r = 0; r < d; ++r) {
        const std::size_t f = first + r;
        const std::size_t j = g.edge(f).variable;
        for (std::size_t x = 0; x < q; ++x) {
            double v = model.phi(j)[x];
            for (auto h : g.variable_edges(j)) {
                if (h != f) v *= m.values[h * q + x];
            }
            n[r * q + x] = v;
        }
    }
    Table out(q, 0.0);
    const auto psi = model.psi(ed.factor);
    const std::size_t p = ed.position;
    for (std::size_t c = 0; c < psi.size(); ++c) {
        double w = psi[c];
        for (std::size_t r = 0; r < d; ++r) {
            if (r != p) w *= n[r * q + g.state_of(ed.factor, c, r)];
        }
        out[g.state_of(ed.factor, c, p)] += w;
    }
    return out;
}

// Theta for all edges, flattened like MessageState::values.
inline std::vector<double> theta_all(const Model& model, const MessageState& m) {
    const auto& g = model.graph();
    detail::check_state(g, m);
    const auto n = detail::variable_to_factor(model, m);
    std::vector<double> out(m.values.size());
    const std::size_t q = g.q();
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        const std::size_t first = g.first_edge(a);
        detail::factor_theta(model, a, n,
                             std::span<double>(out.data() + first * q, g.factor_degree(a) * q));
    }
    return out;
}

struct LogNormalizers {
    std::vector<double> factors;    // log Z_a(m)
    std::vector<double> variables;  // log Z_i(m)
};

namespace detail {

// Beliefs are invariant under per-edge rescaling, so they are computed from
// messages scaled to unit maximum; the true log-constants add the log scales back.
inline std::pair<BeliefSet, LogNormalizers> beliefs_and_logs(const Model& model, const MessageState& m) {
    const auto& g = model.graph();
    check_state(g, m);
    const std::size_t q = g.q();
    MessageState scaled = m;
    std::vector<double> log_scale(g.num_edges(), 0.0);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        auto v = scaled.edge(e);
        const double mx = *std::max_element(v.begin(), v.end());
        if (!(mx > 0.0) || !std::isfinite(mx)) {
            throw Error(ErrorCode::NonPositiveMessage, "message on edge " + std::to_string(e) + " is not positive and finite");
        }
        for (auto& x : v) x /= mx;
        log_scale[e] = std::log(mx);
    }
    BeliefSet b;
    LogNormalizers logs;
    b.variables.assign(g.num_variables(), Table(q));
    b.z_variables.resize(g.num_variables());
    logs.variables.resize(g.num_variables());
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        double z = 0.0;
        double ls = 0.0;
        for (std::size_t x = 0; x < q; ++x) {
            double v = model.phi(i)[x];
            for (auto e : g.variable_edges(i)) v *= scaled.values[e * q + x];
            b.variables[i][x] = v;
            z += v;
        }
        for (auto e : g.variable_edges(i)) ls += log_scale[e];
        for (auto& v : b.variables[i]) v /= z;
        logs.variables[i] = std::log(z) + ls;
        b.z_variables[i] = std::exp(logs.variables[i]);
    }
    const auto n = variable_to_factor(model, scaled);
    b.factors.resize(g.num_factors());
    b.z_factors.resize(g.num_factors());
    logs.factors.resize(g.num_factors());
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        const auto psi = model.psi(a);
        const std::size_t first = g.first_edge(a);
        const std::size_t d = g.factor_degree(a);
        Table t(psi.size());
        double z = 0.0;
        for (std::size_t c = 0; c < psi.size(); ++c) {
            double v = psi[c];
            for (std::size_t r = 0; r < d; ++r) v *= n[(first + r) * q + g.state_of(a, c, r)];
            t[c] = v;
            z += v;
        }
        for (auto& v : t) v /= z;
        double ls = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            const std::size_t f = first + r;
            for (auto h : g.variable_edges(g.edge(f).variable)) {
                if (h != f) ls += log_scale[h];
            }
        }
        logs.factors[a] = std::log(z) + ls;
        b.z_factors[a] = std::exp(logs.factors[a]);
        b.factors[a] = std::move(t);
    }
    return {std::move(b), std::move(logs)};
}

}  // namespace detail

// b_i ∝ phi_i prod_a m_{a->i}, b_a ∝ psi_a prod_i n_{i->a}, with their constants Z_i, Z_a.
inline BeliefSet beliefs(const Model& model, const MessageState& m) {
    return detail::beliefs_and_logs(model, m).first;
}

inline LogNormalizers log_normalizers(const Model& model, const MessageState& m) {
    return detail::beliefs_and_logs(model, m).second;
}

namespace detail {

inline double edge_normalizer(Normalization norm, const FactorGraph& g, std::size_t e,
                              std::span<const double> th, std::span<const double> old,
                              const LogNormalizers* logs) {
    switch (norm) {
        case Normalization::None: return 1.0;
        case Normalization::Mess: {
            double s = 0.0;
            for (double v : th) s += v;
            return s;
        }
        case Normalization::Max: return *std::max_element(th.begin(), th.end());
        case Normalization::First: return th[0];
        case Normalization::Bel: {
            const auto& ed = g.edge(e);
            return std::exp(logs->factors[ed.factor] - logs->variables[ed.variable]);
        }
        case Normalization::Variational: return variational_factor(g.variable_degree(g.edge(e).variable));
        case Normalization::BadMaxRatio: {
            double s = 0.0;
            for (double v : th) s += v;
            return s / *std::max_element(old.begin(), old.end());
        }
    }
    return 1.0;
}

}  // namespace detail

// One sweep of m_{a->i} <- Theta_ai(m) / Z_ai(m). Parallel updates every edge
// from the old state; sequential walks edges in EdgeIndex order using fresh values.
inline MessageState step(const Model& model, const MessageState& m, Normalization norm,
                         Schedule schedule = Schedule::Parallel) {
    const auto& g = model.graph();
    detail::check_state(g, m);
    const std::size_t q = g.q();
    MessageState next = m;
    next.iteration = m.iteration + 1;
    if (schedule == Schedule::Parallel) {
        const auto th = theta_all(model, m);
        std::optional<LogNormalizers> logs;
        if (norm == Normalization::Bel) logs = log_normalizers(model, m);
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            std::span<const double> t(th.data() + e * q, q);
            const double z = detail::edge_normalizer(norm, g, e, t, m.edge(e), logs ? &*logs : nullptr);
            auto out = next.edge(e);
            for (std::size_t x = 0; x < q; ++x) out[x] = t[x] / z;
            detail::guard(g, e, out, next.iteration);
        }
    } else {
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            const Table t = theta(model, next, e);
            std::optional<LogNormalizers> logs;
            if (norm == Normalization::Bel) logs = log_normalizers(model, next);
            const Table old(next.edge(e).begin(), next.edge(e).end());
            const double z = detail::edge_normalizer(norm, g, e, t, old, logs ? &*logs : nullptr);
            auto out = next.edge(e);
            for (std::size_t x = 0; x < q; ++x) out[x] = t[x] / z;
            detail::guard(g, e, out, next.iteration);
        }
    }
    return next;
}

inline double message_residual(const MessageState& a, const MessageState& b) {
    double r = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) r = std::max(r, std::abs(a.values[k] - b.values[k]));
    return r;
}

// max over edges of ||a_e - b_e||_inf / ||a_e||_inf; invariant under a global rescaling of both states.
inline double relative_message_residual(const MessageState& a, const MessageState& b) {
    double r = 0.0;
    for (std::size_t e = 0; e < a.num_edges(); ++e) {
        const auto x = a.edge(e);
        const auto y = b.edge(e);
        double diff = 0.0;
        double scale = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            diff = std::max(diff, std::abs(x[k] - y[k]));
            scale = std::max(scale, std::abs(x[k]));
        }
        r = std::max(r, diff / scale);
    }
    return r;
}

inline double belief_residual(const BeliefSet& a, const BeliefSet& b) {
    double r = 0.0;
    auto cmp = [&r](const std::vector<Table>& x, const std::vector<Table>& y) {
        for (std::size_t k = 0; k < x.size(); ++k) {
            for (std::size_t s = 0; s < x[k].size(); ++s) r = std::max(r, std::abs(x[k][s] - y[k][s]));
        }
    };
    cmp(a.variables, b.variables);
    cmp(a.factors, b.factors);
    return r;
}

// Max-norm of the one-step change under the parallel schedule.
inline double fixed_point_residual(const Model& model, const MessageState& m, Normalization norm) {
    return message_residual(m, step(model, m, norm, Schedule::Parallel));
}

inline double relative_fixed_point_residual(const Model& model, const MessageState& m, Normalization norm) {
    return relative_message_residual(m, step(model, m, norm, Schedule::Parallel));
}

// Representative of log m in the quotient by per-edge constant shifts: each
// edge's log-message has its mean over the q states removed.
inline std::vector<double> quotient_project(std::span<const double> mu, std::size_t q) {
    if (q == 0 || mu.size() % q != 0) throw Error(ErrorCode::SizeMismatch, "log-message length not a multiple of q");
    std::vector<double> out(mu.begin(), mu.end());
    for (std::size_t e = 0; e < out.size() / q; ++e) {
        double mean = 0.0;
        for (std::size_t x = 0; x < q; ++x) {
            if (!std::isfinite(out[e * q + x])) throw Error(ErrorCode::InvalidArgument, "non-finite log-message");
            mean += out[e * q + x];
        }
        mean /= static_cast<double>(q);
        for (std::size_t x = 0; x < q; ++x) out[e * q + x] -= mean;
    }
    return out;
}

inline std::vector<double> quotient_project(const MessageState& m) {
    std::vector<double> mu(m.values.size());
    for (std::size_t k = 0; k < mu.size(); ++k) {
        if (!(m.values[k] > 0.0)) {
            throw Error(ErrorCode::NonPositiveMessage, "message entry " + std::to_string(k) + " is not positive");
        }
        mu[k] = std::log(m.values[k]);
    }
    return quotient_project(mu, m.q);
}

inline double quotient_residual(const std::vector<double>& a, const std::vector<double>& b) {
    double r = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) r = std::max(r, std::abs(a[k] - b[k]));
    return r;
}

// Per-edge constants c with m2 = c * m1, which exist iff both states induce the same beliefs.
inline std::vector<double> message_scale_between(const MessageState& m1, const MessageState& m2, double tol = 1e-9) {
    if (m1.q != m2.q || m1.values.size() != m2.values.size()) {
        throw Error(ErrorCode::SizeMismatch, "message states have different shapes");
    }
    std::vector<double> c(m1.num_edges());
    for (std::size_t e = 0; e < c.size(); ++e) {
        const auto a = m1.edge(e);
        const auto b = m2.edge(e);
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        double sum = 0.0;
        for (std::size_t x = 0; x < a.size(); ++x) {
            if (!(a[x] > 0.0) || !(b[x] > 0.0)) throw Error(ErrorCode::NonPositiveMessage, "messages must be positive");
            const double r = b[x] / a[x];
            lo = std::min(lo, r);
            hi = std::max(hi, r);
            sum += r;
        }
        if (hi - lo > tol * hi) {
            throw Error(ErrorCode::NotEquivalent, "ratio on edge " + std::to_string(e) + " varies from " +
                                                      std::to_string(lo) + " to " + std::to_string(hi));
        }
        c[e] = sum / static_cast<double>(a.size());
    }
    return c;
}

enum class RunStatus { Converged, MaxIterations, Overflow };

inline constexpr std::string_view to_string(RunStatus s) noexcept {
    switch (s) {
        case RunStatus::Converged: return "converged";
        case RunStatus::MaxIterations: return "max_iterations";
        case RunStatus::Overflow: return "overflow";
    }
    return "converged";
}

struct RunOptions {
    Normalization normalization = Normalization::Mess;
    Schedule schedule = Schedule::Parallel;
    Init init = Init::Uniform;
    std::uint64_t seed = 0;
    double tol = 1e-9;
    std::size_t max_iter = 10000;
    Tracker track = Tracker::Messages;
    std::optional<MessageState> initial;  // overrides init when set
};

struct RunReport {
    RunStatus status = RunStatus::MaxIterations;
    std::size_t iterations = 0;
    bool converged_messages = false;
    bool converged_beliefs = false;
    bool converged_quotient = false;
    MessageState final_state;
    BeliefSet final_beliefs;
    std::vector<double> message_residuals;
    std::vector<double> belief_residuals;
    std::vector<double> quotient_residuals;
    std::string diagnostic;

    bool converged(Tracker t) const noexcept {
        switch (t) {
            case Tracker::Messages: return converged_messages;
            case Tracker::Beliefs: return converged_beliefs;
            case Tracker::Quotient: return converged_quotient;
        }
        return false;
    }
};

// Iterates step() until the tracked residual drops below tol, max_iter is
// reached, or the overflow guard fires. Overflow is reported in the status and
// diagnostic rather than thrown, with the last in-range state kept.
inline RunReport run(const Model& model, const RunOptions& opt) {
    if (!(opt.tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "tol must be positive");
    const auto& g = model.graph();
    MessageState m = opt.initial ? *opt.initial : initial_messages(g, opt.normalization, opt.init, opt.seed);
    detail::check_state(g, m);
    RunReport rep;
    BeliefSet b = beliefs(model, m);
    auto qm = quotient_project(m);
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        MessageState next;
        try {
            next = step(model, m, opt.normalization, opt.schedule);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NumericalOverflow) throw;
            rep.status = RunStatus::Overflow;
            rep.diagnostic = e.detail();
            break;
        }
        BeliefSet bn = beliefs(model, next);
        auto qn = quotient_project(next);
        rep.message_residuals.push_back(message_residual(m, next));
        rep.belief_residuals.push_back(belief_residual(b, bn));
        rep.quotient_residuals.push_back(quotient_residual(qm, qn));
        m = std::move(next);
        b = std::move(bn);
        qm = std::move(qn);
        ++rep.iterations;
        const double tracked = opt.track == Tracker::Messages  ? rep.message_residuals.back()
                               : opt.track == Tracker::Beliefs ? rep.belief_residuals.back()
                                                               : rep.quotient_residuals.back();
        if (tracked < opt.tol) {
            rep.status = RunStatus::Converged;
            break;
        }
    }
    if (!rep.message_residuals.empty() && rep.status != RunStatus::Overflow) {
        rep.converged_messages = rep.message_residuals.back() < opt.tol;
        rep.converged_beliefs = rep.belief_residuals.back() < opt.tol;
        rep.converged_quotient = rep.quotient_residuals.back() < opt.tol;
    }
    if (rep.status == RunStatus::MaxIterations && rep.diagnostic.empty() && !rep.message_residuals.empty()) {
        const double first = rep.message_residuals.front();
        const double last = rep.message_residuals.back();
        rep.diagnostic = "no convergence after " + std::to_string(rep.iterations) +
                         " iterations; message residual went from " + std::to_string(first) + " to " +
                         std::to_string(last);
    }
    rep.final_state = std::move(m);
    rep.final_beliefs = std::move(b);
    return rep;
}

// log of prod_a Z_a prod_i Z_i^{1 - d_i} at the given messages.
inline double log_product_condition(const Model& model, const MessageState& m) {
    const auto& g = model.graph();
    const auto logs = log_normalizers(model, m);
    double s = 0.0;
    for (std::size_t a = 0; a < g.num_factors(); ++a) s += logs.factors[a];
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        s += (1.0 - static_cast<double>(g.variable_degree(i))) * logs.variables[i];
    }
    return s;
}

struct DenormalizeOptions {
    double fixed_point_tol = 1e-8;   // relative residual accepted for the normalized input
    double product_tol = 1e-9;       // |log prod_a Z_a prod_i Z_i^{1-d_i}| accepted when C = 1
    double plain_residual_tol = 1e-8;
};

// Maps a fixed point of a normalized scheme to a plain BP fixed point with the
// same beliefs, m = c * m_tilde, where log c solves (I - A) log c = log Z_a - log Z_i.
inline MessageState denormalize_fixed_point(const Model& model, const MessageState& normalized, Normalization norm,
                                            const DenormalizeOptions& opts = {}) {
    const auto& g = model.graph();
    detail::check_state(g, normalized);
    if (const double r = relative_fixed_point_residual(model, normalized, norm); !(r <= opts.fixed_point_tol)) {
        throw Error(ErrorCode::NotAFixedPoint,
                    "input is not a fixed point of '" + std::string(to_string(norm)) + "' (residual " +
                        std::to_string(r) + ")");
    }
    if (g.cycle_count() == 1) {
        const double s = log_product_condition(model, normalized);
        if (std::abs(s) > opts.product_tol) {
            throw Error(ErrorCode::NoPlainFixedPoint,
                        "single-cycle graph: log prod_a Z_a prod_i Z_i^(1-d_i) = " + std::to_string(s));
        }
    }
    const auto logs = log_normalizers(model, normalized);
    VectorField y = VectorField::zeros(g);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto& ed = g.edge(e);
        y.values(static_cast<Eigen::Index>(e)) = logs.factors[ed.factor] - logs.variables[ed.variable];
    }
    SolveOptions so;
    so.compatibility_tol = opts.product_tol;
    VectorField x = [&] {
        try {
            return solve_identity_minus_A(g, y, so);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::IncompatibleC1) throw Error(ErrorCode::NoPlainFixedPoint, e.detail());
            throw;
        }
    }();
    MessageState m = normalized;
    m.iteration = 0;
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const double c = std::exp(x.values(static_cast<Eigen::Index>(e)));
        for (auto& v : m.edge(e)) v *= c;
    }
    if (const double r = relative_fixed_point_residual(model, m, Normalization::None);
        !(r <= opts.plain_residual_tol)) {
        throw Error(ErrorCode::NoPlainFixedPoint,
                    "denormalized messages fail the plain update (residual " + std::to_string(r) + ")");
    }
    return m;
}

// Message-free update of beliefs:
//   b_i <- b_i prod_{a ni i} b_{i|a}/b_i,
//   b_a <- b_a prod_{i in a} prod_{c ni i, c != a} b_{i|c}/b_i,
// each table renormalized to sum to one.
inline BeliefSet product_sum_step(const FactorGraph& g, const BeliefSet& b) {
    check_belief_shape(g, b);
    const std::size_t q = g.q();
    // ratio[e][x] = b_{i|a}(x) / b_i(x)
    std::vector<double> ratio(g.num_edges() * q);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const auto& ed = g.edge(e);
        const Table marg = factor_marginal(g, ed.factor, b.factors[ed.factor], ed.position);
        for (std::size_t x = 0; x < q; ++x) {
            const double bi = b.variables[ed.variable][x];
            if (!(bi > 0.0)) throw Error(ErrorCode::NonPositiveBeliefs, "variable belief must be positive");
            ratio[e * q + x] = marg[x] / bi;
        }
    }
    BeliefSet out;
    out.variables.resize(g.num_variables());
    out.z_variables.assign(g.num_variables(), 1.0);
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        Table t = b.variables[i];
        for (std::size_t x = 0; x < q; ++x) {
            for (auto e : g.variable_edges(i)) t[x] *= ratio[e * q + x];
        }
        double s = 0.0;
        for (double v : t) s += v;
        for (auto& v : t) v /= s;
        out.variables[i] = std::move(t);
    }
    out.factors.resize(g.num_factors());
    out.z_factors.assign(g.num_factors(), 1.0);
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        Table t = b.factors[a];
        const auto mem = g.members(a);
        const std::size_t first = g.first_edge(a);
        for (std::size_t c = 0; c < t.size(); ++c) {
            for (std::size_t p = 0; p < mem.size(); ++p) {
                const std::size_t x = g.state_of(a, c, p);
                for (auto f : g.variable_edges(mem[p])) {
                    if (f != first + p) t[c] *= ratio[f * q + x];
                }
            }
        }
        double s = 0.0;
        for (double v : t) s += v;
        for (auto& v : t) v /= s;
        out.factors[a] = std::move(t);
    }
    return out;
}

}  // namespace nbp

#endif  // NBP_BP_HPP
