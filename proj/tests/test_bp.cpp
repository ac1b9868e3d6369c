#include "support/generators.hpp"

#include <gtest/gtest.h>

using namespace nbp;
using gen::Rng;

namespace {

const Normalization proper[] = {Normalization::None, Normalization::Mess,  Normalization::Max,
                                Normalization::First, Normalization::Bel, Normalization::Variational};

Model c1_model(Table psi_a, Table psi_b) {
    return Model(gen::cycle_c1(), {Table{1, 1}, Table{1, 1}}, {std::move(psi_a), std::move(psi_b)});
}

MessageState converge(const Model& m, Normalization norm, double tol = 1e-13, std::size_t max_iter = 20000) {
    RunOptions o;
    o.normalization = norm;
    o.tol = tol;
    o.max_iter = max_iter;
    const auto r = run(m, o);
    EXPECT_EQ(r.status, RunStatus::Converged) << to_string(norm) << ": " << r.diagnostic;
    return r.final_state;
}

MessageState normalize_each_edge(MessageState m) {
    for (std::size_t e = 0; e < m.num_edges(); ++e) {
        double s = 0.0;
        for (double v : m.edge(e)) s += v;
        for (auto& v : m.edge(e)) v /= s;
    }
    return m;
}

// Straight transcription of the update, summing over full factor configurations.
Table theta_oracle(const Model& model, const MessageState& m, std::size_t e) {
    const auto& g = model.graph();
    const auto ed = g.edge(e);
    Table out(g.q(), 0.0);
    for (std::size_t c = 0; c < g.table_size(ed.factor); ++c) {
        double w = model.psi(ed.factor)[c];
        for (std::size_t p = 0; p < g.factor_degree(ed.factor); ++p) {
            if (p == ed.position) continue;
            const auto j = g.members(ed.factor)[p];
            const auto xj = g.state_of(ed.factor, c, p);
            w *= model.phi(j)[xj];
            for (auto f : g.variable_edges(j)) {
                if (g.edge(f).factor != ed.factor) w *= m.edge(f)[xj];
            }
        }
        out[g.state_of(ed.factor, c, ed.position)] += w;
    }
    return out;
}

}  // namespace

TEST(Theta, AllOnesPairwise) {
    const auto g = gen::square_with_chord();
    const auto model = Model::uniform(g);
    const auto m = MessageState::constant(g, 1.0);
    // each neighbour variable has degree >= 2, but all factors are ones: q terms of 1 * 1
    const auto t = theta(model, m, 0);
    EXPECT_DOUBLE_EQ(t[0], 2.0);
    EXPECT_DOUBLE_EQ(t[1], 2.0);
}

TEST(Theta, SingleFactorIgnoresMessages) {
    const auto g = FactorGraph::build(2, {"1", "2"}, {{"a", {"1", "2"}}});
    const Model model(g, {Table{1, 2}, Table{3, 1}}, {Table{1, 2, 3, 4}});
    Rng rng(1);
    const auto t1 = theta(model, MessageState::random(g, 1), 0);
    const auto t2 = theta(model, MessageState::random(g, 2), 0);
    EXPECT_EQ(t1, t2);
    // sum over x2 of psi(x1, x2) phi_2(x2)
    EXPECT_DOUBLE_EQ(t1[0], 1 * 3 + 2 * 1);
    EXPECT_DOUBLE_EQ(t1[1], 3 * 3 + 4 * 1);
}

TEST(Theta, MatchesDirectSumAndBatchVersion) {
    Rng rng(2);
    for (int k = 0; k < 6; ++k) {
        const auto g = gen::ear_graph(rng, 2 + k % 2, 2, 3, 2, true);
        const auto model = random_model(g, 10 + k, 1.0);
        const auto m = MessageState::random(g, 20 + k);
        const auto all = theta_all(model, m);
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            const auto t = theta(model, m, e);
            const auto o = theta_oracle(model, m, e);
            for (std::size_t x = 0; x < g.q(); ++x) {
                EXPECT_NEAR(t[x], o[x], 1e-12 * o[x]);
                EXPECT_NEAR(all[e * g.q() + x], o[x], 1e-12 * o[x]);
                EXPECT_GT(t[x], 0.0);
            }
        }
    }
}

TEST(Theta, MultilinearInEachIncomingMessage) {
    Rng rng(3);
    const auto g = gen::ear_graph(rng, 3, 2);
    const auto model = random_model(g, 4, 1.0);
    const auto A = line_graph_adjacency(g);
    auto m = MessageState::random(g, 5);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        for (std::size_t f = 0; f < g.num_edges(); ++f) {
            if (A(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(f)) == 0.0) continue;
            auto scaled = m;
            for (auto& v : scaled.edge(f)) v *= 3.7;
            const auto t0 = theta(model, m, e);
            const auto t1 = theta(model, scaled, e);
            for (std::size_t x = 0; x < g.q(); ++x) EXPECT_NEAR(t1[x], 3.7 * t0[x], 1e-12 * t1[x]);
        }
    }
}

TEST(Step, PrescribedModelKeepsOnesFixed) {
    Rng rng(6);
    for (int k = 0; k < 5; ++k) {
        const auto g = gen::ear_graph(rng, 2 + k % 2, 1 + k % 3, 3, 2, k % 2 == 0);
        const auto model = prescribed_belief_model(g, gen::random_compatible_beliefs(g, rng));
        const auto m = MessageState::constant(g, 1.0);
        EXPECT_LE(message_residual(m, step(model, m, Normalization::None)), 1e-12);
        EXPECT_LE(fixed_point_residual(model, m, Normalization::None), 1e-12);
    }
}

TEST(Step, PrescribedBeliefsAreReproduced) {
    Rng rng(7);
    const auto g = gen::ear_graph(rng, 3, 2, 3, 2, true);
    const auto target = gen::random_compatible_beliefs(g, rng);
    const auto model = prescribed_belief_model(g, target);
    EXPECT_LE(gen::max_abs_diff(beliefs(model, MessageState::constant(g, 1.0)), target), 1e-12);
}

TEST(Step, MessNormalizedMessagesSumToOne) {
    const auto g = gen::square_with_chord(3);
    const auto model = random_model(g, 1, 1.0);
    const auto m = step(model, MessageState::random(g, 2), Normalization::Mess);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        double s = 0.0;
        for (double v : m.edge(e)) s += v;
        EXPECT_NEAR(s, 1.0, 1e-14);
    }
    EXPECT_EQ(m.iteration, 1u);
}

TEST(Step, StrategyDenominators) {
    const auto g = gen::square_with_chord();
    const auto model = random_model(g, 3, 1.0);
    const auto m = MessageState::random(g, 4);
    const auto th = theta_all(model, m);
    const auto logs = log_normalizers(model, m);
    auto check = [&](Normalization n, auto expected_z) {
        const auto s = step(model, m, n);
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            const double z = expected_z(e);
            for (std::size_t x = 0; x < 2; ++x) EXPECT_NEAR(s.edge(e)[x], th[e * 2 + x] / z, 1e-13 * s.edge(e)[x]);
        }
    };
    check(Normalization::None, [](std::size_t) { return 1.0; });
    check(Normalization::Max, [&](std::size_t e) { return std::max(th[2 * e], th[2 * e + 1]); });
    check(Normalization::First, [&](std::size_t e) { return th[2 * e]; });
    check(Normalization::Bel, [&](std::size_t e) {
        return std::exp(logs.factors[g.edge(e).factor] - logs.variables[g.edge(e).variable]);
    });
    check(Normalization::Variational, [&](std::size_t e) {
        const double d = double(g.variable_degree(g.edge(e).variable));
        return std::exp(-(d - 2) / (d - 1));
    });
    check(Normalization::BadMaxRatio, [&](std::size_t e) {
        return (th[2 * e] + th[2 * e + 1]) / std::max(m.edge(e)[0], m.edge(e)[1]);
    });
}

TEST(Step, VariationalLeavesUseUnitMultiplier) {
    const auto g = gen::tree_t3();
    const auto model = random_model(g, 1, 1.0);
    const auto m = MessageState::random(g, 2);
    const auto a = step(model, m, Normalization::Variational);
    const auto b = step(model, m, Normalization::None);
    // edges a1 and b3 point at leaves (d = 1); a2 and b2 at the middle variable (d = 2, multiplier 1)
    EXPECT_EQ(a.values, b.values);
}

TEST(Step, SequentialUsesFreshValues) {
    const auto g = gen::tree_t3();
    const auto model = random_model(g, 8, 1.0);
    const auto m = MessageState::random(g, 9);
    const auto seq = step(model, m, Normalization::None, Schedule::Sequential);
    // edge order a1, a2, b2, b3: b3 reads m_{a->2}, refreshed earlier in the same sweep
    auto partial = m;
    for (std::size_t e = 0; e < 3; ++e) {
        const auto t = theta(model, partial, e);
        std::copy(t.begin(), t.end(), partial.edge(e).begin());
    }
    const auto t3 = theta(model, partial, 3);
    EXPECT_NEAR(seq.edge(3)[0], t3[0], 1e-14 * t3[0]);
    const auto par = step(model, m, Normalization::None, Schedule::Parallel);
    EXPECT_NE(seq.edge(3)[0], par.edge(3)[0]);
}

TEST(Step, SequentialScheduleReachesTheSameFixedPoint) {
    Rng rng(10);
    const auto g = gen::ear_graph(rng, 2, 2);
    const auto model = random_model(g, 11, 0.4);
    RunOptions o;
    o.tol = 1e-13;
    o.schedule = Schedule::Sequential;
    const auto seq = run(model, o);
    o.schedule = Schedule::Parallel;
    const auto par = run(model, o);
    ASSERT_TRUE(seq.converged_messages);
    ASSERT_TRUE(par.converged_messages);
    EXPECT_LE(gen::max_abs_diff(seq.final_beliefs, par.final_beliefs), 1e-11);
}

TEST(Step, SymmetricC1ConvergesToPerronVector) {
    const auto model = c1_model({2, 1, 1, 2}, {2, 1, 1, 2});
    const auto m = converge(model, Normalization::Mess);
    for (double v : m.values) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(Step, AsymmetricC1ConvergesToPerronVector) {
    // m_{a->1} is the Perron vector of psi_a psi_b^T, computed by an independent eigensolve
    const Table pa{3, 1, 2, 5}, pb{2, 1, 1, 4};
    const auto model = c1_model(pa, pb);
    const auto m = converge(model, Normalization::Mess);
    Eigen::Matrix2d A, B;
    A << 3, 1, 2, 5;
    B << 2, 1, 1, 4;
    Eigen::EigenSolver<Eigen::Matrix2d> es(A * B.transpose());
    Eigen::Index k;
    es.eigenvalues().real().maxCoeff(&k);
    Eigen::Vector2d v = es.eigenvectors().col(k).real();
    v /= v.sum();
    EXPECT_NEAR(m.edge(0)[0], v(0), 1e-10);
    EXPECT_NEAR(m.edge(0)[1], v(1), 1e-10);
}

TEST(Step, OverflowGuard) {
    const auto g = gen::square_with_chord();
    const auto model = Model(g, std::vector<Table>(4, Table{3, 3}), std::vector<Table>(5, Table{3, 3, 3, 3}));
    auto m = MessageState::constant(g, 1.0);
    try {
        for (int k = 0; k < 10000; ++k) m = step(model, m, Normalization::None);
        FAIL() << "no overflow";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NumericalOverflow);
        EXPECT_NE(e.detail().find("iteration"), std::string::npos);
    }
}

TEST(Beliefs, AllOnes) {
    const auto g = gen::square_with_chord(3);
    const auto b = beliefs(Model::uniform(g), MessageState::constant(g, 1.0));
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        EXPECT_NEAR(b.z_variables[i], 3.0, 1e-12);
        for (double v : b.variables[i]) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
    }
    for (std::size_t a = 0; a < g.num_factors(); ++a) {
        EXPECT_NEAR(b.z_factors[a], 9.0, 1e-12);
        for (double v : b.factors[a]) EXPECT_NEAR(v, 1.0 / 9, 1e-15);
    }
}

TEST(Beliefs, ConstantsMatchDirectSums) {
    const auto g = gen::square_with_chord();
    const auto model = random_model(g, 2, 1.0);
    auto m = MessageState::random(g, 3);
    for (auto& v : m.values) v *= 1e40;  // large but finite scale, handled in log space
    const auto b = beliefs(model, m);
    const auto logs = log_normalizers(model, m);
    for (std::size_t i = 0; i < g.num_variables(); ++i) {
        double z = 0.0;
        for (std::size_t x = 0; x < 2; ++x) {
            double v = model.phi(i)[x];
            for (auto e : g.variable_edges(i)) v *= m.edge(e)[x];
            z += v;
        }
        EXPECT_NEAR(b.z_variables[i] / z, 1.0, 1e-12);
        EXPECT_NEAR(logs.variables[i], std::log(z), 1e-12 * std::abs(std::log(z)));
    }
    EXPECT_LE(normalization_residual(b), 1e-14);
}

TEST(Beliefs, TreeBeliefsAreExact) {
    Rng rng(12);
    for (int k = 0; k < 10; ++k) {
        const auto g = gen::random_tree(rng, 2 + k % 2);
        const auto model = random_model(g, 50 + k, 1.0);
        const auto m = converge(model, Normalization::Mess);
        EXPECT_LE(gen::max_abs_diff(beliefs(model, m), exact_marginals(model).marginals), 1e-10);
    }
}

TEST(Beliefs, FixedPointConstantsAreNormalizerRatios) {
    Rng rng(13);
    const auto loopy = gen::ear_graph(rng, 2, 2);
    const auto tree = gen::random_tree(rng, 3, 8);
    for (auto norm : proper) {
        // plain and variational have no stable fixed point on loopy graphs
        const bool tree_only = norm == Normalization::None || norm == Normalization::Variational;
        const auto& g = tree_only ? tree : loopy;
        const auto model = random_model(g, 14, 0.5);
        const auto m = converge(model, norm);
        const auto b = beliefs(model, m);
        EXPECT_LE(compatibility_residual(g, b), 1e-9) << to_string(norm);
        const auto th = theta_all(model, m);
        const auto logs = log_normalizers(model, m);
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            const double z_ai = th[e * g.q()] / m.edge(e)[0];
            const double z_ratio = std::exp(logs.factors[g.edge(e).factor] - logs.variables[g.edge(e).variable]);
            EXPECT_NEAR(z_ai / z_ratio, 1.0, 1e-9) << to_string(norm) << " edge " << e;
        }
    }
}

TEST(Residual, ZeroAtPrescribedFixedPoint) {
    Rng rng(15);
    const auto g = gen::ear_graph(rng, 3, 3);
    const auto model = prescribed_belief_model(g, gen::random_compatible_beliefs(g, rng));
    EXPECT_LE(fixed_point_residual(model, MessageState::constant(g, 1.0), Normalization::None), 1e-12);
}

TEST(Run, TreesConvergeWithinDiameterPlusOne) {
    Rng rng(16);
    for (int k = 0; k < 10; ++k) {
        const auto g = gen::random_tree(rng, 2 + k % 2);
        const auto model = random_model(g, 60 + k, 1.0);
        const auto exact = exact_marginals(model).marginals;
        const auto bound = gen::factor_diameter(g) + 1;
        for (auto norm : proper) {
            RunOptions o;
            o.normalization = norm;
            const auto r = run(model, o);
            EXPECT_TRUE(r.converged_messages) << to_string(norm);
            EXPECT_LE(r.iterations, bound) << to_string(norm);
            EXPECT_LE(gen::max_abs_diff(r.final_beliefs, exact), 1e-10) << to_string(norm);
        }
    }
}

TEST(Run, PlainSchemeDivergesOnLoopyGraph) {
    Rng rng(17);
    const auto g = gen::ear_graph(rng, 2, 2);
    const auto model = random_model(g, 18, 0.5);
    RunOptions o;
    o.normalization = Normalization::None;
    const auto r = run(model, o);
    EXPECT_FALSE(r.converged_messages);
    EXPECT_EQ(r.status, RunStatus::Overflow);
    EXPECT_FALSE(r.diagnostic.empty());
    // the beliefs settle even though the messages blow up
    EXPECT_LT(r.belief_residuals.back(), 1e-9);

    o.track = Tracker::Beliefs;
    const auto rb = run(model, o);
    EXPECT_TRUE(rb.converged_beliefs);
    EXPECT_EQ(rb.status, RunStatus::Converged);
}

TEST(Run, DeterministicGivenSeed) {
    const auto g = gen::square_with_chord(3);
    const auto model = random_model(g, 19, 0.6);
    RunOptions o;
    o.init = Init::Random;
    o.seed = 42;
    const auto a = run(model, o);
    const auto b = run(model, o);
    EXPECT_EQ(a.final_state.values, b.final_state.values);
    EXPECT_EQ(a.message_residuals, b.message_residuals);
    o.seed = 43;
    EXPECT_NE(run(model, o).message_residuals, a.message_residuals);
}

TEST(Run, RejectsNonPositiveTolerance) {
    RunOptions o;
    o.tol = 0.0;
    EXPECT_THROW(run(Model::uniform(gen::tree_t3()), o), Error);
}

TEST(Run, MessageConvergenceBoundsBeliefResidual) {
    Rng rng(20);
    for (int k = 0; k < 6; ++k) {
        const auto g = gen::ear_graph(rng, 2 + k % 2, 1 + k % 2);
        const auto model = random_model(g, 21 + k, 0.5);
        for (auto norm : {Normalization::Mess, Normalization::Max, Normalization::First, Normalization::Bel}) {
            RunOptions o;
            o.normalization = norm;
            const auto r = run(model, o);
            // beliefs are Lipschitz in the messages with a constant of order one, not below one
            if (r.converged_messages) {
                EXPECT_LT(r.belief_residuals.back(), 4.0 * o.tol) << to_string(norm);
            }
        }
    }
}

TEST(Run, BeliefConvergenceForcesMessageConvergenceUnderHomogeneousNorms) {
    Rng rng(22);
    for (int k = 0; k < 6; ++k) {
        const auto g = gen::ear_graph(rng, 2 + k % 2, 1 + k % 2);
        const auto model = random_model(g, 23 + k, 0.5);
        for (auto norm : {Normalization::Mess, Normalization::Max, Normalization::First}) {
            RunOptions o;
            o.normalization = norm;
            o.track = Tracker::Beliefs;
            o.tol = 1e-12;
            const auto r = run(model, o);
            ASSERT_TRUE(r.converged_beliefs) << to_string(norm);
            EXPECT_LE(r.message_residuals.back(), 1e-9) << to_string(norm);
        }
    }
}

TEST(Run, NormalizationLeavesBeliefTrajectoriesUnchanged) {
    Rng rng(24);
    const auto g = gen::ear_graph(rng, 3, 2);
    const auto model = random_model(g, 25, 0.5);
    const auto init = MessageState::random(g, 26);
    auto mess = init;
    auto bel = init;
    for (int t = 0; t < 100; ++t) {
        mess = step(model, mess, Normalization::Mess);
        bel = step(model, bel, Normalization::Bel);
        ASSERT_LE(gen::max_abs_diff(beliefs(model, mess), beliefs(model, bel)), 1e-10) << "step " << t;
    }
}

TEST(Quotient, InvariantUnderEdgeScaling) {
    const auto g = gen::square_with_chord(3);
    Rng rng(27);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    const auto m = MessageState::random(g, 28);
    auto c = m;
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const double s = u(rng);
        for (auto& v : c.edge(e)) v *= s;
    }
    const auto p = quotient_project(m);
    const auto pc = quotient_project(c);
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(p[k], pc[k], 1e-12);
    for (double v : quotient_project(MessageState::constant(g, 1.0))) EXPECT_EQ(v, 0.0);
}

TEST(Quotient, RejectsNonPositiveMessages) {
    const auto g = gen::tree_t3();
    auto m = MessageState::constant(g, 1.0);
    m.values[3] = 0.0;
    try {
        quotient_project(m);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonPositiveMessage);
    }
}

TEST(Quotient, EqualProjectionsIffEqualBeliefs) {
    const auto g = gen::square_with_chord();
    const auto model = random_model(g, 29, 1.0);
    Rng rng(30);
    for (int k = 0; k < 20; ++k) {
        const auto m1 = MessageState::random(g, 100 + k);
        auto m2 = m1;
        const bool same = k % 2 == 0;
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            const double s = 0.5 + double(e);
            m2.edge(e)[0] *= s;
            m2.edge(e)[1] *= same ? s : s * (1.0 + 0.1 * double(e + 1));
        }
        const double dq = quotient_residual(quotient_project(m1), quotient_project(m2));
        const double db = gen::max_abs_diff(beliefs(model, m1), beliefs(model, m2));
        EXPECT_EQ(dq <= 1e-12, db <= 1e-12) << dq << " " << db;
        EXPECT_EQ(same, dq <= 1e-12);
    }
}

TEST(ScaleBetween, RecoversConstants) {
    const auto g = gen::tree_t3();
    const auto m1 = MessageState::random(g, 1);
    auto m2 = m1;
    for (auto& v : m2.edge(2)) v *= 3.0;
    const auto c = message_scale_between(m1, m2);
    for (std::size_t e = 0; e < c.size(); ++e) EXPECT_NEAR(c[e], e == 2 ? 3.0 : 1.0, 1e-12);
    m2.edge(1)[0] *= 1.5;
    try {
        message_scale_between(m1, m2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotEquivalent);
    }
}

TEST(ScaleBetween, AgreesWithQuotient) {
    const auto g = gen::square_with_chord(3);
    for (int k = 0; k < 10; ++k) {
        const auto m1 = MessageState::random(g, 200 + k);
        const auto m2 = k % 2 ? MessageState::random(g, 300 + k) : normalize_each_edge(m1);
        bool equivalent = true;
        try {
            message_scale_between(m1, m2);
        } catch (const Error&) {
            equivalent = false;
        }
        EXPECT_EQ(equivalent, quotient_residual(quotient_project(m1), quotient_project(m2)) <= 1e-9);
    }
}

TEST(Denormalize, TreeFixedPoint) {
    Rng rng(31);
    for (int k = 0; k < 5; ++k) {
        const auto g = gen::random_tree(rng, 2 + k % 2);
        const auto model = random_model(g, 32 + k, 1.0);
        const auto m = converge(model, Normalization::Mess);
        const auto plain = denormalize_fixed_point(model, m, Normalization::Mess);
        EXPECT_LE(fixed_point_residual(model, plain, Normalization::None), 1e-8);
        message_scale_between(m, plain, 1e-8);
    }
}

TEST(Denormalize, LoopyFixedPoint) {
    Rng rng(33);
    for (int k = 0; k < 5; ++k) {
        const auto g = gen::ear_graph(rng, 2 + k % 2, 1 + k % 3, 3, 2, k == 2);
        const auto model = random_model(g, 34 + k, 0.5);
        for (auto norm : {Normalization::Mess, Normalization::Max, Normalization::Bel}) {
            const auto m = converge(model, norm);
            const auto plain = denormalize_fixed_point(model, m, norm);
            EXPECT_LE(fixed_point_residual(model, plain, Normalization::None), 1e-8);
        }
    }
}

TEST(Denormalize, SingleCycleWithUnitPerronValue) {
    const double t = 1.0 / 3.0;
    const auto model = c1_model({2 * t, t, t, 2 * t}, {2 * t, t, t, 2 * t});
    const auto m = converge(model, Normalization::Mess);
    EXPECT_LE(std::abs(log_product_condition(model, m)), 1e-9);
    const auto plain = denormalize_fixed_point(model, m, Normalization::Mess);
    EXPECT_LE(fixed_point_residual(model, plain, Normalization::None), 1e-8);
}

TEST(Denormalize, SingleCycleWithoutUnitPerronValue) {
    // psi_a psi_b has eigenvalues {9, 1} and {12, 2}: only positive eigenvectors can carry messages,
    // so the Perron values 9 and 12 decide, and neither equals one
    for (auto [pa, pb, perron] : {std::tuple{Table{2, 1, 1, 2}, Table{2, 1, 1, 2}, 9.0},
                                  std::tuple{Table{3, 1, 1, 3}, Table{2, 1, 1, 2}, 12.0}}) {
        const auto model = c1_model(pa, pb);
        const auto m = converge(model, Normalization::Mess);
        EXPECT_NEAR(log_product_condition(model, m), std::log(perron), 1e-9);
        try {
            denormalize_fixed_point(model, m, Normalization::Mess);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::NoPlainFixedPoint);
        }
    }
}

TEST(Denormalize, RejectsNonFixedPoints) {
    const auto g = gen::square_with_chord();
    const auto model = random_model(g, 35, 0.5);
    try {
        denormalize_fixed_point(model, MessageState::random(g, 1), Normalization::Mess);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotAFixedPoint);
    }
}

TEST(Denormalize, PlainFixedPointsCollapseUnderNormalization) {
    // on a single cycle with unit Perron value, plain fixed points come in a one-parameter family
    const double t = 1.0 / 3.0;
    const auto model = c1_model({2 * t, t, t, 2 * t}, {2 * t, t, t, 2 * t});
    const auto& g = model.graph();
    const auto plain = denormalize_fixed_point(model, converge(model, Normalization::Mess), Normalization::Mess);
    const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(4, 4) - line_graph_adjacency(g);
    // gradient-type kernel vector of I - A
    const Eigen::MatrixXd G = gradient_operator(g);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(M * G);
    const Eigen::MatrixXd ker = lu.kernel();
    Eigen::VectorXd k;
    for (Eigen::Index c = 0; c < ker.cols(); ++c) {
        const Eigen::VectorXd v = G * ker.col(c);
        if (v.norm() > 1e-9) k = v;
    }
    ASSERT_EQ(k.size(), 4);
    auto other = plain;
    for (std::size_t e = 0; e < 4; ++e) {
        for (auto& v : other.edge(e)) v *= std::exp(0.7 * k(static_cast<Eigen::Index>(e)));
    }
    EXPECT_LE(fixed_point_residual(model, other, Normalization::None), 1e-10);
    EXPECT_GT(message_residual(plain, other), 1e-3);
    message_scale_between(plain, other, 1e-9);
    EXPECT_LE(message_residual(normalize_each_edge(plain), normalize_each_edge(other)), 1e-10);
}

TEST(BadMaxRatio, CommutesWithEdgeScaling) {
    const auto g = gen::square_with_chord();
    const auto model = random_model(g, 36, 1.0);
    const auto m = MessageState::random(g, 37);
    auto scaled = m;
    std::vector<double> c(g.num_edges());
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        c[e] = 0.3 + 0.4 * double(e);
        for (auto& v : scaled.edge(e)) v *= c[e];
    }
    const auto a = step(model, m, Normalization::BadMaxRatio);
    const auto b = step(model, scaled, Normalization::BadMaxRatio);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        for (std::size_t x = 0; x < 2; ++x) EXPECT_NEAR(b.edge(e)[x], c[e] * a.edge(e)[x], 1e-13 * b.edge(e)[x]);
    }
}

TEST(BadMaxRatio, NoFixedPoint) {
    const auto g = gen::square_with_chord();
    const auto model = random_model(g, 38, 1.0);
    auto m = MessageState::constant(g, 1.0);
    double lowest = 1e300;
    for (int t = 0; t < 2000; ++t) {
        const auto next = step(model, m, Normalization::BadMaxRatio);
        lowest = std::min(lowest, relative_message_residual(m, next));
        m = gen::unit_max(next);
    }
    EXPECT_GT(lowest, 1e-3);
    // the raw iteration shrinks every message towards zero, so the absolute residual
    // eventually drops below tol without any fixed point being reached
    RunOptions o;
    o.normalization = Normalization::BadMaxRatio;
    const auto r = run(model, o);
    if (r.status == RunStatus::Converged) {
        EXPECT_LT(*std::max_element(r.final_state.values.begin(), r.final_state.values.end()), 1e-6);
        EXPECT_GT(relative_fixed_point_residual(model, r.final_state, Normalization::BadMaxRatio), 1e-3);
    } else {
        EXPECT_EQ(r.status, RunStatus::Overflow);
    }
}

TEST(ProductSum, FixedAndUniformBeliefsAreStationary) {
    Rng rng(39);
    const auto g = gen::ear_graph(rng, 3, 2, 3, 2, true);
    const auto u = uniform_beliefs(g);
    EXPECT_LE(gen::max_abs_diff(product_sum_step(g, u), u), 1e-15);
    const auto model = random_model(g, 40, 0.4);
    const auto b = beliefs(model, converge(model, Normalization::Mess));
    EXPECT_LE(gen::max_abs_diff(product_sum_step(g, b), b), 1e-10);
}

TEST(ProductSum, TracksBeliefPropagationStepByStep) {
    Rng rng(41);
    for (int k = 0; k < 4; ++k) {
        const auto g = k % 2 ? gen::ear_graph(rng, 2, 2) : gen::random_tree(rng, 3, 8);
        const auto model = random_model(g, 42 + k, 0.5);
        auto m = MessageState::random(g, 43 + k);
        auto b = beliefs(model, m);
        for (int t = 0; t < 30; ++t) {
            m = step(model, m, Normalization::Mess);
            b = product_sum_step(g, b);
            ASSERT_LE(gen::max_abs_diff(b, beliefs(model, m)), 1e-10) << "step " << t;
        }
    }
}

TEST(ProductSum, FromPotentialsOnTreeReachesExactMarginals) {
    const auto g = gen::tree_t3();
    const auto model = random_model(g, 44, 1.0);
    // b_i ∝ phi_i, b_a ∝ psi_a prod phi: the beliefs of the all-ones messages
    auto b = beliefs(model, MessageState::constant(g, 1.0));
    for (int t = 0; t < 10; ++t) b = product_sum_step(g, b);
    EXPECT_LE(gen::max_abs_diff(b, exact_marginals(model).marginals), 1e-10);
}
