// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/graph.hpp"
#include "gradient_check.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace neam;

namespace {

NeuralParamVec half_vector(int n) { return NeuralParamVec(static_cast<std::size_t>(n), 0.5); }

long binomial(int n, int k) {
    long r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// Slot indices of the microfacet graphs.
constexpr int kM = 0, kS = 1, kD = 2, kF = 3, kG = 4, kE = 5, kDF = 6, kDFG = 7, kDFGE = 8, kSpec = 9, kRoot = 10;

}  // namespace

TEST_CASE("ggx graph structure") {
    const CompGraph g = build_ggx_graph();
    CHECK(g.n_slots() == 11);
    CHECK(g.terminal_count() == 6);
    CHECK(g.operator_count() == 5);
    int muls = 0, adds = 0;
    for (const auto& n : g.nodes) {
        if (!n.terminal) (n.op == OpKind::Mul ? muls : adds)++;
    }
    CHECK(muls == 4);
    CHECK(adds == 1);
    CHECK(g.nodes[kRoot].op == OpKind::Add);
    CHECK(g.nodes[kRoot].out_dim == 3);
    CHECK(g.nodes[kM].out_dim == 3);
    CHECK(g.nodes[kS].out_dim == 3);
    for (int s : {kD, kF, kG, kE}) CHECK(g.nodes[s].out_dim == 1);
}

TEST_CASE("other graphs are valid single-rooted DAGs") {
    for (const auto& g : {build_cooktorrance_graph(), build_ward_graph(), build_toy_graph()}) {
        CHECK_NOTHROW(g.validate());
        CHECK(g.nodes.back().out_dim == 3);
    }
    CHECK(build_cooktorrance_graph().n_slots() == 11);
    CHECK(build_ward_graph().n_slots() == 7);
    CHECK(build_toy_graph().n_slots() == 3);
    CHECK_THROWS_AS(build_graph("phong"), Error);

    CompGraph broken = build_ggx_graph();
    broken.nodes[kDF].children = {kDF, kF};
    CHECK_THROWS_AS(broken.validate(), Error);
}

TEST_CASE("all-zero state reproduces the closed forms") {
    struct Case {
        CompGraph graph;
        Rgb (*closed)(const AnalyticalParams&, const Direction&, const Direction&);
    };
    const Case cases[] = {{build_ggx_graph(), eval_analytical_ggx},
                          {build_cooktorrance_graph(), eval_analytical_cooktorrance},
                          {build_ward_graph(), eval_analytical_ward}};
    std::mt19937_64 rng(7);
    for (const auto& c : cases) {
        const EnhancedModel m = EnhancedModel::create(c.graph, EnhancementState(c.graph.n_slots()));
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const auto p = testing::random_params_full(rng);
            const auto [wi, wo] = testing::random_pair(rng, 1.5);
            const Rgb a = forward(m, p, half_vector(27), wi, wo);
            const Rgb b = c.closed(p, wi, wo);
            for (int k = 0; k < 3; ++k) worst = std::max(worst, testing::rel_err(a[k], b[k]));
        }
        CHECK_MESSAGE(worst < 1e-12, c.graph.model_name << " worst " << worst);
    }
}

TEST_CASE("ward without specular albedo is lambertian") {
    const EnhancedModel m = EnhancedModel::create(build_ward_graph(), EnhancementState(7));
    AnalyticalParams p;
    p.rho_s = {0.0, 0.0, 0.0};
    const Direction wi = spherical_direction(0.4, 0.1), wo = spherical_direction(0.7, 2.0);
    const Rgb v = forward(m, p, half_vector(27), wi, wo);
    for (int k = 0; k < 3; ++k) CHECK(v[k] == doctest::Approx(p.rho_d[k] / kPi).epsilon(1e-15));
}

TEST_CASE("beckmann peak") {
    for (double m : {0.1, 0.3, 0.7}) {
        AnalyticalParams p;
        p.alpha_x = p.alpha_y = m;
        const Direction n{0.0, 0.0, 1.0};
        const auto ctx = make_term_context(p.to_array(), n, n);
        CHECK(terms::beckmann_d(ctx) == doctest::Approx(1.0 / (kPi * m * m)).epsilon(1e-13));
    }
}

TEST_CASE("module input widths") {
    EnhancedModel m = EnhancedModel::create(build_ggx_graph(), EnhancementState::all_ones(11));
    CHECK(m.module_input_dim(kF) == 45);
    CHECK(m.module_input_dim(kD) == 45);
    CHECK(m.module_input_dim(kM) == 39);
    CHECK(m.module_input_dim(kS) == 39);
    CHECK(m.module_input_dim(kDF) == 2);
    CHECK(m.module_input_dim(kSpec) == 4);
    CHECK(m.module_input_dim(kRoot) == 6);
    CHECK(m.modules.at(kSpec).output_dim() == 3);
    CHECK(m.parameter_count() == 39);
}

TEST_CASE("forward with a zero-weight module") {
    EnhancedModel m = EnhancedModel::create(build_ggx_graph(), EnhancementState(11));
    m.set_slot(kE, true, 1);
    m.modules.at(kE) = NeuralModule(m.module_dims(kE));
    AnalyticalParams p;
    const Direction wi = spherical_direction(0.3, 0.0), wo = spherical_direction(0.5, 1.0);
    const Rgb v = forward(m, p, half_vector(27), wi, wo);
    const Rgb lambert = node_lambertian(p);
    for (int k = 0; k < 3; ++k) CHECK(v[k] == lambert[k]);

    CHECK_THROWS_AS(forward(m, p, half_vector(26), wi, wo), Error);
}

TEST_CASE("backward special cases") {
    const EnhancedModel zero = EnhancedModel::create(build_ggx_graph(), EnhancementState(11));
    AnalyticalParams p;
    const Direction wi = spherical_direction(0.3, 0.0), wo = spherical_direction(0.5, 1.0);
    const Rgb go{0.7, -1.3, 2.0};
    const Gradients g = backward(zero, p, half_vector(27), wi, wo, go);
    for (int k = 0; k < 3; ++k) CHECK(g.d_analytical[k] == doctest::Approx(go[k] / kPi).epsilon(1e-14));

    EnhancedModel full = EnhancedModel::create(build_ggx_graph(), EnhancementState::all_ones(11), {}, 5);
    const Gradients z = backward(full, p, half_vector(27), wi, wo, {0.0, 0.0, 0.0});
    for (double v : z.d_analytical) CHECK(v == 0.0);
    for (double v : z.d_neural) CHECK(v == 0.0);
    for (const auto& [slot, mg] : z.d_weights) CHECK(mg.squared_norm() == 0.0);
}

TEST_CASE("backward matches central differences across states") {
    const CompGraph graph = build_ggx_graph();
    std::vector<EnhancementState> states = {EnhancementState(11), EnhancementState::all_ones(11),
                                            EnhancementState::parse("00011101000"),
                                            EnhancementState::parse("11000000011")};
    std::mt19937_64 rng(41);
    std::normal_distribution<double> nd(0.0, 1.0);
    testing::GradCheckReport report;
    int configs = 0;
    for (int cfg = 0; configs < 24; ++cfg) {
        const EnhancementState& s = states[static_cast<std::size_t>(cfg) % states.size()];
        EnhancedModel m = EnhancedModel::create(graph, s, {}, rng());
        testing::randomize_biases(m, rng);
        const auto p = testing::random_params(rng);
        NeuralParamVec z(27);
        for (double& v : z) v = 0.5 + 0.3 * nd(rng);
        const auto [wi, wo] = testing::random_pair(rng, 1.1);
        if (testing::min_abs_preactivation(m, p, z, wi, wo) < 1e-3) continue;
        testing::check_gradients(m, p, z, wi, wo, {nd(rng), nd(rng), nd(rng)}, 1e-5, 1e-4, report);
        ++configs;
    }
    CHECK_MESSAGE(report.failed == 0, "worst " << report.worst_rel << " at " << report.worst_where);
    CHECK(report.compared > 10000);
}

TEST_CASE("backward on the other graphs") {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> nd(0.0, 1.0);
    testing::GradCheckReport report;
    for (const auto& graph : {build_cooktorrance_graph(), build_ward_graph(), build_toy_graph()}) {
        for (int cfg = 0; cfg < 6; ++cfg) {
            EnhancementState s(graph.n_slots());
            for (auto& b : s.bits) b = static_cast<std::uint8_t>(rng() & 1);
            EnhancedModel m = EnhancedModel::create(graph, s, {}, rng());
            testing::randomize_biases(m, rng);
            const auto p = testing::random_params(rng);
            const auto [wi, wo] = testing::random_pair(rng, 1.1);
            if (testing::min_abs_preactivation(m, p, half_vector(27), wi, wo) < 1e-3) continue;
            // V-cavity kinks are not differentiable.
            if (graph.model_name == "cooktorrance") {
                const auto ctx = make_term_context(p.to_array(), wi, wo);
                const double nh = dot(ctx.frame.n, ctx.h), oh = dot(wo, ctx.h);
                const double gi = 2 * nh * dot(ctx.frame.n, wi) / oh, gv = 2 * nh * dot(ctx.frame.n, wo) / oh;
                if (std::abs(gi - gv) < 1e-2 || std::abs(std::min(gi, gv) - 1.0) < 1e-2) continue;
            }
            testing::check_gradients(m, p, half_vector(27), wi, wo, {nd(rng), nd(rng), nd(rng)}, 1e-5, 1e-4,
                                     report);
        }
    }
    CHECK_MESSAGE(report.failed == 0, "worst " << report.worst_rel << " at " << report.worst_where);
}

TEST_CASE("batched gradients accumulate per material") {
    const EnhancedModel m = EnhancedModel::create(build_ggx_graph(), EnhancementState::parse("00011101000"), {}, 9);
    std::mt19937_64 rng(47);
    std::vector<MaterialInput> mats(2);
    for (auto& mat : mats) {
        mat.analytical = testing::random_params(rng).to_array();
        mat.neural = half_vector(27);
    }
    std::vector<Direction> wi, wo;
    std::vector<int> idx;
    for (int i = 0; i < 8; ++i) {
        const auto [a, b] = testing::random_pair(rng);
        wi.push_back(a);
        wo.push_back(b);
        idx.push_back(i % 2);
    }
    GraphEvaluator ev(m);
    ev.forward(mats, idx, wi, wo, true);
    BatchGradients bg = BatchGradients::zeros(m, 2);
    ev.backward(Eigen::MatrixXd::Ones(3, 8), bg);

    ParamArray<double> sum0{};
    for (int i = 0; i < 8; i += 2) {
        const Gradients g = backward(m, AnalyticalParams::from_array(mats[0].analytical), mats[0].neural, wi[i],
                                     wo[i], {1.0, 1.0, 1.0});
        for (int j = 0; j < 12; ++j) sum0[j] += g.d_analytical[j];
    }
    for (int j = 0; j < 12; ++j) CHECK(bg.d_analytical[0][j] == doctest::Approx(sum0[j]).epsilon(1e-10));
}

TEST_CASE("forward is finite and repeatable for random states") {
    const CompGraph graph = build_ggx_graph();
    std::mt19937_64 rng(53);
    std::vector<MaterialInput> mats(1);
    std::vector<Direction> wi, wo;
    std::vector<int> idx;
    std::vector<AnalyticalParams> params;
    for (int i = 0; i < 10000; ++i) {
        const auto [a, b] = testing::random_pair(rng, 1.57);
        wi.push_back(a);
        wo.push_back(b);
        params.push_back(testing::random_params_full(rng));
    }
    // One material per sample so parameters vary with the direction pairs.
    mats.clear();
    for (int i = 0; i < 10000; ++i) {
        mats.push_back({params[i].to_array(), half_vector(27)});
        idx.push_back(i);
    }
    bool finite = true, repeatable = true;
    for (int s = 0; s < 16; ++s) {
        EnhancementState st(11);
        for (auto& b : st.bits) b = static_cast<std::uint8_t>(rng() & 1);
        const EnhancedModel m = EnhancedModel::create(graph, st, {}, rng());
        GraphEvaluator ev(m);
        const Eigen::MatrixXd a = ev.forward(mats, idx, wi, wo, false);
        const Eigen::MatrixXd a2 = ev.forward(mats, idx, wi, wo, false);
        const Eigen::MatrixXd b = ev.forward(mats, idx, wi, wo, true);
        const Eigen::MatrixXd b2 = ev.forward(mats, idx, wi, wo, true);
        finite = finite && a.allFinite() && b.allFinite();
        repeatable = repeatable && (a.array() == a2.array()).all() && (b.array() == b2.array()).all();
    }
    CHECK(finite);
    CHECK(repeatable);
}

TEST_CASE("state neighbors") {
    const EnhancementState zero(11);
    CHECK(state_neighbors(zero, 1).size() == 12);
    CHECK(state_neighbors(zero, 2).size() == 67);
    CHECK(state_neighbors(zero, 0).size() == 1);

    StateConstraints none_allowed;
    none_allowed.max_ones = 0;
    const auto only = state_neighbors(zero, 1, none_allowed);
    REQUIRE(only.size() == 1);
    CHECK(only[0] == zero);
    // Reverting a module stays admissible under the cap.
    CHECK(state_neighbors(EnhancementState::parse("00100000000"), 1, none_allowed).size() == 2);

    const auto order = state_neighbors(zero, 1);
    CHECK(order[0] == zero);
    for (int i = 1; i < 12; ++i) {
        CHECK(order[i].ones() == 1);
        CHECK(order[i][i - 1]);
    }

    StateConstraints fixed;
    fixed.fixed_bits[0] = 0;
    fixed.fixed_bits[3] = 1;
    const auto nb = state_neighbors(EnhancementState::parse("00010000000"), 1, fixed);
    CHECK(nb.size() == 10);
    for (const auto& s : nb) {
        CHECK_FALSE(s[0]);
        CHECK(s[3]);
    }
}

TEST_CASE("state neighbor counts match brute-force enumeration") {
    std::mt19937_64 rng(59);
    for (int n = 1; n <= 6; ++n) {
        for (int trial = 0; trial < 20; ++trial) {
            EnhancementState s(n);
            for (auto& b : s.bits) b = static_cast<std::uint8_t>(rng() & 1);
            const int t = static_cast<int>(rng() % 4);
            StateConstraints c;
            if (trial % 3 == 1) c.max_ones = static_cast<int>(rng() % (n + 1));
            if (trial % 3 == 2) {
                const int slot = static_cast<int>(rng() % n);
                c.fixed_bits[slot] = s[slot];
            }
            const auto got = state_neighbors(s, t, c);
            // Brute force over the whole hypercube.
            long expected = 1;
            long unconstrained = 0;
            for (unsigned mask = 0; mask < (1u << n); ++mask) {
                EnhancementState o(n);
                for (int i = 0; i < n; ++i) o.bits[i] = (mask >> i) & 1u;
                const int d = hamming_distance(s, o);
                if (d <= t) ++unconstrained;
                if (d >= 1 && d <= t && c.admits(o)) ++expected;
            }
            CHECK(static_cast<long>(got.size()) == expected);
            long closed = 0;
            for (int k = 0; k <= std::min(t, n); ++k) closed += binomial(n, k);
            CHECK(unconstrained == closed);
            std::set<EnhancementState> unique(got.begin(), got.end());
            CHECK(unique.size() == got.size());
        }
    }
}

TEST_CASE("reference final state weight total") {
    EnhancedModel m = EnhancedModel::create(build_ggx_graph(), EnhancementState(11));
    for (int s : {kF, kG, kE, kDFG}) m.set_slot(s, true, static_cast<std::uint64_t>(s));
    CHECK(m.module_weight_count() == 3 * 1825 + 1137);
    CHECK(m.state.str() == "00011101000");
}
