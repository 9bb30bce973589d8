#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dense_oracle.hpp"
#include "gatres/grad_check.hpp"
#include "gatres/loss.hpp"
#include "gatres/models.hpp"

using namespace gatres;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
    Tensor t(r, c);
    for (double& v : t.data()) v = rng.normal(0.0, sd);
    return t;
}

struct RandomGraph {
    std::size_t n = 0;
    std::vector<Edge> edges;
    Graph graph;
};

RandomGraph random_graph(std::size_t n, std::size_t m, Rng& rng) {
    RandomGraph g{n, {}, {}};
    for (std::size_t k = 0; k < m; ++k)
        g.edges.push_back({static_cast<Index>(rng.uniform_index(n)), static_cast<Index>(rng.uniform_index(n))});
    g.graph = Graph::build(n, g.edges);
    return g;
}

void expect_probability_rows(const Tensor& p) {
    ASSERT_EQ(p.cols(), 2u);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        EXPECT_GE(p(i, 0), 0.0);
        EXPECT_GE(p(i, 1), 0.0);
        EXPECT_NEAR(p(i, 0) + p(i, 1), 1.0, 1e-12);
    }
}

GcnConfig small_gcn(std::size_t in) {
    GcnConfig c;
    c.in_dim = in;
    c.hidden = 6;
    return c;
}
GatConfig small_gat(std::size_t in) {
    GatConfig c;
    c.in_dim = in;
    c.hidden = 5;
    return c;
}
GatResNetConfig small_resnet(std::size_t in, bool skip = false) {
    GatResNetConfig c;
    c.in_dim = in;
    c.hidden = 5;
    c.use_skip = skip;
    return c;
}

// Applies node permutation perm (old index -> new index) to rows.
Tensor permute_rows(const Tensor& t, const std::vector<Index>& perm) {
    Tensor out(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i)
        std::copy(t.row(i).begin(), t.row(i).end(), out.row(perm[i]).begin());
    return out;
}

} // namespace

TEST(Gcn, IsolatedNodeReducesToDenseLayers) {
    Rng rng(1);
    const GcnConfig cfg = small_gcn(4);
    ParamSet p = init_params(cfg, rng);
    const Tensor x = random_tensor(1, 4, rng);
    const Graph g = Graph::build(1, {});
    Rng unused(0);
    const Tensor got = gcn_forward(cfg, p, g, x, false, unused);
    const auto want = oracle::softmax(
        oracle::mul(oracle::elu(oracle::mul(oracle::from(x), oracle::from(p.at("l0.W")))), oracle::from(p.at("l1.W"))));
    EXPECT_LT(oracle::max_rel_diff(got, want), 1e-12);
}

TEST(Gcn, FourNodeGraphMatchesDenseOracle) {
    Rng rng(2);
    const std::vector<Edge> edges{{0, 1}, {1, 2}, {3, 1}};
    const Graph g = Graph::build(4, edges);
    const GcnConfig cfg = small_gcn(3);
    ParamSet p = init_params(cfg, rng);
    const Tensor x = random_tensor(4, 3, rng);
    Rng unused(0);
    const Tensor got = gcn_forward(cfg, p, g, x, false, unused);
    EXPECT_LT(oracle::max_rel_diff(got, oracle::gcn(cfg, p, oracle::adjacency(4, edges), oracle::from(x))), 1e-10);
}

TEST(Gcn, ShapeMismatchIsDimensionError) {
    Rng rng(3);
    const GcnConfig cfg = small_gcn(3);
    ParamSet p = init_params(cfg, rng);
    const Graph g = Graph::build(4, {});
    Rng unused(0);
    EXPECT_THROW(gcn_forward(cfg, p, g, Tensor(4, 5), false, unused), DimensionError);
    EXPECT_THROW(gcn_forward(cfg, p, g, Tensor(3, 3), false, unused), DimensionError);
}

TEST(GatLayer, SelfLoopOnlyNodeAttendsFullyToItself) {
    Rng rng(4);
    ParamSet p;
    add_gat_layer_params(p, 0, 2, 3, 4, rng);
    const Tensor x = random_tensor(1, 3, rng);
    const Graph g = Graph::build(1, {});
    ad::Tape t;
    Rng unused(0);
    const Tensor out = gat_layer({t, false}, p, 0, 2, g, t.borrow(x), true, 0.2, 0.0, false, unused).value();
    const auto z0 = oracle::mul(oracle::from(x), oracle::from(p.at(head_name(0, 0, "W"))));
    const auto z1 = oracle::mul(oracle::from(x), oracle::from(p.at(head_name(0, 1, "W"))));
    ASSERT_EQ(out.cols(), 8u);
    for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_NEAR(out(0, c), z0[0][c], 1e-14);
        EXPECT_NEAR(out(0, 4 + c), z1[0][c], 1e-14);
    }
}

TEST(GatLayer, IdenticalNeighboursShareAttentionEqually) {
    Rng rng(5);
    ParamSet p;
    add_gat_layer_params(p, 0, 1, 3, 2, rng);
    const Tensor row = random_tensor(1, 3, rng);
    Tensor x(3, 3);
    for (std::size_t i = 0; i < 3; ++i) std::copy(row.data().begin(), row.data().end(), x.row(i).begin());
    const Graph g = Graph::build(3, std::vector<Edge>{{1, 0}, {2, 0}}, false);
    ad::Tape t;
    Rng unused(0);
    const ad::Var h = t.borrow(x);
    const Tensor& w = p.at(head_name(0, 0, "W"));
    const Tensor& a = p.at(head_name(0, 0, "a"));
    const ad::Var z = ad::matmul(h, t.borrow(w));
    const ad::Var score = ad::leaky_relu(
        ad::add(ad::gather_rows(ad::matmul(z, ad::slice_rows(t.borrow(a), 0, 2)), g.dst()),
                ad::gather_rows(ad::matmul(z, ad::slice_rows(t.borrow(a), 2, 4)), g.src())),
        0.2);
    const Tensor alpha = ad::segment_softmax(score, g.dst(), 3).value();
    for (std::size_t e = 0; e < g.n_stored(); ++e) {
        if (g.dst()[e] == 0) {
            EXPECT_NEAR(alpha[e], 1.0 / 3.0, 1e-15);
        }
    }
    const Tensor out = gat_layer({t, false}, p, 0, 1, g, h, true, 0.2, 0.0, false, unused).value();
    const Tensor zv = z.value();
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out(0, c), zv(0, c), 1e-14);
}

TEST(GatLayer, FiveNodeGraphMatchesDenseAttention) {
    Rng rng(6);
    const std::vector<Edge> edges{{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 2}};
    const Graph g = Graph::build(5, edges);
    ParamSet p;
    add_gat_layer_params(p, 0, 3, 4, 3, rng);
    const Tensor x = random_tensor(5, 4, rng);
    for (bool concat : {true, false}) {
        ad::Tape t;
        Rng unused(0);
        const Tensor got = gat_layer({t, false}, p, 0, 3, g, t.borrow(x), concat, 0.2, 0.0, false, unused).value();
        const auto want = oracle::gat_layer(p, 0, 3, oracle::adjacency(5, edges), oracle::from(x), concat, 0.2);
        ASSERT_EQ(got.cols(), want[0].size());
        EXPECT_LT(oracle::max_rel_diff(got, want), 1e-12);
    }
}

TEST(Gat, DefaultWidthsAndSixNodeOracle) {
    Rng rng(7);
    const GatConfig cfg;
    ParamSet p = init_params(cfg, rng);
    EXPECT_EQ(p.at(head_name(0, 0, "W")).cols(), 100u);
    EXPECT_EQ(p.at(head_name(1, 0, "W")).rows(), 800u);
    EXPECT_EQ(p.at(head_name(1, 7, "W")).cols(), 2u);
    EXPECT_FALSE(p.contains(head_name(0, 8, "W")));

    const std::vector<Edge> edges{{0, 1}, {1, 2}, {2, 0}, {3, 4}, {5, 0}};
    const Graph g = Graph::build(6, edges);
    const Tensor x = random_tensor(6, 166, rng);
    ad::Tape t;
    Rng unused(0);
    const Tensor hidden =
        gat_layer({t, false}, p, 0, cfg.heads, g, t.borrow(x), true, cfg.attn_slope, 0.0, false, unused).value();
    EXPECT_EQ(hidden.cols(), 800u);
    const Tensor got = gat_forward(cfg, p, g, x, false, unused);
    expect_probability_rows(got);
    EXPECT_LT(oracle::max_rel_diff(got, oracle::gat(cfg, p, oracle::adjacency(6, edges), oracle::from(x))), 1e-10);
}

TEST(GatResNet, SixNodeOracleWithAndWithoutSkip) {
    for (bool skip : {false, true}) {
        Rng rng(8);
        const GatResNetConfig cfg = small_resnet(7, skip);
        ParamSet p = init_params(cfg, rng);
        EXPECT_EQ(p.contains("skip.W"), skip);
        const std::vector<Edge> edges{{0, 1}, {1, 2}, {2, 3}, {4, 5}, {5, 1}};
        const Graph g = Graph::build(6, edges);
        const Tensor x = random_tensor(6, 7, rng);
        Rng unused(0);
        const Tensor got = gat_resnet_forward(cfg, p, g, x, false, unused);
        expect_probability_rows(got);
        EXPECT_LT(oracle::max_rel_diff(got, oracle::gat_resnet(cfg, p, oracle::adjacency(6, edges), oracle::from(x))),
                  1e-10);
    }
}

TEST(Models, SparseMatchesDenseOnRandomGraphs) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(50);
        const RandomGraph rg = random_graph(n, rng.uniform_index(201), rng);
        const auto adj = oracle::adjacency(n, rg.edges);
        const Tensor x = random_tensor(n, 6, rng);
        const auto xd = oracle::from(x);
        Rng unused(0);
        const GcnConfig gc = small_gcn(6);
        ParamSet gp = init_params(gc, rng);
        EXPECT_LT(oracle::max_rel_diff(gcn_forward(gc, gp, rg.graph, x, false, unused), oracle::gcn(gc, gp, adj, xd)),
                  1e-10);
        const GatConfig ac = small_gat(6);
        ParamSet ap = init_params(ac, rng);
        EXPECT_LT(oracle::max_rel_diff(gat_forward(ac, ap, rg.graph, x, false, unused), oracle::gat(ac, ap, adj, xd)),
                  1e-10);
        const GatResNetConfig rc = small_resnet(6, trial % 2 == 1);
        ParamSet rp = init_params(rc, rng);
        EXPECT_LT(oracle::max_rel_diff(gat_resnet_forward(rc, rp, rg.graph, x, false, unused),
                                       oracle::gat_resnet(rc, rp, adj, xd)),
                  1e-10);
    }
}

TEST(Models, OutputsAreProbabilityRowsForExtremeInputs) {
    Rng rng(10);
    const RandomGraph rg = random_graph(12, 30, rng);
    for (double sd : {1e-3, 1.0, 50.0}) {
        const Tensor x = random_tensor(12, 5, rng, sd);
        Rng drop(3);
        const GcnConfig gc = small_gcn(5);
        ParamSet gp = init_params(gc, rng);
        expect_probability_rows(gcn_forward(gc, gp, rg.graph, x, true, drop));
        expect_probability_rows(gcn_forward(gc, gp, rg.graph, x, false, drop));
        const GatConfig ac = small_gat(5);
        ParamSet ap = init_params(ac, rng);
        expect_probability_rows(gat_forward(ac, ap, rg.graph, x, true, drop));
        const GatResNetConfig rc = small_resnet(5, true);
        ParamSet rp = init_params(rc, rng);
        expect_probability_rows(gat_resnet_forward(rc, rp, rg.graph, x, true, drop));
        expect_probability_rows(gat_resnet_forward(rc, rp, rg.graph, x, false, drop));
    }
}

TEST(Models, PermutationEquivarianceIsExact) {
    Rng rng(11);
    const std::size_t n = 15;
    const RandomGraph rg = random_graph(n, 40, rng);
    std::vector<std::int64_t> keys(n);
    std::iota(keys.begin(), keys.end(), 500);
    const Graph g = Graph::build(n, rg.edges, true, keys);

    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    std::vector<Edge> pedges;
    for (const Edge& e : rg.edges) pedges.push_back({perm[e.src], perm[e.dst]});
    std::vector<std::int64_t> pkeys(n);
    for (std::size_t i = 0; i < n; ++i) pkeys[perm[i]] = keys[i];
    const Graph pg = Graph::build(n, pedges, true, pkeys);

    const Tensor x = random_tensor(n, 6, rng);
    const Tensor px = permute_rows(x, perm);
    Rng unused(0);
    const GcnConfig gc = small_gcn(6);
    ParamSet gp = init_params(gc, rng);
    EXPECT_EQ(permute_rows(gcn_forward(gc, gp, g, x, false, unused), perm), gcn_forward(gc, gp, pg, px, false, unused));
    const GatConfig ac = small_gat(6);
    ParamSet ap = init_params(ac, rng);
    EXPECT_EQ(permute_rows(gat_forward(ac, ap, g, x, false, unused), perm), gat_forward(ac, ap, pg, px, false, unused));
    const GatResNetConfig rc = small_resnet(6, true);
    ParamSet rp = init_params(rc, rng);
    EXPECT_EQ(permute_rows(gat_resnet_forward(rc, rp, g, x, false, unused), perm),
              gat_resnet_forward(rc, rp, pg, px, false, unused));
}

TEST(GatResNet, ZeroSkipWeightsMatchNoSkipBitwise) {
    Rng rng(12);
    const RandomGraph rg = random_graph(10, 25, rng);
    const Tensor x = random_tensor(10, 8, rng);
    GatResNetConfig with = small_resnet(8, true), without = small_resnet(8, false);
    Rng init(40);
    ParamSet p = init_params(with, init);
    for (double& v : p.at("skip.W").data()) v = 0.0;
    ParamSet q;
    for (const auto& [name, t] : p.entries())
        if (name != "skip.W") q.add(name, t.detached());
    for (bool training : {false, true}) {
        Rng r1(77), r2(77);
        EXPECT_EQ(gat_resnet_forward(with, p, rg.graph, x, training, r1),
                  gat_resnet_forward(without, q, rg.graph, x, training, r2));
    }
}

TEST(GatResNet, SkipWithMismatchedWidthIsConfigError) {
    Rng rng(13);
    const GatResNetConfig cfg = small_resnet(4, true);
    ParamSet p = init_params(cfg, rng);
    p.at("skip.W") = Tensor(5, 2);
    const Graph g = Graph::build(3, {});
    ad::Tape t;
    Rng unused(0);
    // gat weights accept 4 columns, the skip projection does not
    EXPECT_THROW(gat_resnet_logits({t, false}, cfg, p, g, t.borrow(Tensor(3, 4)), false, unused), ConfigError);
}

TEST(Embed, DefaultWidthDeterminismAndLayerOneEquality) {
    Rng rng(14);
    const GatResNetConfig cfg;
    ParamSet p = init_params(cfg, rng);
    EXPECT_EQ(p.at(head_name(0, 0, "W")).rows(), 166u);
    EXPECT_EQ(p.at(head_name(0, 3, "W")).cols(), 100u);
    const RandomGraph rg = random_graph(9, 20, rng);
    const Tensor x = random_tensor(9, 166, rng);
    const Tensor e1 = embed(cfg, p, rg.graph, x);
    EXPECT_EQ(e1.rows(), 9u);
    EXPECT_EQ(e1.cols(), 400u);
    EXPECT_EQ(e1, embed(cfg, p, rg.graph, x));

    ad::Tape t;
    Rng unused(0);
    GatResNetTrace trace;
    gat_resnet_logits({t, false}, cfg, p, rg.graph, t.borrow(x), false, unused, &trace);
    EXPECT_EQ(trace.layer1.value(), e1);
    EXPECT_EQ(trace.layer2.value().cols(), 400u);
    EXPECT_LT(oracle::max_rel_diff(e1, oracle::gat_resnet_layer1(cfg, p, oracle::adjacency(9, rg.edges), oracle::from(x))),
              1e-10);
}

TEST(InitParams, DeterministicAndXavierScaled) {
    Rng a(15), b(15);
    const GatResNetConfig cfg;
    const ParamSet p = init_params(cfg, a), q = init_params(cfg, b);
    ASSERT_EQ(p.entries().size(), q.entries().size());
    for (std::size_t k = 0; k < p.entries().size(); ++k) {
        EXPECT_EQ(p.entries()[k].first, q.entries()[k].first);
        EXPECT_EQ(p.entries()[k].second, q.entries()[k].second);
    }
    const Tensor& w = p.at(head_name(0, 0, "W"));
    ASSERT_EQ(w.rows(), 166u);
    ASSERT_EQ(w.cols(), 100u);
    double mean = 0.0, sq = 0.0;
    for (double v : w.data()) mean += v;
    mean /= static_cast<double>(w.size());
    for (double v : w.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(w.size()));
    EXPECT_NEAR(sd / std::sqrt(2.0 / 266.0), 1.0, 0.05);
    // 8 heads x (W, a) x 2 layers
    Rng c(15);
    EXPECT_EQ(init_params(GatConfig{}, c).entries().size(), 32u);
}

TEST(ModelConfigs, ValidationRejectsBadValues) {
    GcnConfig g;
    g.dropout = 1.0;
    EXPECT_THROW(validate(g), ConfigError);
    GatConfig a;
    a.heads = 0;
    EXPECT_THROW(validate(a), ConfigError);
    GatResNetConfig r;
    r.n_layers = 2;
    EXPECT_THROW(validate(r), ConfigError);
    EXPECT_EQ(parse_model_kind("gat_resnet"), ModelKind::gat_resnet);
    EXPECT_FALSE(parse_model_kind("xgboost").has_value());
}

TEST(GatResNet, EndToEndGradientMatchesFiniteDifferences) {
    Rng rng(16);
    const GatResNetConfig cfg = small_resnet(5, true);
    ParamSet p = init_params(cfg, rng);
    const std::vector<Edge> edges{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {1, 4}};
    const Graph g = Graph::build(6, edges);
    const Tensor x = random_tensor(6, 5, rng);
    const std::vector<Label> y{Label::licit, Label::illicit, Label::licit, Label::illicit, Label::unknown, Label::illicit};
    const std::vector<std::uint8_t> eligible{1, 1, 1, 1, 0, 1};
    const auto report = grad_check(
        [&](ad::Tape& t) {
            Rng unused(0);
            const ad::Var logits = gat_resnet_logits({t, true}, cfg, p, g, t.borrow(x), false, unused);
            return weighted_cross_entropy(logits, y, ClassWeights{}, eligible);
        },
        p.tensors());
    EXPECT_TRUE(report.passed) << "max relative error " << report.max_rel_error;
    EXPECT_LT(report.max_rel_error, 1e-3);
}

TEST(Gcn, EndToEndGradientMatchesFiniteDifferences) {
    Rng rng(17);
    const GcnConfig cfg = small_gcn(4);
    ParamSet p = init_params(cfg, rng);
    const Graph g = Graph::build(5, std::vector<Edge>{{0, 1}, {1, 2}, {3, 4}});
    const Tensor x = random_tensor(5, 4, rng);
    const std::vector<Label> y{Label::licit, Label::illicit, Label::licit, Label::illicit, Label::licit};
    const std::vector<std::uint8_t> eligible(5, 1);
    const auto report = grad_check(
        [&](ad::Tape& t) {
            Rng unused(0);
            return weighted_cross_entropy(gcn_logits({t, true}, cfg, p, g, t.borrow(x), false, unused), y,
                                          ClassWeights{}, eligible);
        },
        p.tensors());
    EXPECT_TRUE(report.passed) << "max relative error " << report.max_rel_error;
}
