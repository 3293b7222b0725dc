#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "actnet/gcn.h"
#include "test_support.h"

using namespace actnet;
using namespace actnet::gcn;

namespace {

struct RandomGraph {
    std::size_t n;
    std::vector<double> x;
    std::vector<Edge> edges;
};

RandomGraph random_graph(std::mt19937_64& rng, std::size_t n, std::size_t f, double edge_prob) {
    RandomGraph g{n, {}, {}};
    std::uniform_real_distribution<double> u(-1.0, 1.0), coin(0.0, 1.0);
    for (std::size_t i = 0; i < n * f; ++i) g.x.push_back(u(rng));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(rng) < edge_prob) {
                g.edges.push_back({i, j});
                g.edges.push_back({j, i});
            }
    return g;
}

GraphInput input_of(const RandomGraph& g, std::size_t f) {
    return {Tensor::from({g.n, f}, g.x), normalized_adjacency(g.n, g.edges), 0};
}

GraphInput permuted(const RandomGraph& g, std::size_t f, const std::vector<std::size_t>& perm) {
    // New node i is old node perm[i].
    std::vector<std::size_t> inv(g.n);
    for (std::size_t i = 0; i < g.n; ++i) inv[perm[i]] = i;
    std::vector<double> x;
    for (std::size_t i = 0; i < g.n; ++i) x.insert(x.end(), g.x.begin() + perm[i] * f, g.x.begin() + (perm[i] + 1) * f);
    std::vector<Edge> edges;
    for (const auto& e : g.edges) edges.push_back({inv[e.src], inv[e.dst]});
    return {Tensor::from({g.n, f}, x), normalized_adjacency(g.n, edges), 0};
}

std::vector<std::size_t> random_perm(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

// Dense D^-1/2 (A + I) D^-1/2 computed directly from the definition.
std::vector<double> dense_propagation(std::size_t n, const std::vector<Edge>& edges) {
    std::vector<double> a(n * n, 0.0);
    for (const auto& e : edges) a[e.dst * n + e.src] = 1.0;
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a[i * n + j] /= std::sqrt(deg[i] * deg[j]);
    return a;
}

GcnConfig small_config(Backbone b = Backbone::res) {
    GcnConfig c;
    c.depth = 4;
    c.hidden_dim = 6;
    c.backbone = b;
    c.topk_k = 3;
    c.dropout = 0.2;
    return c;
}

}  // namespace

TEST(GraphConv, IsolatedNodeWithIdentityWeight) {
    auto x = Tensor::matrix(1, 3, {0.5, -2.0, 1.5});
    auto w = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto y = graph_conv(x, std::vector<Edge>{}, w);
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0.5, 0.0, 1.5}));
}

TEST(GraphConv, TwoConnectedNodesAverage) {
    auto x = Tensor::matrix(2, 1, {1.0, 3.0});
    auto w = Tensor::matrix(1, 1, {1.0});
    auto y = graph_conv(x, std::vector<Edge>{{0, 1}, {1, 0}}, w);
    EXPECT_DOUBLE_EQ(y.at(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(y.at(1, 0), 2.0);
}

TEST(GraphConv, ZeroFeaturesGiveZero) {
    std::mt19937_64 rng(1);
    auto w = actnet::testing::random_tensor({4, 5}, rng);
    auto y = graph_conv(Tensor::zeros({3, 4}), std::vector<Edge>{{0, 1}, {1, 2}}, w);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(GraphConv, EmptyGraphFails) {
    EXPECT_THROW(graph_conv(Tensor::zeros({0, 4}), std::vector<Edge>{}, Tensor::zeros({4, 4})), graph::EmptyGraphError);
}

TEST(GraphConv, PropagationMatchesDenseDefinition) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng() % 12;
        auto g = random_graph(rng, n, 1, 0.3);
        if (trial % 2) {  // one-directional edges too
            std::vector<Edge> half;
            for (const auto& e : g.edges)
                if (e.src < e.dst) half.push_back(e);
            g.edges = half;
        }
        auto a = normalized_adjacency(n, g.edges);
        auto dense = dense_propagation(n, g.edges);
        std::vector<double> sparse(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) sparse[i * n + a.col_idx[p]] = a.weights[p];
        for (std::size_t i = 0; i < n * n; ++i) EXPECT_NEAR(sparse[i], dense[i], 1e-15);
    }
}

TEST(Backbone, ResidualWithZeroWeightsIsIdentity) {
    std::mt19937_64 rng(3);
    auto g = random_graph(rng, 7, 5, 0.4);
    auto in = input_of(g, 5);
    auto y = backbone_block(in.x, in.a_hat, Tensor::zeros({5, 5}), Backbone::res);
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), g.x);
}

TEST(Backbone, ZeroResidualWeightsLeaveFirstLayerUnchanged) {
    std::mt19937_64 rng(4);
    GcnConfig c;
    c.hidden_dim = 8;
    GcnModel model(c, 5);
    for (std::size_t l = 1; l < c.depth; ++l) {
        auto* p = model.parameters().find("gcn.conv" + std::to_string(l) + ".weight");
        ASSERT_NE(p, nullptr);
        std::fill(p->value.mutable_data().begin(), p->value.mutable_data().end(), 0.0);
    }
    auto g = random_graph(rng, 9, 16, 0.3);
    auto outs = model.backbone(input_of(g, 16));
    ASSERT_EQ(outs.size(), 14u);
    for (const auto& o : outs) {
        EXPECT_EQ(o.shape(), (Shape{9, 8}));
        EXPECT_TRUE(std::equal(o.data().begin(), o.data().end(), outs[0].data().begin()));
    }
}

TEST(Backbone, DenseWidthGrows) {
    std::mt19937_64 rng(5);
    auto g = random_graph(rng, 4, 3, 0.5);
    auto in = input_of(g, 3);
    auto y = backbone_block(in.x, in.a_hat, actnet::testing::random_tensor({3, 5}, rng), Backbone::dense);
    EXPECT_EQ(y.shape(), (Shape{4, 8}));
    GcnModel model(small_config(Backbone::dense), 1);
    auto outs = model.backbone(input_of(random_graph(rng, 5, 16, 0.5), 16));
    std::vector<std::size_t> widths;
    for (auto& o : outs) widths.push_back(o.dim(1));
    EXPECT_EQ(widths, (std::vector<std::size_t>{6, 12, 18, 24}));
}

TEST(Backbone, ResidualRejectsWidthChange) {
    std::mt19937_64 rng(6);
    auto g = random_graph(rng, 4, 3, 0.5);
    auto in = input_of(g, 3);
    EXPECT_THROW(backbone_block(in.x, in.a_hat, Tensor::zeros({3, 4}), Backbone::res), std::invalid_argument);
}

TEST(TopK, SingleNode) {
    auto x = Tensor::matrix(1, 2, {0.6, -0.8});
    auto p = Tensor::from({2}, {2.0, 0.0});
    auto g = topk_readout(x, p, 1);
    const double s = std::tanh(0.6);
    EXPECT_DOUBLE_EQ(g.at(0, 0), 0.6 * s);
    EXPECT_DOUBLE_EQ(g.at(0, 1), -0.8 * s);
}

TEST(TopK, SaturatedKAveragesAllGatedNodes) {
    auto x = Tensor::matrix(3, 1, {1.0, -2.0, 0.5});
    auto p = Tensor::from({1}, {3.0});
    auto g = topk_readout(x, p, 10);
    const double expected = (1.0 * std::tanh(1.0) - 2.0 * std::tanh(-2.0) + 0.5 * std::tanh(0.5)) / 3.0;
    EXPECT_NEAR(g.at(0, 0), expected, 1e-15);
}

TEST(TopK, SelectsHighestScore) {
    auto x = Tensor::matrix(2, 2, {2.0, 7.0, -5.0, 1.0});
    auto p = Tensor::from({2}, {1.0, 0.0});  // s = [2, -5]
    auto g = topk_readout(x, p, 1);
    EXPECT_DOUBLE_EQ(g.at(0, 0), 2.0 * std::tanh(2.0));
    EXPECT_DOUBLE_EQ(g.at(0, 1), 7.0 * std::tanh(2.0));
}

TEST(TopK, TiesGoToSmallerIndex) {
    auto x = Tensor::matrix(3, 2, {1.0, 0.0, 1.0, 5.0, 0.0, 9.0});
    auto g = topk_readout(x, Tensor::from({2}, {1.0, 0.0}), 1);
    EXPECT_DOUBLE_EQ(g.at(0, 1), 0.0);
}

TEST(Fusion, ShapeLaws) {
    std::mt19937_64 rng(7);
    auto single = fusion_block({actnet::testing::random_tensor({5, 4}, rng)}, actnet::testing::random_tensor({4, 6}, rng),
                               actnet::testing::random_tensor({6}, rng), actnet::testing::random_tensor({6}, rng), 2);
    EXPECT_EQ(single.shape(), (Shape{5, 12}));
    auto multi = fusion_block({actnet::testing::random_tensor({5, 4}, rng), actnet::testing::random_tensor({5, 3}, rng)},
                              actnet::testing::random_tensor({7, 6}, rng), actnet::testing::random_tensor({6}, rng),
                              actnet::testing::random_tensor({6}, rng), 2);
    EXPECT_EQ(multi.shape(), (Shape{5, 12}));
}

TEST(Fusion, NodePermutationPermutesLocalKeepsGlobal) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng() % 10;
        auto a = actnet::testing::random_tensor({n, 4}, rng), b = actnet::testing::random_tensor({n, 3}, rng);
        auto w = actnet::testing::random_tensor({7, 5}, rng), bias = actnet::testing::random_tensor({5}, rng);
        auto p = actnet::testing::random_tensor({5}, rng);
        auto perm = random_perm(rng, n);
        auto base = fusion_block({a, b}, w, bias, p, 3);
        auto moved = fusion_block({gather_rows(a, perm), gather_rows(b, perm)}, w, bias, p, 3);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < 10; ++c) EXPECT_NEAR(moved.at(i, c), base.at(perm[i], c), 1e-12);
    }
}

TEST(GcnModel, FiniteLogitsOfRightShape) {
    std::mt19937_64 rng(9);
    GcnConfig c;
    c.hidden_dim = 16;
    GcnModel model(c, 3);
    auto logits = model.forward_eval(input_of(random_graph(rng, 30, 16, 0.1), 16));
    EXPECT_EQ(logits.shape(), (Shape{1, 3}));
    for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(GcnModel, ZeroParametersGiveUniformSoftmax) {
    std::mt19937_64 rng(10);
    GcnModel model(small_config(), 3);
    for (auto& p : model.parameters().items()) std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), 0.0);
    auto logits = model.forward_eval(input_of(random_graph(rng, 6, 16, 0.5), 16));
    for (double v : logits.data()) EXPECT_EQ(v, 0.0);
    auto probs = softmax(logits);
    for (double v : probs.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(GcnModel, ParameterNamesAndCountFollowConfig) {
    GcnConfig c;
    GcnModel a(c, 1), b(c, 2);
    ASSERT_EQ(a.parameters().items().size(), b.parameters().items().size());
    for (std::size_t i = 0; i < a.parameters().items().size(); ++i)
        EXPECT_EQ(a.parameters().items()[i].name, b.parameters().items()[i].name);
    EXPECT_EQ(a.parameters().scalar_count(), b.parameters().scalar_count());
    // 16*64 + 13*64*64 conv, 14*64*64 + 64 fusion, 64 score, (128*64+64) + (64*64+64) + (64*3+3) head
    EXPECT_EQ(a.parameters().scalar_count(), 16u * 64 + 13 * 64 * 64 + 14 * 64 * 64 + 64 + 64 + 128 * 64 + 64 +
                                                 64 * 64 + 64 + 64 * 3 + 3);
    EXPECT_NE(a.parameters().find("gcn.conv13.weight"), nullptr);
    EXPECT_NE(a.parameters().find("gcn.mlp2.bias"), nullptr);
}

TEST(GcnModel, PermutationInvariance) {
    std::mt19937_64 rng(11);
    GcnConfig c;
    c.hidden_dim = 16;
    GcnModel model(c, 17);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng() % 25;
        auto g = random_graph(rng, n, 16, 0.2);
        auto perm = random_perm(rng, n);
        auto a = model.forward_eval(input_of(g, 16));
        auto b = model.forward_eval(permuted(g, 16, perm));
        for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(a.at(m), b.at(m), 1e-9);
    }
}

TEST(GcnModel, EvalIsDeterministic) {
    std::mt19937_64 rng(12);
    GcnModel model(small_config(), 4);
    auto in = input_of(random_graph(rng, 10, 16, 0.3), 16);
    auto a = model.forward_eval(in);
    std::mt19937_64 other(99);
    auto b = model.forward(in, false, other);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(GcnModel, TrainingDropoutIsSeeded) {
    std::mt19937_64 rng(13);
    auto c = small_config();
    c.hidden_dim = 32;
    GcnModel model(c, 4);
    auto in = input_of(random_graph(rng, 10, 16, 0.3), 16);
    std::mt19937_64 r1(5), r2(5), r3(6);
    auto a = model.forward(in, true, r1), b = model.forward(in, true, r2), d = model.forward(in, true, r3);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), d.data().begin()));
}

TEST(GcnModel, FullModelGradientCheck) {
    std::mt19937_64 rng(14);
    for (Backbone b : {Backbone::res, Backbone::dense}) {
        GcnConfig c;
        c.hidden_dim = 5;
        c.backbone = b;
        c.depth = b == Backbone::res ? 14 : 4;
        c.topk_k = 3;
        GcnModel model(c, 21);
        auto g = random_graph(rng, 6, 16, 0.4);
        auto in = input_of(g, 16);
        auto target = Tensor::matrix(1, 3, {0.0, 1.0, 0.0});
        std::vector<Tensor> inputs{in.x};
        for (auto& p : model.parameters().items()) inputs.push_back(p.value);
        auto f = [&](const std::vector<Tensor>& xs) {
            GraphInput gi{xs[0], in.a_hat, 0};
            std::mt19937_64 drop(3);
            return soft_target_cross_entropy(model.forward(gi, true, drop), target);
        };
        EXPECT_LT(actnet::testing::gradcheck_error(f, inputs), 1e-4) << to_string(b);
    }
}

TEST(GcnConfig, Validation) {
    GcnConfig c;
    c.depth = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.topk_k = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.dilation = 0;
    EXPECT_THROW(GcnModel(c, 1), std::invalid_argument);
    EXPECT_EQ(backbone_from_string("dense"), Backbone::dense);
    EXPECT_THROW(backbone_from_string("conv"), std::invalid_argument);
}
