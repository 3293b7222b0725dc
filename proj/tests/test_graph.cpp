#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "actnet/graph.h"
#include "json.hpp"
#include "oracles.h"

using namespace actnet;
using namespace actnet::graph;
using namespace actnet::oracle;

namespace {

std::vector<features::FeatureVector> random_cells(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 64.0);
    std::vector<features::FeatureVector> cells(n);
    for (auto& c : cells) {
        for (auto& v : c.g) v = u(rng);
        c.centroid_row = u(rng);
        c.centroid_col = u(rng);
    }
    return cells;
}

// Grid of 3x3 squares with distinct intensities.
std::pair<Image, LabeledMask> blob_fixture(std::size_t count) {
    const std::size_t per_row = 4, size = 6 * per_row;
    Image img(size, size, 3, 0.2);
    LabeledMask mask(size, size);
    for (std::size_t b = 0; b < count; ++b) {
        const std::size_t r0 = 1 + 6 * (b / per_row), c0 = 1 + 6 * (b % per_row);
        const std::size_t extent = 2 + b % 3;
        for (std::size_t r = r0; r < r0 + extent; ++r)
            for (std::size_t c = c0; c < c0 + 3; ++c) {
                mask.at(r, c) = static_cast<std::int32_t>(b + 1);
                for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = 0.3 + 0.05 * static_cast<double>(b % 7) + 0.01 * static_cast<double>((r + c) % 3);
            }
    }
    return {img, mask};
}

}  // namespace

TEST(Fps, AllPointsWhenMEqualsN) {
    Points p{{0.0}, {1.0}, {2.0}, {10.0}};
    auto s = fps_sample(p, 4, 0);
    std::sort(s.begin(), s.end());
    EXPECT_EQ(s, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Fps, SingleReturnsStart) {
    Points p{{0.0}, {1.0}, {2.0}};
    EXPECT_EQ(fps_sample(p, 1, 2), std::vector<std::size_t>{2});
}

TEST(Fps, PicksFarthest) {
    Points p{{0.0}, {1.0}, {2.0}, {10.0}};
    EXPECT_EQ(fps_sample(p, 2, 0), (std::vector<std::size_t>{0, 3}));
}

TEST(Fps, RejectsOversizedRequest) {
    Points p{{0.0}, {1.0}};
    EXPECT_THROW(fps_sample(p, 3, 0), std::invalid_argument);
}

TEST(Fps, DuplicatePointsAreStillDistinctPicks) {
    Points p{{1.0}, {1.0}, {1.0}};
    EXPECT_EQ(fps_sample(p, 3, 1), (std::vector<std::size_t>{1, 0, 2}));
}

TEST(Fps, MatchesGreedyOracle) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 50;
        auto p = random_points(rng, n, 2, 6);
        const std::size_t m = 1 + rng() % n, start = rng() % n;
        EXPECT_EQ(fps_sample(p, m, start), greedy_fps_oracle(p, m, start));
    }
}

TEST(FusedSample, FullFpsFractionEqualsFps) {
    std::mt19937_64 rng(2);
    auto p = random_points(rng, 40, 2, 100);
    SamplerConfig cfg{10, 1.0, 7};
    EXPECT_EQ(fused_sample(p, cfg), fps_sample(p, 10, 0));
}

TEST(FusedSample, UndersizedKeepsAll) {
    Points p{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}};
    EXPECT_EQ(fused_sample(p, {10, 0.5, 1}), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(FusedSample, SeededAndWithoutReplacement) {
    std::mt19937_64 rng(3);
    auto p = random_points(rng, 60, 2, 1000);
    SamplerConfig cfg{20, 0.5, 99};
    auto a = fused_sample(p, cfg);
    EXPECT_EQ(a, fused_sample(p, cfg));
    ASSERT_EQ(a.size(), 20u);
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 20u);
    const auto fps = fps_sample(p, 10, 0);
    EXPECT_TRUE(std::equal(fps.begin(), fps.end(), a.begin()));
    cfg.seed = 100;
    EXPECT_NE(a, fused_sample(p, cfg));
}

TEST(FusedSample, FloorOfFpsShare) {
    std::mt19937_64 rng(4);
    auto p = random_points(rng, 30, 2, 1000);
    SamplerConfig cfg{7, 0.5, 5};  // floor(3.5) = 3 from FPS
    auto a = fused_sample(p, cfg);
    auto fps = fps_sample(p, 3, 0);
    EXPECT_TRUE(std::equal(fps.begin(), fps.end(), a.begin()));
    EXPECT_EQ(a.size(), 7u);
}

TEST(OverallFeature, Concatenation) {
    std::array<double, 16> g;
    for (std::size_t i = 0; i < 16; ++i) g[i] = static_cast<double>(i);
    auto t = overall_feature(g, {5.0, 6.0}, 1.0, 1.0);
    ASSERT_EQ(t.size(), 18u);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t[i], g[i]);
    EXPECT_EQ(t[16], 5.0);
    EXPECT_EQ(t[17], 6.0);
}

TEST(OverallFeature, PositionOnly) {
    std::array<double, 16> g;
    g.fill(3.0);
    auto t = overall_feature(g, {1.0, 2.0}, 0.0, 1.0);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t[i], 0.0);
}

TEST(OverallFeature, ScaledParts) {
    std::array<double, 16> g;
    g.fill(1.0);
    auto t = overall_feature(g, {3.0, 4.0}, 2.0, 1.0);
    std::vector<double> expected(16, 2.0);
    expected.push_back(3.0);
    expected.push_back(4.0);
    EXPECT_EQ(t, expected);
}

TEST(Standardize, ZeroMeanUnitVarianceAndConstantColumns) {
    std::mt19937_64 rng(6);
    auto cells = random_cells(rng, 25);
    std::vector<std::array<double, 16>> rows;
    for (auto& c : cells) {
        c.g[4] = 2.5;
        rows.push_back(c.g);
    }
    standardize_columns(rows);
    for (std::size_t f = 0; f < 16; ++f) {
        double mean = 0, var = 0;
        for (auto& r : rows) mean += r[f];
        mean /= 25;
        for (auto& r : rows) var += (r[f] - mean) * (r[f] - mean);
        var /= 25;
        EXPECT_NEAR(mean, 0.0, 1e-12);
        if (f == 4) {
            for (auto& r : rows) EXPECT_EQ(r[f], 0.0);
        } else {
            EXPECT_NEAR(var, 1.0, 1e-12);
        }
    }
}

TEST(Adjacency, InfiniteThresholdIsPureKnn) {
    std::mt19937_64 rng(7);
    auto t = random_points(rng, 12, 3, 50);
    auto e = build_adjacency(t, 3, std::numeric_limits<double>::infinity(), false);
    EXPECT_EQ(e.size(), 36u);
    auto oracle = adjacency_oracle(t, 3, std::numeric_limits<double>::infinity(), false);
    EXPECT_EQ(std::set<Edge>(e.begin(), e.end()), oracle);
}

TEST(Adjacency, ZeroThresholdIsEmpty) {
    std::mt19937_64 rng(8);
    Points t;
    for (int i = 0; i < 10; ++i) t.push_back({static_cast<double>(i), 0.5 * i});
    EXPECT_TRUE(build_adjacency(t, 4, 0.0, true).empty());
}

TEST(Adjacency, ThresholdCutsFarNeighbour) {
    // Positions only (alpha = 0, beta = 1).
    std::array<double, 16> g;
    g.fill(0.7);
    Points t{overall_feature(g, {0, 0}, 0.0, 1.0), overall_feature(g, {1, 0}, 0.0, 1.0),
             overall_feature(g, {10, 0}, 0.0, 1.0)};
    EXPECT_EQ(build_adjacency(t, 1, 5.0, true), (std::vector<Edge>{{0, 1}, {1, 0}}));
    EXPECT_EQ(build_adjacency(t, 1, 5.0, false), (std::vector<Edge>{{0, 1}, {1, 0}}));
}

TEST(Adjacency, MatchesBruteForceOracle) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 20;
        auto t = random_points(rng, n, 1 + rng() % 4, 5);
        const std::size_t k = 1 + rng() % 6;
        const double d = 0.5 + static_cast<double>(rng() % 60) / 10.0;
        const bool sym = rng() % 2;
        auto e = build_adjacency(t, k, d, sym);
        EXPECT_TRUE(std::is_sorted(e.begin(), e.end()));
        EXPECT_EQ(std::set<Edge>(e.begin(), e.end()), adjacency_oracle(t, k, d, sym));
        EXPECT_EQ(std::set<Edge>(e.begin(), e.end()).size(), e.size());
        for (const auto& edge : e) {
            EXPECT_NE(edge.src, edge.dst);
            EXPECT_LT(edge.src, n);
            EXPECT_LT(edge.dst, n);
        }
    }
}

TEST(Adjacency, SymmetrizedIsSymmetric) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        auto t = random_points(rng, 15, 2, 20);
        auto e = build_adjacency(t, 2, 8.0, true);
        std::set<Edge> s(e.begin(), e.end());
        for (const auto& edge : e) EXPECT_TRUE(s.count({edge.dst, edge.src}));
    }
}

TEST(Adjacency, DilationSkipsNeighbours) {
    Points t{{0}, {1}, {2}, {3}, {4}};
    // For node 0 the sorted neighbours are 1,2,3,4; dilation 2 keeps 1 and 3.
    auto e = build_adjacency(t, 2, 100.0, false, 2);
    EXPECT_TRUE(std::count(e.begin(), e.end(), Edge{0, 1}));
    EXPECT_TRUE(std::count(e.begin(), e.end(), Edge{0, 3}));
    EXPECT_FALSE(std::count(e.begin(), e.end(), Edge{0, 2}));
}

TEST(Adjacency, UniformWeightScalingPreservesEdges) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 18;
        std::vector<std::array<double, 16>> g(n);
        std::vector<std::array<double, 2>> c(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (auto& v : g[i]) v = u(rng);
            c[i] = {10 * u(rng), 10 * u(rng)};
        }
        const double alpha = 1.0, beta = 0.5, d = 4.0;
        const std::size_t k = 1 + rng() % 5;
        for (double s : {2.0, 0.5, 4.0}) {
            Points t1, t2;
            for (std::size_t i = 0; i < n; ++i) {
                t1.push_back(overall_feature(g[i], c[i], alpha, beta));
                t2.push_back(overall_feature(g[i], c[i], s * alpha, s * beta));
            }
            EXPECT_EQ(build_adjacency(t1, k, d, true), build_adjacency(t2, k, s * d, true));
        }
    }
}

TEST(Adjacency, NodePermutationEquivariance) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng() % 25;
        Points t(n, std::vector<double>(18));
        for (auto& row : t)
            for (auto& v : row) v = u(rng);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Points tp(n);
        for (std::size_t i = 0; i < n; ++i) tp[i] = t[perm[i]];  // new node i is old perm[i]
        auto base = build_adjacency(t, 4, 1.2, true);
        std::vector<Edge> mapped;
        for (const auto& e : build_adjacency(tp, 4, 1.2, true)) mapped.push_back({perm[e.src], perm[e.dst]});
        std::sort(mapped.begin(), mapped.end());
        EXPECT_EQ(mapped, base);
    }
}

TEST(BuildGraph, ComposesFeatureExtraction) {
    auto [img, mask] = blob_fixture(12);
    SamplerConfig s{12, 0.5, 3};
    EdgeConfig e;
    auto g = build_graph(img, mask, s, e, 2, "fixture");
    ASSERT_EQ(g.n, 12u);
    EXPECT_EQ(g.label, 2);
    auto feats = features::extract_node_features(img, mask);
    std::vector<std::array<double, 16>> rows;
    for (auto& f : feats) rows.push_back(f.g);
    standardize_columns(rows);
    Points t;
    for (std::size_t i = 0; i < 12; ++i) {
        EXPECT_EQ(g.features[i], rows[i]);
        EXPECT_EQ(g.coords[i][0], feats[i].centroid_row);
        EXPECT_EQ(g.coords[i][1], feats[i].centroid_col);
        t.push_back(overall_feature(rows[i], g.coords[i], e.alpha, e.beta));
    }
    EXPECT_EQ(g.edges, build_adjacency(t, e.k, e.d, e.symmetrize));
}

TEST(BuildGraph, SamplesDownToTarget) {
    auto [img, mask] = blob_fixture(16);
    auto g = build_graph(img, mask, {6, 0.5, 3}, {}, 0);
    EXPECT_EQ(g.n, 6u);
    EXPECT_TRUE(std::is_sorted(g.coords.begin(), g.coords.end()));
}

TEST(BuildGraph, EmptyMaskFails) {
    EXPECT_THROW(build_graph(Image(8, 8, 3), LabeledMask(8, 8), {}, {}, 0), EmptyGraphError);
}

TEST(BuildGraph, DeterministicBytes) {
    auto [img, mask] = blob_fixture(16);
    SamplerConfig s{9, 0.5, 42};
    EXPECT_EQ(serialize_graph(build_graph(img, mask, s, {}, 1, "x")), serialize_graph(build_graph(img, mask, s, {}, 1, "x")));
}

TEST(BuildGraph, RejectsInvalidConfig) {
    auto [img, mask] = blob_fixture(4);
    EdgeConfig bad;
    bad.alpha = 0.0;
    bad.beta = 0.0;
    EXPECT_THROW(build_graph(img, mask, {}, bad, 0), std::invalid_argument);
    EXPECT_THROW(build_graph(img, mask, {0, 0.5, 0}, {}, 0), std::invalid_argument);
}

TEST(Serialization, RoundTripIsExact) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        auto cells = random_cells(rng, 5 + rng() % 30);
        for (auto& c : cells) c.centroid_row += 1.0 / 3.0;
        EdgeConfig e;
        e.d = 1e9;
        auto g = graph_from_features(cells, {20, 0.5, rng()}, e, 1, "img_" + std::to_string(trial));
        EXPECT_EQ(deserialize_graph(serialize_graph(g)), g);
    }
}

TEST(Serialization, ZeroEdges) {
    std::mt19937_64 rng(14);
    EdgeConfig e;
    e.d = 1e-9;
    auto g = graph_from_features(random_cells(rng, 4), {}, e, 0, "none");
    ASSERT_TRUE(g.edges.empty());
    EXPECT_EQ(deserialize_graph(serialize_graph(g)), g);
}

TEST(Serialization, TruncatedInputFails) {
    std::mt19937_64 rng(15);
    auto text = serialize_graph(graph_from_features(random_cells(rng, 6), {}, {}, 0, "t"));
    try {
        deserialize_graph(text.substr(0, text.size() / 2));
        FAIL() << "expected a parse error";
    } catch (const GraphParseError& err) {
        EXPECT_NE(err.location().find("byte"), std::string::npos);
    }
}

TEST(Serialization, SchemaErrorsCarryLocation) {
    std::mt19937_64 rng(16);
    EdgeConfig e;
    e.d = 1e9;
    const auto doc = nlohmann::json::parse(serialize_graph(graph_from_features(random_cells(rng, 3), {}, e, 0, "t")));
    auto expect_location = [](const nlohmann::json& bad, const std::string& where) {
        try {
            deserialize_graph(bad.dump());
            ADD_FAILURE() << "expected a parse error at " << where;
        } catch (const GraphParseError& err) {
            EXPECT_EQ(err.location(), where);
        }
    };
    auto edit = [&](auto fn) {
        auto copy = doc;
        fn(copy);
        return copy;
    };
    expect_location(edit([](auto& j) { j["n"] = 4; }), "/coords");
    expect_location(edit([](auto& j) { j["label"] = "a"; }), "/label");
    expect_location(edit([](auto& j) { j["edges"][0] = {0, 7}; }), "/edges/0");
    expect_location(edit([](auto& j) { j["edges"][0] = {1, 1}; }), "/edges/0");
    expect_location(edit([](auto& j) { j["features"][0][0] = "x"; }), "/features/0/0");
    expect_location(edit([](auto& j) { j["features"][2].erase(3); }), "/features/2");
    expect_location(edit([](auto& j) { j["meta"].erase("edge"); }), "/meta/edge");
    expect_location(edit([](auto& j) { j["meta"]["sampler"]["seed"] = -1; }), "/meta/sampler/seed");
}
