#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "actnet/checkpoint.h"
#include "actnet/config.h"

using namespace actnet;
using nlohmann::json;

namespace {

std::string error_location(const std::string& text) {
    try {
        parse_run_config(text);
    } catch (const ConfigError& e) {
        return e.location();
    }
    return "<no error>";
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
    RunConfig c;
    const std::string text = dump_run_config(c);
    const RunConfig back = parse_run_config(text);
    EXPECT_EQ(dump_run_config(back), text);
    EXPECT_DOUBLE_EQ(back.cotrain.d_kl, c.cotrain.d_kl);
    EXPECT_EQ(back.gcn, c.gcn);
    EXPECT_EQ(back.cnn, c.cnn);
    EXPECT_EQ(back.generator, c.generator);
}

TEST(Config, DefaultDocumentHasEverySection) {
    const json j = to_json(RunConfig{});
    for (const char* k : {"seed", "paths", "generator", "features", "sampler", "edge", "gcn", "cnn", "cotrain", "segadapt"}) {
        EXPECT_TRUE(j.contains(k)) << k;
    }
}

TEST(Config, InfiniteThresholdRoundTrips) {
    RunConfig c;
    c.cotrain.d_kl = std::numeric_limits<double>::infinity();
    EXPECT_EQ(to_json(c)["cotrain"]["d_kl"], "inf");
    EXPECT_TRUE(std::isinf(parse_run_config(dump_run_config(c)).cotrain.d_kl));
    EXPECT_EQ(error_location(R"({"cotrain": {"d_kl": "huge"}})"), "/cotrain/d_kl");
}

TEST(Config, EmptyObjectKeepsDefaults) {
    EXPECT_EQ(dump_run_config(parse_run_config("{}")), dump_run_config(RunConfig{}));
}

TEST(Config, OverridesAndDerivedFields) {
    const RunConfig c = parse_run_config(R"({
        "seed": 5,
        "generator": {"classes": 4, "image_size": 32},
        "gcn": {"depth": 6, "hidden_dim": 24, "backbone": "dense", "dilation": 2},
        "cnn": {"blocks": [[8, 2], [16, 2]]},
        "cotrain": {"d_kl": 0.25, "ls_alpha": 0.2}
    })");
    EXPECT_EQ(c.seed, 5u);
    EXPECT_EQ(c.gcn.depth, 6u);
    EXPECT_EQ(c.gcn.hidden_dim, 24u);
    EXPECT_EQ(c.gcn.backbone, gcn::Backbone::dense);
    EXPECT_EQ(c.edge.dilation, 2u);
    EXPECT_EQ(c.gcn.num_classes, 4u);
    EXPECT_EQ(c.cnn.num_classes, 4u);
    EXPECT_EQ(c.cnn.height, 32u);
    EXPECT_EQ(c.cnn.blocks.size(), 2u);
    EXPECT_EQ(c.cnn.blocks[1].out_channels, 16u);
    EXPECT_DOUBLE_EQ(c.cotrain.d_kl, 0.25);
    EXPECT_EQ(c.cotrain.seed, 5u);
    EXPECT_EQ(c.segadapt.seed, 5u);
    EXPECT_EQ(dump_run_config(parse_run_config(dump_run_config(c))), dump_run_config(c));
}

TEST(Config, UnknownKeysReportTheirLocation) {
    EXPECT_EQ(error_location(R"({"gcn": {"foo": 1}})"), "/gcn/foo");
    EXPECT_EQ(error_location(R"({"bogus": 1})"), "/bogus");
    EXPECT_EQ(error_location(R"({"cotrain": {"plateau": {"patiense": 2}}})"), "/cotrain/plateau/patiense");
}

TEST(Config, TypeErrorsReportTheirLocation) {
    EXPECT_EQ(error_location(R"({"gcn": {"depth": "deep"}})"), "/gcn/depth");
    EXPECT_EQ(error_location(R"({"gcn": {"depth": -3}})"), "/gcn/depth");
    EXPECT_EQ(error_location(R"({"cotrain": {"lr": true}})"), "/cotrain/lr");
    EXPECT_EQ(error_location(R"({"gcn": {"backbone": "wide"}})"), "/gcn/backbone");
    EXPECT_EQ(error_location(R"({"cnn": {"blocks": [[8]]}})").rfind("/cnn/blocks", 0), 0u);
    EXPECT_EQ(error_location(R"({"gcn": 3})"), "/gcn");
}

TEST(Config, SemanticErrorsAreRejected) {
    EXPECT_THROW(parse_run_config(R"({"gcn": {"depth": 0}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"cotrain": {"ls_alpha": 1.5}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"generator": {"classes": 1}})"), ConfigError);
    EXPECT_THROW(parse_run_config("{not json"), ConfigError);
}

TEST(Config, LoadReportsPath) {
    EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), ConfigError);
    const auto path = std::filesystem::temp_directory_path() / "actnet_cfg_bad.json";
    std::ofstream(path) << R"({"edge": {"k": "x"}})";
    try {
        load_run_config(path.string());
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
        EXPECT_NE(e.location().find("/edge/k"), std::string::npos);
    }
}

// -----------------------------------------------------------------------------

namespace {

ParameterSet sample_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    ParameterSet ps;
    for (auto [name, shape] : std::vector<std::pair<std::string, Shape>>{{"a.w", {3, 4}}, {"a.b", {4}}, {"c", {2, 1, 3}}}) {
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = n(rng);
        ps.add(name, Tensor::from(shape, std::move(v)));
    }
    return ps;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    ParameterSet ps = sample_params(1);
    ps.items()[0].value.mutable_data()[0] = -0.0;
    ps.items()[0].value.mutable_data()[1] = std::numeric_limits<double>::denorm_min();
    const json cfg = {{"depth", 3}};
    const Checkpoint ck = decode_checkpoint(encode_checkpoint("gcn", cfg, ps));
    EXPECT_EQ(ck.kind, "gcn");
    EXPECT_EQ(ck.config, cfg);
    ASSERT_EQ(ck.tensors.size(), ps.items().size());
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
        EXPECT_EQ(ck.tensors[i].name, ps.items()[i].name);
        EXPECT_EQ(ck.tensors[i].value.shape(), ps.items()[i].value.shape());
        const auto a = ck.tensors[i].value.data();
        const auto b = ps.items()[i].value.data();
        ASSERT_EQ(a.size(), b.size());
        EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
    }
    ParameterSet target = sample_params(2);
    restore_parameters(ck, target);
    EXPECT_EQ(encode_checkpoint("gcn", cfg, target), encode_checkpoint("gcn", cfg, ps));
}

TEST(Checkpoint, FileRoundTrip) {
    const auto path = (std::filesystem::temp_directory_path() / "actnet_ck_test.ckpt").string();
    const ParameterSet ps = sample_params(3);
    save_checkpoint(path, "cnn", json::object(), ps);
    const Checkpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.kind, "cnn");
    EXPECT_EQ(ck.tensors[2].value.data()[5], ps.items()[2].value.data()[5]);
    EXPECT_THROW(load_checkpoint(path + ".missing"), CheckpointError);
}

TEST(Checkpoint, CorruptionIsDetected) {
    const std::string good = encode_checkpoint("gcn", json::object(), sample_params(4));
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
    std::string bad_version = good;
    bad_version[8] = 9;
    EXPECT_THROW(decode_checkpoint(bad_version), CheckpointError);
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
        EXPECT_THROW(decode_checkpoint(good.substr(0, cut)), CheckpointError) << cut;
    }
    // Flipping any single payload byte breaks the checksum.
    for (std::size_t pos = good.size() - 40; pos < good.size(); pos += 7) {
        std::string flipped = good;
        flipped[pos] ^= 0x10;
        EXPECT_THROW(decode_checkpoint(flipped), CheckpointError) << pos;
    }
}

TEST(Checkpoint, RestoreRejectsMismatchWithoutWriting) {
    const Checkpoint ck = decode_checkpoint(encode_checkpoint("gcn", json::object(), sample_params(5)));
    ParameterSet renamed = sample_params(6);
    renamed.items()[2].name = "other";
    const std::string before = encode_checkpoint("gcn", json::object(), renamed);
    EXPECT_THROW(restore_parameters(ck, renamed), CheckpointError);
    EXPECT_EQ(encode_checkpoint("gcn", json::object(), renamed), before);

    ParameterSet fewer;
    fewer.add("a.w", Tensor::zeros({3, 4}));
    EXPECT_THROW(restore_parameters(ck, fewer), CheckpointError);

    ParameterSet reshaped;
    reshaped.add("a.w", Tensor::zeros({4, 3}));
    reshaped.add("a.b", Tensor::zeros({4}));
    reshaped.add("c", Tensor::zeros({2, 1, 3}));
    EXPECT_THROW(restore_parameters(ck, reshaped), CheckpointError);
    EXPECT_EQ(reshaped.items()[1].value.data()[0], 0.0);
}
