#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "actnet/cnn.h"
#include "test_support.h"

using namespace actnet;
using namespace actnet::cnn;

namespace {

CnnConfig tiny_config(std::size_t h, std::size_t w, std::vector<ConvBlock> blocks, std::size_t hidden = 0) {
    CnnConfig c;
    c.height = h;
    c.width = w;
    c.blocks = std::move(blocks);
    c.classifier_width = hidden;
    c.num_classes = 3;
    c.dropout = 0.25;
    return c;
}

void fill(Tensor& t, double v) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), v); }

Tensor& param(CnnModel& m, const std::string& name) {
    auto* p = m.parameters().find(name);
    if (!p) throw std::runtime_error("missing parameter " + name);
    return p->value;
}

}  // namespace

TEST(Cnn, FiniteLogitsOfRightShape) {
    std::mt19937_64 rng(1);
    CnnModel model(CnnConfig{}, 7);
    auto logits = model.forward_eval(actnet::testing::random_tensor({3, 64, 64}, rng, 0.0, 1.0));
    EXPECT_EQ(logits.shape(), (Shape{1, 3}));
    for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Cnn, ZeroWeightsGiveUniformSoftmax) {
    std::mt19937_64 rng(2);
    CnnModel model(tiny_config(8, 8, {{4, 2}, {4, 2}}, 5), 3);
    for (auto& p : model.parameters().items()) fill(p.value, 0.0);
    auto probs = softmax(model.forward_eval(actnet::testing::random_tensor({3, 8, 8}, rng)));
    for (double v : probs.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Cnn, SeededInitIsReproducible) {
    std::mt19937_64 rng(3);
    auto img = actnet::testing::random_tensor({3, 16, 16}, rng);
    auto cfg = tiny_config(16, 16, {{4, 2}, {8, 2}});
    auto a = CnnModel(cfg, 11).forward_eval(img), b = CnnModel(cfg, 11).forward_eval(img);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    auto c = CnnModel(cfg, 12).forward_eval(img);
    EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST(Cnn, RejectsWrongInputSize) {
    CnnModel model(tiny_config(8, 8, {{2, 1}}), 1);
    EXPECT_THROW(model.forward_eval(Tensor::zeros({3, 8, 9})), std::invalid_argument);
    EXPECT_THROW(model.forward_eval(Tensor::zeros({1, 8, 8})), std::invalid_argument);
}

TEST(Cnn, ConfigValidation) {
    auto c = tiny_config(8, 8, {});
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config(8, 8, {{2, 0}});
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config(8, 8, {{2, 1}});
    c.num_classes = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(tiny_config(64, 64, {{8, 2}, {16, 2}, {32, 2}}).feature_size(), (std::pair<std::size_t, std::size_t>{8, 8}));
    EXPECT_EQ(tiny_config(7, 5, {{8, 2}, {16, 2}}).feature_size(), (std::pair<std::size_t, std::size_t>{2, 2}));
}

TEST(Cnn, DefaultSizeIsToyScale) {
    CnnModel model(CnnConfig{}, 1);
    // 3 conv blocks and a linear head
    EXPECT_EQ(model.parameters().scalar_count(),
              (16u * 3 * 9 + 16) + (32u * 16 * 9 + 32) + (64u * 32 * 9 + 64) + (64u * 3 + 3));
}

TEST(Cnn, ImageTensorIsChannelMajor) {
    Image img(2, 1, 3);
    img.pixels = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    auto t = image_tensor(img);
    EXPECT_EQ(t.shape(), (Shape{3, 1, 2}));
    EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{0.1, 0.4, 0.2, 0.5, 0.3, 0.6}));
}

TEST(Cnn, FullModelGradientCheck) {
    std::mt19937_64 rng(4);
    for (std::size_t hidden : {0u, 4u}) {
        CnnModel model(tiny_config(8, 8, {{3, 2}, {4, 1}, {4, 2}}, hidden), 5);
        auto img = actnet::testing::random_tensor({3, 8, 8}, rng, 0.0, 1.0);
        // Small positive biases keep pre-activations away from the ReLU kink.
        for (auto& p : model.parameters().items())
            if (p.name.find("bias") != std::string::npos) fill(p.value, 0.05);
        auto target = Tensor::matrix(1, 3, {0.2, 0.5, 0.3});
        std::vector<Tensor> inputs{img};
        for (auto& p : model.parameters().items()) inputs.push_back(p.value);
        auto f = [&](const std::vector<Tensor>& xs) {
            std::mt19937_64 drop(9);
            return soft_target_cross_entropy(model.forward(xs[0], true, drop).logits, target);
        };
        EXPECT_LT(actnet::testing::gradcheck_error(f, inputs), 1e-4) << "hidden " << hidden;
    }
}

TEST(Resize, IdentityAtSameSize) {
    std::vector<double> src{1, 2, 3, 4, 5, 6};
    EXPECT_EQ(resize_bilinear(src, 2, 3, 2, 3), src);
}

TEST(Resize, HalfPixelCentres) {
    // 1x2 -> 1x4: samples at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
    auto out = resize_bilinear({0.0, 1.0}, 1, 2, 1, 4);
    EXPECT_EQ(out, (std::vector<double>{0.0, 0.25, 0.75, 1.0}));
    auto tall = resize_bilinear({0.0, 4.0}, 2, 1, 4, 1);
    EXPECT_EQ(tall, (std::vector<double>{0.0, 1.0, 3.0, 4.0}));
}

TEST(GradCam, MeanReadoutNetworkMatchesClosedForm) {
    // One stride-1 block keeps the input resolution, so no resampling
    // happens; the head maps pooled channel 1 to class 2 and nothing else.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        CnnModel model(tiny_config(6, 7, {{3, 1}}), 100 + trial);
        fill(param(model, "cnn.head0.weight"), 0.0);
        fill(param(model, "cnn.head0.bias"), 0.0);
        param(model, "cnn.head0.weight").mutable_data()[1 * 3 + 2] = 1.0;
        auto img = actnet::testing::random_tensor({3, 6, 7}, rng);
        std::mt19937_64 unused(0);
        auto out = model.forward(img, false, unused);
        std::vector<double> expected(42);
        for (std::size_t i = 0; i < 42; ++i) expected[i] = std::max(0.0, out.activation.data()[42 + i]);
        const double peak = *std::max_element(expected.begin(), expected.end());
        auto cam = grad_cam(model, img, 2);
        ASSERT_EQ(cam.values.size(), 42u);
        for (std::size_t i = 0; i < 42; ++i) EXPECT_NEAR(cam.values[i], peak > 0 ? expected[i] / peak : 0.0, 1e-9);
        EXPECT_NEAR(cam.logits[2], out.logits.at(2), 1e-15);
    }
}

TEST(GradCam, NegativeWeightingGivesZeroMap) {
    std::mt19937_64 rng(6);
    CnnModel model(tiny_config(6, 6, {{2, 1}}), 3);
    fill(param(model, "cnn.conv0.weight"), 0.0);
    fill(param(model, "cnn.conv0.bias"), 1.0);  // activation is all ones
    fill(param(model, "cnn.head0.weight"), -1.0);
    auto cam = grad_cam(model, actnet::testing::random_tensor({3, 6, 6}, rng), 0);
    for (double v : cam.values) EXPECT_EQ(v, 0.0);
}

TEST(GradCam, RangeAndDimensionsAcrossConfigs) {
    std::mt19937_64 rng(7);
    const std::vector<CnnConfig> matrix{
        tiny_config(8, 8, {{4, 1}}),
        tiny_config(16, 16, {{4, 2}, {8, 2}}),
        tiny_config(17, 13, {{4, 2}, {4, 2}, {6, 2}}, 5),
        tiny_config(32, 32, {{8, 2}, {16, 2}, {32, 2}}),
        tiny_config(9, 31, {{3, 3}, {5, 1}}),
        tiny_config(5, 5, {{2, 2}, {2, 2}, {2, 2}, {2, 2}}),
    };
    for (const auto& cfg : matrix) {
        CnnModel model(cfg, 8);
        for (std::size_t cls = 0; cls < cfg.num_classes; ++cls) {
            auto cam = grad_cam(model, actnet::testing::random_tensor({3, cfg.height, cfg.width}, rng, 0.0, 1.0), cls);
            EXPECT_EQ(cam.height, cfg.height);
            EXPECT_EQ(cam.width, cfg.width);
            ASSERT_EQ(cam.values.size(), cfg.height * cfg.width);
            const double peak = *std::max_element(cam.values.begin(), cam.values.end());
            for (double v : cam.values) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
            EXPECT_TRUE(peak == 0.0 || peak == 1.0);
        }
    }
}

TEST(GradCam, RejectsUnknownClass) {
    CnnModel model(tiny_config(8, 8, {{2, 1}}), 1);
    EXPECT_THROW(grad_cam(model, Tensor::zeros({3, 8, 8}), 3), std::out_of_range);
}
