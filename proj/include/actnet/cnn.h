#pragma once

// Small convolutional patch classifier and Grad-CAM heatmaps.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "actnet/image.h"
#include "actnet/tensor.h"

namespace actnet::cnn {

struct ConvBlock {
    std::size_t out_channels = 0;
    std::size_t stride = 1;
    friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

struct CnnConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 3;
    std::vector<ConvBlock> blocks{{16, 2}, {32, 2}, {64, 2}};
    std::size_t classifier_width = 0;  // 0: linear head straight after pooling
    std::size_t num_classes = 3;
    double dropout = 0.2;

    void validate() const;
    // Spatial size after the last block.
    std::pair<std::size_t, std::size_t> feature_size() const;
    friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

// [C, H, W] tensor from an interleaved image.
Tensor image_tensor(const Image& image);
// Per-image, per-channel zero mean and unit variance; constant channels become 0.
Tensor standardize_channels(const Tensor& image);

struct CnnOutput {
    Tensor logits;      // [1, num_classes]
    Tensor activation;  // last conv block output after ReLU, [C, h, w]
    Tensor embedding;   // input of the final linear layer, [1, width]
};

class CnnModel {
public:
    CnnModel(CnnConfig config, std::uint64_t seed);

    // 3x3 convolutions with padding 1, each followed by ReLU; global average
    // pooling; dropout; optional hidden layer; linear classifier.
    CnnOutput forward(const Tensor& image, bool training, std::mt19937_64& rng) const;
    Tensor forward_eval(const Tensor& image) const;

    const CnnConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

private:
    CnnConfig config_;
    ParameterSet params_;
    std::vector<Tensor> conv_w_, conv_b_;
    std::vector<Tensor> head_w_, head_b_;
};

struct CamMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;  // row-major, in [0, 1]
    double peak = 0.0;           // maximum of the map before normalisation
    std::size_t class_id = 0;
    std::vector<double> logits;
};

// Bilinear resize with half-pixel centres (edge samples clamped).
std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t out_h,
                                    std::size_t out_w);

// Channel weights are the spatial means of d logit_c / d A over the last
// activation A; the map is relu(sum_k weight_k A_k), resized to the input and
// divided by its maximum (left at zero when the map is all zero). The
// backward pass also accumulates into the model's parameter gradients.
CamMap grad_cam(const CnnModel& model, const Tensor& image, std::size_t class_id);

}  // namespace actnet::cnn
