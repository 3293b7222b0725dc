#pragma once

// Domain-adaptive segmentation: the dice, entropy, adversarial,
// reconstruction and discriminator losses, and a small adversarial
// adaptation harness on synthetic source/target domains.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "actnet/tensor.h"

namespace actnet::segadapt {

inline constexpr double kDiceEps = 1e-7;
inline constexpr double kLogEps = 1e-12;

struct DaLossWeights {
    double lambda_adv = 0.001;
    double lambda_recons = 0.01;
    void validate() const;
    friend bool operator==(const DaLossWeights&, const DaLossWeights&) = default;
};

// 1 - 2 <y, y_hat> / (sum y + sum y_hat + eps) over the flattened tensors.
Tensor dice_loss(const Tensor& y, const Tensor& y_hat);
// -mean(y_hat ln y_hat)
Tensor entropy_min_loss(const Tensor& y_hat);
// -mean(ln D)
Tensor adversarial_loss(const Tensor& d_out);
// Mean squared error.
Tensor reconstruction_loss(const Tensor& x, const Tensor& r_out);
// -mean(z ln D + (1 - z) ln(1 - D)), z in {0, 1}.
Tensor discriminator_loss(const Tensor& d_out, int z);

struct DaComponents {
    double dice = 0.0;
    double entropy = 0.0;
    double adversarial = 0.0;
    double reconstruction = 0.0;
    double discriminator = 0.0;
};

// dice + entropy + lambda_adv adversarial + lambda_recons reconstruction + discriminator
double total_da_loss(const DaComponents& c, const DaLossWeights& w);

// All tensors are [C, H, W]; masks and predictions have one channel.
struct SegBatch {
    Tensor x_s, y_s, x_t;
    Tensor y_hat_s, y_hat_t;
    Tensor d_t;  // discriminator output on y_hat_t
    Tensor r_t;  // reconstruction of x_t from y_hat_t
    Tensor d_s;  // discriminator output on y_hat_s
};

struct DaTape {
    Tensor segmenter;      // terms owned by S and R
    Tensor discriminator;  // source term + target term
    Tensor total;
    DaComponents parts;
};

// Builds every term of the total loss on the tape. Terms with a zero weight
// are left off the tape.
DaTape total_da_loss(const SegBatch& b, const DaLossWeights& w, bool entropy_on_target = false);

// -----------------------------------------------------------------------------
// Toy networks and training

struct SegAdaptConfig {
    DaLossWeights weights;
    bool entropy_on_target = false;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    double lr = 1e-2;
    std::size_t width = 8;  // channels of the first layer
    std::uint64_t seed = 0;
    void validate() const;
    friend bool operator==(const SegAdaptConfig&, const SegAdaptConfig&) = default;
};

struct ConvLayer {
    std::size_t in = 0, out = 0, stride = 1;
    bool upsample = false;  // nearest 2x before the convolution
    bool sigmoid = false;   // otherwise relu
    double bias_init = 0.0;
};

// A chain of 3x3 convolutions with padding 1.
class ConvStack {
public:
    ConvStack(const std::string& prefix, std::vector<ConvLayer> layers, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

private:
    std::vector<ConvLayer> layers_;
    ParameterSet params_;
    std::vector<Tensor> w_, b_;
};

// Two-level encoder-decoder with one skip connection at full resolution,
// producing a one-channel probability map.
class Segmenter {
public:
    Segmenter(std::size_t channels, std::size_t width, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

private:
    ParameterSet params_;
    std::vector<Tensor> w_, b_;
};

// Maps a prediction back to a `channels`-channel image.
ConvStack make_reconstructor(std::size_t channels, std::size_t width, std::mt19937_64& rng);
// Five convolutions ending in a sigmoid map at a quarter of the resolution.
ConvStack make_discriminator(std::size_t width, std::mt19937_64& rng);

struct SegSample {
    Tensor image;  // [C, H, W] in [0, 1]
    Tensor mask;   // [1, H, W] in {0, 1}
};

struct DomainStyle {
    double foreground = 0.8;
    double background = 0.2;
    double noise = 0.05;
    double stripes = 0.0;  // amplitude of a diagonal texture
};

DomainStyle source_style();
DomainStyle target_style();

// Grayscale images of random ellipses with exact masks.
std::vector<SegSample> make_domain(std::size_t count, std::size_t size, const DomainStyle& style, std::uint64_t seed);

struct AdaptEpoch {
    std::size_t epoch = 0;
    DaComponents parts;  // epoch means
    double total = 0.0;
};

struct AdaptResult {
    Segmenter segmenter;
    ConvStack reconstructor;
    ConvStack discriminator;
    std::vector<AdaptEpoch> history;
    std::size_t isolation_checks = 0;
};

// Alternates an S+R step on the segmenter terms with a D step on the
// discriminator terms. Target masks are never read. Each step checks that the
// other side's gradients stayed zero and throws std::logic_error otherwise.
AdaptResult adapt_toy(const std::vector<SegSample>& source, const std::vector<SegSample>& target,
                      const SegAdaptConfig& cfg, const std::function<void(const AdaptEpoch&)>& on_epoch = {});

// Mean hard dice (threshold 0.5) of the segmenter on labelled samples.
double mean_dice(const Segmenter& segmenter, const std::vector<SegSample>& samples);

std::string adapt_history_csv(const std::vector<AdaptEpoch>& history);

}  // namespace actnet::segadapt
