#include "actnet/cnn.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>

namespace actnet::cnn {

void CnnConfig::validate() const {
    if (height == 0 || width == 0 || channels == 0) throw std::invalid_argument("cnn input size must be positive");
    if (blocks.empty()) throw std::invalid_argument("cnn needs at least one conv block");
    for (const auto& b : blocks) {
        if (b.out_channels == 0 || b.stride == 0) throw std::invalid_argument("cnn blocks need positive channels and stride");
    }
    if (num_classes < 2) throw std::invalid_argument("cnn.num_classes must be at least 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("cnn.dropout must be in [0, 1)");
}

std::pair<std::size_t, std::size_t> CnnConfig::feature_size() const {
    std::size_t h = height, w = width;
    for (const auto& b : blocks) {
        h = (h - 1) / b.stride + 1;
        w = (w - 1) / b.stride + 1;
    }
    return {h, w};
}

Tensor image_tensor(const Image& image) {
    const std::size_t c = image.channels, hw = image.width * image.height;
    std::vector<double> v(c * hw);
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) v[ch * hw + i] = image.pixels[i * c + ch];
    return Tensor::from({c, image.height, image.width}, std::move(v));
}

Tensor standardize_channels(const Tensor& image) {
    if (image.rank() != 3) throw std::invalid_argument("standardize_channels: expected [C, H, W]");
    const std::size_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
    std::vector<double> v(image.data().begin(), image.data().end());
    for (std::size_t ch = 0; ch < c; ++ch) {
        double* p = v.data() + ch * hw;
        double mean = 0.0, ss = 0.0;
        for (std::size_t i = 0; i < hw; ++i) mean += p[i];
        mean /= static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
        const double sd = std::sqrt(ss / static_cast<double>(hw));
        for (std::size_t i = 0; i < hw; ++i) p[i] = sd > 0.0 ? (p[i] - mean) / sd : 0.0;
    }
    return Tensor::from(image.shape(), std::move(v));
}

CnnModel::CnnModel(CnnConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    std::size_t in = config_.channels;
    for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
        const std::size_t out = config_.blocks[i].out_channels;
        const std::string base = "cnn.conv" + std::to_string(i);
        conv_w_.push_back(params_.add(base + ".weight", glorot_uniform({out, in, 3, 3}, in * 9, out * 9, rng)));
        conv_b_.push_back(params_.add(base + ".bias", Tensor::zeros({out})));
        in = out;
    }
    std::vector<std::size_t> widths{in};
    if (config_.classifier_width > 0) widths.push_back(config_.classifier_width);
    widths.push_back(config_.num_classes);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const std::string base = "cnn.head" + std::to_string(i);
        head_w_.push_back(params_.add(base + ".weight", glorot_uniform({widths[i], widths[i + 1]}, widths[i], widths[i + 1], rng)));
        head_b_.push_back(params_.add(base + ".bias", Tensor::zeros({widths[i + 1]})));
    }
}

CnnOutput CnnModel::forward(const Tensor& image, bool training, std::mt19937_64& rng) const {
    if (image.shape() != Shape{config_.channels, config_.height, config_.width}) {
        throw std::invalid_argument("CnnModel: expected input " +
                                    shape_str({config_.channels, config_.height, config_.width}) + ", got " +
                                    shape_str(image.shape()));
    }
    Tensor x = image;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) x = relu(conv2d(x, conv_w_[i], conv_b_[i], config_.blocks[i].stride, 1));
    const Tensor activation = x;
    Tensor z = dropout(global_avg_pool(x), config_.dropout, rng, training);
    Tensor embedding;
    for (std::size_t i = 0; i < head_w_.size(); ++i) {
        if (i + 1 == head_w_.size()) embedding = z;
        z = add_row_bias(matmul(z, head_w_[i]), head_b_[i]);
        if (i + 1 < head_w_.size()) z = relu(z);
    }
    return {z, activation, embedding};
}

Tensor CnnModel::forward_eval(const Tensor& image) const {
    std::mt19937_64 unused(0);
    return forward(image, false, unused).logits;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t out_h,
                                    std::size_t out_w) {
    if (src.size() != h * w || h == 0 || w == 0) throw std::invalid_argument("resize_bilinear: bad source size");
    auto axis = [](std::size_t out, std::size_t in, std::size_t i) {
        double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(s));
        const std::size_t hi = std::min(lo + 1, in - 1);
        return std::tuple{lo, hi, s - static_cast<double>(lo)};
    };
    std::vector<double> out(out_h * out_w);
    for (std::size_t r = 0; r < out_h; ++r) {
        const auto [r0, r1, fr] = axis(out_h, h, r);
        for (std::size_t c = 0; c < out_w; ++c) {
            const auto [c0, c1, fc] = axis(out_w, w, c);
            const double top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            const double bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out[r * out_w + c] = fr == 0.0 ? top : top * (1.0 - fr) + bottom * fr;
        }
    }
    return out;
}

CamMap grad_cam(const CnnModel& model, const Tensor& image, std::size_t class_id) {
    const auto& cfg = model.config();
    if (class_id >= cfg.num_classes) {
        throw std::out_of_range("grad_cam: class " + std::to_string(class_id) + " outside " +
                                std::to_string(cfg.num_classes) + " classes");
    }
    std::mt19937_64 unused(0);
    const CnnOutput out = model.forward(image, false, unused);
    const std::size_t m = cfg.num_classes;
    std::vector<double> pick(m, 0.0);
    pick[class_id] = 1.0;
    const Tensor score = sum(mul(out.logits, Tensor::matrix(1, m, pick)));
    if (!out.activation.requires_grad()) throw std::logic_error("grad_cam: model parameters do not require gradients");
    backward(score);

    const Tensor& a = out.activation;
    const std::size_t k = a.dim(0), h = a.dim(1), w = a.dim(2), hw = h * w;
    const auto av = a.data();
    const auto ag = a.grad();
    std::vector<double> cam(hw, 0.0);
    for (std::size_t ch = 0; ch < k; ++ch) {
        double alpha = 0.0;
        for (std::size_t i = 0; i < hw; ++i) alpha += ag[ch * hw + i];
        alpha /= static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) cam[i] += alpha * av[ch * hw + i];
    }
    for (double& v : cam) v = std::max(v, 0.0);

    CamMap map;
    map.height = image.dim(1);
    map.width = image.dim(2);
    map.class_id = class_id;
    map.logits.assign(out.logits.data().begin(), out.logits.data().end());
    map.values = resize_bilinear(cam, h, w, map.height, map.width);
    const double peak = *std::max_element(map.values.begin(), map.values.end());
    map.peak = peak;
    if (peak > 0.0)
        for (double& v : map.values) v = std::min(1.0, std::max(0.0, v / peak));
    return map;
}

}  // namespace actnet::cnn
