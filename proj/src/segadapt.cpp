#include "actnet/segadapt.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "actnet/cotrain.h"

namespace actnet::segadapt {

void DaLossWeights::validate() const {
    if (!(lambda_adv >= 0.0)) throw std::invalid_argument("segadapt.lambda_adv must be non-negative");
    if (!(lambda_recons >= 0.0)) throw std::invalid_argument("segadapt.lambda_recons must be non-negative");
}

void SegAdaptConfig::validate() const {
    weights.validate();
    if (epochs == 0) throw std::invalid_argument("segadapt.epochs must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("segadapt.lr must be positive");
    if (width == 0) throw std::invalid_argument("segadapt.width must be positive");
    if (batch_size == 0) throw std::invalid_argument("segadapt.batch_size must be positive");
}

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

Tensor one_minus(const Tensor& x) { return add_scalar(scale(x, -1.0), 1.0); }

}  // namespace

Tensor dice_loss(const Tensor& y, const Tensor& y_hat) {
    same_shape(y, y_hat, "dice_loss");
    const Tensor overlap = sum(mul(y, y_hat));
    const Tensor denom = add_scalar(add(sum(y), sum(y_hat)), kDiceEps);
    return one_minus(scale(mul(overlap, reciprocal(denom)), 2.0));
}

Tensor entropy_min_loss(const Tensor& y_hat) { return scale(mean(mul(y_hat, log_clamped(y_hat, kLogEps))), -1.0); }

Tensor adversarial_loss(const Tensor& d_out) { return scale(mean(log_clamped(d_out, kLogEps)), -1.0); }

Tensor reconstruction_loss(const Tensor& x, const Tensor& r_out) {
    same_shape(x, r_out, "reconstruction_loss");
    return mean(square(sub(r_out, x)));
}

Tensor discriminator_loss(const Tensor& d_out, int z) {
    if (z == 1) return scale(mean(log_clamped(d_out, kLogEps)), -1.0);
    if (z == 0) return scale(mean(log_clamped(one_minus(d_out), kLogEps)), -1.0);
    throw std::invalid_argument("discriminator_loss: domain flag must be 0 or 1, got " + std::to_string(z));
}

double total_da_loss(const DaComponents& c, const DaLossWeights& w) {
    return c.dice + c.entropy + w.lambda_adv * c.adversarial + w.lambda_recons * c.reconstruction + c.discriminator;
}

DaTape total_da_loss(const SegBatch& b, const DaLossWeights& w, bool entropy_on_target) {
    w.validate();
    DaTape t;
    const Tensor dice = dice_loss(b.y_s, b.y_hat_s);
    const Tensor em = entropy_min_loss(entropy_on_target ? b.y_hat_t : b.y_hat_s);
    const Tensor adv = adversarial_loss(b.d_t);
    const Tensor rec = reconstruction_loss(b.x_t, b.r_t);
    t.discriminator = add(discriminator_loss(b.d_s, 1), discriminator_loss(b.d_t, 0));
    t.parts = {dice.item(), em.item(), adv.item(), rec.item(), t.discriminator.item()};
    t.segmenter = add(dice, em);
    if (w.lambda_adv > 0.0) t.segmenter = add(t.segmenter, scale(adv, w.lambda_adv));
    if (w.lambda_recons > 0.0) t.segmenter = add(t.segmenter, scale(rec, w.lambda_recons));
    t.total = add(t.segmenter, t.discriminator);
    return t;
}

ConvStack::ConvStack(const std::string& prefix, std::vector<ConvLayer> layers, std::mt19937_64& rng)
    : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const std::string base = prefix + ".conv" + std::to_string(i);
        w_.push_back(params_.add(base + ".weight", glorot_uniform({l.out, l.in, 3, 3}, l.in * 9, l.out * 9, rng)));
        b_.push_back(params_.add(base + ".bias", Tensor::full({l.out}, l.bias_init)));
    }
}

Tensor ConvStack::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].upsample) h = upsample_nearest2x(h);
        h = conv2d(h, w_[i], b_[i], layers_[i].stride, 1);
        h = layers_[i].sigmoid ? sigmoid(h) : relu(h);
    }
    return h;
}

// Output bias starts at the log-odds of a 20% foreground fraction.
constexpr double kForegroundPrior = -1.3862943611198906;

Segmenter::Segmenter(std::size_t channels, std::size_t width, std::mt19937_64& rng) {
    const std::size_t w = width;
    const std::size_t io[5][2] = {{channels, w}, {w, 2 * w}, {2 * w, 2 * w}, {2 * w, w}, {2 * w, 1}};
    for (std::size_t i = 0; i < 5; ++i) {
        const std::string base = "seg.S.conv" + std::to_string(i);
        const auto [in, out] = io[i];
        w_.push_back(params_.add(base + ".weight", glorot_uniform({out, in, 3, 3}, in * 9, out * 9, rng)));
        b_.push_back(params_.add(base + ".bias", Tensor::full({out}, i == 4 ? kForegroundPrior : 0.0)));
    }
}

Tensor Segmenter::forward(const Tensor& x) const {
    const std::size_t h = x.dim(1), w = x.dim(2);
    const Tensor e0 = relu(conv2d(x, w_[0], b_[0], 1, 1));
    const Tensor e1 = relu(conv2d(e0, w_[1], b_[1], 2, 1));
    const Tensor e2 = relu(conv2d(e1, w_[2], b_[2], 2, 1));
    const Tensor d1 = relu(conv2d(upsample_nearest2x(e2), w_[3], b_[3], 1, 1));
    const Tensor up = upsample_nearest2x(d1);
    const Tensor skip = reshape(concat_rows({reshape(up, {up.dim(0), h * w}), reshape(e0, {e0.dim(0), h * w})}),
                                {up.dim(0) + e0.dim(0), h, w});
    return sigmoid(conv2d(skip, w_[4], b_[4], 1, 1));
}

ConvStack make_reconstructor(std::size_t channels, std::size_t width, std::mt19937_64& rng) {
    return ConvStack("seg.R", {{1, width, 1}, {width, width, 1}, {width, channels, 1, false, true}}, rng);
}

ConvStack make_discriminator(std::size_t width, std::mt19937_64& rng) {
    const std::size_t w = width;
    return ConvStack("seg.D",
                     {{1, w, 2}, {w, 2 * w, 2}, {2 * w, 2 * w, 1}, {2 * w, 2 * w, 1}, {2 * w, 1, 1, false, true}}, rng);
}

DomainStyle source_style() { return {}; }

DomainStyle target_style() { return {0.6, 0.35, 0.08, 0.08}; }

std::vector<SegSample> make_domain(std::size_t count, std::size_t size, const DomainStyle& style, std::uint64_t seed) {
    if (count == 0) throw std::invalid_argument("make_domain: empty domain");
    if (size < 8 || size % 4 != 0) throw std::invalid_argument("make_domain: size must be a multiple of 4, at least 8");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, style.noise);
    const double s = static_cast<double>(size);
    std::vector<SegSample> out;
    for (std::size_t n = 0; n < count; ++n) {
        std::vector<double> mask(size * size, 0.0), img(size * size);
        const int blobs = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < blobs; ++k) {
            const double cr = s * (0.2 + 0.6 * u(rng)), cc = s * (0.2 + 0.6 * u(rng));
            const double a = s * (0.08 + 0.14 * u(rng)), b = s * (0.08 + 0.14 * u(rng));
            const double th = M_PI * u(rng), ct = std::cos(th), st = std::sin(th);
            for (std::size_t r = 0; r < size; ++r)
                for (std::size_t c = 0; c < size; ++c) {
                    const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
                    const double p = (dr * ct + dc * st) / a, q = (-dr * st + dc * ct) / b;
                    if (p * p + q * q <= 1.0) mask[r * size + c] = 1.0;
                }
        }
        for (std::size_t r = 0; r < size; ++r)
            for (std::size_t c = 0; c < size; ++c) {
                const std::size_t i = r * size + c;
                const double stripe = style.stripes * std::sin(0.5 * M_PI * static_cast<double>(r + c));
                const double v = style.background + (style.foreground - style.background) * mask[i] + stripe + noise(rng);
                img[i] = std::clamp(v, 0.0, 1.0);
            }
        out.push_back({Tensor::from({1, size, size}, std::move(img)), Tensor::from({1, size, size}, std::move(mask))});
    }
    return out;
}

namespace {

bool grads_zero(const ParameterSet& ps) {
    for (const auto& p : ps.items())
        for (double g : p.value.grad())
            if (g != 0.0) return false;
    return true;
}

}  // namespace

AdaptResult adapt_toy(const std::vector<SegSample>& source, const std::vector<SegSample>& target,
                      const SegAdaptConfig& cfg, const std::function<void(const AdaptEpoch&)>& on_epoch) {
    cfg.validate();
    if (source.empty() || target.empty()) throw std::invalid_argument("adapt_toy: empty domain");
    const std::size_t channels = source[0].image.dim(0);
    for (const auto* dom : {&source, &target})
        for (const auto& s : *dom) {
            if (s.image.shape() != source[0].image.shape()) throw std::invalid_argument("adapt_toy: image shapes differ");
        }

    std::mt19937_64 init(cfg.seed);
    AdaptResult res{Segmenter(channels, cfg.width, init), make_reconstructor(channels, cfg.width, init),
                    make_discriminator(cfg.width, init), {}, 0};
    ParameterSet& ps = res.segmenter.parameters();
    ParameterSet& pr = res.reconstructor.parameters();
    ParameterSet& pd = res.discriminator.parameters();
    const cotrain::AdamWConfig adam{0.9, 0.999, 1e-8, 0.0};
    std::mt19937_64 order_rng(cfg.seed ^ 0x5e9ad4);
    std::vector<std::size_t> src(source.size()), tgt(target.size());
    std::iota(src.begin(), src.end(), 0);
    std::iota(tgt.begin(), tgt.end(), 0);
    const std::size_t steps_per_epoch = std::max(source.size(), target.size());
    std::size_t step = 0;
    pd.zero_grad();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(src.begin(), src.end(), order_rng);
        std::shuffle(tgt.begin(), tgt.end(), order_rng);
        AdaptEpoch rec;
        rec.epoch = epoch;
        for (std::size_t first = 0; first < steps_per_epoch; first += cfg.batch_size) {
            const std::size_t last = std::min(first + cfg.batch_size, steps_per_epoch);
            const double inv = 1.0 / static_cast<double>(last - first);
            ++step;

            // S and R step; D is frozen.
            pd.set_requires_grad(false);
            ps.zero_grad();
            pr.zero_grad();
            std::vector<std::pair<Tensor, Tensor>> preds;
            for (std::size_t i = first; i < last; ++i) {
                const SegSample& s = source[src[i % src.size()]];
                const SegSample& t = target[tgt[i % tgt.size()]];
                SegBatch b;
                b.x_s = s.image;
                b.y_s = s.mask;
                b.x_t = t.image;
                b.y_hat_s = res.segmenter.forward(s.image);
                b.y_hat_t = res.segmenter.forward(t.image);
                b.d_s = res.discriminator.forward(b.y_hat_s);
                b.d_t = res.discriminator.forward(b.y_hat_t);
                b.r_t = res.reconstructor.forward(b.y_hat_t);
                const DaTape tape = total_da_loss(b, cfg.weights, cfg.entropy_on_target);
                backward(scale(tape.segmenter, inv));
                preds.emplace_back(b.y_hat_s.detach(), b.y_hat_t.detach());
                rec.parts.dice += tape.parts.dice;
                rec.parts.entropy += tape.parts.entropy;
                rec.parts.adversarial += tape.parts.adversarial;
                rec.parts.reconstruction += tape.parts.reconstruction;
            }
            pd.set_requires_grad(true);
            if (!grads_zero(pd)) throw std::logic_error("adapt_toy: segmenter step reached discriminator parameters");
            cotrain::adamw_step(ps, adam, cfg.lr, step);
            cotrain::adamw_step(pr, adam, cfg.lr, step);

            // D step on the detached predictions.
            ps.zero_grad();
            pr.zero_grad();
            pd.zero_grad();
            for (const auto& [ys, yt] : preds) {
                const Tensor dis = add(discriminator_loss(res.discriminator.forward(ys), 1),
                                       discriminator_loss(res.discriminator.forward(yt), 0));
                backward(scale(dis, inv));
                rec.parts.discriminator += dis.item();
            }
            if (!grads_zero(ps) || !grads_zero(pr)) throw std::logic_error("adapt_toy: discriminator step reached S or R");
            cotrain::adamw_step(pd, adam, cfg.lr, step);
            pd.zero_grad();
            res.isolation_checks += 2;
        }
        const double n = static_cast<double>(steps_per_epoch);
        rec.parts.dice /= n;
        rec.parts.entropy /= n;
        rec.parts.adversarial /= n;
        rec.parts.reconstruction /= n;
        rec.parts.discriminator /= n;
        rec.total = total_da_loss(rec.parts, cfg.weights);
        res.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return res;
}

double mean_dice(const Segmenter& segmenter, const std::vector<SegSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("mean_dice: no samples");
    double total = 0.0;
    for (const auto& s : samples) {
        const auto pred = segmenter.forward(s.image.detach()).data();
        const auto truth = s.mask.data();
        double inter = 0.0, a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const double p = pred[i] > 0.5 ? 1.0 : 0.0;
            inter += p * truth[i];
            a += p;
            b += truth[i];
        }
        total += (a + b == 0.0) ? 1.0 : 2.0 * inter / (a + b);
    }
    return total / static_cast<double>(samples.size());
}

std::string adapt_history_csv(const std::vector<AdaptEpoch>& history) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "epoch,dice,entropy,adversarial,reconstruction,discriminator,total\n";
    for (const auto& e : history) {
        os << e.epoch << ',' << e.parts.dice << ',' << e.parts.entropy << ',' << e.parts.adversarial << ','
           << e.parts.reconstruction << ',' << e.parts.discriminator << ',' << e.total << '\n';
    }
    return os.str();
}

}  // namespace actnet::segadapt
