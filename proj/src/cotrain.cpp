#include "actnet/cotrain.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace actnet::cotrain {

void CoTrainConfig::validate() const {
    if (!(d_kl >= 0.0)) throw std::invalid_argument("cotrain.d_kl must be non-negative");
    if (!(ls_alpha >= 0.0 && ls_alpha < 1.0)) throw std::invalid_argument("cotrain.ls_alpha must be in [0, 1)");
    if (!(plateau.min_lr > 0.0)) throw std::invalid_argument("cotrain.plateau.min_lr must be positive");
    if (!(lr > plateau.min_lr)) throw std::invalid_argument("cotrain.lr must exceed plateau.min_lr");
    if (!(plateau.factor > 0.0 && plateau.factor < 1.0)) throw std::invalid_argument("cotrain.plateau.factor must be in (0, 1)");
    if (batch_size == 0) throw std::invalid_argument("cotrain.batch_size must be positive");
    if (!(adamw.weight_decay >= 0.0)) throw std::invalid_argument("cotrain.weight_decay must be non-negative");
}

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw std::invalid_argument("expected [B, M] logits");
    if (logits.dim(0) != labels.size()) throw std::invalid_argument("logits and labels disagree on batch size");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
            throw std::invalid_argument("label " + std::to_string(y) + " outside " + std::to_string(logits.dim(1)) + " classes");
        }
    }
}

}  // namespace

Tensor smoothed_targets(std::span<const int> labels, std::size_t num_classes, double alpha) {
    if (num_classes < 2) throw std::invalid_argument("label smoothing needs at least 2 classes");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("smoothing factor must be in [0, 1)");
    const double off = alpha / static_cast<double>(num_classes - 1);
    std::vector<double> t(labels.size() * num_classes, off);
    for (std::size_t b = 0; b < labels.size(); ++b) t[b * num_classes + static_cast<std::size_t>(labels[b])] = 1.0 - alpha;
    return Tensor::matrix(labels.size(), num_classes, std::move(t));
}

Tensor label_smoothing_ce(const Tensor& logits, std::span<const int> labels, double alpha) {
    check_labels(logits, labels);
    return soft_target_cross_entropy(logits, smoothed_targets(labels, logits.dim(1), alpha));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) { return label_smoothing_ce(logits, labels, 0.0); }

Tensor kl_rows(const Tensor& p_a, const Tensor& p_b) {
    if (p_a.rank() != 2 || p_a.shape() != p_b.shape()) throw std::invalid_argument("kl: expected two [B, M] tensors of equal shape");
    for (const Tensor* p : {&p_a, &p_b}) {
        const auto v = p->data();
        const std::size_t m = p->dim(1);
        for (std::size_t r = 0; r < p->dim(0); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
                if (v[r * m + c] < 0.0) throw std::invalid_argument("kl: negative probability");
                s += v[r * m + c];
            }
            if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("kl: row " + std::to_string(r) + " sums to " + std::to_string(s));
        }
    }
    return sum_cols(mul(p_a, sub(log_clamped(p_a, kLogFloor), log_clamped(p_b, kLogFloor))));
}

Tensor kl_divergence(const Tensor& p_a, const Tensor& p_b) { return mean(kl_rows(p_a, p_b)); }

namespace {

struct Coupling {
    Tensor term;  // undefined when the gate is closed
    double divergence = 0.0;
    double gate = 0.0;
};

// KL(peer || own) with the peer held constant.
Coupling gated_kl(const Tensor& peer_probs, const Tensor& own_probs, const CoTrainConfig& cfg, bool coupled) {
    const Tensor rows = kl_rows(peer_probs, own_probs);
    Coupling c;
    const auto v = rows.data();
    c.divergence = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (!coupled) return c;
    if (!cfg.per_sample_gate) {
        c.gate = kl_gate(c.divergence, cfg.d_kl);
        if (c.gate > 0.0) c.term = mean(rows);
        return c;
    }
    std::vector<double> mask(v.size());
    std::size_t fired = 0;
    for (std::size_t i = 0; i < v.size(); ++i) fired += static_cast<std::size_t>(mask[i] = kl_gate(v[i], cfg.d_kl));
    c.gate = static_cast<double>(fired) / static_cast<double>(v.size());
    if (fired > 0) c.term = mean(mul(rows, Tensor::matrix(v.size(), 1, std::move(mask))));
    return c;
}

}  // namespace

BranchLosses branch_losses(const Tensor& logits_cnn, const Tensor& logits_gcn, std::span<const int> labels,
                           const CoTrainConfig& cfg, bool coupled) {
    check_labels(logits_cnn, labels);
    check_labels(logits_gcn, labels);
    if (logits_cnn.shape() != logits_gcn.shape()) throw std::invalid_argument("branch_losses: branch logits differ in shape");
    BranchLosses out;
    out.loss_cnn = label_smoothing_ce(logits_cnn, labels, cfg.ls_alpha);
    out.loss_gcn = cross_entropy(logits_gcn, labels);
    out.ce_cnn = out.loss_cnn.item();
    out.ce_gcn = out.loss_gcn.item();

    const Tensor p_cnn = softmax(logits_cnn), p_gcn = softmax(logits_gcn);
    const Coupling to_cnn = gated_kl(p_gcn.detach(), p_cnn, cfg, coupled);
    const Coupling to_gcn = gated_kl(p_cnn.detach(), p_gcn, cfg, coupled);
    out.kl_to_cnn = to_cnn.divergence;
    out.kl_to_gcn = to_gcn.divergence;
    out.gate_cnn = to_cnn.gate;
    out.gate_gcn = to_gcn.gate;
    if (to_cnn.term.defined()) out.loss_cnn = add(out.loss_cnn, to_cnn.term);
    if (to_gcn.term.defined()) out.loss_gcn = add(out.loss_gcn, to_gcn.term);
    out.loss_act = out.loss_cnn.item() + out.loss_gcn.item();
    return out;
}

void adamw_step(ParameterSet& params, const AdamWConfig& cfg, double lr, std::size_t step) {
    if (step == 0) throw std::invalid_argument("adamw_step: step counts from 1");
    const double t = static_cast<double>(step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& p : params.items()) {
        auto value = p.value.mutable_data();
        const auto grad = p.value.grad();
        if (p.m.size() != value.size()) p.m.assign(value.size(), 0.0);
        if (p.v.size() != value.size()) p.v.assign(value.size(), 0.0);
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            value[i] *= 1.0 - lr * cfg.weight_decay;
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            value[i] -= lr * (p.m[i] / c1) / (std::sqrt(p.v[i] / c2) + cfg.eps);
        }
    }
}

double PlateauScheduler::step(double metric) {
    if (metric > best_) {
        best_ = metric;
        bad_ = 0;
        return lr_;
    }
    if (++bad_ >= cfg_.patience) {
        lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
        bad_ = 0;
    }
    return lr_;
}

MetricsReport evaluate_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes) {
    if (predictions.size() != labels.size()) throw std::invalid_argument("evaluate_metrics: length mismatch");
    if (num_classes == 0) throw std::invalid_argument("evaluate_metrics: no classes");
    MetricsReport r;
    r.num_classes = num_classes;
    r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (int v : {labels[i], predictions[i]}) {
            if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
                throw std::invalid_argument("evaluate_metrics: class " + std::to_string(v) + " outside " +
                                            std::to_string(num_classes));
            }
        }
        ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
    }
    std::size_t correct = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::size_t tp = r.confusion[c][c];
        std::size_t support = 0, predicted = 0;
        for (std::size_t k = 0; k < num_classes; ++k) {
            support += r.confusion[c][k];
            predicted += r.confusion[k][c];
        }
        correct += tp;
        const double p = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        const double rc = support ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
        r.precision.push_back(p);
        r.recall.push_back(rc);
        r.f1.push_back(p + rc > 0.0 ? 2.0 * p * rc / (p + rc) : 0.0);
        r.support.push_back(support);
        if (support == 0 && predicted == 0) r.degenerate_classes.push_back(c);
    }
    r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
    r.macro_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / static_cast<double>(num_classes);
    return r;
}

int argmax(const Tensor& logits_row) {
    const auto v = logits_row.data();
    if (v.empty()) throw std::invalid_argument("argmax: empty logits");
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::string to_string(Mode m) { return m == Mode::cotrain ? "cotrain" : "independent"; }

Mode mode_from_string(const std::string& s) {
    if (s == "cotrain") return Mode::cotrain;
    if (s == "independent") return Mode::independent;
    throw std::invalid_argument("unknown mode '" + s + "' (expected cotrain or independent)");
}

std::vector<int> predict(const cnn::CnnModel& model, const std::vector<Sample>& samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(argmax(model.forward_eval(s.image)));
    return out;
}

std::vector<int> predict(const gcn::GcnModel& model, const std::vector<Sample>& samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(argmax(model.forward_eval(s.graph)));
    return out;
}

namespace {

double accuracy_of(const std::vector<int>& predictions, const std::vector<Sample>& samples) {
    if (samples.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) hit += predictions[i] == samples[i].label;
    return static_cast<double>(hit) / static_cast<double>(samples.size());
}

std::vector<int> labels_of(const std::vector<Sample>& samples) {
    std::vector<int> y;
    for (const auto& s : samples) y.push_back(s.label);
    return y;
}

}  // namespace

TrainResult co_train(cnn::CnnModel& cnn_model, gcn::GcnModel& gcn_model, const std::vector<Sample>& train,
                     const std::vector<Sample>& validation, const CoTrainConfig& cfg, Mode mode,
                     const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("co_train: empty training set");
    if (cnn_model.config().num_classes != gcn_model.config().num_classes) {
        throw std::invalid_argument("co_train: branches disagree on the number of classes");
    }
    std::seed_seq seq{cfg.seed, std::uint64_t{0x5eed}};
    std::array<std::uint64_t, 3> streams{};
    seq.generate(streams.begin(), streams.end());
    std::mt19937_64 shuffle_rng(streams[0]), cnn_rng(streams[1]), gcn_rng(streams[2]);

    PlateauScheduler cnn_sched(cfg.lr, cfg.plateau), gcn_sched(cfg.lr, cfg.plateau);
    std::size_t cnn_steps = 0, gcn_steps = 0;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const bool coupled = mode == Mode::cotrain;

    TrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr_cnn = cnn_sched.lr();
        rec.lr_gcn = gcn_sched.lr();
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<Tensor> cnn_logits, gcn_logits;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = train[order[i]];
                cnn_logits.push_back(cnn_model.forward(s.image, true, cnn_rng).logits);
                gcn_logits.push_back(gcn_model.forward(s.graph, true, gcn_rng));
                labels.push_back(s.label);
            }
            const BranchLosses losses = branch_losses(concat_rows(cnn_logits), concat_rows(gcn_logits), labels, cfg, coupled);
            cnn_model.parameters().zero_grad();
            gcn_model.parameters().zero_grad();
            backward(losses.loss_cnn);
            backward(losses.loss_gcn);
            adamw_step(cnn_model.parameters(), cfg.adamw, cnn_sched.lr(), ++cnn_steps);
            adamw_step(gcn_model.parameters(), cfg.adamw, gcn_sched.lr(), ++gcn_steps);
            rec.loss_cnn += losses.loss_cnn.item();
            rec.loss_gcn += losses.loss_gcn.item();
            rec.loss_act += losses.loss_act;
            rec.gate_fire_fraction += 0.5 * (losses.gate_cnn + losses.gate_gcn);
            ++batches;
        }
        const double nb = static_cast<double>(batches);
        rec.loss_cnn /= nb;
        rec.loss_gcn /= nb;
        rec.loss_act /= nb;
        rec.gate_fire_fraction /= nb;
        if (!validation.empty()) {
            result.cnn_predictions = predict(cnn_model, validation);
            result.gcn_predictions = predict(gcn_model, validation);
            rec.val_acc_cnn = accuracy_of(result.cnn_predictions, validation);
            rec.val_acc_gcn = accuracy_of(result.gcn_predictions, validation);
            cnn_sched.step(rec.val_acc_cnn);
            gcn_sched.step(rec.val_acc_gcn);
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    if (!validation.empty()) {
        const auto y = labels_of(validation);
        const std::size_t m = cnn_model.config().num_classes;
        result.cnn_report = evaluate_metrics(result.cnn_predictions, y, m);
        result.gcn_report = evaluate_metrics(result.gcn_predictions, y, m);
    }
    return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    out << "epoch,loss_cnn,loss_gcn,loss_act,gate_fire_fraction,lr_cnn,lr_gcn,val_acc_cnn,val_acc_gcn\n";
    out << std::setprecision(17);
    for (const auto& r : history) {
        out << r.epoch << ',' << r.loss_cnn << ',' << r.loss_gcn << ',' << r.loss_act << ',' << r.gate_fire_fraction << ','
            << r.lr_cnn << ',' << r.lr_gcn << ',' << r.val_acc_cnn << ',' << r.val_acc_gcn << '\n';
    }
    return out.str();
}

}  // namespace actnet::cotrain
