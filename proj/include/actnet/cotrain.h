#pragma once

// Co-training of the CNN and GCN branches: classification losses, the gated
// KL coupling, AdamW, the plateau scheduler, the training loop and metrics.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "actnet/cnn.h"
#include "actnet/gcn.h"
#include "actnet/tensor.h"

namespace actnet::cotrain {

inline constexpr double kLogFloor = 1e-12;

struct PlateauConfig {
    double factor = 0.5;
    std::size_t patience = 3;
    double min_lr = 1e-8;
    friend bool operator==(const PlateauConfig&, const PlateauConfig&) = default;
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct CoTrainConfig {
    double d_kl = 0.1;  // +inf disables the coupling
    double ls_alpha = 0.1;
    double lr = 2e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    PlateauConfig plateau;
    AdamWConfig adamw;
    bool per_sample_gate = false;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const CoTrainConfig&, const CoTrainConfig&) = default;
};

// Mean over rows of -log softmax(logits)[y].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// Targets 1 - alpha on the true class and alpha / (M - 1) elsewhere.
Tensor smoothed_targets(std::span<const int> labels, std::size_t num_classes, double alpha);
Tensor label_smoothing_ce(const Tensor& logits, std::span<const int> labels, double alpha);

// Per-row sum p_a (ln max(p_a, eps) - ln max(p_b, eps)), shape [B, 1]. Rows must
// be probability vectors within 1e-9.
Tensor kl_rows(const Tensor& p_a, const Tensor& p_b);
// Mean of kl_rows.
Tensor kl_divergence(const Tensor& p_a, const Tensor& p_b);

inline int kl_gate(double divergence, double d_kl) { return divergence >= d_kl ? 1 : 0; }

struct BranchLosses {
    Tensor loss_cnn;  // LS-CE + gated KL(p_gcn || p_cnn), p_gcn constant
    Tensor loss_gcn;  // CE + gated KL(p_cnn || p_gcn), p_cnn constant
    double loss_act = 0.0;
    double ce_cnn = 0.0;
    double ce_gcn = 0.0;
    double kl_to_cnn = 0.0;  // batch mean KL(p_gcn || p_cnn)
    double kl_to_gcn = 0.0;  // batch mean KL(p_cnn || p_gcn)
    double gate_cnn = 0.0;   // 0/1, or the fired fraction with per-sample gating
    double gate_gcn = 0.0;
};

// A disabled coupling (gate 0, or `coupled` false) is never recorded on the tape.
BranchLosses branch_losses(const Tensor& logits_cnn, const Tensor& logits_gcn, std::span<const int> labels,
                           const CoTrainConfig& cfg, bool coupled = true);

// Decoupled weight decay, then a bias-corrected Adam update; `step` counts from 1.
void adamw_step(ParameterSet& params, const AdamWConfig& cfg, double lr, std::size_t step);

class PlateauScheduler {
public:
    PlateauScheduler(double lr, PlateauConfig cfg) : lr_(lr), cfg_(cfg) {}
    // Records one epoch's metric (higher is better) and returns the new lr.
    double step(double metric);
    double lr() const { return lr_; }
    double best() const { return best_; }
    std::size_t bad_epochs() const { return bad_; }

private:
    double lr_;
    PlateauConfig cfg_;
    double best_ = -std::numeric_limits<double>::infinity();
    std::size_t bad_ = 0;
};

struct MetricsReport {
    std::size_t num_classes = 0;
    double accuracy = 0.0;
    std::vector<double> precision, recall, f1;
    std::vector<std::size_t> support;
    double macro_f1 = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::vector<std::size_t> degenerate_classes;      // never true and never predicted
};

MetricsReport evaluate_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes);

// Index of the largest logit; ties go to the smaller class.
int argmax(const Tensor& logits_row);

struct Sample {
    Tensor image;  // [C, H, W]
    gcn::GraphInput graph;
    int label = 0;
    std::string id;
};

enum class Mode { cotrain, independent };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_cnn = 0.0;
    double loss_gcn = 0.0;
    double loss_act = 0.0;
    double gate_fire_fraction = 0.0;
    double lr_cnn = 0.0;  // in effect during the epoch
    double lr_gcn = 0.0;
    double val_acc_cnn = 0.0;
    double val_acc_gcn = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    MetricsReport cnn_report;
    MetricsReport gcn_report;
    std::vector<int> cnn_predictions;
    std::vector<int> gcn_predictions;
};

std::vector<int> predict(const cnn::CnnModel& model, const std::vector<Sample>& samples);
std::vector<int> predict(const gcn::GcnModel& model, const std::vector<Sample>& samples);

// Both branches see the same minibatches in the same order. Each branch has
// its own dropout stream, optimizer and scheduler, so independent mode is the
// coupled run with the coupling removed.
TrainResult co_train(cnn::CnnModel& cnn_model, gcn::GcnModel& gcn_model, const std::vector<Sample>& train,
                     const std::vector<Sample>& validation, const CoTrainConfig& cfg, Mode mode,
                     const std::function<void(const EpochRecord&)>& on_epoch = {});

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace actnet::cotrain
