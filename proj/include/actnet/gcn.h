#pragma once

// Deep graph convolutional classifier: a residual or dense backbone of
// symmetric-normalised graph convolutions, a fusion block that appends a
// TopK-pooled global vector to every node, and an MLP head.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "actnet/graph.h"
#include "actnet/tensor.h"

namespace actnet::gcn {

enum class Backbone { res, dense };

std::string to_string(Backbone b);
Backbone backbone_from_string(const std::string& s);

struct GcnConfig {
    std::size_t in_features = features::kNumFeatures;
    std::size_t depth = 14;  // graph-conv layers in the backbone
    std::size_t hidden_dim = 64;
    Backbone backbone = Backbone::res;
    std::size_t num_classes = 3;
    double dropout = 0.2;
    std::size_t topk_k = 8;
    // Applied when graphs are built (see graph::EdgeConfig::dilation).
    std::size_t dilation = 1;

    void validate() const;
    friend bool operator==(const GcnConfig&, const GcnConfig&) = default;
};

// D^-1/2 (A + I) D^-1/2 where row i gathers from every j with an edge j->i.
SparseMatrix normalized_adjacency(std::size_t n, const std::vector<Edge>& edges);

// relu(a_hat * x * w)
Tensor graph_conv(const Tensor& x, const SparseMatrix& a_hat, const Tensor& w);
Tensor graph_conv(const Tensor& x, const std::vector<Edge>& edges, const Tensor& w);

// res: graph_conv(x) + x. dense: [graph_conv(x) | x].
Tensor backbone_block(const Tensor& x, const SparseMatrix& a_hat, const Tensor& w, Backbone mode);

// Rows with the k largest scores x . p / |p| (ties to the smaller index),
// gated by tanh(score) and averaged. Returns [1, F].
Tensor topk_readout(const Tensor& x, const Tensor& score_vec, std::size_t k);

// [N, F] local features from a linear map of the concatenated layer outputs,
// followed by the broadcast TopK global vector: [N, 2F].
Tensor fusion_block(const std::vector<Tensor>& per_layer, const Tensor& weight, const Tensor& bias,
                    const Tensor& score_vec, std::size_t k);

// Node features and propagation operator, prepared once per graph.
struct GraphInput {
    Tensor x;  // [N, in_features]
    SparseMatrix a_hat;
    int label = 0;
};

GraphInput prepare_graph(const graph::CellGraph& g);

class GcnModel {
public:
    GcnModel(GcnConfig config, std::uint64_t seed);

    // Outputs of every backbone layer, first to last.
    std::vector<Tensor> backbone(const GraphInput& g) const;
    // [1, num_classes]. `rng` drives dropout and is only used when training.
    Tensor forward(const GraphInput& g, bool training, std::mt19937_64& rng) const;
    Tensor forward_eval(const GraphInput& g) const;
    // Eval-mode input of the last MLP layer, [1, hidden_dim].
    Tensor embedding(const GraphInput& g) const;

    const GcnConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

private:
    Tensor run(const GraphInput& g, bool training, std::mt19937_64& rng, Tensor* penultimate) const;

    GcnConfig config_;
    ParameterSet params_;
    std::vector<Tensor> conv_;
    Tensor fusion_w_, fusion_b_, score_;
    std::vector<Tensor> mlp_w_, mlp_b_;
};

}  // namespace actnet::gcn
