#include "actnet/gcn.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace actnet::gcn {

std::string to_string(Backbone b) { return b == Backbone::res ? "res" : "dense"; }

Backbone backbone_from_string(const std::string& s) {
    if (s == "res") return Backbone::res;
    if (s == "dense") return Backbone::dense;
    throw std::invalid_argument("unknown backbone '" + s + "' (expected res or dense)");
}

void GcnConfig::validate() const {
    if (in_features == 0) throw std::invalid_argument("gcn.in_features must be positive");
    if (depth == 0) throw std::invalid_argument("gcn.depth must be at least 1");
    if (hidden_dim == 0) throw std::invalid_argument("gcn.hidden_dim must be positive");
    if (num_classes < 2) throw std::invalid_argument("gcn.num_classes must be at least 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("gcn.dropout must be in [0, 1)");
    if (topk_k == 0) throw std::invalid_argument("gcn.topk_k must be at least 1");
    if (dilation == 0) throw std::invalid_argument("gcn.dilation must be at least 1");
}

SparseMatrix normalized_adjacency(std::size_t n, const std::vector<Edge>& edges) {
    if (n == 0) throw graph::EmptyGraphError();
    std::vector<std::vector<std::size_t>> incoming(n);
    for (const auto& e : edges) {
        if (e.src >= n || e.dst >= n) throw std::out_of_range("normalized_adjacency: edge index out of range");
        if (e.src != e.dst) incoming[e.dst].push_back(e.src);
    }
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& in = incoming[i];
        in.push_back(i);
        std::sort(in.begin(), in.end());
        in.erase(std::unique(in.begin(), in.end()), in.end());
        inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(in.size()));
    }
    SparseMatrix a{n, n, {0}, {}, {}};
    for (std::size_t i = 0; i < n; ++i) {
        for (auto j : incoming[i]) {
            a.col_idx.push_back(j);
            a.weights.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
        a.row_ptr.push_back(a.col_idx.size());
    }
    return a;
}

Tensor graph_conv(const Tensor& x, const SparseMatrix& a_hat, const Tensor& w) {
    if (x.rank() != 2 || x.dim(0) == 0) throw graph::EmptyGraphError();
    return relu(matmul(spmm(a_hat, x), w));
}

Tensor graph_conv(const Tensor& x, const std::vector<Edge>& edges, const Tensor& w) {
    if (x.rank() != 2 || x.dim(0) == 0) throw graph::EmptyGraphError();
    return graph_conv(x, normalized_adjacency(x.dim(0), edges), w);
}

Tensor backbone_block(const Tensor& x, const SparseMatrix& a_hat, const Tensor& w, Backbone mode) {
    Tensor h = graph_conv(x, a_hat, w);
    if (mode == Backbone::dense) return concat_cols({h, x});
    if (h.dim(1) != x.dim(1)) {
        throw std::invalid_argument("backbone_block: residual mode needs equal widths, got " +
                                    std::to_string(x.dim(1)) + " -> " + std::to_string(h.dim(1)));
    }
    return add(h, x);
}

Tensor topk_readout(const Tensor& x, const Tensor& score_vec, std::size_t k) {
    if (x.rank() != 2 || x.dim(0) == 0) throw graph::EmptyGraphError();
    if (k == 0) throw std::invalid_argument("topk_readout: k must be at least 1");
    const Tensor p = reshape(normalize_l2(score_vec), {x.dim(1), 1});
    const Tensor s = matmul(x, p);
    const std::size_t n = x.dim(0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto sv = s.data();
    const std::size_t keep = std::min(k, n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) { return sv[a] > sv[b] || (sv[a] == sv[b] && a < b); });
    order.resize(keep);
    const Tensor gated = mul_col(gather_rows(x, order), tanh(gather_rows(s, order)));
    return mean_rows(gated);
}

Tensor fusion_block(const std::vector<Tensor>& per_layer, const Tensor& weight, const Tensor& bias,
                    const Tensor& score_vec, std::size_t k) {
    if (per_layer.empty()) throw std::invalid_argument("fusion_block: no layer outputs");
    const Tensor stacked = per_layer.size() == 1 ? per_layer[0] : concat_cols(per_layer);
    const Tensor local = add_row_bias(matmul(stacked, weight), bias);
    const Tensor global = topk_readout(local, score_vec, k);
    return concat_cols({local, broadcast_rows(global, local.dim(0))});
}

GraphInput prepare_graph(const graph::CellGraph& g) {
    if (g.n == 0 || g.features.size() != g.n) throw graph::EmptyGraphError();
    std::vector<double> values;
    values.reserve(g.n * features::kNumFeatures);
    for (const auto& row : g.features) values.insert(values.end(), row.begin(), row.end());
    return {Tensor::from({g.n, features::kNumFeatures}, std::move(values)), normalized_adjacency(g.n, g.edges), g.label};
}

GcnModel::GcnModel(GcnConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t h = config_.hidden_dim;
    std::size_t width = config_.in_features, stacked = 0;
    for (std::size_t l = 0; l < config_.depth; ++l) {
        const std::string name = "gcn.conv" + std::to_string(l) + ".weight";
        Tensor w = glorot_uniform({width, h}, width, h, rng);
        // Each residual block adds to the running sum; shrinking its initial
        // weights keeps a deep stack near unit scale at the start.
        if (l > 0 && config_.backbone == Backbone::res) {
            for (double& v : w.mutable_data()) v /= std::sqrt(static_cast<double>(config_.depth));
        }
        conv_.push_back(params_.add(name, std::move(w)));
        width = (l == 0 || config_.backbone == Backbone::res) ? h : width + h;
        stacked += width;
    }
    fusion_w_ = params_.add("gcn.fusion.weight", glorot_uniform({stacked, h}, stacked, h, rng));
    fusion_b_ = params_.add("gcn.fusion.bias", Tensor::zeros({h}));
    score_ = params_.add("gcn.topk.score", glorot_uniform({h}, h, 1, rng));
    const std::size_t widths[4] = {2 * h, h, h, config_.num_classes};
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string base = "gcn.mlp" + std::to_string(i);
        mlp_w_.push_back(params_.add(base + ".weight", glorot_uniform({widths[i], widths[i + 1]}, widths[i], widths[i + 1], rng)));
        mlp_b_.push_back(params_.add(base + ".bias", Tensor::zeros({widths[i + 1]})));
    }
}

std::vector<Tensor> GcnModel::backbone(const GraphInput& g) const {
    if (g.x.rank() != 2 || g.x.dim(1) != config_.in_features) {
        throw std::invalid_argument("GcnModel: expected node features of width " + std::to_string(config_.in_features));
    }
    std::vector<Tensor> outs;
    Tensor x = graph_conv(g.x, g.a_hat, conv_[0]);
    outs.push_back(x);
    for (std::size_t l = 1; l < config_.depth; ++l) {
        x = backbone_block(x, g.a_hat, conv_[l], config_.backbone);
        outs.push_back(x);
    }
    return outs;
}

Tensor GcnModel::run(const GraphInput& g, bool training, std::mt19937_64& rng, Tensor* penultimate) const {
    const Tensor fused = fusion_block(backbone(g), fusion_w_, fusion_b_, score_, config_.topk_k);
    Tensor z = mean_rows(fused);
    for (std::size_t i = 0; i < 3; ++i) {
        if (i == 2 && penultimate) *penultimate = z;
        z = add_row_bias(matmul(z, mlp_w_[i]), mlp_b_[i]);
        if (i < 2) z = dropout(relu(z), config_.dropout, rng, training);
    }
    return z;
}

Tensor GcnModel::forward(const GraphInput& g, bool training, std::mt19937_64& rng) const {
    return run(g, training, rng, nullptr);
}

Tensor GcnModel::embedding(const GraphInput& g) const {
    std::mt19937_64 unused(0);
    Tensor e;
    run(g, false, unused, &e);
    return e.detach();
}

Tensor GcnModel::forward_eval(const GraphInput& g) const {
    std::mt19937_64 unused(0);
    return forward(g, false, unused);
}

}  // namespace actnet::gcn
