#pragma once

// Cell graphs: representative-cell sampling, node features that mix
// descriptors with position, and the KNN + distance-threshold adjacency.

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "actnet/cell_features.h"
#include "actnet/tensor.h"

namespace actnet::graph {

using Points = std::vector<std::vector<double>>;

struct SamplerConfig {
    std::size_t n_samples = 100;
    double fps_fraction = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

struct EdgeConfig {
    std::size_t k = 8;
    double d = 3.0;
    double alpha = 1.0;
    double beta = 0.5;
    bool symmetrize = true;
    // Keep every `dilation`-th of the k * dilation nearest neighbours.
    std::size_t dilation = 1;

    void validate() const;
    friend bool operator==(const EdgeConfig&, const EdgeConfig&) = default;
};

struct CellGraph {
    std::size_t n = 0;
    int label = 0;
    std::string source_id;
    std::vector<std::array<double, features::kNumFeatures>> features;  // standardised descriptors
    std::vector<std::array<double, 2>> coords;                        // (row, col) in pixels
    std::vector<Edge> edges;                                          // sorted, no self-loops
    SamplerConfig sampler;
    EdgeConfig edge_config;

    friend bool operator==(const CellGraph&, const CellGraph&) = default;
};

class EmptyGraphError : public std::runtime_error {
public:
    EmptyGraphError() : std::runtime_error("empty graph") {}
};

// Greedy farthest-point selection in selection order. Ties go to the smallest index.
std::vector<std::size_t> fps_sample(const Points& points, std::size_t m, std::size_t start_index);

// FPS picks floor(fps_fraction * n_samples) indices starting from index 0; the
// remainder is drawn uniformly without replacement from the rest. Returns
// every index when there are at most n_samples points.
std::vector<std::size_t> fused_sample(const Points& centroids, const SamplerConfig& cfg);

// Per-column z-score with population variance; constant columns become 0.
void standardize_columns(std::vector<std::array<double, features::kNumFeatures>>& rows);

std::vector<double> overall_feature(const std::array<double, features::kNumFeatures>& g,
                                    const std::array<double, 2>& c, double alpha, double beta);

// Edge i->j when j is among the k nearest neighbours of i (ties by index) and
// their Euclidean distance is below d. Sorted and duplicate-free.
std::vector<Edge> build_adjacency(const Points& t, std::size_t k, double d, bool symmetrize, std::size_t dilation = 1);

CellGraph graph_from_features(std::vector<features::FeatureVector> cells, const SamplerConfig& sampler,
                              const EdgeConfig& edge, int label, std::string source_id);

CellGraph build_graph(const Image& image, const LabeledMask& mask, const SamplerConfig& sampler,
                      const EdgeConfig& edge, int label, std::string source_id = {},
                      const features::FeatureConfig& feature_cfg = {});

class GraphParseError : public std::runtime_error {
public:
    GraphParseError(std::string location, const std::string& what)
        : std::runtime_error(location + ": " + what), location_(std::move(location)) {}
    const std::string& location() const { return location_; }

private:
    std::string location_;
};

std::string serialize_graph(const CellGraph& g);
CellGraph deserialize_graph(const std::string& text);

}  // namespace actnet::graph
