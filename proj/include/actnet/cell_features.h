#pragma once

// Per-nucleus instances and their sixteen hand-crafted descriptors.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "actnet/image.h"

namespace actnet::features {

struct Pixel {
    std::size_t row = 0;
    std::size_t col = 0;
};

// Inclusive bounds.
struct BoundingBox {
    std::size_t min_row = 0;
    std::size_t min_col = 0;
    std::size_t max_row = 0;
    std::size_t max_col = 0;
};

struct CellInstance {
    std::int32_t label = 0;
    std::vector<Pixel> pixels;  // raster order
    BoundingBox bbox;
    double centroid_row = 0.0;
    double centroid_col = 0.0;
};

// 4-connected components of equal non-zero values, numbered 1..K in the
// raster order of each component's first pixel. A binary mask yields its
// blobs; an already-labelled mask is returned unchanged.
LabeledMask label_components(const LabeledMask& mask);

// One instance per label 1..K. Throws if the labels are not contiguous.
std::vector<CellInstance> collect_instances(const LabeledMask& mask);

struct Morphology {
    double area = 0.0;
    double perimeter = 0.0;
    double centroid_row = 0.0;
    double centroid_col = 0.0;
    double orientation = 0.0;  // major-axis angle from the column axis, (-pi/2, pi/2]
    double eccentricity = 0.0;
    double solidity = 0.0;
    double min_axis = 0.0;
    double max_axis = 0.0;
};

// Second moments treat every pixel as a unit square, so each pixel adds 1/12
// to both axis variances. Solidity divides by the area of the convex hull of
// the pixel squares' corners.
Morphology morphology_features(const CellInstance& cell);

struct IntensityStats {
    double mean = 0.0;
    double std = 0.0;
    double skewness = 0.0;
    double entropy = 0.0;
    double fg_bg_diff = 0.0;
};

// `gray` is a single-channel image in [0, 1]. The background ring holds the
// background pixels within Chebyshev distance `ring_width` of the instance.
IntensityStats intensity_features(const CellInstance& cell, const Image& gray, const LabeledMask& mask,
                                  std::size_t ring_width = 2);

struct GlcmConfig {
    std::size_t levels = 8;
    std::size_t distance = 1;
    // (d_row, d_col) unit steps; 0, 45, 90 and 135 degrees.
    std::vector<std::pair<int, int>> directions{{0, 1}, {1, 1}, {1, 0}, {1, -1}};
};

struct TextureStats {
    double dissimilarity = 0.0;
    double homogeneity = 0.0;
    double asm_ = 0.0;
    double energy = 0.0;
};

// Symmetric, normalised co-occurrence matrix (levels x levels, row-major) of
// quantised intensities over pixel pairs that both lie inside the instance.
// All zeros when no pair exists.
std::vector<double> glcm_matrix(const CellInstance& cell, const Image& gray, const GlcmConfig& config);
TextureStats texture_stats(const std::vector<double>& glcm, std::size_t levels);
TextureStats glcm_features(const CellInstance& cell, const Image& gray, const GlcmConfig& config = {});

inline constexpr std::size_t kNumFeatures = 16;

inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames{
    "mean_intensity", "orientation",     "solidity",           "perimeter",
    "min_axis",       "max_axis",        "area",               "eccentricity",
    "fg_bg_diff",     "intensity_std",   "intensity_skewness", "intensity_entropy",
    "glcm_dissimilarity", "glcm_homogeneity", "glcm_asm",      "glcm_energy"};

struct FeatureVector {
    std::array<double, kNumFeatures> g{};
    double centroid_row = 0.0;
    double centroid_col = 0.0;
};

struct FeatureConfig {
    GlcmConfig glcm;
    std::size_t ring_width = 2;
};

FeatureVector describe_instance(const CellInstance& cell, const Image& gray, const LabeledMask& mask,
                                const FeatureConfig& config = {});

// One vector per instance in label order. RGB input is reduced to luma first.
std::vector<FeatureVector> extract_node_features(const Image& image, const LabeledMask& mask,
                                                 const FeatureConfig& config = {});

}  // namespace actnet::features
