#pragma once

// Datasets on disk: the synthetic patch generator, the manifest that indexes
// images, masks and graphs, directory ingestion and parallel graph building.
//
// Layout written by generate_synthetic:
//   manifest.json
//   images/<id>.ppm   RGB patches
//   masks/<id>.pgm    16-bit instance labels
//   graphs/<id>.json  added by build_graph_dataset

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "actnet/config.h"
#include "actnet/image.h"
#include "json.hpp"

namespace actnet::data {

namespace fs = std::filesystem;

// Every problem found while loading or validating, one "path: reason" line each.
class DatasetError : public std::runtime_error {
public:
    explicit DatasetError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

enum class Split { train, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SampleRecord {
    std::string id;
    std::string image;  // relative to the dataset root
    std::string mask;
    std::string graph;  // empty until graphs are built
    int label = 0;
    Split split = Split::train;
    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
    int version = kManifestVersion;
    std::vector<std::string> class_names;
    std::vector<SampleRecord> samples;
    nlohmann::json generator;  // parameter echo, null for ingested data
    std::uint64_t seed = 0;

    std::size_t num_classes() const { return class_names.size(); }
    // counts[split][class]
    std::vector<std::vector<std::size_t>> class_counts() const;
    std::vector<const SampleRecord*> split(Split s) const;
};

nlohmann::json to_json(const DatasetManifest& m);
// Structural checks only: labels in range, unique ids, recorded counts consistent.
DatasetManifest manifest_from_json(const nlohmann::json& j);
std::string serialize_manifest(const DatasetManifest& m);
DatasetManifest deserialize_manifest(const std::string& text);

void save_manifest(const fs::path& root, const DatasetManifest& m);
// Reads root/manifest.json and checks that every referenced file exists.
DatasetManifest load_manifest(const fs::path& root);

// ---------------------------------------------------------------------------
// Synthetic patches

struct ClassProfile {
    std::string name;
    double cells_mean = 0.0;  // Poisson mean of the cell count
    // Major semi-axis in pixels is drawn from one of two normal modes.
    double size_small = 0.0, size_large = 0.0, size_sd = 0.0;
    double large_fraction = 0.0;
    double ecc_min = 0.0, ecc_max = 0.0;  // minor/major axis ratio = sqrt(1 - ecc^2)
    double size_darkness_corr = 0.0;      // -1..1, coupling of stain darkness to size
    std::size_t clusters = 0;             // 0: uniform placement
    double cluster_sd = 0.0;
    double aligned = 0.0;                 // 0: random orientation, 1: shared orientation
    double chromatin = 0.0;               // speckle amplitude inside nuclei
    double stroma_freq = 0.0;             // background fibre frequency, cycles per pixel
};

// One profile per class. The first three are hand-designed; further classes
// interpolate between them with a shifted density.
std::vector<ClassProfile> class_profiles(std::size_t classes);
nlohmann::json to_json(const ClassProfile& p);

struct Patch {
    Image image;  // RGB in [0, 1]
    LabeledMask mask;
};

// Non-overlapping elliptical nuclei on an H&E-like background. Labels are
// 1..n with no gaps.
Patch render_patch(const ClassProfile& profile, std::size_t size, std::mt19937_64& rng);

// Writes a complete dataset under `root`. Byte-identical for equal inputs.
DatasetManifest generate_synthetic(const GeneratorConfig& cfg, std::uint64_t seed, const fs::path& root);

// ---------------------------------------------------------------------------
// Ingestion and graphs

// Uses root/manifest.json when present. Otherwise expects class directories,
// optionally under train/ and test/, holding <stem>.ppm or <stem>.pgm images
// with <stem>.mask.pgm instance masks. Every image and mask is read; all
// missing or unreadable files are reported together.
DatasetManifest ingest_dataset(const fs::path& root);

struct GraphFailure {
    std::string id;
    std::string reason;
};

struct GraphBuildReport {
    DatasetManifest manifest;  // failed samples removed, graph paths filled in
    std::vector<GraphFailure> failures;
};

// One graph JSON per sample under root/graphs, built on `jobs` threads. The
// output does not depend on `jobs`. Saves the updated manifest.
GraphBuildReport build_graph_dataset(const DatasetManifest& manifest, const fs::path& root, const RunConfig& cfg,
                                     std::size_t jobs = 1);

}  // namespace actnet::data
