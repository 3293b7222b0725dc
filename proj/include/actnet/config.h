#pragma once

// Run configuration: every tunable default in one JSON document. Unknown
// keys are rejected with the JSON pointer of the offending entry.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "actnet/cell_features.h"
#include "actnet/cnn.h"
#include "actnet/cotrain.h"
#include "actnet/gcn.h"
#include "actnet/graph.h"
#include "actnet/segadapt.h"
#include "json.hpp"

namespace actnet {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string location, const std::string& what)
        : std::runtime_error(location + ": " + what), location_(std::move(location)) {}
    const std::string& location() const { return location_; }

private:
    std::string location_;
};

struct GeneratorConfig {
    std::size_t classes = 3;
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 50;
    std::size_t image_size = 64;
    void validate() const;
    friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct PathsConfig {
    std::string data = "data";
    std::string out = "runs";
    friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

struct SegDomainConfig {
    std::size_t count = 32;
    std::size_t size = 16;
    friend bool operator==(const SegDomainConfig&, const SegDomainConfig&) = default;
};

struct RunConfig {
    std::uint64_t seed = 0;
    PathsConfig paths;
    GeneratorConfig generator;
    features::FeatureConfig features;
    graph::SamplerConfig sampler;
    graph::EdgeConfig edge;  // edge.dilation mirrors gcn.dilation
    gcn::GcnConfig gcn;
    cnn::CnnConfig cnn;
    cotrain::CoTrainConfig cotrain;
    segadapt::SegAdaptConfig segadapt;
    SegDomainConfig seg_domain;

    // Cross-section checks plus every section's own validate().
    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
// Missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
// Also accepts the config.json echo written into run directories.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& c);

}  // namespace actnet
