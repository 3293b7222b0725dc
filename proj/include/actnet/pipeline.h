#pragma once

// Orchestration behind the command-line tool: training runs and seed sweeps,
// Grad-CAM export and consolidated reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "actnet/config.h"
#include "actnet/cotrain.h"
#include "actnet/dataset.h"
#include "json.hpp"

namespace actnet::pipeline {

namespace fs = std::filesystem;

// Images and prepared graphs of one split, in manifest order. Throws
// DatasetError listing every sample without a readable graph.
std::vector<cotrain::Sample> load_samples(const data::DatasetManifest& manifest, const fs::path& root, data::Split split);

nlohmann::json to_json(const cotrain::MetricsReport& r);
cotrain::MetricsReport metrics_from_json(const nlohmann::json& j);

// config.json in a run directory: the full RunConfig plus what the command
// needs to be repeated.
nlohmann::json run_echo(const RunConfig& cfg, cotrain::Mode mode, const fs::path& dataset);

struct RunSummary {
    fs::path dir;
    std::uint64_t seed = 0;
    cotrain::Mode mode = cotrain::Mode::cotrain;
    cotrain::TrainResult result;
};

// Writes exactly config.json, history.csv, metrics.json, cnn.ckpt, gcn.ckpt
// and features.csv into `out`. Validation uses the test split.
RunSummary run_train(const data::DatasetManifest& manifest, const fs::path& dataset, const RunConfig& cfg,
                     cotrain::Mode mode, const fs::path& out,
                     const std::function<void(const cotrain::EpochRecord&)>& on_epoch = {});

// Seeds cfg.seed .. cfg.seed + seeds - 1 into out/seed_<s>, `jobs` runs at a
// time, plus out/summary.json with the mean and standard deviation of each
// branch metric.
std::vector<RunSummary> run_sweep(const data::DatasetManifest& manifest, const fs::path& dataset, const RunConfig& cfg,
                                  cotrain::Mode mode, std::size_t seeds, const fs::path& out, std::size_t jobs = 1);

nlohmann::json sweep_summary(const std::vector<RunSummary>& runs);

struct ExplainResult {
    std::vector<fs::path> maps;  // one PGM per checkpoint
    fs::path sidecar;
    nlohmann::json info;
};

// Grad-CAM of each CNN checkpoint on `image`, for `class_id` or each model's
// own prediction. Writes cam.pgm (or cam_a.pgm and cam_b.pgm) and cam.json.
// With two checkpoints and shared normalisation both maps are divided by the
// larger of their two maxima.
ExplainResult run_explain(const std::vector<fs::path>& checkpoints, const fs::path& image, std::optional<std::size_t> class_id,
                          const fs::path& out, bool shared_normalization = true);

// Reads metrics.json (and config.json) from each run directory and writes
// report.csv and report.json into `out`. A row per run and branch; when a
// cotrain and an independent run share a seed, their rows also carry the
// cotrain-minus-independent differences. Runs must agree on the class count.
nlohmann::json write_report(const std::vector<fs::path>& runs, const fs::path& out);

}  // namespace actnet::pipeline
