// Command-line entry point. Exit codes: 0 success, 1 validation error,
// 2 runtime failure.

#include <chrono>
#include <functional>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "actnet/checkpoint.h"
#include "actnet/config.h"
#include "actnet/dataset.h"
#include "actnet/graph.h"
#include "actnet/pipeline.h"
#include "actnet/segadapt.h"

using namespace actnet;
namespace fs = std::filesystem;

namespace {

constexpr int kValidation = 1;
constexpr int kRuntime = 2;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string mode = "cotrain";
    std::size_t seeds = 1;
    std::string out;
    std::size_t jobs = 1;
    std::string dataset;
    std::vector<std::string> checkpoints;
    std::string image;
    std::optional<std::size_t> class_id;
    bool independent_norm = false;
    std::vector<std::string> runs;
};

RunConfig resolve_config(const Options& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.cotrain.seed = *o.seed;
        cfg.segadapt.seed = *o.seed;
    }
    return cfg;
}

class Clock {
public:
    void log(const std::string& what) const {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::cerr << "[" << std::fixed << std::setprecision(1) << s << "s] " << what << "\n";
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error(p.string() + ": write failed");
}

int cmd_generate(const Options& o, const Clock& clock) {
    const RunConfig cfg = resolve_config(o);
    const fs::path root = o.out.empty() ? fs::path(cfg.paths.data) : fs::path(o.out);
    const auto m = data::generate_synthetic(cfg.generator, cfg.seed, root);
    clock.log("wrote " + std::to_string(m.samples.size()) + " samples to " + root.string());
    return 0;
}

int cmd_ingest(const Options& o, const Clock& clock) {
    const fs::path root(o.dataset);
    const bool had_manifest = fs::exists(root / "manifest.json");
    const auto m = data::ingest_dataset(root);
    if (!had_manifest) data::save_manifest(root, m);
    const auto counts = m.class_counts();
    for (std::size_t c = 0; c < m.num_classes(); ++c) {
        std::cout << m.class_names[c] << ": train " << counts[0][c] << ", test " << counts[1][c] << "\n";
    }
    clock.log("validated " + std::to_string(m.samples.size()) + " samples");
    return 0;
}

int cmd_build_graphs(const Options& o, const Clock& clock) {
    const RunConfig cfg = resolve_config(o);
    const fs::path root(o.dataset);
    const auto m = data::load_manifest(root);
    const auto report = data::build_graph_dataset(m, root, cfg, o.jobs);
    for (const auto& f : report.failures) std::cerr << "warning: excluded " << f.id << ": " << f.reason << "\n";
    clock.log("built " + std::to_string(report.manifest.samples.size()) + " graphs, " +
              std::to_string(report.failures.size()) + " failures");
    return 0;
}

int cmd_train(const Options& o, const Clock& clock) {
    const RunConfig cfg = resolve_config(o);
    const fs::path root = o.dataset.empty() ? fs::path(cfg.paths.data) : fs::path(o.dataset);
    const auto mode = cotrain::mode_from_string(o.mode);
    const fs::path out = o.out.empty() ? fs::path(cfg.paths.out) : fs::path(o.out);
    const auto m = data::load_manifest(root);
    if (o.seeds > 1) {
        const auto runs = pipeline::run_sweep(m, root, cfg, mode, o.seeds, out, o.jobs);
        std::cout << pipeline::sweep_summary(runs).dump(2) << "\n";
    } else {
        const auto run = pipeline::run_train(m, root, cfg, mode, out, [&](const cotrain::EpochRecord& e) {
            clock.log("epoch " + std::to_string(e.epoch) + " val_acc cnn " + std::to_string(e.val_acc_cnn) + " gcn " +
                      std::to_string(e.val_acc_gcn));
        });
        std::cout << "cnn accuracy " << run.result.cnn_report.accuracy << ", macro F1 " << run.result.cnn_report.macro_f1
                  << "\ngcn accuracy " << run.result.gcn_report.accuracy << ", macro F1 " << run.result.gcn_report.macro_f1
                  << "\n";
    }
    clock.log("training finished");
    return 0;
}

int cmd_explain(const Options& o, const Clock& clock) {
    std::vector<fs::path> cks(o.checkpoints.begin(), o.checkpoints.end());
    const auto r = pipeline::run_explain(cks, o.image, o.class_id, o.out.empty() ? fs::path("explain") : fs::path(o.out),
                                         !o.independent_norm);
    std::cout << r.info.dump(2) << "\n";
    clock.log("wrote " + r.sidecar.string());
    return 0;
}

int cmd_report(const Options& o, const Clock& clock) {
    std::vector<fs::path> runs(o.runs.begin(), o.runs.end());
    const auto report = pipeline::write_report(runs, o.out.empty() ? fs::path("report") : fs::path(o.out));
    std::cout << report["means"].dump(2) << "\n";
    clock.log("report covers " + std::to_string(report["rows"].size()) + " runs");
    return 0;
}

int cmd_adapt(const Options& o, const Clock& clock) {
    const RunConfig cfg = resolve_config(o);
    const fs::path out = o.out.empty() ? fs::path(cfg.paths.out) / "adapt" : fs::path(o.out);
    const auto& d = cfg.seg_domain;
    const auto source = segadapt::make_domain(d.count, d.size, segadapt::source_style(), cfg.seed * 2 + 1);
    const auto target = segadapt::make_domain(d.count, d.size, segadapt::target_style(), cfg.seed * 2 + 2);
    const auto result = segadapt::adapt_toy(source, target, cfg.segadapt, [&](const segadapt::AdaptEpoch& e) {
        clock.log("epoch " + std::to_string(e.epoch) + " total " + std::to_string(e.total));
    });
    fs::create_directories(out);
    write_file(out / "config.json", nlohmann::json{{"command", "adapt"}, {"run_config", to_json(cfg)}}.dump(2) + "\n");
    write_file(out / "history.csv", segadapt::adapt_history_csv(result.history));
    const nlohmann::json metrics = {{"source_dice", segadapt::mean_dice(result.segmenter, source)},
                                    {"target_dice", segadapt::mean_dice(result.segmenter, target)},
                                    {"isolation_checks", result.isolation_checks}};
    write_file(out / "metrics.json", metrics.dump(2) + "\n");
    std::cout << metrics.dump(2) << "\n";
    return 0;
}

int cmd_defaults(const Options& o, const Clock&) {
    const std::string text = dump_run_config(RunConfig{});
    if (o.out.empty()) std::cout << text;
    else write_file(o.out, text);
    return 0;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kValidation;
    } catch (const data::DatasetError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kValidation;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kValidation;
    } catch (const graph::GraphParseError& e) {
        std::cerr << "graph error: " << e.what() << "\n";
        return kValidation;
    } catch (const ImageIoError& e) {
        std::cerr << "image error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kValidation;
    } catch (const std::out_of_range& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"actnet: co-trained cell-graph and patch classifiers"};
    app.require_subcommand(1);
    Options o;
    auto add_config = [&](CLI::App* c) {
        c->add_option("--config", o.config, "RunConfig JSON file or a run's config.json")->check(CLI::ExistingFile);
        c->add_option("--seed", o.seed, "Override the seed");
    };

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
    add_config(gen);
    gen->add_option("--out", o.out, "Dataset directory (default: paths.data)");

    auto* ing = app.add_subcommand("ingest", "Validate a dataset and write its manifest");
    ing->add_option("dataset", o.dataset, "Dataset directory")->required();

    auto* bg = app.add_subcommand("build-graphs", "Build one cell graph per sample");
    bg->add_option("dataset", o.dataset, "Dataset directory")->required();
    add_config(bg);
    bg->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

    auto* tr = app.add_subcommand("train", "Train both branches");
    tr->add_option("dataset", o.dataset, "Dataset directory (default: paths.data)");
    add_config(tr);
    tr->add_option("--mode", o.mode, "cotrain or independent")->check(CLI::IsMember({"cotrain", "independent"}));
    tr->add_option("--seeds", o.seeds, "Number of consecutive seeds to sweep")->check(CLI::PositiveNumber);
    tr->add_option("--out", o.out, "Run directory (default: paths.out)");
    tr->add_option("--jobs", o.jobs, "Concurrent runs in a sweep")->check(CLI::PositiveNumber);

    auto* ex = app.add_subcommand("explain", "Grad-CAM heatmaps from CNN checkpoints");
    ex->add_option("--checkpoint", o.checkpoints, "One or two cnn.ckpt files")->required()->expected(1, 2);
    ex->add_option("--image", o.image, "Input PPM")->required()->check(CLI::ExistingFile);
    ex->add_option("--class", o.class_id, "Target class (default: the prediction)");
    ex->add_flag("--independent-norm", o.independent_norm, "Normalise each map by its own maximum");
    ex->add_option("--out", o.out, "Output directory");

    auto* rep = app.add_subcommand("report", "Consolidate run metrics");
    rep->add_option("runs", o.runs, "Run or sweep directories")->required();
    rep->add_option("--out", o.out, "Output directory");

    auto* ad = app.add_subcommand("adapt", "Adversarial segmentation adaptation on toy domains");
    add_config(ad);
    ad->add_option("--out", o.out, "Output directory");

    auto* def = app.add_subcommand("defaults", "Print the default RunConfig");
    def->add_option("--out", o.out, "Write to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kValidation;
    }

    const Clock clock;
    const std::pair<CLI::App*, int (*)(const Options&, const Clock&)> table[] = {
        {gen, cmd_generate}, {ing, cmd_ingest},   {bg, cmd_build_graphs}, {tr, cmd_train},
        {ex, cmd_explain},   {rep, cmd_report},   {ad, cmd_adapt},        {def, cmd_defaults}};
    for (const auto& [sub, fn] : table) {
        if (sub->parsed()) return run_guarded([&, f = fn] { return f(o, clock); });
    }
    return kValidation;
}
